#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "scorex/fd.hpp"
#include "scorex/kef.hpp"
#include "scorex/rng.hpp"
#include "scorex/sde.hpp"

using namespace scorex;

namespace {

Mat standard_normal_batch(int dim, std::size_t n, std::uint64_t seed) {
  GaussianMixture mix;
  mix.dim = dim;
  mix.weights = {1.0};
  mix.means = {Vec::Zero(dim)};
  mix.variances = {1.0};
  return sample_gaussian_mixture(mix, n, seed);
}

KefModel small_model(int dim, int l_count, std::uint64_t seed) {
  KefModel m;
  m.mixture = default_kernel_mixture();
  m.inducing = standard_normal_batch(dim, static_cast<std::size_t>(l_count), seed);
  m.base = {Vec::Zero(dim), 2.0};
  m.alpha = Vec::Zero(l_count);
  return m;
}

double quadratic_value(const QuadraticLossForm& f, const Vec& alpha) {
  return 0.5 * alpha.dot(f.g1 * alpha) + f.b.dot(alpha) + f.c;
}

}  // namespace

TEST_CASE("kernel derivatives have their closed forms") {
  KernelMixture single{{1.0}, {1.0}};
  Vec x(1), z(1);
  x << 1.0;
  z << 0.0;
  const auto kd = kernel_derivatives(single, x, z);
  CHECK(kd.value == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(kd.gradient[0] == doctest::Approx(-std::exp(-0.5)).epsilon(1e-14));

  const auto at_center = kernel_derivatives(single, z, z);
  CHECK(at_center.gradient.norm() == 0.0);
  CHECK(at_center.hessian(0, 0) == doctest::Approx(-1.0).epsilon(1e-14));

  KernelMixture scaled{{0.6, 0.4}, {0.5, 2.0}};
  Vec x2(2), z2(2);
  x2 << 0.3, -0.2;
  z2 << 0.3, -0.2;
  const auto peak = kernel_derivatives(scaled, x2, z2);
  const double expect = -(0.6 / 0.25 + 0.4 / 4.0);
  CHECK(peak.hessian(0, 0) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(peak.hessian(0, 1) == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("kernel derivatives match finite differences") {
  const auto mix = default_kernel_mixture();
  Vec x(2), z(2);
  x << 0.7, -0.4;
  z << -0.2, 0.5;
  auto value = [&](const Vec& p) { return kernel_derivatives(mix, p, z).value; };
  auto grad = [&](const Vec& p) { return kernel_derivatives(mix, p, z).gradient; };
  const auto kd = kernel_derivatives(mix, x, z);
  CHECK((fd::gradient(value, x) - kd.gradient).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK((fd::jacobian(grad, x) - kd.hessian).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("mixture validation rejects malformed configurations") {
  CHECK_THROWS_AS(kernel_derivatives(KernelMixture{{0.5, 0.4}, {1.0, 2.0}},
                                     Vec::Zero(1), Vec::Zero(1)),
                  ConfigError);
  CHECK_THROWS_AS(kernel_derivatives(KernelMixture{{1.0}, {0.0}}, Vec::Zero(1),
                                     Vec::Zero(1)),
                  ConfigError);
  KefModel bad = small_model(2, 3, 1);
  bad.alpha = Vec::Zero(2);
  CHECK_THROWS_AS(validate_kef(bad), ConfigError);
}

TEST_CASE("the constant term is the loss of the bare base score") {
  const Mat data = standard_normal_batch(2, 60, 11);
  const auto model = small_model(2, 4, 3);
  const auto base_model = kef_score_model(model);  // alpha = 0

  const auto sm_form = assemble_quadratic(model, data, KefLoss::sm,
                                          linear_rademacher_sampler(2), 1,
                                          GssmMode::unnormalized, 5);
  CHECK(sm_form.c ==
        doctest::Approx(sm_loss(base_model, data).value).epsilon(1e-10));

  const auto sampler = quadratic_goe_sampler(2, default_goe_variances(2));
  const auto gssm_form = assemble_quadratic(model, data, KefLoss::gssm, sampler, 3,
                                            GssmMode::unnormalized, 5);
  const auto direct = gssm_loss(base_model, data, sampler, 3,
                                GssmMode::unnormalized, 5);
  CHECK(gssm_form.c == doctest::Approx(direct.value).epsilon(1e-10));
}

TEST_CASE("a one-kernel fit matches the hand-expanded quadratic") {
  Mat data(3, 1);
  data << -0.5, 0.4, 1.2;
  KefModel model;
  model.mixture = {{1.0}, {1.0}};
  model.inducing = Mat::Zero(1, 1);
  model.inducing(0, 0) = 0.3;
  model.base = {Vec::Zero(1), 1.0};
  model.alpha = Vec::Zero(1);

  const auto form = assemble_quadratic(model, data, KefLoss::sm,
                                       linear_rademacher_sampler(1), 1,
                                       GssmMode::unnormalized, 1);
  double g_sq = 0.0, cross = 0.0, constant = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = data(i, 0) - 0.3;
    const double e = std::exp(-0.5 * d * d);
    const double g = -d * e;
    const double gp = (d * d - 1.0) * e;
    g_sq += g * g;
    cross += g * (-data(i, 0)) + gp;
    constant += 0.5 * data(i, 0) * data(i, 0) - 1.0;
  }
  CHECK(form.g1(0, 0) == doctest::Approx(g_sq / 3.0).epsilon(1e-10));
  CHECK(form.b[0] == doctest::Approx(cross / 3.0).epsilon(1e-10));
  CHECK(form.c == doctest::Approx(constant / 3.0).epsilon(1e-10));
}

TEST_CASE("linear slices give identical sliced and general assemblies") {
  const Mat data = standard_normal_batch(2, 80, 21);
  const auto model = small_model(2, 5, 7);
  const auto sampler = linear_gaussian_sampler(2);
  const auto a = assemble_quadratic(model, data, KefLoss::ssm, sampler, 3,
                                    GssmMode::unnormalized, 13);
  const auto b = assemble_quadratic(model, data, KefLoss::gssm, sampler, 3,
                                    GssmMode::unnormalized, 13);
  CHECK((a.g1 - b.g1).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.b - b.b).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(a.c == b.c);
}

TEST_CASE("assembled forms reproduce direct loss evaluations at random alpha") {
  const Mat data = standard_normal_batch(2, 50, 31);
  const auto base = small_model(2, 5, 9);
  const std::uint64_t seed = 17;
  std::mt19937_64 gen(99);
  std::normal_distribution<double> nd;

  struct Setup {
    KefLoss loss;
    SliceSampler sampler;
    GssmMode mode;
  };
  const std::vector<Setup> setups = {
      {KefLoss::sm, linear_rademacher_sampler(2), GssmMode::unnormalized},
      {KefLoss::ssm, linear_rademacher_sampler(2), GssmMode::unnormalized},
      {KefLoss::ssm, linear_gaussian_sampler(2), GssmMode::unnormalized},
      {KefLoss::ssm_vr, linear_gaussian_sampler(2), GssmMode::unnormalized},
      {KefLoss::gssm, quadratic_goe_sampler(2, default_goe_variances(2)),
       GssmMode::unnormalized},
      {KefLoss::gssm, quadratic_goe_sampler(2, default_goe_variances(2)),
       GssmMode::normalized},
      {KefLoss::gssm_vr, quadratic_goe_sampler(2, default_goe_variances(2)),
       GssmMode::unnormalized},
  };
  for (const auto& setup : setups) {
    const auto form = assemble_quadratic(base, data, setup.loss, setup.sampler, 4,
                                         setup.mode, seed);
    for (int trial = 0; trial < 20; ++trial) {
      KefModel model = base;
      for (Eigen::Index l = 0; l < model.alpha.size(); ++l) model.alpha[l] = nd(gen);
      const double from_form = quadratic_value(form, model.alpha);
      const double direct = evaluate_kef_loss(model, data, setup.loss, setup.sampler,
                                              4, setup.mode, seed)
                                .value;
      CHECK(std::abs(from_form - direct) <= 1e-8 * (1.0 + std::abs(direct)));
    }
  }
}

TEST_CASE("assembled matrices are symmetric and positive semidefinite") {
  const Mat data = standard_normal_batch(3, 120, 41);
  const auto model = small_model(3, 6, 13);
  for (const auto loss : {KefLoss::sm, KefLoss::gssm, KefLoss::gssm_vr}) {
    const auto sampler = quadratic_goe_sampler(3, default_goe_variances(3));
    const auto form = assemble_quadratic(model, data, loss, sampler, 3,
                                         GssmMode::unnormalized, 19);
    CHECK((form.g1 - form.g1.transpose()).lpNorm<Eigen::Infinity>() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Mat> eig(form.g1);
    CHECK(eig.eigenvalues().minCoeff() >=
          -1e-8 * form.g1.lpNorm<Eigen::Infinity>());
  }
}

TEST_CASE("the regularized solve honors its contract") {
  QuadraticLossForm id;
  id.g1 = Mat::Identity(3, 3);
  id.b = Vec::Constant(3, 1.0);
  id.c = 0.0;
  const Vec alpha = solve_alpha(id, 1.0);
  CHECK((alpha - Vec::Constant(3, -0.5)).lpNorm<Eigen::Infinity>() < 1e-12);

  id.b = Vec::Zero(3);
  CHECK(solve_alpha(id, 0.5).norm() == 0.0);

  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  Mat r(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) r(i, j) = nd(gen);
  QuadraticLossForm psd;
  psd.g1 = r * r.transpose();
  psd.b = Vec::Constant(5, 1.0);
  const Vec strong = solve_alpha(psd, 1e6);
  const Vec weak = solve_alpha(psd, 1.0);
  CHECK(strong.norm() <= 1e-4 * weak.norm());
  const Vec grad = psd.g1 * weak + 1.0 * weak + psd.b;
  CHECK(grad.norm() <= 1e-8 * (1.0 + psd.b.norm()));

  QuadraticLossForm singular;
  singular.g1 = Mat::Zero(2, 2);
  singular.b = Vec::Constant(2, 1.0);
  CHECK_THROWS_AS(solve_alpha(singular, 0.0), SingularSystem);
  CHECK_THROWS_AS(solve_alpha(singular, -1.0), ConfigError);
}

TEST_CASE("fitting gaussian data recovers the score to small fisher error") {
  const Mat data = standard_normal_batch(1, 5000, 51);
  KefFitOptions opts;
  opts.inducing_count = 20;
  opts.grid_inducing = true;
  opts.grid_lo = -3.0;
  opts.grid_hi = 3.0;
  opts.base = GaussianBase{Vec::Zero(1), 4.0};
  const auto fit = kef_fit(data, KefLoss::sm, linear_rademacher_sampler(1), 1,
                           GssmMode::unnormalized, 1e-3, 61, opts);

  double fisher = 0.0, base_fisher = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Vec x = data.row(i).transpose();
    const double err = kef_score(fit.model, x)[0] - (-x[0]);
    const double base_err = base_score(fit.model.base, x)[0] - (-x[0]);
    fisher += err * err;
    base_fisher += base_err * base_err;
  }
  fisher /= static_cast<double>(data.rows());
  base_fisher /= static_cast<double>(data.rows());
  CHECK(fisher <= 0.05);
  CHECK(fisher < base_fisher);

  // The reported optimum agrees with a direct evaluation of the fitted model.
  const auto direct = evaluate_kef_loss(fit.model, data, KefLoss::sm,
                                        linear_rademacher_sampler(1), 1,
                                        GssmMode::unnormalized, 61);
  CHECK(std::abs(fit.achieved_loss - direct.value) <=
        1e-8 * (1.0 + std::abs(direct.value)));
}

TEST_CASE("variance-reduced fits land near the plain optimum") {
  const Mat data = standard_normal_batch(1, 5000, 51);
  KefFitOptions opts;
  opts.inducing_count = 20;
  opts.grid_inducing = true;
  opts.base = GaussianBase{Vec::Zero(1), 4.0};

  const auto sm_fit = kef_fit(data, KefLoss::sm, linear_rademacher_sampler(1), 1,
                              GssmMode::unnormalized, 1e-3, 61, opts);
  const auto vr_fit = kef_fit(data, KefLoss::gssm_vr,
                              quadratic_goe_sampler(1, default_goe_variances(1)), 8,
                              GssmMode::unnormalized, 1e-3, 61, opts);
  const double sm_at_sm = sm_loss(kef_score_model(sm_fit.model), data).value;
  const double sm_at_vr = sm_loss(kef_score_model(vr_fit.model), data).value;
  CHECK(std::abs(sm_at_vr - sm_at_sm) <= 0.1);
}

TEST_CASE("the fitted coefficients sit at the sampled minimum") {
  const Mat data = standard_normal_batch(1, 800, 71);
  KefFitOptions opts;
  opts.inducing_count = 8;
  opts.base = GaussianBase{Vec::Zero(1), 4.0};
  const auto sampler = quadratic_goe_sampler(1, default_goe_variances(1));

  const auto sm_fit = kef_fit(data, KefLoss::sm, sampler, 1, GssmMode::unnormalized,
                              1e-3, 81, opts);
  const auto gssm_fit = kef_fit(data, KefLoss::gssm, sampler, 4,
                                GssmMode::unnormalized, 1e-3, 81, opts);

  const double sm_at_opt =
      sm_loss(kef_score_model(sm_fit.model), data).value +
      0.5 * 1e-3 * sm_fit.model.alpha.squaredNorm();
  const auto gssm_at_opt = evaluate_kef_loss(gssm_fit.model, data, KefLoss::gssm,
                                             sampler, 4, GssmMode::unnormalized, 81);

  std::mt19937_64 gen(15);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    Vec delta(8);
    for (int l = 0; l < 8; ++l) delta[l] = nd(gen);
    delta *= 0.1 * sm_fit.model.alpha.norm() / delta.norm();

    KefModel bumped = sm_fit.model;
    bumped.alpha += delta;
    const double sm_bumped = sm_loss(kef_score_model(bumped), data).value +
                             0.5 * 1e-3 * bumped.alpha.squaredNorm();
    CHECK(sm_at_opt <= sm_bumped + 1e-12);

    KefModel gssm_bumped = gssm_fit.model;
    gssm_bumped.alpha += delta * (gssm_fit.model.alpha.norm() /
                                  std::max(sm_fit.model.alpha.norm(), 1e-300));
    const auto bumped_loss = evaluate_kef_loss(gssm_bumped, data, KefLoss::gssm,
                                               sampler, 4, GssmMode::unnormalized, 81);
    const double slack =
        2.0 * std::sqrt(gssm_at_opt.se * gssm_at_opt.se +
                        bumped_loss.se * bumped_loss.se);
    CHECK(gssm_at_opt.value +
              0.5 * 1e-3 * gssm_fit.model.alpha.squaredNorm() <=
          bumped_loss.value + 0.5 * 1e-3 * gssm_bumped.alpha.squaredNorm() + slack);
  }
}

TEST_CASE("permuting inducing points permutes the fit and preserves the score") {
  const Mat data = standard_normal_batch(1, 600, 91);
  KefModel model = small_model(1, 6, 17);
  model.base = {Vec::Zero(1), 4.0};
  const auto form = assemble_quadratic(model, data, KefLoss::sm,
                                       linear_rademacher_sampler(1), 1,
                                       GssmMode::unnormalized, 7);
  const Vec alpha = solve_alpha(form, 1e-3);

  const std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  KefModel shuffled = model;
  for (int l = 0; l < 6; ++l) shuffled.inducing.row(l) = model.inducing.row(perm[l]);
  const auto form_p = assemble_quadratic(shuffled, data, KefLoss::sm,
                                         linear_rademacher_sampler(1), 1,
                                         GssmMode::unnormalized, 7);
  const Vec alpha_p = solve_alpha(form_p, 1e-3);

  for (int l = 0; l < 6; ++l)
    CHECK(alpha_p[l] == doctest::Approx(alpha[perm[l]]).epsilon(1e-10));

  KefModel fitted = model;
  fitted.alpha = alpha;
  KefModel fitted_p = shuffled;
  fitted_p.alpha = alpha_p;
  for (double xv : {-1.3, 0.2, 0.9}) {
    Vec x(1);
    x << xv;
    CHECK(std::abs(kef_score(fitted, x)[0] - kef_score(fitted_p, x)[0]) < 1e-12);
  }
}

TEST_CASE("models survive a json round trip") {
  const Mat data = standard_normal_batch(2, 200, 101);
  KefFitOptions opts;
  opts.inducing_count = 6;
  const auto fit = kef_fit(data, KefLoss::ssm, linear_rademacher_sampler(2), 2,
                           GssmMode::unnormalized, 1e-2, 111, opts);

  const auto j = kef_to_json(fit.model);
  const auto back = kef_from_json(j);
  CHECK((back.inducing - fit.model.inducing).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((back.alpha - fit.model.alpha).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(back.base.variance == fit.model.base.variance);
  Vec x(2);
  x << 0.4, -0.7;
  CHECK((kef_score(back, x) - kef_score(fit.model, x)).lpNorm<Eigen::Infinity>() ==
        0.0);

  auto broken = j;
  broken.erase("alpha");
  CHECK_THROWS_AS(kef_from_json(broken), ConfigError);
  auto bad_weights = j;
  bad_weights["mixture"]["weights"] = {0.5, 0.2, 0.1};
  CHECK_THROWS_AS(kef_from_json(bad_weights), ConfigError);

  CHECK(kef_loss_from_string("gssm-vr") == KefLoss::gssm_vr);
  CHECK(to_string(KefLoss::ssm_vr) == "ssm-vr");
  CHECK_THROWS_AS(kef_loss_from_string("nope"), ConfigError);
}

TEST_CASE("fit options are validated") {
  const Mat data = standard_normal_batch(2, 30, 121);
  KefFitOptions grid2d;
  grid2d.grid_inducing = true;
  CHECK_THROWS_AS(kef_fit(data, KefLoss::sm, linear_rademacher_sampler(2), 1,
                          GssmMode::unnormalized, 1e-3, 1, grid2d),
                  ConfigError);
  KefFitOptions too_many;
  too_many.inducing_count = 64;
  CHECK_THROWS_AS(kef_fit(data, KefLoss::sm, linear_rademacher_sampler(2), 1,
                          GssmMode::unnormalized, 1e-3, 1, too_many),
                  ConfigError);
  CHECK_THROWS_AS(kef_fit(Mat(0, 2), KefLoss::sm, linear_rademacher_sampler(2), 1,
                          GssmMode::unnormalized, 1e-3, 1),
                  EmptyData);
  CHECK_THROWS_AS(assemble_quadratic(small_model(2, 3, 1), data, KefLoss::gssm_vr,
                                     linear_rademacher_sampler(2), 2,
                                     GssmMode::unnormalized, 1),
                  ConfigError);
  CHECK_THROWS_AS(assemble_quadratic(small_model(2, 3, 1), data, KefLoss::gssm_vr,
                                     quadratic_goe_sampler(2, default_goe_variances(2)),
                                     2, GssmMode::normalized, 1),
                  ConfigError);
}
