#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "scorex/fd.hpp"
#include "scorex/rng.hpp"
#include "scorex/transform.hpp"

using namespace scorex;

namespace {

ScoreField std_normal_score(int dim) {
  return make_static_score(dim, [](const Vec& x) { return Vec(-x); });
}

double std_normal_logpdf(const Vec& x) {
  return -0.5 * x.squaredNorm() - 0.5 * x.size() * std::log(2.0 * M_PI);
}

double log_abs_det_jacobian(const DiffeoTransform& t, const Vec& x) {
  return std::log(std::abs(t.jacobian(x, 0.0).determinant()));
}

// Score of the pushforward of a standard normal through t, by finite
// differences of the composite log density.  Completely independent of the
// analytic change-of-variables machinery.  The small step keeps truncation
// below 1e-7 even near the log barriers of the bounded-range transforms;
// first differences tolerate it without losing digits to rounding.
Vec oracle_pushforward(const DiffeoTransform& t, const Vec& y) {
  auto logq = [&](const Vec& p) {
    const Vec x = t.inverse(p, 0.0);
    return std_normal_logpdf(x) - log_abs_det_jacobian(t, x);
  };
  fd::FdConfig cfg;
  cfg.step = 1e-6;
  return fd::gradient(logq, y, cfg);
}

Vec random_normal_vec(rng::Stream& s, int dim, double sd = 1.0) {
  Vec x(dim);
  for (int i = 0; i < dim; ++i) x[i] = sd * s.normal();
  return x;
}

double max_oracle_error(const DiffeoTransform& t, int dim, int n_points, double sd,
                        std::uint64_t seed) {
  const ScoreField s = std_normal_score(dim);
  rng::Stream rs(seed, rng::domain::kData, 0, 0);
  double worst = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const Vec x = random_normal_vec(rs, dim, sd);
    const Vec y = t.forward(x, 0.0);
    const Vec got = pushforward_score(t, s, y);
    const Vec want = oracle_pushforward(t, y);
    worst = std::max(worst, (got - want).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

}  // namespace

TEST_CASE("affine pushforward of a standard normal") {
  Mat a(1, 1);
  a << 2.0;
  Vec b = Vec::Zero(1);
  const DiffeoTransform t = affine_transform(a, b);
  Vec y(1);
  y << 2.0;
  const Vec s = pushforward_score(t, std_normal_score(1), y);
  CHECK(s[0] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("exp transform reproduces lognormal scores") {
  const DiffeoTransform t = exp_transform(1);
  Vec y(1);
  y << 1.0;
  CHECK(pushforward_score(t, std_normal_score(1), y)[0] ==
        doctest::Approx(-1.0).epsilon(1e-12));
  y << std::exp(1.0);
  CHECK(pushforward_score(t, std_normal_score(1), y)[0] ==
        doctest::Approx(-2.0 / std::exp(1.0)).epsilon(1e-12));
}

TEST_CASE("pushforward matches the finite-difference oracle") {
  CHECK(max_oracle_error(exp_transform(3), 3, 100, 0.8, 11) < 1e-5);
  CHECK(max_oracle_error(sigmoid_transform(3), 3, 100, 0.8, 12) < 1e-5);
  CHECK(max_oracle_error(tanh_clip_transform(3, 2.5), 3, 100, 0.8, 13) < 1e-5);
  CHECK(max_oracle_error(additive_logistic_transform(2), 2, 100, 0.8, 14) < 1e-5);
  CHECK(max_oracle_error(additive_logistic_transform(12), 12, 50, 0.6, 15) < 1e-5);
  Mat a(2, 2);
  a << 1.2, -0.3, 0.4, 0.9;
  Vec b(2);
  b << 0.5, -1.0;
  CHECK(max_oracle_error(affine_transform(a, b), 2, 50, 1.0, 16) < 1e-5);
}

TEST_CASE("divergence term: finite-difference and inverse-side routes") {
  rng::Stream rs(21, rng::domain::kData, 0, 0);
  std::vector<DiffeoTransform> ts;
  ts.push_back(exp_transform(3));
  ts.push_back(sigmoid_transform(3));
  ts.push_back(additive_logistic_transform(3));
  for (const auto& t : ts) {
    for (int i = 0; i < 20; ++i) {
      const Vec x = random_normal_vec(rs, 3, 0.7);
      const Vec d = jacobian_transpose_divergence(t, x);

      // Row-wise divergence of M(x) = J_{phi^{-1}}(phi(x))^T by differences.
      auto field = [&](const Vec& p) {
        return Mat(t.jacobian(p, 0.0).inverse().transpose());
      };
      const Vec d_fd = fd::matrix_divergence(field, x);
      CHECK((d - d_fd).lpNorm<Eigen::Infinity>() < 1e-6);

      // Same quantity as the log-det gradient of the inverse map at phi(x).
      const Vec d_inv = grad_log_det(inverse_of(t), t.forward(x, 0.0));
      CHECK((d - d_inv).lpNorm<Eigen::Infinity>() < 1e-8);
    }
  }
}

TEST_CASE("grad_log_det closed forms") {
  const DiffeoTransform e = exp_transform(4);
  rng::Stream rs(31, rng::domain::kData, 0, 0);
  const Vec x = random_normal_vec(rs, 4);
  const Vec g = grad_log_det(e, x);
  for (int i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(1.0).epsilon(1e-12));

  // Additive logistic: d/dx log|det J| = 1 - (k+1) y.
  const int k = 5;
  const DiffeoTransform al = additive_logistic_transform(k);
  const Vec xa = random_normal_vec(rs, k, 0.8);
  const Vec y = al.forward(xa, 0.0);
  const Vec ga = grad_log_det(al, xa);
  for (int i = 0; i < k; ++i)
    CHECK(ga[i] == doctest::Approx(1.0 - (k + 1) * y[i]).epsilon(1e-9));

  // Log-det gradient by finite differences as an oracle.
  auto ld = [&](const Vec& p) { return log_abs_det_jacobian(al, p); };
  const Vec g_fd = fd::gradient(ld, xa);
  CHECK((ga - g_fd).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("round trip through the inverse transform recovers the score") {
  rng::Stream rs(41, rng::domain::kData, 0, 0);
  std::vector<DiffeoTransform> ts;
  ts.push_back(exp_transform(2));
  ts.push_back(additive_logistic_transform(4));
  for (const auto& t : ts) {
    const int dim = t.dim_in;
    const ScoreField sx = std_normal_score(dim);
    const ScoreField sy = pushforward_score_field(t, sx);
    const DiffeoTransform back = inverse_of(t);
    for (int i = 0; i < 25; ++i) {
      const Vec x = random_normal_vec(rs, dim, 0.7);
      const Vec again = pushforward_score(back, sy, x);
      CHECK((again - sx.eval(x, 0.0)).lpNorm<Eigen::Infinity>() < 1e-8);
    }
  }
}

TEST_CASE("composition matches sequential pushforwards") {
  const DiffeoTransform t1 = tanh_clip_transform(2, 3.0);
  Mat a(2, 2);
  a << 0.8, 0.1, -0.2, 1.1;
  Vec b(2);
  b << 0.05, -0.1;
  const DiffeoTransform t2 = affine_transform(a, b);
  const DiffeoTransform both = compose(t2, t1);

  const ScoreField sx = std_normal_score(2);
  const ScoreField mid = pushforward_score_field(t1, sx);
  rng::Stream rs(51, rng::domain::kData, 0, 0);
  for (int i = 0; i < 25; ++i) {
    const Vec x = random_normal_vec(rs, 2, 0.8);
    const Vec y = both.forward(x, 0.0);
    const Vec direct = pushforward_score(both, sx, y);
    const Vec staged = pushforward_score(t2, mid, y);
    CHECK((direct - staged).lpNorm<Eigen::Infinity>() < 1e-8);
  }
}

TEST_CASE("scalar pushforward: both algebraic forms agree") {
  const std::function<double(double)> s = [](double x) { return -x; };
  const DiffeoTransform e = exp_transform(1);
  CHECK(pushforward_score_1d(e, s, 1.0) == doctest::Approx(-1.0).epsilon(1e-12));
  rng::Stream rs(61, rng::domain::kData, 0, 0);
  const DiffeoTransform sg = sigmoid_transform(1);
  const DiffeoTransform tc = tanh_clip_transform(1, 2.0);
  for (int i = 0; i < 200; ++i) {
    const double x = 0.9 * rs.normal();
    Vec xv(1);
    xv << x;
    // The consistency check inside pushforward_score_1d enforces 1e-10
    // agreement; reaching this point without ConsistencyError is the test.
    (void)pushforward_score_1d(e, s, e.forward(xv, 0.0)[0]);
    (void)pushforward_score_1d(sg, s, sg.forward(xv, 0.0)[0]);
    (void)pushforward_score_1d(tc, s, tc.forward(xv, 0.0)[0]);
  }
}

TEST_CASE("projection: radius-squared slice of a standard normal") {
  ScalarSlice v;
  v.dim = 2;
  v.value = [](const Vec& x) { return x.squaredNorm(); };
  v.gradient = [](const Vec& x) { return Vec(2.0 * x); };
  v.hessian = [](const Vec& x) { return Mat(2.0 * Mat::Identity(x.size(), x.size())); };

  Vec x(2);
  x << 1.0, 1.0;
  const ScoreField s = std_normal_score(2);
  auto zero_cond = [](const Vec&, int) { return 0.0; };
  CHECK(project_score(v, s, x, zero_cond) == doctest::Approx(-1.0).epsilon(1e-12));

  // With the true conditional correction the chi-square(2) marginal score
  // appears: d/dy log p(x_{-i} | y) = -1 / (2 (y - x_{-i}^2)).
  auto cond = [](const Vec& p, int i) {
    const double other = p[1 - i] * p[1 - i];
    return -1.0 / (2.0 * (p.squaredNorm() - other));
  };
  const double projected = project_score(v, s, x, cond);
  CHECK(projected == doctest::Approx(-0.5).epsilon(1e-9));

  // Cross-check against a sampled grid density of y = |x|^2.
  rng::Stream rs(71, rng::domain::kData, 0, 0);
  const int grid_n = 201;
  std::vector<double> dens(grid_n, 0.0);
  const double lo = 0.0, hi = 12.0;
  const double dx = (hi - lo) / (grid_n - 1);
  const int n_samples = 400000;
  for (int i = 0; i < n_samples; ++i) {
    const double y = random_normal_vec(rs, 2).squaredNorm();
    const int idx = static_cast<int>((y - lo) / dx + 0.5);
    if (idx >= 0 && idx < grid_n) dens[idx] += 1.0;
  }
  for (auto& d : dens) d = std::max(d, 0.5) / (n_samples * dx);
  const double grid_score = fd::grid_density_score_1d(lo, hi, dens, 2.0);
  CHECK(std::abs(projected - grid_score) < 1e-3 + 0.05);

  Vec origin = Vec::Zero(2);
  CHECK_THROWS_AS(project_score(v, s, origin, zero_cond), DegenerateSlice);
}

TEST_CASE("expansion into per-component scalar maps") {
  std::vector<DiffeoTransform> comps;
  Mat a1(1, 1), a2(1, 1);
  a1 << 1.0;
  a2 << 2.0;
  comps.push_back(affine_transform(a1, Vec::Zero(1)));
  comps.push_back(affine_transform(a2, Vec::Zero(1)));
  const std::function<double(double)> s = [](double x) { return -x; };
  const Vec out = expand_score(comps, s, 1.5);
  CHECK(out[0] == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(-0.75).epsilon(1e-12));

  // Against the scalar pushforward, component by component.
  for (std::size_t i = 0; i < comps.size(); ++i) {
    Vec xv(1);
    xv << 1.5;
    const double y = comps[i].forward(xv, 0.0)[0];
    CHECK(out[static_cast<Eigen::Index>(i)] ==
          doctest::Approx(pushforward_score_1d(comps[i], s, y)).epsilon(1e-10));
  }
}

TEST_CASE("fd-wrapped transform tracks the analytic one") {
  const DiffeoTransform exact = sigmoid_transform(2);
  const DiffeoTransform wrapped =
      fd_wrap(2, 2, exact.forward, exact.inverse);
  rng::Stream rs(81, rng::domain::kData, 0, 0);
  const ScoreField s = std_normal_score(2);
  for (int i = 0; i < 20; ++i) {
    const Vec x = random_normal_vec(rs, 2, 0.8);
    const Vec y = exact.forward(x, 0.0);
    CHECK((wrapped.jacobian(x, 0.0) - exact.jacobian(x, 0.0)).lpNorm<Eigen::Infinity>() <
          1e-7);
    const HessianTensor hw = wrapped.hessian(x, 0.0);
    const HessianTensor he = exact.hessian(x, 0.0);
    for (int c = 0; c < 2; ++c)
      CHECK((hw[c] - he[c]).lpNorm<Eigen::Infinity>() < 1e-5);
    CHECK((pushforward_score(wrapped, s, y) - pushforward_score(exact, s, y))
              .lpNorm<Eigen::Infinity>() < 1e-4);
  }

  // Time-dependent wrapping: phi(x, t) = exp(a t) x.
  const double a = 0.3;
  const DiffeoTransform flow = fd_wrap(
      1, 1, [a](const Vec& x, double t) { return Vec(std::exp(a * t) * x); },
      [a](const Vec& y, double t) { return Vec(std::exp(-a * t) * y); });
  Vec x1(1);
  x1 << 2.0;
  const Vec tp = flow.time_partial(x1, 0.5);
  CHECK(tp[0] == doctest::Approx(a * std::exp(a * 0.5) * 2.0).epsilon(1e-6));
}

TEST_CASE("additive logistic boundary handling and row sums") {
  const int k = 4;
  const DiffeoTransform t = additive_logistic_transform(k);
  rng::Stream rs(91, rng::domain::kData, 0, 0);
  const Vec x = random_normal_vec(rs, k);
  const Vec y = t.forward(x, 0.0);
  CHECK(y.minCoeff() > 0.0);
  CHECK(y.sum() < 1.0);
  CHECK((t.inverse(y, 0.0) - x).lpNorm<Eigen::Infinity>() < 1e-10);

  const Mat j = t.jacobian(x, 0.0);
  for (int i = 0; i < k; ++i)
    CHECK(j.row(i).sum() == doctest::Approx(y[i] * (1.0 - y.sum())).epsilon(1e-10));

  Vec bad = y;
  bad[0] = -0.01;
  CHECK_THROWS_AS(t.inverse(bad, 0.0), DomainError);
  Vec heavy = Vec::Constant(k, 0.3);  // sums above 1
  CHECK_THROWS_AS(t.inverse(heavy, 0.0), DomainError);
}

TEST_CASE("json descriptors") {
  using nlohmann::json;
  const json ok = {{"kind", "additive_logistic"}, {"params", {{"k", 3}}}};
  const DiffeoTransform t = transform_from_json(ok);
  CHECK(t.dim_in == 3);

  const json affine = {
      {"kind", "affine"},
      {"params", {{"matrix", {{2.0, 0.0}, {0.0, 1.0}}}, {"offset", {0.0, 0.5}}}}};
  const DiffeoTransform ta = transform_from_json(affine);
  Vec x(2);
  x << 1.0, 1.0;
  CHECK(ta.forward(x, 0.0)[0] == doctest::Approx(2.0));

  CHECK_THROWS_AS(transform_from_json({{"kind", "nope"}, {"params", json::object()}}),
                  ConfigError);
  CHECK_THROWS_AS(transform_from_json(
                      {{"kind", "exp"}, {"params", {{"dim", 2}, {"extra", 1}}}}),
                  ConfigError);
  CHECK_THROWS_AS(transform_from_json({{"kind", "exp"}}), ConfigError);

  const json singular = {
      {"kind", "affine"},
      {"params", {{"matrix", {{1.0, 1.0}, {1.0, 1.0}}}, {"offset", {0.0, 0.0}}}}};
  CHECK_THROWS_AS(transform_from_json(singular), SingularJacobian);
}
