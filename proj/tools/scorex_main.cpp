#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "scorex/io.hpp"
#include "scorex/kef.hpp"
#include "scorex/losses.hpp"
#include "scorex/rng.hpp"
#include "scorex/sde.hpp"
#include "scorex/simplex.hpp"
#include "scorex/transform.hpp"

using namespace scorex;
using nlohmann::json;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

GaussianMixture named_mixture(const std::string& name) {
  GaussianMixture mix;
  if (name == "normal-1d") {
    mix.dim = 1;
    mix.weights = {1.0};
    mix.means = {Vec::Zero(1)};
    mix.variances = {1.0};
  } else if (name == "mixture-1d") {
    mix.dim = 1;
    mix.weights = {0.35, 0.65};
    mix.means = {Vec::Constant(1, -2.0), Vec::Constant(1, 1.5)};
    mix.variances = {0.25, 0.64};
  } else if (name == "normal-2d") {
    mix.dim = 2;
    mix.weights = {1.0};
    mix.means = {Vec::Zero(2)};
    mix.variances = {1.0};
  } else if (name == "mixture-2d") {
    mix.dim = 2;
    mix.weights = {0.4, 0.6};
    mix.means = {vec2(-1.0, 0.5), vec2(1.2, -0.7)};
    mix.variances = {0.5, 0.8};
  } else {
    throw ConfigError("unknown dataset '" + name +
                      "' (try normal-1d, mixture-1d, normal-2d, mixture-2d)");
  }
  return mix;
}

// Score and Jacobian of a Gaussian mixture via the log-density Hessian
// identity: grad s = sum_c r_c (A_c + s_c s_c') - s s'.
ScoreModel mixture_score_model(const GaussianMixture& mix) {
  ScoreModel m;
  m.dim = mix.dim;
  m.eval = [mix](const Vec& x) { return gaussian_mixture_score(mix, x); };
  m.jacobian = [mix](const Vec& x) {
    std::vector<double> logs(mix.weights.size());
    for (std::size_t c = 0; c < mix.weights.size(); ++c) {
      const double v = mix.variances[c];
      logs[c] = std::log(mix.weights[c]) -
                0.5 * (x - mix.means[c]).squaredNorm() / v -
                0.5 * mix.dim * std::log(v);
    }
    const double top = *std::max_element(logs.begin(), logs.end());
    double norm = 0.0;
    for (double& l : logs) {
      l = std::exp(l - top);
      norm += l;
    }
    Mat j = Mat::Zero(mix.dim, mix.dim);
    Vec s = Vec::Zero(mix.dim);
    for (std::size_t c = 0; c < mix.weights.size(); ++c) {
      const double r = logs[c] / norm;
      const Vec sc = (mix.means[c] - x) / mix.variances[c];
      j += r * (sc * sc.transpose() -
                Mat::Identity(mix.dim, mix.dim) / mix.variances[c]);
      s += r * sc;
    }
    j -= s * s.transpose();
    return j;
  };
  return m;
}

struct SuiteResult {
  std::string suite;
  double metric = 0.0;
  double tolerance = 0.0;
  bool pass() const { return metric <= tolerance; }
};

SuiteResult suite_transforms(std::uint64_t seed) {
  SuiteResult r{"transforms", 0.0, 1e-8};
  std::vector<DiffeoTransform> ts;
  ts.push_back(exp_transform(2));
  ts.push_back(sigmoid_transform(3));
  ts.push_back(tanh_clip_transform(2, 1.5));
  Mat a(2, 2);
  a << 1.1, 0.3, -0.2, 0.9;
  ts.push_back(affine_transform(a, vec2(0.4, -0.1)));
  ts.push_back(additive_logistic_transform(4));
  rng::Stream rs(seed, rng::domain::kData, 0, 0);
  for (const auto& t : ts) {
    const int dim = t.dim_in;
    const ScoreField sx =
        make_static_score(dim, [](const Vec& p) { return Vec(-p); });
    const ScoreField sy = pushforward_score_field(t, sx);
    const DiffeoTransform back = inverse_of(t);
    for (int trial = 0; trial < 20; ++trial) {
      const Vec x = 0.6 * rs.normal_vec(dim);
      const Vec y = t.forward(x, 0.0);
      r.metric = std::max(r.metric,
                          (t.inverse(y, 0.0) - x).lpNorm<Eigen::Infinity>());
      const Vec recovered = pushforward_score(back, sy, x);
      r.metric = std::max(
          r.metric, (recovered - sx.eval(x, 0.0)).lpNorm<Eigen::Infinity>());
    }
  }
  return r;
}

SuiteResult suite_reverse_ito(std::uint64_t seed) {
  SuiteResult r{"reverse-ito", 0.0, 1e-6};
  GaussianMixture mix = named_mixture("mixture-2d");
  const VpSchedule vp = linear_vp_schedule();
  const SdeSpec sde = vp_sde(vp, 2);
  const ScoreField sx = vp_marginal_score_field(mix, vp);
  std::vector<DiffeoTransform> ts;
  ts.push_back(sigmoid_transform(2));
  ts.push_back(exp_transform(2));
  Mat a(2, 2);
  a << 0.8, -0.25, 0.1, 1.2;
  ts.push_back(affine_transform(a, vec2(-0.3, 0.2)));
  rng::Stream rs(seed, rng::domain::kData, 1, 0);
  for (const auto& t : ts) {
    const ScoreField sy = pushforward_score_field(t, sx);
    for (double time : {0.2, 0.5, 0.8}) {
      for (int trial = 0; trial < 20; ++trial) {
        const Vec y = t.forward(0.7 * rs.normal_vec(2), time);
        r.metric =
            std::max(r.metric, reverse_equivalence_check(t, sde, sx, sy, y, time));
      }
    }
  }
  return r;
}

SuiteResult suite_gssm_vr(std::uint64_t seed, std::size_t slices) {
  GaussianMixture mix = named_mixture("mixture-2d");
  const ScoreModel model = mixture_score_model(mix);
  const Mat data = sample_gaussian_mixture(mix, 200, seed);
  const GoeVariances v = default_goe_variances(2);
  const LossResult mc = gssm_loss(model, data, quadratic_goe_sampler(2, v), slices,
                                  GssmMode::unnormalized, seed);
  const LossResult vr = gssm_vr_quadratic_loss(model, data, v, slices, seed);
  SuiteResult r{"gssm-vr", std::abs(mc.value - vr.value),
                3.0 * std::sqrt(mc.se * mc.se + vr.se * vr.se)};
  return r;
}

SuiteResult suite_simplex(std::uint64_t seed) {
  SuiteResult r{"simplex", 0.0, 1e-8};
  const int k = 12;
  const VpSchedule vp = linear_vp_schedule();
  const CategoricalSource src =
      make_categorical_source(default_class_frequencies(k + 1));
  const ScoreField score = vp_marginal_score_field(src.mixture, vp);
  const DiffeoTransform logistic = additive_logistic_transform(k);
  const SdeSpec forward = vp_sde(vp, k);
  const SdeSpec transformed = ito_transform(forward, logistic);
  rng::Stream rs(seed, rng::domain::kData, 2, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec y = logistic.forward(1.2 * rs.normal_vec(k), 0.0);
    const double t = vp.t_min + (1.0 - vp.t_min) * rs.uniform();
    const SimplexReverseCoeffs c = simplex_reverse_coeffs(vp, score, y, t);
    const Vec generic = reverse_ito_drift(logistic, forward, score, y, t);
    r.metric = std::max(r.metric, (c.drift - generic).lpNorm<Eigen::Infinity>());
    r.metric = std::max(
        r.metric,
        (c.diffusion - transformed.diffusion(y, t)).cwiseAbs().maxCoeff());
  }
  return r;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, std::size_t slices,
               std::string out) {
  std::vector<SuiteResult> results;
  if (suite == "transforms" || suite == "all") results.push_back(suite_transforms(seed));
  if (suite == "reverse-ito" || suite == "all")
    results.push_back(suite_reverse_ito(seed));
  if (suite == "gssm-vr" || suite == "all")
    results.push_back(suite_gssm_vr(seed, slices));
  if (suite == "simplex" || suite == "all") results.push_back(suite_simplex(seed));
  if (results.empty())
    throw ConfigError("unknown suite '" + suite +
                      "' (try transforms, reverse-ito, gssm-vr, simplex, all)");

  const json config = {{"command", "verify"},
                       {"suite", suite},
                       {"seed", seed},
                       {"slices", slices}};
  json report;
  report["version"] = kVersion;
  report["config_hash"] = io::config_hash(config);
  report["seed"] = seed;
  bool all_pass = true;
  report["suites"] = json::array();
  for (const auto& r : results) {
    all_pass = all_pass && r.pass();
    report["suites"].push_back({{"suite", r.suite},
                                {"status", r.pass() ? "pass" : "fail"},
                                {"metric", r.metric},
                                {"tolerance", r.tolerance}});
  }
  report["status"] = all_pass ? "pass" : "fail";
  if (out.empty()) out = "verify_" + suite + ".json";
  io::write_text_file(out, report.dump(2) + "\n");
  std::printf("%s: %s (report %s)\n", suite.c_str(), all_pass ? "pass" : "FAIL",
              out.c_str());
  return all_pass ? 0 : 1;
}

json simplex_config_to_json(const SimplexLabConfig& cfg) {
  json j = {{"command", "sample-simplex"},
            {"k", cfg.k},
            {"epsilon", cfg.epsilon},
            {"w", cfg.w},
            {"n_samples", cfg.n_samples},
            {"steps", cfg.steps},
            {"seed", cfg.seed},
            {"schedule", {{"beta_min", cfg.beta_min}, {"beta_max", cfg.beta_max}}},
            {"component_sigma", cfg.component_sigma}};
  if (cfg.class_frequencies.size() > 0) {
    std::vector<double> f(cfg.class_frequencies.data(),
                          cfg.class_frequencies.data() + cfg.class_frequencies.size());
    j["class_frequencies"] = f;
  }
  return j;
}

int cmd_sample_simplex(const std::string& config_path, const std::string& out_dir,
                       const CLI::App* cmd, std::uint64_t seed, double w,
                       std::size_t n_samples, std::size_t steps) {
  SimplexLabConfig cfg;
  if (!config_path.empty()) cfg = simplex_config_from_json(io::read_json_file(config_path));
  if (cmd->count("--seed") > 0) cfg.seed = seed;
  if (cmd->count("--w") > 0) cfg.w = w;
  if (cmd->count("--n-samples") > 0) cfg.n_samples = n_samples;
  if (cmd->count("--steps") > 0) cfg.steps = steps;

  const SimplexRunResult r = run_simplex_lab(cfg);
  const json config = simplex_config_to_json(cfg);

  std::filesystem::create_directories(out_dir);
  const std::string csv_path = out_dir + "/samples.csv";
  const std::string stats_path = out_dir + "/stats.json";
  io::write_csv_matrix(csv_path, r.samples);
  json stats = simplex_stats_to_json(r);
  stats["version"] = kVersion;
  stats["config_hash"] = io::config_hash(config);
  stats["config"] = config;
  stats["clamp_events"] = r.clamp_events;
  io::write_text_file(stats_path, stats.dump(2) + "\n");
  std::printf("wrote %s and %s (mean empty mass %.5f)\n", csv_path.c_str(),
              stats_path.c_str(), r.mean_empty_mass);
  return 0;
}

SliceSampler sampler_for(KefLoss loss, const std::string& name, int dim) {
  std::string pick = name;
  if (pick.empty())
    pick = (loss == KefLoss::gssm || loss == KefLoss::gssm_vr) ? "goe" : "gaussian";
  if (pick == "rademacher") return linear_rademacher_sampler(dim);
  if (pick == "gaussian") return linear_gaussian_sampler(dim);
  if (pick == "goe") return quadratic_goe_sampler(dim, default_goe_variances(dim));
  throw ConfigError("unknown sampler '" + pick +
                    "' (try rademacher, gaussian, goe)");
}

Mat load_data(const std::string& data_path, const std::string& dataset, std::size_t n,
              std::uint64_t seed) {
  if (!data_path.empty()) return io::read_csv_matrix(data_path);
  return sample_gaussian_mixture(named_mixture(dataset), n, seed);
}

int cmd_fit_kef(const std::string& data_path, const std::string& dataset,
                std::size_t n, const std::string& loss_name,
                const std::string& sampler_name, std::size_t slices, double lambda,
                std::uint64_t seed, std::size_t inducing, bool grid,
                const std::string& out) {
  const Mat data = load_data(data_path, dataset, n, seed);
  const KefLoss loss = kef_loss_from_string(loss_name);
  const SliceSampler sampler =
      sampler_for(loss, sampler_name, static_cast<int>(data.cols()));
  KefFitOptions opts;
  opts.inducing_count = inducing;
  opts.grid_inducing = grid;
  const KefFitResult fit = kef_fit(data, loss, sampler, slices,
                                   GssmMode::unnormalized, lambda, seed, opts);

  const LossResult sm_fit = sm_loss(kef_score_model(fit.model), data);
  KefModel base_only = fit.model;
  base_only.alpha.setZero();
  const LossResult sm_base = sm_loss(kef_score_model(base_only), data);

  const json config = {{"command", "fit-kef"},
                       {"data", data_path},
                       {"dataset", data_path.empty() ? dataset : ""},
                       {"n", n},
                       {"loss", loss_name},
                       {"sampler", sampler_name},
                       {"slices", slices},
                       {"lambda", lambda},
                       {"seed", seed},
                       {"inducing", inducing},
                       {"grid", grid}};
  json report;
  report["version"] = kVersion;
  report["config_hash"] = io::config_hash(config);
  report["config"] = config;
  report["model"] = kef_to_json(fit.model);
  report["achieved_loss"] = fit.achieved_loss;
  report["sm"] = to_json(sm_fit);
  report["sm_base_only"] = to_json(sm_base);
  io::write_text_file(out, report.dump(2) + "\n");
  std::printf("wrote %s (sm %.6f, base-only sm %.6f)\n", out.c_str(), sm_fit.value,
              sm_base.value);
  return 0;
}

int cmd_bench_losses(const std::string& data_path, const std::string& dataset,
                     std::size_t n, std::size_t slices, double lambda,
                     std::uint64_t seed, std::size_t inducing,
                     const std::string& out) {
  const Mat data = load_data(data_path, dataset, n, seed);
  const json config = {{"command", "bench-losses"},
                       {"data", data_path},
                       {"dataset", data_path.empty() ? dataset : ""},
                       {"n", n},
                       {"slices", slices},
                       {"lambda", lambda},
                       {"seed", seed},
                       {"inducing", inducing}};
  json report;
  report["version"] = kVersion;
  report["config_hash"] = io::config_hash(config);
  report["config"] = config;
  report["rows"] = json::array();

  for (const KefLoss loss : {KefLoss::sm, KefLoss::ssm, KefLoss::ssm_vr,
                             KefLoss::gssm, KefLoss::gssm_vr}) {
    const SliceSampler sampler =
        sampler_for(loss, "", static_cast<int>(data.cols()));
    KefFitOptions opts;
    opts.inducing_count = inducing;
    const KefFitResult fit = kef_fit(data, loss, sampler, slices,
                                     GssmMode::unnormalized, lambda, seed, opts);
    const LossResult own = evaluate_kef_loss(fit.model, data, loss, sampler, slices,
                                             GssmMode::unnormalized, seed);
    // Exact score-matching loss of every fitted model is the common yardstick.
    const LossResult sm = sm_loss(kef_score_model(fit.model), data);
    report["rows"].push_back({{"loss", to_string(loss)},
                              {"achieved", fit.achieved_loss},
                              {"value", own.value},
                              {"stderr", own.se},
                              {"sm_value", sm.value},
                              {"sm_stderr", sm.se}});
  }
  io::write_text_file(out, report.dump(2) + "\n");
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"score-transform toolkit"};
  app.require_subcommand(1);

  auto* verify = app.add_subcommand("verify", "run an invariant suite");
  std::string suite = "all";
  std::uint64_t vseed = 1;
  std::size_t vslices = 2000;
  std::string vout;
  verify->add_option("--suite", suite, "transforms|reverse-ito|gssm-vr|simplex|all");
  verify->add_option("--seed", vseed, "rng seed");
  verify->add_option("--slices", vslices, "slices per point for gssm-vr");
  verify->add_option("--out", vout, "report path (default verify_<suite>.json)");

  auto* simplex = app.add_subcommand("sample-simplex", "reverse diffusion on the simplex");
  std::string scfg, sout = ".";
  std::uint64_t sseed = 1;
  double sw = 1.0;
  std::size_t sn = 10000, ssteps = 2000;
  simplex->add_option("--config", scfg, "JSON config path");
  simplex->add_option("--out", sout, "output directory");
  simplex->add_option("--seed", sseed, "rng seed override");
  simplex->add_option("--w", sw, "drift scale override");
  simplex->add_option("--n-samples", sn, "sample count override");
  simplex->add_option("--steps", ssteps, "step count override");

  auto* fit = app.add_subcommand("fit-kef", "closed-form kernel model fit");
  std::string fdata, fdataset = "normal-1d", floss = "sm", fsampler,
              fout = "kef_model.json";
  std::size_t fn = 2000, fslices = 8, finducing = 32;
  double flambda = 1e-3;
  std::uint64_t fseed = 1;
  bool fgrid = false;
  fit->add_option("--data", fdata, "CSV dataset path");
  fit->add_option("--dataset", fdataset, "named synthetic dataset");
  fit->add_option("--n", fn, "synthetic sample count");
  fit->add_option("--loss", floss, "sm|ssm|ssm-vr|gssm|gssm-vr");
  fit->add_option("--sampler", fsampler, "rademacher|gaussian|goe");
  fit->add_option("--slices", fslices, "slices per point");
  fit->add_option("--lambda", flambda, "ridge strength");
  fit->add_option("--seed", fseed, "rng seed");
  fit->add_option("--inducing", finducing, "inducing point count");
  fit->add_flag("--grid", fgrid, "grid inducing placement (1D data)");
  fit->add_option("--out", fout, "report path");

  auto* bench = app.add_subcommand("bench-losses", "loss family comparison table");
  std::string bdata, bdataset = "mixture-2d", bout = "bench_losses.json";
  std::size_t bn = 500, bslices = 8, binducing = 32;
  double blambda = 1e-3;
  std::uint64_t bseed = 1;
  bench->add_option("--data", bdata, "CSV dataset path");
  bench->add_option("--dataset", bdataset, "named synthetic dataset");
  bench->add_option("--n", bn, "synthetic sample count");
  bench->add_option("--slices", bslices, "slices per point");
  bench->add_option("--lambda", blambda, "ridge strength");
  bench->add_option("--seed", bseed, "rng seed");
  bench->add_option("--inducing", binducing, "inducing point count");
  bench->add_option("--out", bout, "report path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) return cmd_verify(suite, vseed, vslices, vout);
    if (simplex->parsed())
      return cmd_sample_simplex(scfg, sout, simplex, sseed, sw, sn, ssteps);
    if (fit->parsed())
      return cmd_fit_kef(fdata, fdataset, fn, floss, fsampler, fslices, flambda,
                         fseed, finducing, fgrid, fout);
    if (bench->parsed())
      return cmd_bench_losses(bdata, bdataset, bn, bslices, blambda, bseed,
                              binducing, bout);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s (line %zu)\n", e.what(), e.line);
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
