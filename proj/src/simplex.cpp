#include "scorex/simplex.hpp"

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "scorex/rng.hpp"

namespace scorex {

namespace {

void check_interior(const Vec& y, double margin, const char* where) {
  if (y.size() == 0) throw DomainError(std::string(where) + ": empty point");
  const double rem = 1.0 - y.sum();
  if (!(y.minCoeff() >= margin) || !(rem >= margin) || !y.allFinite())
    throw DomainError(std::string(where) + ": point outside the open simplex");
}

// Projects y back to the clamped interior: floor every coordinate at the
// margin, then shrink the excess above the floor so the total stays at or
// below 1 - margin.  Coordinates never drop below the floor, so the result
// is strictly interior.  Returns whether anything moved.
bool clamp_interior(Vec& y, double margin) {
  bool moved = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] < margin) {
      y[i] = margin;
      moved = true;
    }
  }
  const double floor_total = margin * static_cast<double>(y.size());
  const double budget = 1.0 - margin - floor_total;
  const double excess = y.sum() - floor_total;
  if (excess > budget) {
    y = ((y.array() - margin) * (budget / excess) + margin).matrix();
    moved = true;
  }
  return moved;
}

}  // namespace

double simplex_remainder(const Vec& y, double margin) {
  check_interior(y, margin, "simplex_remainder");
  return 1.0 - y.sum();
}

Vec soften_onehot(int class_index, int class_count, double epsilon) {
  if (class_count < 2) throw ConfigError("soften_onehot: need at least two classes");
  const int k = class_count - 1;
  if (class_index < 0 || class_index > k)
    throw ConfigError("soften_onehot: class index out of range");
  if (!(epsilon >= kSimplexMargin) || !(epsilon < 1.0 / class_count))
    throw ConfigError("soften_onehot: epsilon must lie in [1e-9, 1/class_count)");
  Vec y = Vec::Constant(k, epsilon);
  if (class_index > 0) y[class_index - 1] = 1.0 - k * epsilon;
  return y;
}

int simplex_argmax_class(const Vec& y) {
  const double rem = simplex_remainder(y);
  Eigen::Index best = 0;
  const double top = y.maxCoeff(&best);
  return rem >= top ? 0 : static_cast<int>(best) + 1;
}

Vec default_class_frequencies(int class_count) {
  if (class_count < 2)
    throw ConfigError("default_class_frequencies: need at least two classes");
  Vec f = Vec::Ones(class_count);
  f[0] = 0.5;
  return f / f.sum();
}

CategoricalSource make_categorical_source(const Vec& class_frequencies, double epsilon,
                                          double component_sigma) {
  const int c = static_cast<int>(class_frequencies.size());
  if (c < 2) throw ConfigError("make_categorical_source: need at least two classes");
  if (class_frequencies.minCoeff() < 0.0 ||
      std::abs(class_frequencies.sum() - 1.0) > 1e-12)
    throw ConfigError(
        "make_categorical_source: frequencies must be nonnegative and sum to one");
  if (!(component_sigma > 0.0))
    throw ConfigError("make_categorical_source: component sigma must be positive");
  const int k = c - 1;
  const DiffeoTransform logistic = additive_logistic_transform(k);
  CategoricalSource src;
  src.class_count = c;
  src.epsilon = epsilon;
  src.mixture.dim = k;
  for (int cls = 0; cls < c; ++cls) {
    src.mixture.weights.push_back(class_frequencies[cls]);
    src.mixture.means.push_back(logistic.inverse(soften_onehot(cls, c, epsilon), 0.0));
    src.mixture.variances.push_back(component_sigma * component_sigma);
  }
  return src;
}

SimplexReverseCoeffs simplex_reverse_coeffs(const VpSchedule& vp,
                                            const ScoreField& score_x, const Vec& y,
                                            double t) {
  check_interior(y, kSimplexMargin, "simplex_reverse_coeffs");
  if (!(t >= vp.t_min))
    throw DomainError("simplex_reverse_coeffs: time below the schedule floor");
  const double rem = 1.0 - y.sum();
  const Vec x = (y.array() / rem).log().matrix();
  const double beta = vp.beta(t);
  const double g = std::sqrt(beta);
  const Vec rdrift = -0.5 * beta * x - beta * score_x.eval(x, t);
  const Vec kvec = (rdrift.array() + beta * (y.array() - 0.5)).matrix();
  SimplexReverseCoeffs out;
  out.drift = (y.array() * (kvec.array() - y.dot(kvec))).matrix();
  out.diffusion = -g * (y * y.transpose());
  out.diffusion.diagonal() += g * y;
  return out;
}

Vec scale_drift(const Vec& drift, double w) { return w * drift; }

Vec simplex_diffusion_action(const Vec& y, double g, const Vec& z) {
  return g * (y.array() * z.array() - y.dot(z) * y.array()).matrix();
}

SimplexRunResult run_simplex_sampler(const CategoricalSource& source,
                                     const VpSchedule& vp, double w,
                                     std::size_t n_samples, std::size_t steps,
                                     std::uint64_t seed, Exec exec) {
  if (source.class_count < 2 || source.mixture.dim != source.class_count - 1)
    throw ConfigError("run_simplex_sampler: inconsistent source");
  if (n_samples == 0 || steps == 0)
    throw ConfigError("run_simplex_sampler: need samples and steps");
  const int k = source.mixture.dim;
  const ScoreField score = vp_marginal_score_field(source.mixture, vp);
  const DiffeoTransform logistic = additive_logistic_transform(k);
  const double t1 = 1.0;
  const double h = (t1 - vp.t_min) / static_cast<double>(steps);

  SimplexRunResult out;
  out.samples.resize(static_cast<Eigen::Index>(n_samples), k);
  std::vector<std::size_t> clamps(n_samples, 0);

  detail::for_each_index(n_samples, exec, [&](std::size_t i) {
    const Vec x0 = rng::Stream(seed, rng::domain::kInitDraw, i, 0).normal_vec(k);
    Vec y = logistic.forward(x0, t1);
    for (std::size_t step = 0; step < steps; ++step) {
      const double t = t1 - static_cast<double>(step) * h;
      const double rem = 1.0 - y.sum();
      const Vec x = (y.array() / rem).log().matrix();
      const double beta = vp.beta(t);
      const Vec rdrift = -0.5 * beta * x - beta * score.eval(x, t);
      const Vec kvec = (rdrift.array() + beta * (y.array() - 0.5)).matrix();
      const Vec drift = w * (y.array() * (kvec.array() - y.dot(kvec))).matrix();
      const Vec z = rng::Stream(seed, rng::domain::kPathNoise, i, step).normal_vec(k);
      y += -h * drift +
           std::sqrt(h) * simplex_diffusion_action(y, std::sqrt(beta), z);
      if (!y.allFinite())
        throw NumericalBlowup("run_simplex_sampler: non-finite state", step);
      if (clamp_interior(y, kSimplexClampMargin)) ++clamps[i];
    }
    out.samples.row(static_cast<Eigen::Index>(i)) = y.transpose();
  });

  out.class_histogram = Vec::Zero(source.class_count);
  double mass = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Vec y = out.samples.row(static_cast<Eigen::Index>(i)).transpose();
    mass += simplex_remainder(y);
    out.class_histogram[simplex_argmax_class(y)] += 1.0;
    out.clamp_events += clamps[i];
  }
  out.mean_empty_mass = mass / static_cast<double>(n_samples);
  out.clamp_rate = static_cast<double>(out.clamp_events) /
                   (static_cast<double>(n_samples) * static_cast<double>(steps));
  return out;
}

SimplexRunResult run_simplex_lab(const SimplexLabConfig& cfg, Exec exec) {
  if (cfg.k < 1) throw ConfigError("run_simplex_lab: k must be positive");
  const Vec freq = cfg.class_frequencies.size() > 0
                       ? cfg.class_frequencies
                       : default_class_frequencies(cfg.k + 1);
  if (freq.size() != cfg.k + 1)
    throw ConfigError("run_simplex_lab: class frequencies must have k + 1 entries");
  const CategoricalSource src =
      make_categorical_source(freq, cfg.epsilon, cfg.component_sigma);
  const VpSchedule vp = linear_vp_schedule(cfg.beta_min, cfg.beta_max);
  return run_simplex_sampler(src, vp, cfg.w, cfg.n_samples, cfg.steps, cfg.seed, exec);
}

namespace {

void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed)
      if (item.key() == key) known = true;
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace

SimplexLabConfig simplex_config_from_json(const nlohmann::json& desc) {
  const std::string where = "simplex config";
  check_keys(desc,
             {"k", "epsilon", "w", "n_samples", "steps", "seed", "schedule",
              "component_sigma", "class_frequencies"},
             where);
  SimplexLabConfig cfg;
  try {
    if (desc.contains("k")) cfg.k = desc.at("k").get<int>();
    if (desc.contains("epsilon")) cfg.epsilon = desc.at("epsilon").get<double>();
    if (desc.contains("w")) cfg.w = desc.at("w").get<double>();
    if (desc.contains("n_samples"))
      cfg.n_samples = desc.at("n_samples").get<std::size_t>();
    if (desc.contains("steps")) cfg.steps = desc.at("steps").get<std::size_t>();
    if (desc.contains("seed")) cfg.seed = desc.at("seed").get<std::uint64_t>();
    if (desc.contains("component_sigma"))
      cfg.component_sigma = desc.at("component_sigma").get<double>();
    if (desc.contains("schedule")) {
      const auto& s = desc.at("schedule");
      check_keys(s, {"beta_min", "beta_max"}, where + ".schedule");
      if (s.contains("beta_min")) cfg.beta_min = s.at("beta_min").get<double>();
      if (s.contains("beta_max")) cfg.beta_max = s.at("beta_max").get<double>();
    }
    if (desc.contains("class_frequencies")) {
      const auto& f = desc.at("class_frequencies");
      if (!f.is_array()) throw ConfigError(where + ": class_frequencies must be an array");
      cfg.class_frequencies.resize(static_cast<Eigen::Index>(f.size()));
      for (std::size_t i = 0; i < f.size(); ++i)
        cfg.class_frequencies[static_cast<Eigen::Index>(i)] = f.at(i).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return cfg;
}

nlohmann::json simplex_stats_to_json(const SimplexRunResult& r) {
  nlohmann::json j;
  j["mean_empty_mass"] = r.mean_empty_mass;
  std::vector<double> hist(r.class_histogram.data(),
                           r.class_histogram.data() + r.class_histogram.size());
  j["class_histogram"] = hist;
  j["clamp_rate"] = r.clamp_rate;
  return j;
}

}  // namespace scorex
