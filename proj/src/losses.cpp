#include "scorex/losses.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "scorex/fd.hpp"
#include "scorex/rng.hpp"

namespace scorex {

namespace {

constexpr double kTinySliceNorm = 1e-300;

void check_batch(const ScoreModel& model, const Mat& data, const char* where) {
  if (data.rows() == 0) throw EmptyData(std::string(where) + ": empty batch");
  if (data.cols() != model.dim)
    throw ConfigError(std::string(where) + ": data and model dimensions differ");
}

void check_variances(const GoeVariances& v, const char* where) {
  if (v.sigma1_sq < 0.0 || v.sigma2_sq < 0.0 || v.sigma3_sq < 0.0)
    throw ConfigError(std::string(where) + ": variances must be nonnegative");
}

LossResult reduce_per_point(const std::vector<double>& values, std::size_t n_slices,
                            std::size_t skipped) {
  const auto ms = fd::mc_mean_stderr(values);
  LossResult r;
  r.value = ms.mean;
  r.se = ms.se;
  r.n_points = ms.n;
  r.n_slices = n_slices;
  r.skipped_degenerate = skipped;
  return r;
}

struct PointAccum {
  double value = 0.0;
  std::size_t valid = 0;
  std::size_t skipped = 0;
};

// Shared evaluator behind ssm_loss and gssm_loss: with linear slices the
// Hessian and Laplacian terms are exact zeros, so the two losses coincide
// bit for bit on identical draws.
LossResult sliced_loss_core(const ScoreModel& model, const Mat& data,
                            const SliceSampler& sampler, std::size_t slices_per_point,
                            GssmMode mode, std::uint64_t seed, Exec exec,
                            const char* where) {
  check_batch(model, data, where);
  if (sampler.dim != model.dim)
    throw ConfigError(std::string(where) + ": sampler dimension mismatch");
  if (slices_per_point == 0)
    throw ConfigError(std::string(where) + ": need at least one slice per point");

  const std::size_t n = static_cast<std::size_t>(data.rows());
  std::vector<PointAccum> acc(n);
  detail::for_each_index(n, exec, [&](std::size_t i) {
    const Vec x = data.row(static_cast<Eigen::Index>(i)).transpose();
    const Vec s = model.eval(x);
    const Mat j = model.jacobian(x);
    PointAccum a;
    for (std::size_t k = 0; k < slices_per_point; ++k) {
      const SliceDraw d = draw_slice(sampler, x, seed, i, k);
      const double g2 = d.grad_v.squaredNorm();
      if (g2 < kTinySliceNorm) {
        ++a.skipped;
        continue;
      }
      double term;
      if (mode == GssmMode::unnormalized) {
        const double gs = d.grad_v.dot(s);
        const Vec hg = d.hessian_action(d.grad_v);
        term = 0.5 * gs * gs + d.grad_v.dot(j * d.grad_v) + s.dot(hg) +
               gs * d.laplacian;
      } else {
        const double norm = std::sqrt(g2);
        const Vec u = d.grad_v / norm;
        const double us = u.dot(s);
        const Vec hg = d.hessian_action(d.grad_v);
        const double ghg = d.grad_v.dot(hg);
        const double curvature = s.dot(hg) / g2 - s.dot(d.grad_v) * ghg / (g2 * g2);
        const double unit_laplacian = d.laplacian / norm - ghg / (g2 * norm);
        term = 0.5 * us * us + u.dot(j * u) + curvature + us * unit_laplacian;
      }
      a.value += term;
      ++a.valid;
    }
    if (a.valid > 0) a.value /= static_cast<double>(a.valid);
    acc[i] = a;
  });

  std::vector<double> values;
  values.reserve(n);
  std::size_t skipped = 0;
  for (const auto& a : acc) {
    skipped += a.skipped;
    if (a.valid > 0) values.push_back(a.value);
  }
  if (values.empty())
    throw EmptyData(std::string(where) + ": every slice was degenerate");
  LossResult r = reduce_per_point(values, n * slices_per_point, skipped);
  r.n_points = n;
  return r;
}

}  // namespace

GoeVariances default_goe_variances(int n) {
  if (n < 1) throw ConfigError("default_goe_variances: dimension must be positive");
  const double root = std::sqrt(static_cast<double>(n));
  return {2.0 / root, 1.0 / root, 1.0};
}

SliceSampler linear_rademacher_sampler(int n) {
  if (n < 1) throw ConfigError("linear_rademacher_sampler: dimension must be positive");
  return {SliceSampler::Kind::linear_rademacher, n, {}};
}

SliceSampler linear_gaussian_sampler(int n) {
  if (n < 1) throw ConfigError("linear_gaussian_sampler: dimension must be positive");
  return {SliceSampler::Kind::linear_gaussian, n, {}};
}

SliceSampler quadratic_goe_sampler(int n, GoeVariances v) {
  if (n < 1) throw ConfigError("quadratic_goe_sampler: dimension must be positive");
  check_variances(v, "quadratic_goe_sampler");
  return {SliceSampler::Kind::quadratic_goe, n, v};
}

SliceDraw draw_slice(const SliceSampler& sampler, const Vec& x, std::uint64_t seed,
                     std::size_t point, std::size_t slice) {
  if (x.size() != sampler.dim)
    throw ConfigError("draw_slice: point dimension mismatch");
  const int n = sampler.dim;
  rng::Stream s(seed, rng::domain::kSlice, point, slice);
  SliceDraw d;
  switch (sampler.kind) {
    case SliceSampler::Kind::linear_rademacher:
      d.grad_v = s.rademacher_vec(n);
      break;
    case SliceSampler::Kind::linear_gaussian:
      d.grad_v = s.normal_vec(n);
      break;
    case SliceSampler::Kind::quadratic_goe: {
      const auto& v = sampler.variances;
      const double sd1 = std::sqrt(v.sigma1_sq);
      const double sd2 = std::sqrt(v.sigma2_sq);
      const double sd3 = std::sqrt(v.sigma3_sq);
      auto a = std::make_shared<Mat>(Mat::Zero(n, n));
      for (int i = 0; i < n; ++i) (*a)(i, i) = sd1 * s.normal();
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          const double val = sd2 * s.normal();
          (*a)(i, j) = val;
          (*a)(j, i) = val;
        }
      Vec b(n);
      for (int i = 0; i < n; ++i) b[i] = sd3 * s.normal();
      d.grad_v = (*a) * x + b;
      d.laplacian = a->trace();
      d.hessian_action = [a](const Vec& w) { return Vec((*a) * w); };
      d.materialized = true;
      return d;
    }
  }
  d.hessian_action = [](const Vec& w) { return Vec(Vec::Zero(w.size())); };
  d.laplacian = 0.0;
  d.materialized = false;
  return d;
}

Vec goe_action_sample(const Vec& x, double sigma_sq, std::uint64_t seed,
                      std::size_t index) {
  if (sigma_sq < 0.0) throw ConfigError("goe_action_sample: negative variance");
  rng::Stream s(seed, rng::domain::kGoe, index, 0);
  const Vec eps = s.normal_vec(x.size());
  const double z = s.normal();
  return Vec(std::sqrt(0.5 * sigma_sq) * (x.norm() * eps + z * x));
}

Vec gssm_vr_slice_vector(const Vec& x, const GoeVariances& v, std::uint64_t seed,
                         std::size_t point, std::size_t slice) {
  check_variances(v, "gssm_vr_slice_vector");
  if (v.sigma1_sq < 2.0 * v.sigma2_sq)
    throw ConfigError(
        "gssm_vr_slice_vector: implicit sampling needs sigma1_sq >= 2*sigma2_sq");
  rng::Stream s(seed, rng::domain::kGoe, point, slice);
  const Vec eps = s.normal_vec(x.size());
  const double z = s.normal();
  Vec u = std::sqrt(v.sigma2_sq) * (x.norm() * eps + z * x);
  const double diag_sd = std::sqrt(v.sigma1_sq - 2.0 * v.sigma2_sq);
  const Vec d = s.normal_vec(x.size());
  u += diag_sd * d.cwiseProduct(x);
  const double sd3 = std::sqrt(v.sigma3_sq);
  for (Eigen::Index i = 0; i < x.size(); ++i) u[i] += sd3 * s.normal();
  return u;
}

nlohmann::json to_json(const LossResult& r) {
  return nlohmann::json{{"value", r.value},
                        {"stderr", r.se},
                        {"n_points", r.n_points},
                        {"n_slices", r.n_slices},
                        {"skipped_degenerate", r.skipped_degenerate}};
}

LossResult sm_loss(const ScoreModel& model, const Mat& data, Exec exec) {
  check_batch(model, data, "sm_loss");
  const std::size_t n = static_cast<std::size_t>(data.rows());
  std::vector<double> values(n);
  detail::for_each_index(n, exec, [&](std::size_t i) {
    const Vec x = data.row(static_cast<Eigen::Index>(i)).transpose();
    const Vec s = model.eval(x);
    values[i] = 0.5 * s.squaredNorm() + model.jacobian(x).trace();
  });
  return reduce_per_point(values, 0, 0);
}

LossResult ssm_loss(const ScoreModel& model, const Mat& data,
                    const SliceSampler& sampler, std::size_t slices_per_point,
                    std::uint64_t seed, Exec exec) {
  if (sampler.kind == SliceSampler::Kind::quadratic_goe)
    throw ConfigError("ssm_loss: requires a linear slice sampler");
  return sliced_loss_core(model, data, sampler, slices_per_point,
                          GssmMode::unnormalized, seed, exec, "ssm_loss");
}

LossResult ssm_vr_loss(const ScoreModel& model, const Mat& data,
                       const SliceSampler& sampler, std::size_t slices_per_point,
                       std::uint64_t seed, Exec exec) {
  if (sampler.kind == SliceSampler::Kind::quadratic_goe)
    throw ConfigError("ssm_vr_loss: requires a linear slice sampler");
  check_batch(model, data, "ssm_vr_loss");
  if (sampler.dim != model.dim)
    throw ConfigError("ssm_vr_loss: sampler dimension mismatch");
  if (slices_per_point == 0)
    throw ConfigError("ssm_vr_loss: need at least one slice per point");

  const std::size_t n = static_cast<std::size_t>(data.rows());
  std::vector<double> values(n);
  detail::for_each_index(n, exec, [&](std::size_t i) {
    const Vec x = data.row(static_cast<Eigen::Index>(i)).transpose();
    const Vec s = model.eval(x);
    const Mat j = model.jacobian(x);
    double quad = 0.0;
    for (std::size_t k = 0; k < slices_per_point; ++k) {
      const SliceDraw d = draw_slice(sampler, x, seed, i, k);
      quad += d.grad_v.dot(j * d.grad_v);
    }
    values[i] = 0.5 * s.squaredNorm() + quad / static_cast<double>(slices_per_point);
  });
  return reduce_per_point(values, n * slices_per_point, 0);
}

LossResult gssm_loss(const ScoreModel& model, const Mat& data,
                     const SliceSampler& sampler, std::size_t slices_per_point,
                     GssmMode mode, std::uint64_t seed, Exec exec) {
  return sliced_loss_core(model, data, sampler, slices_per_point, mode, seed, exec,
                          "gssm_loss");
}

LossResult gssm_vr_quadratic_loss(const ScoreModel& model, const Mat& data,
                                  const GoeVariances& variances,
                                  std::size_t hessian_slices, std::uint64_t seed,
                                  Exec exec) {
  check_batch(model, data, "gssm_vr_quadratic_loss");
  check_variances(variances, "gssm_vr_quadratic_loss");
  if (variances.sigma1_sq < 2.0 * variances.sigma2_sq)
    throw ConfigError(
        "gssm_vr_quadratic_loss: implicit sampling needs sigma1_sq >= 2*sigma2_sq");
  if (hessian_slices == 0)
    throw ConfigError("gssm_vr_quadratic_loss: need at least one Hessian slice");

  const std::size_t n = static_cast<std::size_t>(data.rows());
  const double dim = static_cast<double>(data.cols());
  std::vector<double> values(n);
  detail::for_each_index(n, exec, [&](std::size_t i) {
    const Vec x = data.row(static_cast<Eigen::Index>(i)).transpose();
    const Vec s = model.eval(x);
    const Mat j = model.jacobian(x);
    const double sx = s.dot(x);
    const double l1 =
        (variances.sigma1_sq - 2.0 * variances.sigma2_sq) *
            s.array().square().matrix().dot(x.array().square().matrix()) +
        variances.sigma2_sq * (x.squaredNorm() * s.squaredNorm() + sx * sx) +
        variances.sigma3_sq * s.squaredNorm();
    const double l2 =
        (2.0 * variances.sigma1_sq + (dim - 1.0) * variances.sigma2_sq) * sx;
    double l3 = 0.0;
    for (std::size_t k = 0; k < hessian_slices; ++k) {
      const Vec u = gssm_vr_slice_vector(x, variances, seed, i, k);
      l3 += u.dot(j * u);
    }
    values[i] = 0.5 * l1 + l2 + l3 / static_cast<double>(hessian_slices);
  });
  return reduce_per_point(values, n * hessian_slices, 0);
}

LossResult weighted_dsm_loss(const ScoreField& model, const DiffeoTransform& phi,
                             const VpSchedule& vp, const Mat& data0, const Vec& times,
                             std::uint64_t seed, Exec exec) {
  if (data0.rows() == 0) throw EmptyData("weighted_dsm_loss: empty batch");
  if (times.size() != data0.rows())
    throw ConfigError("weighted_dsm_loss: one time per data row required");
  if (data0.cols() != model.dim || phi.dim_in != model.dim)
    throw ConfigError("weighted_dsm_loss: dimension mismatch");

  const std::size_t n = static_cast<std::size_t>(data0.rows());
  std::vector<double> values(n);
  detail::for_each_index(n, exec, [&](std::size_t i) {
    const double t = times[static_cast<Eigen::Index>(i)];
    if (t < vp.t_min)
      throw DomainError("weighted_dsm_loss: time below the schedule floor");
    const Vec x0 = data0.row(static_cast<Eigen::Index>(i)).transpose();
    const double b = vp.beta_integral(t);
    const double mean_scale = std::exp(-0.5 * b);
    const double var = 1.0 - std::exp(-b);
    rng::Stream s(seed, rng::domain::kDsm, i, 0);
    const Vec x = mean_scale * x0 + std::sqrt(var) * s.normal_vec(x0.size());
    const Vec residual = model.eval(x, t) - vp_conditional_score(vp, x, x0, t);
    // J_{phi^{-1}}(phi(x))^T r = J_phi(x)^{-T} r.
    const Mat jt = phi.jacobian(x, t).transpose();
    const Vec weighted = jt.partialPivLu().solve(residual);
    values[i] = var * weighted.squaredNorm();
  });
  return reduce_per_point(values, 0, 0);
}

namespace {

void check_allowed_keys(const nlohmann::json& obj,
                        std::initializer_list<const char*> allowed,
                        std::initializer_list<const char*> required,
                        const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) known = true;
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
  for (const char* k : required)
    if (!obj.contains(k)) throw ConfigError(where + ": missing key '" + std::string(k) + "'");
}

GoeVariances variances_from_json(const nlohmann::json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3)
    throw ConfigError(where + ": 'variances' must be an array of three numbers");
  GoeVariances out;
  out.sigma1_sq = v.at(0).get<double>();
  out.sigma2_sq = v.at(1).get<double>();
  out.sigma3_sq = v.at(2).get<double>();
  check_variances(out, where.c_str());
  return out;
}

}  // namespace

LossConfig loss_config_from_json(const nlohmann::json& desc, int dim) {
  const std::string where = "loss config";
  if (!desc.is_object() || !desc.contains("loss"))
    throw ConfigError(where + ": missing key 'loss'");
  LossConfig cfg;
  cfg.loss = desc.at("loss").get<std::string>();
  cfg.variances = default_goe_variances(dim);

  auto read_seed = [&] {
    if (desc.contains("seed")) cfg.seed = desc.at("seed").get<std::uint64_t>();
  };
  auto read_slices = [&] {
    const auto v = desc.at("slices_per_point").get<long long>();
    if (v < 1) throw ConfigError(where + ": 'slices_per_point' must be positive");
    cfg.slices_per_point = static_cast<std::size_t>(v);
  };
  auto read_sampler = [&](bool allow_quadratic) {
    const std::string kind = desc.at("sampler").get<std::string>();
    if (kind == "rademacher") {
      cfg.sampler = linear_rademacher_sampler(dim);
    } else if (kind == "gaussian") {
      cfg.sampler = linear_gaussian_sampler(dim);
    } else if (kind == "goe") {
      if (!allow_quadratic)
        throw ConfigError(where + ": '" + cfg.loss + "' requires a linear sampler");
      if (desc.contains("variances"))
        cfg.variances = variances_from_json(desc.at("variances"), where);
      cfg.sampler = quadratic_goe_sampler(dim, cfg.variances);
    } else {
      throw ConfigError(where + ": unknown sampler '" + kind + "'");
    }
  };

  if (cfg.loss == "sm") {
    check_allowed_keys(desc, {"loss", "seed"}, {"loss"}, where);
    read_seed();
  } else if (cfg.loss == "ssm" || cfg.loss == "ssm-vr") {
    check_allowed_keys(desc, {"loss", "sampler", "slices_per_point", "seed"},
                       {"loss", "sampler", "slices_per_point"}, where);
    read_sampler(false);
    read_slices();
    read_seed();
  } else if (cfg.loss == "gssm") {
    check_allowed_keys(desc,
                       {"loss", "sampler", "slices_per_point", "seed", "mode",
                        "variances"},
                       {"loss", "sampler", "slices_per_point"}, where);
    read_sampler(true);
    read_slices();
    read_seed();
    if (desc.contains("mode")) {
      const std::string mode = desc.at("mode").get<std::string>();
      if (mode == "normalized")
        cfg.mode = GssmMode::normalized;
      else if (mode == "unnormalized")
        cfg.mode = GssmMode::unnormalized;
      else
        throw ConfigError(where + ": unknown mode '" + mode + "'");
    }
  } else if (cfg.loss == "gssm-vr") {
    check_allowed_keys(desc,
                       {"loss", "slices_per_point", "seed", "mode", "variances"},
                       {"loss", "slices_per_point"}, where);
    if (desc.contains("mode") && desc.at("mode").get<std::string>() != "unnormalized")
      throw ConfigError(where + ": no normalized variance-reduced form exists");
    if (desc.contains("variances"))
      cfg.variances = variances_from_json(desc.at("variances"), where);
    read_slices();
    read_seed();
  } else {
    throw ConfigError(where + ": unknown loss '" + cfg.loss + "'");
  }
  return cfg;
}

LossResult evaluate_loss(const LossConfig& cfg, const ScoreModel& model,
                         const Mat& data, Exec exec) {
  if (cfg.loss == "sm") return sm_loss(model, data, exec);
  if (cfg.loss == "ssm")
    return ssm_loss(model, data, cfg.sampler, cfg.slices_per_point, cfg.seed, exec);
  if (cfg.loss == "ssm-vr")
    return ssm_vr_loss(model, data, cfg.sampler, cfg.slices_per_point, cfg.seed, exec);
  if (cfg.loss == "gssm")
    return gssm_loss(model, data, cfg.sampler, cfg.slices_per_point, cfg.mode,
                     cfg.seed, exec);
  if (cfg.loss == "gssm-vr")
    return gssm_vr_quadratic_loss(model, data, cfg.variances, cfg.slices_per_point,
                                  cfg.seed, exec);
  throw ConfigError("evaluate_loss: unknown loss '" + cfg.loss + "'");
}

}  // namespace scorex
