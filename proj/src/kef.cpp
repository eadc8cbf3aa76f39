#include "scorex/kef.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scorex/rng.hpp"

namespace scorex {

namespace {

constexpr double kTinySliceNorm = 1e-300;  // matches the loss evaluators
constexpr std::size_t kAssemblyBlock = 64;

void check_mixture(const KernelMixture& m) {
  if (m.weights.empty() || m.weights.size() != m.sigmas.size())
    throw ConfigError("kernel mixture: weights and sigmas must align and be nonempty");
  double sum = 0.0;
  for (double w : m.weights) {
    if (w < 0.0) throw ConfigError("kernel mixture: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw ConfigError("kernel mixture: weights must sum to one");
  for (double s : m.sigmas)
    if (!(s > 0.0)) throw ConfigError("kernel mixture: bandwidths must be positive");
}

void check_structure(const KefModel& model) {
  check_mixture(model.mixture);
  if (model.inducing.rows() < 1)
    throw ConfigError("kef model: need at least one inducing point");
  if (model.base.mean.size() != model.inducing.cols())
    throw ConfigError("kef model: base mean dimension mismatch");
  if (!(model.base.variance > 0.0))
    throw ConfigError("kef model: base variance must be positive");
}

// Kernel gradients, Hessian traces, and the base score at one data point.
struct PointKernels {
  Mat grads;              // n x L
  std::vector<Mat> hess;  // L Hessians, n x n each
  Vec trace_h;            // L
  Vec h;                  // base score
};

PointKernels point_kernels(const KefModel& model, const Vec& x) {
  const Eigen::Index l_count = model.inducing.rows();
  const Eigen::Index n = x.size();
  PointKernels pk;
  pk.grads.resize(n, l_count);
  pk.hess.resize(static_cast<std::size_t>(l_count));
  pk.trace_h.resize(l_count);
  pk.h = base_score(model.base, x);
  for (Eigen::Index l = 0; l < l_count; ++l) {
    const auto kd = kernel_derivatives(model.mixture, x, model.inducing.row(l).transpose());
    pk.grads.col(l) = kd.gradient;
    pk.hess[static_cast<std::size_t>(l)] = kd.hessian;
    pk.trace_h[l] = kd.hessian.trace();
  }
  return pk;
}

struct FormAccum {
  Mat g1;
  Vec b;
  double c = 0.0;
  std::size_t valid_points = 0;
};

// Adds one slice's contribution given the (possibly rescaled) slice gradient,
// the vector u with s'H~g = s'u, and the Laplacian term.
void add_slice_terms(FormAccum& acc, const PointKernels& pk, double base_variance,
                     const Vec& gvec, const Vec& uvec, double lap, double weight) {
  const Vec w = pk.grads.transpose() * gvec;
  const double t0 = gvec.dot(pk.h);
  Vec q(pk.trace_h.size());
  for (Eigen::Index l = 0; l < q.size(); ++l)
    q[l] = gvec.dot(pk.hess[static_cast<std::size_t>(l)] * gvec);
  acc.g1 += weight * (w * w.transpose());
  acc.b += weight * (t0 * w + q + pk.grads.transpose() * uvec + lap * w);
  acc.c += weight * (0.5 * t0 * t0 - gvec.squaredNorm() / base_variance +
                     pk.h.dot(uvec) + lap * t0);
}

}  // namespace

KernelMixture default_kernel_mixture() {
  return {{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, {0.5, 1.0, 2.0}};
}

void validate_kef(const KefModel& model) {
  check_structure(model);
  if (model.alpha.size() != model.inducing.rows())
    throw ConfigError("kef model: alpha length must match the inducing points");
}

KernelDerivatives kernel_derivatives(const KernelMixture& mixture, const Vec& x,
                                     const Vec& z) {
  check_mixture(mixture);
  if (x.size() != z.size())
    throw ConfigError("kernel_derivatives: point dimensions differ");
  const Eigen::Index n = x.size();
  const Vec d = x - z;
  const double d2 = d.squaredNorm();
  KernelDerivatives out;
  out.gradient = Vec::Zero(n);
  out.hessian = Mat::Zero(n, n);
  for (std::size_t r = 0; r < mixture.weights.size(); ++r) {
    const double s2 = mixture.sigmas[r] * mixture.sigmas[r];
    const double e = mixture.weights[r] * std::exp(-0.5 * d2 / s2);
    out.value += e;
    out.gradient -= (e / s2) * d;
    out.hessian += e * (d * d.transpose() / (s2 * s2) - Mat::Identity(n, n) / s2);
  }
  return out;
}

KernelDerivatives kernel_derivatives(const KefModel& model, const Vec& x, const Vec& z) {
  return kernel_derivatives(model.mixture, x, z);
}

Vec base_score(const GaussianBase& base, const Vec& x) {
  return Vec(-(x - base.mean) / base.variance);
}

Vec kef_score(const KefModel& model, const Vec& x) {
  Vec s = base_score(model.base, x);
  for (Eigen::Index l = 0; l < model.inducing.rows(); ++l)
    s += model.alpha[l] *
         kernel_derivatives(model.mixture, x, model.inducing.row(l).transpose()).gradient;
  return s;
}

ScoreModel kef_score_model(const KefModel& model) {
  validate_kef(model);
  ScoreModel m;
  m.dim = static_cast<int>(model.inducing.cols());
  m.eval = [model](const Vec& x) { return kef_score(model, x); };
  m.jacobian = [model](const Vec& x) {
    const Eigen::Index n = x.size();
    Mat j = -Mat::Identity(n, n) / model.base.variance;
    for (Eigen::Index l = 0; l < model.inducing.rows(); ++l)
      j += model.alpha[l] *
           kernel_derivatives(model.mixture, x, model.inducing.row(l).transpose()).hessian;
    return j;
  };
  return m;
}

KefLoss kef_loss_from_string(const std::string& name) {
  if (name == "sm") return KefLoss::sm;
  if (name == "ssm") return KefLoss::ssm;
  if (name == "ssm-vr") return KefLoss::ssm_vr;
  if (name == "gssm") return KefLoss::gssm;
  if (name == "gssm-vr") return KefLoss::gssm_vr;
  throw ConfigError("unknown loss '" + name + "'");
}

std::string to_string(KefLoss loss) {
  switch (loss) {
    case KefLoss::sm: return "sm";
    case KefLoss::ssm: return "ssm";
    case KefLoss::ssm_vr: return "ssm-vr";
    case KefLoss::gssm: return "gssm";
    case KefLoss::gssm_vr: return "gssm-vr";
  }
  throw ConfigError("unknown loss enum value");
}

QuadraticLossForm assemble_quadratic(const KefModel& model, const Mat& data,
                                     KefLoss loss, const SliceSampler& sampler,
                                     std::size_t slices_per_point, GssmMode mode,
                                     std::uint64_t seed, Exec exec) {
  check_structure(model);
  if (data.rows() == 0) throw EmptyData("assemble_quadratic: empty batch");
  if (data.cols() != model.inducing.cols())
    throw ConfigError("assemble_quadratic: data dimension mismatch");

  const bool sliced = loss != KefLoss::sm;
  if (sliced && slices_per_point == 0)
    throw ConfigError("assemble_quadratic: need at least one slice per point");
  if ((loss == KefLoss::ssm || loss == KefLoss::ssm_vr) &&
      sampler.kind == SliceSampler::Kind::quadratic_goe)
    throw ConfigError("assemble_quadratic: this loss requires a linear sampler");
  if (loss == KefLoss::gssm_vr) {
    if (sampler.kind != SliceSampler::Kind::quadratic_goe)
      throw ConfigError("assemble_quadratic: variance-reduced form needs a quadratic sampler");
    if (mode == GssmMode::normalized)
      throw ConfigError("assemble_quadratic: no normalized variance-reduced form exists");
  }
  if (sliced && sampler.dim != data.cols())
    throw ConfigError("assemble_quadratic: sampler dimension mismatch");

  const Eigen::Index l_count = model.inducing.rows();
  const Eigen::Index n = data.cols();
  const double v = model.base.variance;
  const std::size_t n_points = static_cast<std::size_t>(data.rows());
  const std::size_t n_blocks = (n_points + kAssemblyBlock - 1) / kAssemblyBlock;

  std::vector<FormAccum> blocks(n_blocks);
  detail::for_each_index(n_blocks, exec, [&](std::size_t blk) {
    FormAccum acc;
    acc.g1 = Mat::Zero(l_count, l_count);
    acc.b = Vec::Zero(l_count);
    const std::size_t lo = blk * kAssemblyBlock;
    const std::size_t hi = std::min(n_points, lo + kAssemblyBlock);
    for (std::size_t i = lo; i < hi; ++i) {
      const Vec x = data.row(static_cast<Eigen::Index>(i)).transpose();
      const PointKernels pk = point_kernels(model, x);
      switch (loss) {
        case KefLoss::sm: {
          acc.g1 += pk.grads.transpose() * pk.grads;
          acc.b += pk.grads.transpose() * pk.h + pk.trace_h;
          acc.c += 0.5 * pk.h.squaredNorm() - static_cast<double>(n) / v;
          ++acc.valid_points;
          break;
        }
        case KefLoss::ssm:
        case KefLoss::gssm: {
          FormAccum point;
          point.g1 = Mat::Zero(l_count, l_count);
          point.b = Vec::Zero(l_count);
          std::size_t valid = 0;
          for (std::size_t k = 0; k < slices_per_point; ++k) {
            const SliceDraw d = draw_slice(sampler, x, seed, i, k);
            const double g2 = d.grad_v.squaredNorm();
            if (g2 < kTinySliceNorm) continue;
            if (mode == GssmMode::unnormalized || loss == KefLoss::ssm) {
              const Vec hg = d.hessian_action(d.grad_v);
              add_slice_terms(point, pk, v, d.grad_v, hg, d.laplacian, 1.0);
            } else {
              const double norm = std::sqrt(g2);
              const Vec gvec = d.grad_v / norm;
              const Vec hg = d.hessian_action(d.grad_v);
              const double ghg = d.grad_v.dot(hg);
              const Vec uvec = hg / g2 - d.grad_v * (ghg / (g2 * g2));
              const double lap = d.laplacian / norm - ghg / (g2 * norm);
              add_slice_terms(point, pk, v, gvec, uvec, lap, 1.0);
            }
            ++valid;
          }
          if (valid > 0) {
            const double scale = 1.0 / static_cast<double>(valid);
            acc.g1 += scale * point.g1;
            acc.b += scale * point.b;
            acc.c += scale * point.c;
            ++acc.valid_points;
          }
          break;
        }
        case KefLoss::ssm_vr: {
          acc.g1 += pk.grads.transpose() * pk.grads;
          acc.b += pk.grads.transpose() * pk.h;
          acc.c += 0.5 * pk.h.squaredNorm();
          Vec q = Vec::Zero(l_count);
          double cq = 0.0;
          for (std::size_t k = 0; k < slices_per_point; ++k) {
            const SliceDraw d = draw_slice(sampler, x, seed, i, k);
            for (Eigen::Index l = 0; l < l_count; ++l)
              q[l] += d.grad_v.dot(pk.hess[static_cast<std::size_t>(l)] * d.grad_v);
            cq -= d.grad_v.squaredNorm() / v;
          }
          const double scale = 1.0 / static_cast<double>(slices_per_point);
          acc.b += scale * q;
          acc.c += scale * cq;
          ++acc.valid_points;
          break;
        }
        case KefLoss::gssm_vr: {
          const auto& vr = sampler.variances;
          const Mat m_weight =
              (vr.sigma1_sq - 2.0 * vr.sigma2_sq) *
                  Mat(x.array().square().matrix().asDiagonal()) +
              vr.sigma2_sq * (x.squaredNorm() * Mat::Identity(n, n) +
                              x * x.transpose()) +
              vr.sigma3_sq * Mat::Identity(n, n);
          const Mat mg = m_weight * pk.grads;
          acc.g1 += pk.grads.transpose() * mg;
          acc.b += mg.transpose() * pk.h;
          acc.c += 0.5 * pk.h.dot(m_weight * pk.h);

          const double kappa =
              2.0 * vr.sigma1_sq + (static_cast<double>(n) - 1.0) * vr.sigma2_sq;
          acc.b += kappa * (pk.grads.transpose() * x);
          acc.c += kappa * pk.h.dot(x);

          Vec q = Vec::Zero(l_count);
          double cq = 0.0;
          for (std::size_t k = 0; k < slices_per_point; ++k) {
            const Vec u = gssm_vr_slice_vector(x, vr, seed, i, k);
            for (Eigen::Index l = 0; l < l_count; ++l)
              q[l] += u.dot(pk.hess[static_cast<std::size_t>(l)] * u);
            cq -= u.squaredNorm() / v;
          }
          const double scale = 1.0 / static_cast<double>(slices_per_point);
          acc.b += scale * q;
          acc.c += scale * cq;
          ++acc.valid_points;
          break;
        }
      }
    }
    blocks[blk] = std::move(acc);
  });

  QuadraticLossForm form;
  form.g1 = Mat::Zero(l_count, l_count);
  form.b = Vec::Zero(l_count);
  std::size_t valid_points = 0;
  for (const auto& blk : blocks) {
    form.g1 += blk.g1;
    form.b += blk.b;
    form.c += blk.c;
    valid_points += blk.valid_points;
  }
  if (valid_points == 0)
    throw EmptyData("assemble_quadratic: every slice was degenerate");
  const double scale = 1.0 / static_cast<double>(valid_points);
  const Mat symmetrized = 0.5 * scale * (form.g1 + form.g1.transpose());
  form.g1 = symmetrized;
  form.b *= scale;
  form.c *= scale;
  return form;
}

LossResult evaluate_kef_loss(const KefModel& model, const Mat& data, KefLoss loss,
                             const SliceSampler& sampler, std::size_t slices_per_point,
                             GssmMode mode, std::uint64_t seed, Exec exec) {
  const ScoreModel m = kef_score_model(model);
  switch (loss) {
    case KefLoss::sm:
      return sm_loss(m, data, exec);
    case KefLoss::ssm:
      return ssm_loss(m, data, sampler, slices_per_point, seed, exec);
    case KefLoss::ssm_vr:
      return ssm_vr_loss(m, data, sampler, slices_per_point, seed, exec);
    case KefLoss::gssm:
      return gssm_loss(m, data, sampler, slices_per_point, mode, seed, exec);
    case KefLoss::gssm_vr:
      if (sampler.kind != SliceSampler::Kind::quadratic_goe)
        throw ConfigError("evaluate_kef_loss: variance-reduced form needs a quadratic sampler");
      if (mode == GssmMode::normalized)
        throw ConfigError("evaluate_kef_loss: no normalized variance-reduced form exists");
      return gssm_vr_quadratic_loss(m, data, sampler.variances, slices_per_point,
                                    seed, exec);
  }
  throw ConfigError("evaluate_kef_loss: unknown loss enum value");
}

Vec solve_alpha(const QuadraticLossForm& form, double lambda) {
  if (lambda < 0.0) throw ConfigError("solve_alpha: lambda must be nonnegative");
  const Eigen::Index l_count = form.b.size();
  if (form.g1.rows() != l_count || form.g1.cols() != l_count)
    throw ConfigError("solve_alpha: form dimensions disagree");

  const Mat a = form.g1 + lambda * Mat::Identity(l_count, l_count);
  const auto ldlt = a.ldlt();
  if (ldlt.info() != Eigen::Success)
    throw SingularSystem("solve_alpha: factorization failed; increase lambda");
  Vec alpha = ldlt.solve(-form.b);
  Vec grad = a * alpha + form.b;
  alpha -= ldlt.solve(grad);
  grad = a * alpha + form.b;
  if (grad.norm() > 1e-8 * (1.0 + form.b.norm()))
    throw SingularSystem("solve_alpha: residual gradient too large; increase lambda");
  return alpha;
}

KefFitResult kef_fit(const Mat& data, KefLoss loss, const SliceSampler& sampler,
                     std::size_t slices_per_point, GssmMode mode, double lambda,
                     std::uint64_t seed, const KefFitOptions& opts, Exec exec) {
  if (data.rows() == 0) throw EmptyData("kef_fit: empty batch");
  if (opts.inducing_count < 1)
    throw ConfigError("kef_fit: need at least one inducing point");

  KefModel model;
  model.mixture = opts.mixture;
  check_mixture(model.mixture);

  const Eigen::Index l_count = static_cast<Eigen::Index>(opts.inducing_count);
  if (opts.grid_inducing) {
    if (data.cols() != 1)
      throw ConfigError("kef_fit: grid inducing points are one-dimensional");
    if (!(opts.grid_hi > opts.grid_lo))
      throw ConfigError("kef_fit: grid bounds out of order");
    model.inducing.resize(l_count, 1);
    if (l_count == 1) {
      model.inducing(0, 0) = 0.5 * (opts.grid_lo + opts.grid_hi);
    } else {
      const double step = (opts.grid_hi - opts.grid_lo) /
                          static_cast<double>(l_count - 1);
      for (Eigen::Index l = 0; l < l_count; ++l)
        model.inducing(l, 0) = opts.grid_lo + step * static_cast<double>(l);
    }
  } else {
    if (l_count > data.rows())
      throw ConfigError("kef_fit: more inducing points than data rows");
    std::vector<std::size_t> idx(static_cast<std::size_t>(data.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    rng::Stream pick(seed, rng::domain::kData, 0, 1);
    for (Eigen::Index l = 0; l < l_count; ++l) {
      const std::size_t remaining = idx.size() - static_cast<std::size_t>(l);
      const double u = pick.uniform();
      std::size_t offset = static_cast<std::size_t>(u * static_cast<double>(remaining));
      offset = std::min(offset, remaining - 1);
      std::swap(idx[static_cast<std::size_t>(l)],
                idx[static_cast<std::size_t>(l) + offset]);
    }
    model.inducing.resize(l_count, data.cols());
    for (Eigen::Index l = 0; l < l_count; ++l)
      model.inducing.row(l) = data.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(l)]));
  }

  if (opts.base.has_value()) {
    model.base = *opts.base;
  } else {
    const Vec mean = data.colwise().mean().transpose();
    const Mat centered = data.rowwise() - mean.transpose();
    const double denom =
        static_cast<double>(std::max<Eigen::Index>(data.rows() - 1, 1) * data.cols());
    const double variance = 2.0 * centered.squaredNorm() / denom;
    if (!(variance > 0.0))
      throw ConfigError("kef_fit: data has no spread; supply a base density");
    model.base = {mean, variance};
  }

  KefFitResult result;
  result.form = assemble_quadratic(model, data, loss, sampler, slices_per_point, mode,
                                   seed, exec);
  model.alpha = solve_alpha(result.form, lambda);
  result.achieved_loss = 0.5 * model.alpha.dot(result.form.g1 * model.alpha) +
                         result.form.b.dot(model.alpha) + result.form.c;
  result.model = std::move(model);
  return result;
}

namespace {

nlohmann::json matrix_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const nlohmann::json& rows, const char* where) {
  if (!rows.is_array() || rows.empty())
    throw ConfigError(std::string(where) + ": expected a nonempty array of rows");
  const std::size_t cols = rows.at(0).size();
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows.at(i);
    if (!row.is_array() || row.size() != cols)
      throw ConfigError(std::string(where) + ": ragged rows");
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          row.at(j).get<double>();
  }
  return m;
}

Vec vector_from_json(const nlohmann::json& arr, const char* where) {
  if (!arr.is_array())
    throw ConfigError(std::string(where) + ": expected an array");
  Vec v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = arr.at(i).get<double>();
  return v;
}

void require_keys(const nlohmann::json& obj, std::initializer_list<const char*> keys,
                  const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : keys)
      if (item.key() == k) known = true;
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
  for (const char* k : keys)
    if (!obj.contains(k))
      throw ConfigError(where + ": missing key '" + std::string(k) + "'");
}

}  // namespace

nlohmann::json kef_to_json(const KefModel& model) {
  validate_kef(model);
  nlohmann::json alpha = nlohmann::json::array();
  for (Eigen::Index l = 0; l < model.alpha.size(); ++l) alpha.push_back(model.alpha[l]);
  nlohmann::json mean = nlohmann::json::array();
  for (Eigen::Index i = 0; i < model.base.mean.size(); ++i)
    mean.push_back(model.base.mean[i]);
  return nlohmann::json{
      {"inducing_points", matrix_to_json(model.inducing)},
      {"mixture",
       {{"weights", model.mixture.weights}, {"sigmas", model.mixture.sigmas}}},
      {"alpha", std::move(alpha)},
      {"base", {{"mean", std::move(mean)}, {"variance", model.base.variance}}}};
}

KefModel kef_from_json(const nlohmann::json& desc) {
  require_keys(desc, {"inducing_points", "mixture", "alpha", "base"}, "kef model");
  require_keys(desc.at("mixture"), {"weights", "sigmas"}, "kef mixture");
  require_keys(desc.at("base"), {"mean", "variance"}, "kef base");
  KefModel model;
  model.inducing = matrix_from_json(desc.at("inducing_points"), "kef inducing points");
  model.mixture.weights = desc.at("mixture").at("weights").get<std::vector<double>>();
  model.mixture.sigmas = desc.at("mixture").at("sigmas").get<std::vector<double>>();
  model.alpha = vector_from_json(desc.at("alpha"), "kef alpha");
  model.base.mean = vector_from_json(desc.at("base").at("mean"), "kef base mean");
  model.base.variance = desc.at("base").at("variance").get<double>();
  validate_kef(model);
  return model;
}

}  // namespace scorex
