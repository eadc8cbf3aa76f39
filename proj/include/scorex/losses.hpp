#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include <json.hpp>

#include "scorex/common.hpp"
#include "scorex/sde.hpp"
#include "scorex/transform.hpp"

namespace scorex {

// Score estimate with an explicit Jacobian; both are evaluated pointwise.
struct ScoreModel {
  int dim = 0;
  std::function<Vec(const Vec&)> eval;
  std::function<Mat(const Vec&)> jacobian;
};

// Variances of the random quadratic slice v(x) = x'Ax/2 + b'x: diagonal of A,
// off-diagonal of A, and the linear part b.
struct GoeVariances {
  double sigma1_sq = 0.0;
  double sigma2_sq = 0.0;
  double sigma3_sq = 0.0;
};

// Dimension-scaled defaults: (2/sqrt(n), 1/sqrt(n), 1).
GoeVariances default_goe_variances(int n);

struct SliceSampler {
  enum class Kind { linear_rademacher, linear_gaussian, quadratic_goe };
  Kind kind = Kind::linear_rademacher;
  int dim = 0;
  GoeVariances variances{};  // quadratic kind only
};

SliceSampler linear_rademacher_sampler(int n);
SliceSampler linear_gaussian_sampler(int n);
SliceSampler quadratic_goe_sampler(int n, GoeVariances v);

// One sampled slice at a data point: gradient, Hessian action, and Laplacian
// of v.  Linear slices have an identically zero Hessian.
struct SliceDraw {
  Vec grad_v;
  std::function<Vec(const Vec&)> hessian_action;
  double laplacian = 0.0;
  bool materialized = false;
};

// Draw keyed by (seed, point, slice); the same key always yields the same
// slice.  Quadratic draws consume, in order: n diagonal normals, the upper
// triangle row by row, then the n-vector b.
SliceDraw draw_slice(const SliceSampler& sampler, const Vec& x, std::uint64_t seed,
                     std::size_t point, std::size_t slice);

// One implicit draw of Ax for a symmetric matrix with off-diagonal variance
// sigma_sq/2 and diagonal variance sigma_sq, without materializing A.  The
// stream consumes n normals then one more, in that order.
Vec goe_action_sample(const Vec& x, double sigma_sq, std::uint64_t seed,
                      std::size_t index = 0);

// One draw of Ax + b under the (sigma1, sigma2, sigma3) variance triple via
// the implicit action plus a diagonal correction.  Shares its leading draws
// with goe_action_sample(x, 2*sigma2_sq, seed, point) at slice 0.
Vec gssm_vr_slice_vector(const Vec& x, const GoeVariances& v, std::uint64_t seed,
                         std::size_t point, std::size_t slice);

struct LossResult {
  double value = 0.0;
  double se = 0.0;
  std::size_t n_points = 0;
  std::size_t n_slices = 0;
  std::size_t skipped_degenerate = 0;
};

nlohmann::json to_json(const LossResult& r);

enum class GssmMode { unnormalized, normalized };

// Mean over the batch of |s|^2/2 + tr(grad s).
LossResult sm_loss(const ScoreModel& model, const Mat& data, Exec exec = Exec::parallel);

// Mean over batch x slices of (v's)^2/2 + v'(grad s)v for linear slices.
LossResult ssm_loss(const ScoreModel& model, const Mat& data,
                    const SliceSampler& sampler, std::size_t slices_per_point,
                    std::uint64_t seed, Exec exec = Exec::parallel);

// |s|^2/2 kept exact; only the slice-quadratic Hessian term is sampled.
// Requires a linear sampler whose slices satisfy E[vv'] = I.
LossResult ssm_vr_loss(const ScoreModel& model, const Mat& data,
                       const SliceSampler& sampler, std::size_t slices_per_point,
                       std::uint64_t seed, Exec exec = Exec::parallel);

// General slice families: (g's)^2/2 + g'(grad s)g + s'(H g) + (g's) lap,
// with g, H, lap drawn per (point, slice).  Normalized mode rescales g to
// unit length and adjusts the curvature terms accordingly.  Zero-gradient
// slices are skipped and counted.
LossResult gssm_loss(const ScoreModel& model, const Mat& data,
                     const SliceSampler& sampler, std::size_t slices_per_point,
                     GssmMode mode, std::uint64_t seed, Exec exec = Exec::parallel);

// Closed-form expectations for quadratic slices; only the Hessian-quadratic
// term is sampled, through the implicit action.  Requires
// sigma1_sq >= 2*sigma2_sq.
LossResult gssm_vr_quadratic_loss(const ScoreModel& model, const Mat& data,
                                  const GoeVariances& variances,
                                  std::size_t hessian_slices, std::uint64_t seed,
                                  Exec exec = Exec::parallel);

// Denoising residual against the conditional score of the noising process,
// weighted by the transpose inverse Jacobian of the change of variables and
// by the conditional variance.  Row i of data0 pairs with times[i]; the
// perturbation stream for row i consumes n normals.
LossResult weighted_dsm_loss(const ScoreField& model, const DiffeoTransform& phi,
                             const VpSchedule& vp, const Mat& data0, const Vec& times,
                             std::uint64_t seed, Exec exec = Exec::parallel);

// JSON-configured loss runs: {"loss", "sampler", "variances",
// "slices_per_point", "mode", "seed"}, keys allowed per loss kind.
struct LossConfig {
  std::string loss;
  SliceSampler sampler{};
  GoeVariances variances{};
  GssmMode mode = GssmMode::unnormalized;
  std::size_t slices_per_point = 1;
  std::uint64_t seed = 0;
};

LossConfig loss_config_from_json(const nlohmann::json& desc, int dim);
LossResult evaluate_loss(const LossConfig& cfg, const ScoreModel& model,
                         const Mat& data, Exec exec = Exec::parallel);

}  // namespace scorex
