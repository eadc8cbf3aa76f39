#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorex/common.hpp"
#include "scorex/losses.hpp"

namespace scorex {

// Fixed mixture of Gaussian kernels: k(x, z) = sum_r w_r exp(-|x-z|^2/(2 s_r^2)).
struct KernelMixture {
  std::vector<double> weights;
  std::vector<double> sigmas;
};

// Weights 1/3 each at bandwidths 0.5, 1, 2.
KernelMixture default_kernel_mixture();

// Reference density N(mean, variance I); its score is -(x - mean)/variance.
struct GaussianBase {
  Vec mean;
  double variance = 1.0;
};

// Unnormalized log density: sum_l alpha_l k(x, z_l) + log q0(x).  The score is
// affine in alpha, which keeps every loss in the family quadratic in alpha.
struct KefModel {
  Mat inducing;  // L x n, one inducing point per row
  KernelMixture mixture;
  GaussianBase base;
  Vec alpha;  // L coefficients
};

void validate_kef(const KefModel& model);

struct KernelDerivatives {
  double value = 0.0;
  Vec gradient;
  Mat hessian;
};

KernelDerivatives kernel_derivatives(const KernelMixture& mixture, const Vec& x,
                                     const Vec& z);
KernelDerivatives kernel_derivatives(const KefModel& model, const Vec& x, const Vec& z);

Vec base_score(const GaussianBase& base, const Vec& x);
Vec kef_score(const KefModel& model, const Vec& x);

// Score and Jacobian callables for the loss operations.
ScoreModel kef_score_model(const KefModel& model);

// Loss restricted to the alpha coefficients: alpha'G1 alpha/2 + b'alpha + c.
struct QuadraticLossForm {
  Mat g1;
  Vec b;
  double c = 0.0;
};

enum class KefLoss { sm, ssm, ssm_vr, gssm, gssm_vr };

KefLoss kef_loss_from_string(const std::string& name);
std::string to_string(KefLoss loss);

// Builds the quadratic form whose value at any alpha reproduces the matching
// loss operation on the same draws.  model.alpha is ignored.  The sampler is
// unused for sm; gssm_vr reads its variance triple from a quadratic sampler.
QuadraticLossForm assemble_quadratic(const KefModel& model, const Mat& data,
                                     KefLoss loss, const SliceSampler& sampler,
                                     std::size_t slices_per_point, GssmMode mode,
                                     std::uint64_t seed, Exec exec = Exec::parallel);

// Evaluates the matching loss operation directly on the model's score.
LossResult evaluate_kef_loss(const KefModel& model, const Mat& data, KefLoss loss,
                             const SliceSampler& sampler, std::size_t slices_per_point,
                             GssmMode mode, std::uint64_t seed,
                             Exec exec = Exec::parallel);

// Minimizer of the lambda-regularized quadratic via a symmetric factorization
// with one refinement step; the residual gradient must shrink below
// 1e-8 (1 + |b|) or SingularSystem is raised.
Vec solve_alpha(const QuadraticLossForm& form, double lambda);

struct KefFitOptions {
  KernelMixture mixture = default_kernel_mixture();
  std::size_t inducing_count = 32;
  // Grid placement is one-dimensional; the default subsamples the data.
  bool grid_inducing = false;
  double grid_lo = -3.0;
  double grid_hi = 3.0;
  // Default base: data mean with twice the empirical variance.
  std::optional<GaussianBase> base;
};

struct KefFitResult {
  KefModel model;
  QuadraticLossForm form;
  double achieved_loss = 0.0;
};

KefFitResult kef_fit(const Mat& data, KefLoss loss, const SliceSampler& sampler,
                     std::size_t slices_per_point, GssmMode mode, double lambda,
                     std::uint64_t seed, const KefFitOptions& opts = {},
                     Exec exec = Exec::parallel);

nlohmann::json kef_to_json(const KefModel& model);
KefModel kef_from_json(const nlohmann::json& desc);

}  // namespace scorex
