#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "scorex/common.hpp"
#include "scorex/transform.hpp"

namespace scorex {

// dX = f(X, t) dt + G(X, t) dW.  ggt_divergence is the row-wise divergence of
// G G^T; supply the analytic form when available or use with_fd_ggt_divergence.
struct SdeSpec {
  int dim = 0;
  std::function<Vec(const Vec&, double)> drift;
  std::function<Mat(const Vec&, double)> diffusion;
  std::function<Vec(const Vec&, double)> ggt_divergence;
};

SdeSpec with_fd_ggt_divergence(SdeSpec sde, fd::FdConfig cfg = {});

struct VpSchedule {
  std::function<double(double)> beta;
  std::function<double(double)> beta_integral;  // B(t) = int_0^t beta
  double t_min = 1e-5;
};

VpSchedule linear_vp_schedule(double beta_min = 0.1, double beta_max = 20.0);

struct PathGrid {
  enum class Direction { forward, reverse };
  double t0 = 0.0;
  double t1 = 1.0;
  std::size_t steps = 0;
  Direction direction = Direction::forward;
};

// Variance-preserving diffusion: f = -beta(t) x / 2, G = sqrt(beta(t)) I.
SdeSpec vp_sde(const VpSchedule& schedule, int dim);

// Score of x_t given x_0 under the VP transition kernel.  Requires t >= t_min.
Vec vp_conditional_score(const VpSchedule& schedule, const Vec& x, const Vec& x0,
                         double t);

struct GaussianMixture {
  int dim = 0;
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<double> variances;  // isotropic per component
};

double gaussian_mixture_logpdf(const GaussianMixture& mix, const Vec& x);
Vec gaussian_mixture_score(const GaussianMixture& mix, const Vec& x);
Mat sample_gaussian_mixture(const GaussianMixture& mix, std::size_t n,
                            std::uint64_t seed);

// Mixture initial data stays a mixture along the VP flow.
GaussianMixture vp_marginal_mixture(const GaussianMixture& init,
                                    const VpSchedule& schedule, double t);
Vec vp_marginal_score(const GaussianMixture& init, const VpSchedule& schedule,
                      const Vec& x, double t);
ScoreField vp_marginal_score_field(const GaussianMixture& init,
                                   const VpSchedule& schedule);

// Pushes the SDE through y = phi(x, t): drift gains the time partial, the
// Jacobian action, and half the diffusion-weighted Hessian trace; the
// diffusion becomes J_phi G.  The transformed ggt_divergence is analytic.
SdeSpec ito_transform(const SdeSpec& sde, const DiffeoTransform& t);

// Reverse-time drift f - G G^T score - div(G G^T); diffusion unchanged.  The
// returned SDE is integrated backward in time.
SdeSpec anderson_reverse(const SdeSpec& sde, const ScoreField& score);

// Reverse-time drift of the transformed process, computed on the x-side:
// time partial + J_phi (reverse drift) - half the diffusion-weighted Hessian
// trace.  Equivalent to transforming first and reversing afterward.
Vec reverse_ito_drift(const DiffeoTransform& t, const SdeSpec& sde,
                      const ScoreField& score_x, const Vec& y, double time);

// Max-norm drift difference between the two derivation orders at (y, time).
double reverse_equivalence_check(const DiffeoTransform& t, const SdeSpec& sde,
                                 const ScoreField& score_x,
                                 const ScoreField& score_y_thm1, const Vec& y,
                                 double time);

// Integrates every row of init along the grid.  Noise is drawn from a stream
// keyed by (sample, step), so results are independent of scheduling and of
// Exec; non-finite states raise NumericalBlowup carrying the step index.
Mat euler_maruyama(const SdeSpec& sde, const Mat& init, const PathGrid& grid,
                   std::uint64_t seed, Exec exec = Exec::parallel);

}  // namespace scorex
