#pragma once

#include <functional>
#include <vector>

#include "scorex/common.hpp"

// Brute-force numerical checks: central finite differences, a grid-density
// score, a 1D Wasserstein distance, and Monte Carlo summary statistics.
// Everything here is the slow, independent side of a dual-route test.

namespace scorex::fd {

struct FdConfig {
  double step = 1e-4;  // scaled by max(1, |x|) at the evaluation point
  int order = 2;       // central differences
};

double scaled_step(const FdConfig& cfg, const Vec& x);

Vec gradient(const std::function<double(const Vec&)>& f, const Vec& x,
             const FdConfig& cfg = {});

Mat jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
             const FdConfig& cfg = {});

Mat hessian(const std::function<double(const Vec&)>& f, const Vec& x,
            const FdConfig& cfg = {});

HessianTensor hessian_tensor(const std::function<Vec(const Vec&)>& f, const Vec& x,
                             const FdConfig& cfg = {});

// Row-wise divergence of a matrix field: out_i = sum_j d A_ij / d x_j.
Vec matrix_divergence(const std::function<Mat(const Vec&)>& a, const Vec& x,
                      const FdConfig& cfg = {});

// d/dx log p at x from density values on the uniform grid [lo, hi].  The grid
// must cover x with at least two nodes of margin on each side.
double grid_density_score_1d(double lo, double hi, const std::vector<double>& density,
                             double x);

// Sorted-sample (comonotone) coupling.  Unequal sizes are handled by a
// deterministic quantile subsample of the larger set.
double w1_distance_1d(std::vector<double> a, std::vector<double> b);

struct MeanStderr {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

MeanStderr mc_mean_stderr(const std::vector<double>& values);

}  // namespace scorex::fd
