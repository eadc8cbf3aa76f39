#include "scorex/fd.hpp"

#include <algorithm>
#include <cmath>

namespace scorex::fd {

namespace {

double checked(double v, const char* what) {
  if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite evaluation");
  return v;
}

Vec checked(Vec v, const char* what) {
  if (!v.allFinite()) throw DomainError(std::string(what) + ": non-finite evaluation");
  return v;
}

}  // namespace

double scaled_step(const FdConfig& cfg, const Vec& x) {
  if (cfg.order != 2) throw ConfigError("fd: only order-2 central differences are provided");
  if (!(cfg.step > 0.0)) throw ConfigError("fd: step must be positive");
  return cfg.step * std::max(1.0, x.norm());
}

Vec gradient(const std::function<double(const Vec&)>& f, const Vec& x,
             const FdConfig& cfg) {
  const double h = scaled_step(cfg, x);
  Vec g(x.size());
  Vec p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double fp = checked(f(p), "fd::gradient");
    p[i] = x[i] - h;
    const double fm = checked(f(p), "fd::gradient");
    p[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Mat jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
             const FdConfig& cfg) {
  const double h = scaled_step(cfg, x);
  Vec p = x;
  p[0] = x[0] + h;
  Vec f0 = checked(f(p), "fd::jacobian");
  p[0] = x[0] - h;
  Vec f1 = checked(f(p), "fd::jacobian");
  p[0] = x[0];
  Mat j(f0.size(), x.size());
  j.col(0) = (f0 - f1) / (2.0 * h);
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    p[i] = x[i] + h;
    f0 = checked(f(p), "fd::jacobian");
    p[i] = x[i] - h;
    f1 = checked(f(p), "fd::jacobian");
    p[i] = x[i];
    j.col(i) = (f0 - f1) / (2.0 * h);
  }
  return j;
}

Mat hessian(const std::function<double(const Vec&)>& f, const Vec& x,
            const FdConfig& cfg) {
  const double h = scaled_step(cfg, x);
  const Eigen::Index n = x.size();
  Mat out(n, n);
  const double f00 = checked(f(x), "fd::hessian");
  Vec p = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = x[i] + h;
    const double fp = checked(f(p), "fd::hessian");
    p[i] = x[i] - h;
    const double fm = checked(f(p), "fd::hessian");
    p[i] = x[i];
    out(i, i) = (fp - 2.0 * f00 + fm) / (h * h);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      p[i] = x[i] + h;
      p[j] = x[j] + h;
      const double fpp = checked(f(p), "fd::hessian");
      p[j] = x[j] - h;
      const double fpm = checked(f(p), "fd::hessian");
      p[i] = x[i] - h;
      const double fmm = checked(f(p), "fd::hessian");
      p[j] = x[j] + h;
      const double fmp = checked(f(p), "fd::hessian");
      p[i] = x[i];
      p[j] = x[j];
      const double v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

HessianTensor hessian_tensor(const std::function<Vec(const Vec&)>& f, const Vec& x,
                             const FdConfig& cfg) {
  const double h = scaled_step(cfg, x);
  const Eigen::Index n = x.size();
  const Vec f00 = checked(f(x), "fd::hessian_tensor");
  const Eigen::Index m = f00.size();
  HessianTensor out(m, Mat(n, n));
  Vec p = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = x[i] + h;
    const Vec fp = checked(f(p), "fd::hessian_tensor");
    p[i] = x[i] - h;
    const Vec fm = checked(f(p), "fd::hessian_tensor");
    p[i] = x[i];
    const Vec dii = (fp - 2.0 * f00 + fm) / (h * h);
    for (Eigen::Index c = 0; c < m; ++c) out[c](i, i) = dii[c];
    for (Eigen::Index j = i + 1; j < n; ++j) {
      p[i] = x[i] + h;
      p[j] = x[j] + h;
      const Vec fpp = checked(f(p), "fd::hessian_tensor");
      p[j] = x[j] - h;
      const Vec fpm = checked(f(p), "fd::hessian_tensor");
      p[i] = x[i] - h;
      const Vec fmm = checked(f(p), "fd::hessian_tensor");
      p[j] = x[j] + h;
      const Vec fmp = checked(f(p), "fd::hessian_tensor");
      p[i] = x[i];
      p[j] = x[j];
      const Vec dij = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
      for (Eigen::Index c = 0; c < m; ++c) {
        out[c](i, j) = dij[c];
        out[c](j, i) = dij[c];
      }
    }
  }
  return out;
}

Vec matrix_divergence(const std::function<Mat(const Vec&)>& a, const Vec& x,
                      const FdConfig& cfg) {
  const double h = scaled_step(cfg, x);
  Vec p = x;
  p[0] = x[0] + h;
  Mat ap = a(p);
  p[0] = x[0] - h;
  Mat am = a(p);
  p[0] = x[0];
  if (!ap.allFinite() || !am.allFinite())
    throw DomainError("fd::matrix_divergence: non-finite evaluation");
  Vec out = Vec::Zero(ap.rows());
  out += (ap.col(0) - am.col(0)) / (2.0 * h);
  for (Eigen::Index j = 1; j < x.size(); ++j) {
    p[j] = x[j] + h;
    ap = a(p);
    p[j] = x[j] - h;
    am = a(p);
    p[j] = x[j];
    if (!ap.allFinite() || !am.allFinite())
      throw DomainError("fd::matrix_divergence: non-finite evaluation");
    out += (ap.col(j) - am.col(j)) / (2.0 * h);
  }
  return out;
}

double grid_density_score_1d(double lo, double hi, const std::vector<double>& density,
                             double x) {
  const std::size_t m = density.size();
  if (m < 5) throw DomainError("grid_density_score_1d: need at least 5 grid nodes");
  if (!(hi > lo)) throw DomainError("grid_density_score_1d: empty interval");
  const double dx = (hi - lo) / static_cast<double>(m - 1);
  if (x < lo + 2.0 * dx || x > hi - 2.0 * dx)
    throw DomainError("grid_density_score_1d: x too close to the grid boundary");
  auto logp = [&](std::size_t i) {
    const double p = density[i];
    if (!(p > 0.0) || !std::isfinite(p))
      throw DomainError("grid_density_score_1d: density must be positive on the stencil");
    return std::log(p);
  };
  // Central difference at the two nodes bracketing x, then linear interpolation.
  std::size_t i0 = static_cast<std::size_t>((x - lo) / dx);
  i0 = std::min(i0, m - 3);
  i0 = std::max<std::size_t>(i0, 1);
  const double d0 = (logp(i0 + 1) - logp(i0 - 1)) / (2.0 * dx);
  const double d1 = (logp(i0 + 2) - logp(i0)) / (2.0 * dx);
  const double tau = (x - (lo + static_cast<double>(i0) * dx)) / dx;
  return (1.0 - tau) * d0 + tau * d1;
}

double w1_distance_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw EmptyData("w1_distance_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::vector<double>* small = &a;
  const std::vector<double>* large = &b;
  if (small->size() > large->size()) std::swap(small, large);
  const std::size_t m = small->size();
  const std::size_t n = large->size();
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    // Quantile-matched pick keeps the subsample deterministic.
    const std::size_t j =
        std::min(n - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) *
                                                 static_cast<double>(n) /
                                                 static_cast<double>(m)));
    sum += std::abs((*small)[i] - (*large)[j]);
  }
  return sum / static_cast<double>(m);
}

MeanStderr mc_mean_stderr(const std::vector<double>& values) {
  if (values.empty()) throw EmptyData("mc_mean_stderr: empty sample set");
  MeanStderr out;
  out.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(out.n);
  if (out.n > 1) {
    double ss = 0.0;
    for (double v : values) {
      const double d = v - out.mean;
      ss += d * d;
    }
    out.se = std::sqrt(ss / static_cast<double>(out.n - 1)) /
             std::sqrt(static_cast<double>(out.n));
  }
  return out;
}

}  // namespace scorex::fd
