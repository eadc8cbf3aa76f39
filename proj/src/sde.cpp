#include "scorex/sde.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "scorex/rng.hpp"

namespace scorex {

namespace {

// Component i of the vector Tr[G^T H_i G] = sum(H_i .* G G^T).
Vec diffusion_hessian_trace(const HessianTensor& h, const Mat& ggt) {
  Vec out(static_cast<Eigen::Index>(h.size()));
  for (std::size_t i = 0; i < h.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = h[i].cwiseProduct(ggt).sum();
  return out;
}

}  // namespace

SdeSpec with_fd_ggt_divergence(SdeSpec sde, fd::FdConfig cfg) {
  auto diffusion = sde.diffusion;
  sde.ggt_divergence = [diffusion, cfg](const Vec& x, double t) {
    auto field = [&](const Vec& p) {
      const Mat g = diffusion(p, t);
      return Mat(g * g.transpose());
    };
    return fd::matrix_divergence(field, x, cfg);
  };
  return sde;
}

VpSchedule linear_vp_schedule(double beta_min, double beta_max) {
  if (!(beta_min > 0.0) || !(beta_max >= beta_min))
    throw ConfigError("linear_vp_schedule: need 0 < beta_min <= beta_max");
  VpSchedule s;
  s.beta = [beta_min, beta_max](double t) { return beta_min + t * (beta_max - beta_min); };
  s.beta_integral = [beta_min, beta_max](double t) {
    return beta_min * t + 0.5 * t * t * (beta_max - beta_min);
  };
  return s;
}

SdeSpec vp_sde(const VpSchedule& schedule, int dim) {
  if (dim < 1) throw ConfigError("vp_sde: dim must be positive");
  SdeSpec sde;
  sde.dim = dim;
  sde.drift = [beta = schedule.beta](const Vec& x, double t) {
    return Vec(-0.5 * beta(t) * x);
  };
  sde.diffusion = [beta = schedule.beta, dim](const Vec&, double t) {
    return Mat(std::sqrt(beta(t)) * Mat::Identity(dim, dim));
  };
  sde.ggt_divergence = [dim](const Vec&, double) { return Vec::Zero(dim); };
  return sde;
}

Vec vp_conditional_score(const VpSchedule& schedule, const Vec& x, const Vec& x0,
                         double t) {
  if (t < schedule.t_min)
    throw DomainError("vp_conditional_score: t below the schedule floor");
  const double b = schedule.beta_integral(t);
  const double mean_scale = std::exp(-0.5 * b);
  const double var = 1.0 - std::exp(-b);
  return Vec(-(x - mean_scale * x0) / var);
}

double gaussian_mixture_logpdf(const GaussianMixture& mix, const Vec& x) {
  if (mix.weights.empty()) throw EmptyData("gaussian_mixture_logpdf: no components");
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(mix.weights.size());
  for (std::size_t k = 0; k < mix.weights.size(); ++k) {
    const double v = mix.variances[k];
    logs[k] = std::log(mix.weights[k]) - 0.5 * (x - mix.means[k]).squaredNorm() / v -
              0.5 * mix.dim * std::log(2.0 * M_PI * v);
    best = std::max(best, logs[k]);
  }
  double sum = 0.0;
  for (double l : logs) sum += std::exp(l - best);
  return best + std::log(sum);
}

Vec gaussian_mixture_score(const GaussianMixture& mix, const Vec& x) {
  if (mix.weights.empty()) throw EmptyData("gaussian_mixture_score: no components");
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(mix.weights.size());
  for (std::size_t k = 0; k < mix.weights.size(); ++k) {
    const double v = mix.variances[k];
    logs[k] = std::log(mix.weights[k]) - 0.5 * (x - mix.means[k]).squaredNorm() / v -
              0.5 * mix.dim * std::log(2.0 * M_PI * v);
    best = std::max(best, logs[k]);
  }
  double denom = 0.0;
  Vec score = Vec::Zero(x.size());
  for (std::size_t k = 0; k < mix.weights.size(); ++k) {
    const double w = std::exp(logs[k] - best);
    denom += w;
    score -= w / mix.variances[k] * (x - mix.means[k]);
  }
  return Vec(score / denom);
}

Mat sample_gaussian_mixture(const GaussianMixture& mix, std::size_t n,
                            std::uint64_t seed) {
  if (mix.weights.empty()) throw EmptyData("sample_gaussian_mixture: no components");
  Mat out(n, mix.dim);
  for (std::size_t i = 0; i < n; ++i) {
    rng::Stream s(seed, rng::domain::kData, i, 0);
    const double u = s.uniform();
    double acc = 0.0;
    std::size_t pick = mix.weights.size() - 1;
    for (std::size_t k = 0; k < mix.weights.size(); ++k) {
      acc += mix.weights[k];
      if (u <= acc) {
        pick = k;
        break;
      }
    }
    const double sd = std::sqrt(mix.variances[pick]);
    for (int d = 0; d < mix.dim; ++d)
      out(static_cast<Eigen::Index>(i), d) = mix.means[pick][d] + sd * s.normal();
  }
  return out;
}

GaussianMixture vp_marginal_mixture(const GaussianMixture& init,
                                    const VpSchedule& schedule, double t) {
  if (t < 0.0) throw DomainError("vp_marginal_mixture: negative time");
  const double b = schedule.beta_integral(t);
  const double mean_scale = std::exp(-0.5 * b);
  const double mixed_in = 1.0 - std::exp(-b);
  GaussianMixture out = init;
  for (std::size_t k = 0; k < init.weights.size(); ++k) {
    out.means[k] = mean_scale * init.means[k];
    out.variances[k] = init.variances[k] * std::exp(-b) + mixed_in;
  }
  return out;
}

Vec vp_marginal_score(const GaussianMixture& init, const VpSchedule& schedule,
                      const Vec& x, double t) {
  return gaussian_mixture_score(vp_marginal_mixture(init, schedule, t), x);
}

ScoreField vp_marginal_score_field(const GaussianMixture& init,
                                   const VpSchedule& schedule) {
  ScoreField s;
  s.dim = init.dim;
  s.eval = [init, schedule](const Vec& x, double t) {
    return vp_marginal_score(init, schedule, x, t);
  };
  return s;
}

SdeSpec ito_transform(const SdeSpec& sde, const DiffeoTransform& t) {
  if (t.dim_in != sde.dim)
    throw ConfigError("ito_transform: transform and SDE dimensions differ");
  SdeSpec out;
  out.dim = t.dim_out;
  out.drift = [sde, t](const Vec& y, double time) {
    const Vec x = t.inverse(y, time);
    const Mat g = sde.diffusion(x, time);
    const Mat ggt = g * g.transpose();
    const Vec tr = diffusion_hessian_trace(t.hessian(x, time), ggt);
    return Vec(t.time_partial(x, time) + t.jacobian(x, time) * sde.drift(x, time) +
               0.5 * tr);
  };
  out.diffusion = [sde, t](const Vec& y, double time) {
    const Vec x = t.inverse(y, time);
    return Mat(t.jacobian(x, time) * sde.diffusion(x, time));
  };
  // div_y(G~ G~^T) = Tr[G^T H G] + J div_x(G G^T) + J G G^T grad_log_det.
  out.ggt_divergence = [sde, t](const Vec& y, double time) {
    const Vec x = t.inverse(y, time);
    const Mat g = sde.diffusion(x, time);
    const Mat ggt = g * g.transpose();
    const Mat j = t.jacobian(x, time);
    const Vec tr = diffusion_hessian_trace(t.hessian(x, time), ggt);
    return Vec(tr + j * sde.ggt_divergence(x, time) +
               j * (ggt * grad_log_det(t, x, time)));
  };
  return out;
}

SdeSpec anderson_reverse(const SdeSpec& sde, const ScoreField& score) {
  if (score.dim != sde.dim)
    throw ConfigError("anderson_reverse: score and SDE dimensions differ");
  SdeSpec out = sde;
  out.drift = [sde, score](const Vec& x, double t) {
    const Mat g = sde.diffusion(x, t);
    return Vec(sde.drift(x, t) - (g * g.transpose()) * score.eval(x, t) -
               sde.ggt_divergence(x, t));
  };
  return out;
}

Vec reverse_ito_drift(const DiffeoTransform& t, const SdeSpec& sde,
                      const ScoreField& score_x, const Vec& y, double time) {
  const Vec x = t.inverse(y, time);
  const Mat g = sde.diffusion(x, time);
  const Mat ggt = g * g.transpose();
  const Vec fbar = sde.drift(x, time) - ggt * score_x.eval(x, time) -
                   sde.ggt_divergence(x, time);
  const Vec tr = diffusion_hessian_trace(t.hessian(x, time), ggt);
  return Vec(t.time_partial(x, time) + t.jacobian(x, time) * fbar - 0.5 * tr);
}

double reverse_equivalence_check(const DiffeoTransform& t, const SdeSpec& sde,
                                 const ScoreField& score_x,
                                 const ScoreField& score_y_thm1, const Vec& y,
                                 double time) {
  const SdeSpec transformed = ito_transform(sde, t);
  const SdeSpec reversed = anderson_reverse(transformed, score_y_thm1);
  const Vec a = reversed.drift(y, time);
  const Vec b = reverse_ito_drift(t, sde, score_x, y, time);
  return (a - b).lpNorm<Eigen::Infinity>();
}

Mat euler_maruyama(const SdeSpec& sde, const Mat& init, const PathGrid& grid,
                   std::uint64_t seed, Exec exec) {
  if (init.rows() == 0) throw EmptyData("euler_maruyama: no initial samples");
  if (init.cols() != sde.dim)
    throw ConfigError("euler_maruyama: initial sample dimension mismatch");
  if (grid.steps == 0) throw ConfigError("euler_maruyama: need at least one step");
  if (!(grid.t1 > grid.t0)) throw ConfigError("euler_maruyama: need t1 > t0");
  const double h = (grid.t1 - grid.t0) / static_cast<double>(grid.steps);
  const double sqrt_h = std::sqrt(h);
  const bool forward = grid.direction == PathGrid::Direction::forward;
  const double dt = forward ? h : -h;

  Mat out(init.rows(), init.cols());
  detail::for_each_index(
      static_cast<std::size_t>(init.rows()), exec, [&](std::size_t i) {
        Vec x = init.row(static_cast<Eigen::Index>(i)).transpose();
        for (std::size_t k = 0; k < grid.steps; ++k) {
          const double tk = forward
                                ? grid.t0 + static_cast<double>(k) * h
                                : grid.t1 - static_cast<double>(k) * h;
          rng::Stream noise(seed, rng::domain::kPathNoise, i, k);
          const Vec z = noise.normal_vec(x.size());
          x += dt * sde.drift(x, tk) + sqrt_h * (sde.diffusion(x, tk) * z);
          if (!x.allFinite())
            throw NumericalBlowup("euler_maruyama: non-finite state", k);
        }
        out.row(static_cast<Eigen::Index>(i)) = x.transpose();
      });
  return out;
}

}  // namespace scorex
