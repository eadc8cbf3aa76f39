// Timing comparison of the parallel and serial execution policies for the
// heavy kernels, plus a bitwise parity check: both policies must produce
// identical bits, so max |delta| prints as exactly zero.

#include <chrono>
#include <cstdio>

#include "scorex/kef.hpp"
#include "scorex/losses.hpp"
#include "scorex/rng.hpp"
#include "scorex/sde.hpp"

using namespace scorex;

namespace {

double now() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void row(const char* name, double serial_s, double parallel_s, double delta) {
  std::printf("%-16s serial %8.3fs  parallel %8.3fs  speedup %5.2fx  max|delta| %g\n",
              name, serial_s, parallel_s, serial_s / parallel_s, delta);
}

}  // namespace

int main() {
  GaussianMixture mix;
  mix.dim = 2;
  mix.weights = {0.4, 0.6};
  mix.means = {Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)};
  mix.variances = {0.5, 0.8};
  const VpSchedule vp = linear_vp_schedule();

  {
    const SdeSpec sde = vp_sde(vp, 2);
    Mat init(20000, 2);
    for (int i = 0; i < init.rows(); ++i) {
      rng::Stream s(3, rng::domain::kInitDraw, static_cast<std::size_t>(i), 0);
      init.row(i) = s.normal_vec(2).transpose();
    }
    PathGrid grid;
    grid.steps = 200;
    double t0 = now();
    const Mat a = euler_maruyama(sde, init, grid, 5, Exec::serial);
    const double ts = now() - t0;
    t0 = now();
    const Mat b = euler_maruyama(sde, init, grid, 5, Exec::parallel);
    const double tp = now() - t0;
    row("euler_maruyama", ts, tp, (a - b).cwiseAbs().maxCoeff());
  }

  {
    const Mat data = sample_gaussian_mixture(mix, 4000, 7);
    ScoreModel model;
    model.dim = 2;
    model.eval = [&mix](const Vec& x) { return gaussian_mixture_score(mix, x); };
    model.jacobian = [&mix](const Vec& x) {
      Mat j(2, 2);
      const double h = 1e-5;
      for (int c = 0; c < 2; ++c) {
        Vec lo = x, hi = x;
        lo[c] -= h;
        hi[c] += h;
        j.col(c) = (gaussian_mixture_score(mix, hi) - gaussian_mixture_score(mix, lo)) /
                   (2.0 * h);
      }
      return j;
    };
    const SliceSampler goe = quadratic_goe_sampler(2, default_goe_variances(2));
    double t0 = now();
    const LossResult a =
        gssm_loss(model, data, goe, 40, GssmMode::unnormalized, 9, Exec::serial);
    const double ts = now() - t0;
    t0 = now();
    const LossResult b =
        gssm_loss(model, data, goe, 40, GssmMode::unnormalized, 9, Exec::parallel);
    const double tp = now() - t0;
    row("gssm_loss", ts, tp,
        std::max(std::abs(a.value - b.value), std::abs(a.se - b.se)));
  }

  {
    GaussianMixture normal1;
    normal1.dim = 1;
    normal1.weights = {1.0};
    normal1.means = {Vec::Zero(1)};
    normal1.variances = {1.0};
    const Mat data = sample_gaussian_mixture(normal1, 3000, 11);
    KefModel model;
    model.mixture = default_kernel_mixture();
    model.base.mean = Vec::Zero(1);
    model.base.variance = 2.0;
    model.inducing = Mat(48, 1);
    for (int l = 0; l < 48; ++l) model.inducing(l, 0) = -3.0 + 6.0 * l / 47.0;
    model.alpha = Vec::Zero(48);
    const SliceSampler sampler = linear_gaussian_sampler(1);
    double t0 = now();
    const QuadraticLossForm a =
        assemble_quadratic(model, data, KefLoss::ssm, sampler, 8,
                           GssmMode::unnormalized, 13, Exec::serial);
    const double ts = now() - t0;
    t0 = now();
    const QuadraticLossForm b =
        assemble_quadratic(model, data, KefLoss::ssm, sampler, 8,
                           GssmMode::unnormalized, 13, Exec::parallel);
    const double tp = now() - t0;
    const double delta = std::max((a.g1 - b.g1).cwiseAbs().maxCoeff(),
                                  std::max((a.b - b.b).cwiseAbs().maxCoeff(),
                                           std::abs(a.c - b.c)));
    row("kef_assembly", ts, tp, delta);
  }
  return 0;
}
