#pragma once

#include <cstdint>

#include "json.hpp"
#include "scorex/sde.hpp"
#include "scorex/transform.hpp"

namespace scorex {

// Post-step projection margin for the simplex sampler.  Wider than
// kSimplexMargin so clamped states stay invertible with room to spare.
inline constexpr double kSimplexClampMargin = 1e-7;

// Remainder mass 1 - sum(y) of a point on the projected simplex.  Throws
// DomainError unless every coordinate and the remainder exceed the margin.
double simplex_remainder(const Vec& y, double margin = kSimplexMargin);

// Softened one-hot vector on the projected simplex.  Class 0 is the implicit
// remainder slot, so every explicit coordinate gets epsilon; class c >= 1
// puts 1 - (class_count - 1) * epsilon on coordinate c - 1 and epsilon
// elsewhere.  Either way the remainder slot itself ends up with epsilon or
// with the bulk, and the result is strictly interior.
Vec soften_onehot(int class_index, int class_count, double epsilon);

// Most likely class: 0 when the remainder dominates, else 1 + argmax_i y_i.
int simplex_argmax_class(const Vec& y);

// Class distribution encoded as a Gaussian mixture over the inverse-transform
// coordinates: one isotropic component per class, centered on the inverse
// image of that class's softened one-hot vector.
struct CategoricalSource {
  int class_count = 0;  // explicit classes plus the remainder slot
  double epsilon = 0.01;
  GaussianMixture mixture;  // over R^k with k = class_count - 1
};

// Remainder slot at half the weight of each explicit class, normalized.
Vec default_class_frequencies(int class_count);

CategoricalSource make_categorical_source(const Vec& class_frequencies,
                                          double epsilon = 0.01,
                                          double component_sigma = 0.25);

// Reverse-time coefficients of the VP diffusion carried onto the projected
// simplex through the additive-logistic map, in closed form: with
// k_i = rdrift_i + beta (y_i - 1/2) built from the x-side reverse drift
// rdrift = -beta x / 2 - beta s(x, t), the drift is y_i (k_i - y . k) and the
// diffusion is sqrt(beta) (diag(y) - y y^T).
struct SimplexReverseCoeffs {
  Vec drift;
  Mat diffusion;
};

SimplexReverseCoeffs simplex_reverse_coeffs(const VpSchedule& vp,
                                            const ScoreField& score_x, const Vec& y,
                                            double t);

// Drift rescaled by the concentration knob w.
Vec scale_drift(const Vec& drift, double w);

// Action of the transformed diffusion on z without forming the matrix:
// g (y .* z - (y . z) y).  Costs O(k).
Vec simplex_diffusion_action(const Vec& y, double g, const Vec& z);

struct SimplexRunResult {
  Mat samples;  // n x k, every row strictly interior
  double mean_empty_mass = 0.0;
  Vec class_histogram;  // argmax-class counts, length class_count
  std::size_t clamp_events = 0;
  double clamp_rate = 0.0;
};

// Integrates the w-scaled reverse SDE on the simplex, starting from the
// image of a standard normal draw.  Noise streams are keyed per (sample,
// step), so the output is deterministic in the seed and identical across
// execution policies.  Steps that leave the interior are projected back to
// the clamp margin and counted.
SimplexRunResult run_simplex_sampler(const CategoricalSource& source,
                                     const VpSchedule& vp, double w,
                                     std::size_t n_samples, std::size_t steps,
                                     std::uint64_t seed, Exec exec = Exec::parallel);

struct SimplexLabConfig {
  int k = 12;
  double epsilon = 0.01;
  double w = 1.0;
  std::size_t n_samples = 10000;
  std::size_t steps = 500;
  std::uint64_t seed = 1;
  double beta_min = 0.1;
  double beta_max = 20.0;
  double component_sigma = 0.25;
  Vec class_frequencies;  // empty selects default_class_frequencies(k + 1)
};

SimplexRunResult run_simplex_lab(const SimplexLabConfig& cfg, Exec exec = Exec::parallel);

// Descriptor {k, epsilon, w, n_samples, steps, seed, schedule{beta_min,
// beta_max}, component_sigma?, class_frequencies?}.  Unknown keys raise
// ConfigError.
SimplexLabConfig simplex_config_from_json(const nlohmann::json& desc);

nlohmann::json simplex_stats_to_json(const SimplexRunResult& r);

}  // namespace scorex
