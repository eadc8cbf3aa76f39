#pragma once

#include <functional>
#include <vector>

#include "json.hpp"
#include "scorex/common.hpp"
#include "scorex/fd.hpp"

namespace scorex {

// Time-dependent score field on R^n.  Static fields ignore the time argument.
struct ScoreField {
  int dim = 0;
  std::function<Vec(const Vec&, double)> eval;
};

ScoreField make_static_score(int dim, std::function<Vec(const Vec&)> eval);

// Scalar-valued map v: R^n -> R used for slicing and projection.
struct ScalarSlice {
  int dim = 0;
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
  std::function<Mat(const Vec&)> hessian;
  std::function<double(const Vec&)> laplacian;  // optional; falls back to hessian trace
};

// Smooth bijection phi(x, t) with analytic derivatives.
//   jacobian(x,t)(i,j)     = d phi_i / d x_j
//   hessian(x,t)[i](j,k)   = d^2 phi_i / d x_j d x_k
//   time_partial(x,t)      = d phi / d t
struct DiffeoTransform {
  int dim_in = 0;
  int dim_out = 0;
  std::function<Vec(const Vec&, double)> forward;
  std::function<Vec(const Vec&, double)> inverse;
  std::function<Mat(const Vec&, double)> jacobian;
  std::function<HessianTensor(const Vec&, double)> hessian;
  std::function<Vec(const Vec&, double)> time_partial;
};

// Bundled transforms (all static in time, analytic derivatives).
DiffeoTransform identity_transform(int dim);
DiffeoTransform affine_transform(const Mat& a, const Vec& b);
DiffeoTransform exp_transform(int dim);
DiffeoTransform sigmoid_transform(int dim);
DiffeoTransform tanh_clip_transform(int dim, double scale);
// Maps R^k to the open simplex {y_i > 0, sum y < 1}; the remainder slot is implicit.
DiffeoTransform additive_logistic_transform(int k);
inline constexpr double kSimplexMargin = 1e-9;

// Descriptor: {"kind": ..., "params": {...}}.  Unknown kinds or keys raise
// ConfigError.
DiffeoTransform transform_from_json(const nlohmann::json& desc);

// Derivative fallback for forward-only callables: jacobian, hessian, and
// time_partial via central differences.
DiffeoTransform fd_wrap(int dim_in, int dim_out,
                        std::function<Vec(const Vec&, double)> forward,
                        std::function<Vec(const Vec&, double)> inverse,
                        fd::FdConfig cfg = {});

// Inverse map with analytic derivatives pulled from the forward ones.
DiffeoTransform inverse_of(const DiffeoTransform& t);

// Composition outer(inner(x, t), t) with chain-rule derivatives.
DiffeoTransform compose(const DiffeoTransform& outer, const DiffeoTransform& inner);

// d/dx log |det J_phi(x, t)|.
Vec grad_log_det(const DiffeoTransform& t, const Vec& x, double time = 0.0);

// Row-wise divergence (in x) of the matrix field x -> J_{phi^{-1}}(phi(x, t))^T.
Vec jacobian_transpose_divergence(const DiffeoTransform& t, const Vec& x,
                                  double time = 0.0);

// Score of the pushforward density at y: the x-score is mapped through the
// inverse-Jacobian transpose and corrected by the row-wise divergence term.
Vec pushforward_score(const DiffeoTransform& t, const ScoreField& score_x, const Vec& y,
                      double time = 0.0);

ScoreField pushforward_score_field(const DiffeoTransform& t, const ScoreField& score_x);

// Scalar specialization.  Evaluates both algebraic forms (inverse-side
// derivatives, and forward-side derivatives divided by phi'^2) and insists
// they agree to 1e-10 before returning.
double pushforward_score_1d(const DiffeoTransform& t,
                            const std::function<double(double)>& score_x, double y,
                            double time = 0.0);

// Score of the scalar projection y = v(x) at y, up to the caller-supplied
// conditional correction: conditional_term(x, i) must return
// d/dy log p(x_{-i} | y) for coordinate i (pass a zero callable when the
// correction vanishes).
double project_score(const ScalarSlice& v, const ScoreField& score_x, const Vec& x,
                     const std::function<double(const Vec&, int)>& conditional_term);

// Per-component expansion x -> (v_1(x), ..., v_m(x)) of a scalar variable:
// each component is the 1D pushforward through v_i, evaluated at x.
Vec expand_score(const std::vector<DiffeoTransform>& components,
                 const std::function<double(double)>& score_x, double x);

}  // namespace scorex
