#include "scorex/transform.hpp"

#include <cmath>
#include <utility>

namespace scorex {

namespace {

constexpr double kTinyNorm = 1e-300;

struct JacPair {
  Mat j;
  Mat jinv;
};

JacPair inverted_jacobian(const DiffeoTransform& t, const Vec& x, double time) {
  Mat j = t.jacobian(x, time);
  Eigen::FullPivLU<Mat> lu(j);
  if (!lu.isInvertible()) throw SingularJacobian("transform: jacobian is singular");
  return {std::move(j), lu.inverse()};
}

// w := sum_a H[a] * Jinv.col(a).  This single contraction carries both
// derivative identities used below: grad_log_det(x) = w, and the row-wise
// divergence of J_{phi^{-1}}(phi(x))^T equals -Jinv^T w.
Vec hessian_contraction(const HessianTensor& h, const Mat& jinv) {
  Vec w = Vec::Zero(jinv.rows());
  for (std::size_t a = 0; a < h.size(); ++a)
    w += h[a] * jinv.col(static_cast<Eigen::Index>(a));
  return w;
}

Vec zero_time_partial(int dim, const Vec&, double) { return Vec::Zero(dim); }

// Elementwise monotone maps share one skeleton: f, f inverse, f', f''.
struct ScalarMap {
  std::function<double(double)> f;
  std::function<double(double)> finv;  // throws DomainError off-range
  std::function<double(double)> d1;
  std::function<double(double)> d2;
};

DiffeoTransform elementwise_transform(int dim, ScalarMap m) {
  if (dim < 1) throw ConfigError("transform: dim must be positive");
  DiffeoTransform t;
  t.dim_in = dim;
  t.dim_out = dim;
  t.forward = [m](const Vec& x, double) {
    Vec y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = m.f(x[i]);
    return y;
  };
  t.inverse = [m](const Vec& y, double) {
    Vec x(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) x[i] = m.finv(y[i]);
    return x;
  };
  t.jacobian = [m](const Vec& x, double) {
    Mat j = Mat::Zero(x.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) j(i, i) = m.d1(x[i]);
    return j;
  };
  t.hessian = [m, dim](const Vec& x, double) {
    HessianTensor h(dim, Mat::Zero(dim, dim));
    for (Eigen::Index i = 0; i < x.size(); ++i) h[i](i, i) = m.d2(x[i]);
    return h;
  };
  t.time_partial = [dim](const Vec& x, double t_) { return zero_time_partial(dim, x, t_); };
  return t;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

ScoreField make_static_score(int dim, std::function<Vec(const Vec&)> eval) {
  ScoreField s;
  s.dim = dim;
  s.eval = [fn = std::move(eval)](const Vec& x, double) { return fn(x); };
  return s;
}

DiffeoTransform identity_transform(int dim) {
  if (dim < 1) throw ConfigError("identity_transform: dim must be positive");
  DiffeoTransform t;
  t.dim_in = dim;
  t.dim_out = dim;
  t.forward = [](const Vec& x, double) { return x; };
  t.inverse = [](const Vec& y, double) { return y; };
  t.jacobian = [dim](const Vec&, double) { return Mat::Identity(dim, dim); };
  t.hessian = [dim](const Vec&, double) { return HessianTensor(dim, Mat::Zero(dim, dim)); };
  t.time_partial = [dim](const Vec& x, double t_) { return zero_time_partial(dim, x, t_); };
  return t;
}

DiffeoTransform affine_transform(const Mat& a, const Vec& b) {
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw ConfigError("affine_transform: matrix must be square and match the offset");
  Eigen::FullPivLU<Mat> lu(a);
  if (!lu.isInvertible()) throw SingularJacobian("affine_transform: matrix is singular");
  const Mat ainv = lu.inverse();
  const int dim = static_cast<int>(a.rows());
  DiffeoTransform t;
  t.dim_in = dim;
  t.dim_out = dim;
  t.forward = [a, b](const Vec& x, double) { return Vec(a * x + b); };
  t.inverse = [ainv, b](const Vec& y, double) { return Vec(ainv * (y - b)); };
  t.jacobian = [a](const Vec&, double) { return a; };
  t.hessian = [dim](const Vec&, double) { return HessianTensor(dim, Mat::Zero(dim, dim)); };
  t.time_partial = [dim](const Vec& x, double t_) { return zero_time_partial(dim, x, t_); };
  return t;
}

DiffeoTransform exp_transform(int dim) {
  ScalarMap m;
  m.f = [](double x) { return std::exp(x); };
  m.finv = [](double y) {
    if (!(y > 0.0)) throw DomainError("exp_transform: inverse needs y > 0");
    return std::log(y);
  };
  m.d1 = [](double x) { return std::exp(x); };
  m.d2 = [](double x) { return std::exp(x); };
  return elementwise_transform(dim, std::move(m));
}

DiffeoTransform sigmoid_transform(int dim) {
  ScalarMap m;
  m.f = stable_sigmoid;
  m.finv = [](double y) {
    if (!(y > 0.0 && y < 1.0)) throw DomainError("sigmoid_transform: inverse needs 0 < y < 1");
    return std::log(y / (1.0 - y));
  };
  m.d1 = [](double x) {
    const double s = stable_sigmoid(x);
    return s * (1.0 - s);
  };
  m.d2 = [](double x) {
    const double s = stable_sigmoid(x);
    return s * (1.0 - s) * (1.0 - 2.0 * s);
  };
  return elementwise_transform(dim, std::move(m));
}

DiffeoTransform tanh_clip_transform(int dim, double scale) {
  if (!(scale > 0.0)) throw ConfigError("tanh_clip_transform: scale must be positive");
  ScalarMap m;
  m.f = [scale](double x) { return scale * std::tanh(x / scale); };
  m.finv = [scale](double y) {
    if (!(std::abs(y) < scale))
      throw DomainError("tanh_clip_transform: inverse needs |y| < scale");
    return scale * std::atanh(y / scale);
  };
  m.d1 = [scale](double x) {
    const double u = std::tanh(x / scale);
    return 1.0 - u * u;
  };
  m.d2 = [scale](double x) {
    const double u = std::tanh(x / scale);
    return -2.0 * u * (1.0 - u * u) / scale;
  };
  return elementwise_transform(dim, std::move(m));
}

DiffeoTransform additive_logistic_transform(int k) {
  if (k < 1) throw ConfigError("additive_logistic_transform: k must be positive");
  DiffeoTransform t;
  t.dim_in = k;
  t.dim_out = k;
  t.forward = [](const Vec& x, double) {
    // Shifted form keeps the implicit zero logit of the remainder slot stable.
    const double shift = std::max(0.0, x.maxCoeff());
    Vec e = (x.array() - shift).exp();
    const double denom = std::exp(-shift) + e.sum();
    return Vec(e / denom);
  };
  t.inverse = [](const Vec& y, double) {
    const double rem = 1.0 - y.sum();
    if (!(rem >= kSimplexMargin) || y.minCoeff() < kSimplexMargin)
      throw DomainError("additive_logistic_transform: point outside the open simplex");
    return Vec((y.array() / rem).log());
  };
  t.jacobian = [fwd = t.forward](const Vec& x, double time) {
    const Vec y = fwd(x, time);
    Mat j = -y * y.transpose();
    j.diagonal() += y;
    return j;
  };
  t.hessian = [fwd = t.forward, k](const Vec& x, double time) {
    const Vec y = fwd(x, time);
    Mat j = -y * y.transpose();
    j.diagonal() += y;
    HessianTensor h(k);
    for (int i = 0; i < k; ++i) {
      Vec d = -y;
      d[i] += 1.0;
      h[i] = y[i] * (d * d.transpose() - j);
    }
    return h;
  };
  t.time_partial = [k](const Vec& x, double t_) { return zero_time_partial(k, x, t_); };
  return t;
}

DiffeoTransform fd_wrap(int dim_in, int dim_out,
                        std::function<Vec(const Vec&, double)> forward,
                        std::function<Vec(const Vec&, double)> inverse, fd::FdConfig cfg) {
  DiffeoTransform t;
  t.dim_in = dim_in;
  t.dim_out = dim_out;
  t.forward = forward;
  t.inverse = std::move(inverse);
  t.jacobian = [forward, cfg](const Vec& x, double time) {
    return fd::jacobian([&](const Vec& p) { return forward(p, time); }, x, cfg);
  };
  t.hessian = [forward, cfg](const Vec& x, double time) {
    return fd::hessian_tensor([&](const Vec& p) { return forward(p, time); }, x, cfg);
  };
  t.time_partial = [forward, cfg](const Vec& x, double time) {
    const double h = cfg.step * std::max(1.0, std::abs(time));
    return Vec((forward(x, time + h) - forward(x, time - h)) / (2.0 * h));
  };
  return t;
}

DiffeoTransform inverse_of(const DiffeoTransform& t) {
  if (t.dim_in != t.dim_out)
    throw ConfigError("inverse_of: only square transforms are invertible");
  DiffeoTransform r;
  r.dim_in = t.dim_out;
  r.dim_out = t.dim_in;
  r.forward = t.inverse;
  r.inverse = t.forward;
  r.jacobian = [t](const Vec& y, double time) {
    const Vec x = t.inverse(y, time);
    return inverted_jacobian(t, x, time).jinv;
  };
  // H_inv[i](j,k) = -sum_a Jinv(i,a) (Jinv^T H[a] Jinv)(j,k).
  r.hessian = [t](const Vec& y, double time) {
    const Vec x = t.inverse(y, time);
    const JacPair jp = inverted_jacobian(t, x, time);
    const HessianTensor h = t.hessian(x, time);
    const Eigen::Index n = jp.jinv.rows();
    HessianTensor pulled(h.size());
    for (std::size_t a = 0; a < h.size(); ++a)
      pulled[a] = jp.jinv.transpose() * h[a] * jp.jinv;
    HessianTensor out(h.size(), Mat::Zero(n, n));
    for (Eigen::Index i = 0; i < n; ++i)
      for (std::size_t a = 0; a < h.size(); ++a)
        out[i] -= jp.jinv(i, static_cast<Eigen::Index>(a)) * pulled[a];
    return out;
  };
  r.time_partial = [t](const Vec& y, double time) {
    const Vec x = t.inverse(y, time);
    const JacPair jp = inverted_jacobian(t, x, time);
    return Vec(-jp.jinv * t.time_partial(x, time));
  };
  return r;
}

DiffeoTransform compose(const DiffeoTransform& outer, const DiffeoTransform& inner) {
  if (inner.dim_out != outer.dim_in)
    throw ConfigError("compose: inner output dimension must match outer input dimension");
  DiffeoTransform t;
  t.dim_in = inner.dim_in;
  t.dim_out = outer.dim_out;
  t.forward = [outer, inner](const Vec& x, double time) {
    return outer.forward(inner.forward(x, time), time);
  };
  t.inverse = [outer, inner](const Vec& y, double time) {
    return inner.inverse(outer.inverse(y, time), time);
  };
  t.jacobian = [outer, inner](const Vec& x, double time) {
    const Vec u = inner.forward(x, time);
    return Mat(outer.jacobian(u, time) * inner.jacobian(x, time));
  };
  t.hessian = [outer, inner](const Vec& x, double time) {
    const Vec u = inner.forward(x, time);
    const Mat ji = inner.jacobian(x, time);
    const Mat jo = outer.jacobian(u, time);
    const HessianTensor hi = inner.hessian(x, time);
    const HessianTensor ho = outer.hessian(u, time);
    const Eigen::Index n = ji.cols();
    HessianTensor out(ho.size(), Mat::Zero(n, n));
    for (std::size_t c = 0; c < ho.size(); ++c) {
      out[c] = ji.transpose() * ho[c] * ji;
      for (std::size_t a = 0; a < hi.size(); ++a)
        out[c] += jo(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) * hi[a];
    }
    return out;
  };
  t.time_partial = [outer, inner](const Vec& x, double time) {
    const Vec u = inner.forward(x, time);
    return Vec(outer.time_partial(u, time) +
               outer.jacobian(u, time) * inner.time_partial(x, time));
  };
  return t;
}

Vec grad_log_det(const DiffeoTransform& t, const Vec& x, double time) {
  const JacPair jp = inverted_jacobian(t, x, time);
  return hessian_contraction(t.hessian(x, time), jp.jinv);
}

Vec jacobian_transpose_divergence(const DiffeoTransform& t, const Vec& x, double time) {
  const JacPair jp = inverted_jacobian(t, x, time);
  const Vec w = hessian_contraction(t.hessian(x, time), jp.jinv);
  return Vec(-jp.jinv.transpose() * w);
}

Vec pushforward_score(const DiffeoTransform& t, const ScoreField& score_x, const Vec& y,
                      double time) {
  const Vec x = t.inverse(y, time);
  const JacPair jp = inverted_jacobian(t, x, time);
  const Vec w = hessian_contraction(t.hessian(x, time), jp.jinv);
  return Vec(jp.jinv.transpose() * (score_x.eval(x, time) - w));
}

ScoreField pushforward_score_field(const DiffeoTransform& t, const ScoreField& score_x) {
  ScoreField s;
  s.dim = t.dim_out;
  s.eval = [t, score_x](const Vec& y, double time) {
    return pushforward_score(t, score_x, y, time);
  };
  return s;
}

double pushforward_score_1d(const DiffeoTransform& t,
                            const std::function<double(double)>& score_x, double y,
                            double time) {
  if (t.dim_in != 1 || t.dim_out != 1)
    throw ConfigError("pushforward_score_1d: transform must be one-dimensional");
  Vec yv(1);
  yv[0] = y;
  const Vec xv = t.inverse(yv, time);
  const double d1 = t.jacobian(xv, time)(0, 0);
  if (std::abs(d1) < kTinyNorm)
    throw SingularJacobian("pushforward_score_1d: zero derivative");
  const double d2 = t.hessian(xv, time)[0](0, 0);
  const double sx = score_x(xv[0]);
  const double forward_form = (d1 * sx - d2) / (d1 * d1);

  const DiffeoTransform inv = inverse_of(t);
  const double ip = inv.jacobian(yv, time)(0, 0);
  const double ipp = inv.hessian(yv, time)[0](0, 0);
  const double inverse_form = ip * sx + ipp / ip;

  if (std::abs(forward_form - inverse_form) >
      1e-10 * std::max(1.0, std::abs(forward_form)))
    throw ConsistencyError("pushforward_score_1d: algebraic forms disagree");
  return forward_form;
}

double project_score(const ScalarSlice& v, const ScoreField& score_x, const Vec& x,
                     const std::function<double(const Vec&, int)>& conditional_term) {
  const Vec g = v.gradient(x);
  const double n2 = g.squaredNorm();
  if (n2 < kTinyNorm) throw DegenerateSlice("project_score: zero slice gradient");
  const double lap = v.laplacian ? v.laplacian(x) : v.hessian(x).trace();
  double cond = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    cond += g[i] * g[i] * conditional_term(x, static_cast<int>(i));
  const double num = g.dot(score_x.eval(x, 0.0)) - lap - cond;
  return num / n2;
}

Vec expand_score(const std::vector<DiffeoTransform>& components,
                 const std::function<double(double)>& score_x, double x) {
  Vec out(static_cast<Eigen::Index>(components.size()));
  Vec xv(1);
  xv[0] = x;
  const double sx = score_x(x);
  for (std::size_t i = 0; i < components.size(); ++i) {
    const DiffeoTransform& c = components[i];
    if (c.dim_in != 1 || c.dim_out != 1)
      throw ConfigError("expand_score: components must be one-dimensional");
    const double d1 = c.jacobian(xv, 0.0)(0, 0);
    if (std::abs(d1) < kTinyNorm)
      throw SingularJacobian("expand_score: zero component derivative");
    const double d2 = c.hessian(xv, 0.0)[0](0, 0);
    out[static_cast<Eigen::Index>(i)] = (d1 * sx - d2) / (d1 * d1);
  }
  return out;
}

namespace {

void require_exact_keys(const nlohmann::json& obj, std::initializer_list<const char*> keys,
                        const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : keys)
      if (item.key() == k) known = true;
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
  for (const char* k : keys)
    if (!obj.contains(k)) throw ConfigError(where + ": missing key '" + std::string(k) + "'");
}

int required_int(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.at(key).is_number_integer())
    throw ConfigError(where + ": '" + key + "' must be an integer");
  return obj.at(key).get<int>();
}

}  // namespace

DiffeoTransform transform_from_json(const nlohmann::json& desc) {
  require_exact_keys(desc, {"kind", "params"}, "transform descriptor");
  if (!desc.at("kind").is_string())
    throw ConfigError("transform descriptor: 'kind' must be a string");
  const std::string kind = desc.at("kind").get<std::string>();
  const nlohmann::json& p = desc.at("params");
  if (kind == "identity") {
    require_exact_keys(p, {"dim"}, "identity params");
    return identity_transform(required_int(p, "dim", "identity params"));
  }
  if (kind == "affine") {
    require_exact_keys(p, {"matrix", "offset"}, "affine params");
    const auto rows = p.at("matrix").get<std::vector<std::vector<double>>>();
    const auto off = p.at("offset").get<std::vector<double>>();
    if (rows.empty()) throw ConfigError("affine params: empty matrix");
    Mat a(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size())
        throw ConfigError("affine params: ragged matrix");
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    Vec b(static_cast<Eigen::Index>(off.size()));
    for (std::size_t i = 0; i < off.size(); ++i) b[static_cast<Eigen::Index>(i)] = off[i];
    return affine_transform(a, b);
  }
  if (kind == "exp") {
    require_exact_keys(p, {"dim"}, "exp params");
    return exp_transform(required_int(p, "dim", "exp params"));
  }
  if (kind == "sigmoid") {
    require_exact_keys(p, {"dim"}, "sigmoid params");
    return sigmoid_transform(required_int(p, "dim", "sigmoid params"));
  }
  if (kind == "tanh_clip") {
    require_exact_keys(p, {"dim", "scale"}, "tanh_clip params");
    if (!p.at("scale").is_number()) throw ConfigError("tanh_clip params: 'scale' must be a number");
    return tanh_clip_transform(required_int(p, "dim", "tanh_clip params"),
                               p.at("scale").get<double>());
  }
  if (kind == "additive_logistic") {
    require_exact_keys(p, {"k"}, "additive_logistic params");
    return additive_logistic_transform(required_int(p, "k", "additive_logistic params"));
  }
  throw ConfigError("transform descriptor: unknown kind '" + kind + "'");
}

}  // namespace scorex
