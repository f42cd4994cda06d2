#pragma once

// Normalizing-flow families with hand-derived reverse-mode parameter
// gradients. Every family initializes to the identity map, so an untrained
// flow leaves particles and weights untouched.
//
// Flat parameter layouts (serialization contract):
//   identity      no parameters
//   diag_affine   [log_scale(d), shift(d)], y_i = exp(s_i) x_i + b_i
//   rq_spline_mf  per dimension j a block of 29 at offset 29j:
//                 [width_raw(10), height_raw(10), deriv_raw(9)]
//   affine_iaf    [W1(HxD), b1(H), W2(HxH), b2(H), W3(HxH), b3(H),
//                  Wout(2DxH), bout(2D)], weight matrices row-major,
//                 H = hidden_per_dim * D, mu = out[0..D), sigma = out[D..2D)
//
// The spline acts per dimension on [-4, 4] with 10 bins: widths and heights
// are softmaxed then rescaled so each bin keeps a minimum fraction of 1e-4,
// knot derivatives are 1e-4 + softplus(raw) with the boundary derivatives
// pinned to 1, and the map is the identity outside the range.

#include <aft/common.hpp>
#include <aft/rng.hpp>
#include <aft/targets.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace aft {

enum class FlowFamily { identity, diag_affine, rq_spline_mf, affine_iaf };

inline std::string flow_family_name(FlowFamily f) {
  switch (f) {
    case FlowFamily::identity: return "identity";
    case FlowFamily::diag_affine: return "diag_affine";
    case FlowFamily::rq_spline_mf: return "rq_spline_mf";
    case FlowFamily::affine_iaf: return "affine_iaf";
  }
  return "?";
}

inline FlowFamily flow_family_from_name(const std::string& s) {
  if (s == "identity") return FlowFamily::identity;
  if (s == "diag_affine") return FlowFamily::diag_affine;
  if (s == "rq_spline_mf") return FlowFamily::rq_spline_mf;
  if (s == "affine_iaf") return FlowFamily::affine_iaf;
  throw ConfigError("flow: unknown family '" + s + "'");
}

inline constexpr int kSplineBins = 10;
inline constexpr double kSplineRange = 4.0;
inline constexpr double kSplineMinFrac = 1e-4;
inline constexpr double kSplineMinDeriv = 1e-4;
inline constexpr int kSplineParamsPerDim = 3 * kSplineBins - 1;

struct FlowParams {
  FlowFamily family = FlowFamily::identity;
  int dim = 0;
  Vec theta;
  // affine_iaf architecture, carried so parameter vectors are self-describing
  int iaf_hidden_per_dim = 30;
  double leaky_slope = 0.01;
};

inline Eigen::Index iaf_hidden_width(int dim, int hidden_per_dim) {
  return Eigen::Index(dim) * hidden_per_dim;
}

inline Eigen::Index param_count(FlowFamily family, int dim, int iaf_hidden_per_dim = 30) {
  switch (family) {
    case FlowFamily::identity: return 0;
    case FlowFamily::diag_affine: return 2 * Eigen::Index(dim);
    case FlowFamily::rq_spline_mf: return Eigen::Index(dim) * kSplineParamsPerDim;
    case FlowFamily::affine_iaf: {
      Eigen::Index h = iaf_hidden_width(dim, iaf_hidden_per_dim);
      Eigen::Index d = dim;
      return h * d + h + 2 * (h * h + h) + 2 * d * h + 2 * d;
    }
  }
  return 0;
}

namespace detail {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Raw value whose transformed knot derivative is exactly 1.0 in float64, so
// the freshly initialized spline is the identity bit-for-bit.
inline double spline_identity_deriv_raw() {
  double r = std::log(std::exp(1.0 - kSplineMinDeriv) - 1.0);
  for (int i = 0; i < 200; ++i) {
    double got = kSplineMinDeriv + softplus(r);
    if (got == 1.0) return r;
    r = std::nextafter(r, got < 1.0 ? 2.0 : -2.0);
  }
  return r;
}

struct SplineDim {
  double xk[kSplineBins + 1];
  double yk[kSplineBins + 1];
  double dlt[kSplineBins + 1];
  double sm_w[kSplineBins];
  double sm_h[kSplineBins];
  double sig_d[kSplineBins - 1];
};

inline void build_spline_dim(const double* block, SplineDim& t) {
  auto knots = [](const double* raw, double* sm, double* knot) {
    double m = raw[0];
    for (int i = 1; i < kSplineBins; ++i) m = std::max(m, raw[i]);
    double sum = 0.0;
    for (int i = 0; i < kSplineBins; ++i) {
      sm[i] = std::exp(raw[i] - m);
      sum += sm[i];
    }
    const double scale = 1.0 - kSplineBins * kSplineMinFrac;
    knot[0] = -kSplineRange;
    for (int i = 0; i < kSplineBins; ++i) {
      sm[i] /= sum;
      double frac = kSplineMinFrac + scale * sm[i];
      knot[i + 1] = knot[i] + 2.0 * kSplineRange * frac;
    }
    knot[kSplineBins] = kSplineRange;
  };
  knots(block, t.sm_w, t.xk);
  knots(block + kSplineBins, t.sm_h, t.yk);
  t.dlt[0] = t.dlt[kSplineBins] = 1.0;
  for (int i = 0; i < kSplineBins - 1; ++i) {
    double raw = block[2 * kSplineBins + i];
    t.dlt[i + 1] = kSplineMinDeriv + softplus(raw);
    t.sig_d[i] = sigmoid(raw);
  }
}

inline int spline_bin(const SplineDim& t, double x) {
  int lo = 0, hi = kSplineBins;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    (t.xk[mid] <= x ? lo : hi) = mid;
  }
  return lo;
}

struct IafPlan {
  int dim = 0;
  Eigen::Index h = 0;
  double slope = 0.01;
  std::vector<int> hidden_degree;
  Mat m1, m2, mo;      // 0/1 masks (m2 shared by both hidden-to-hidden layers)
  Mat w1, w2, w3, wo;  // masked weights
  Vec b1, b2, b3, bo;
};

inline void build_iaf_plan(const FlowParams& p, IafPlan& plan) {
  const int d = p.dim;
  const Eigen::Index h = iaf_hidden_width(d, p.iaf_hidden_per_dim);
  plan.dim = d;
  plan.h = h;
  plan.slope = p.leaky_slope;
  plan.hidden_degree.resize(std::size_t(h));
  // degrees cycle over 1..d-1; with them, output i depends on inputs < i only
  const int dmax = std::max(1, d - 1);
  for (Eigen::Index i = 0; i < h; ++i) plan.hidden_degree[std::size_t(i)] = int(i % dmax) + 1;

  plan.m1 = Mat::Zero(h, d);
  for (Eigen::Index i = 0; i < h; ++i)
    for (int j = 0; j < d; ++j)
      if (plan.hidden_degree[std::size_t(i)] >= j + 1) plan.m1(i, j) = 1.0;
  plan.m2 = Mat::Zero(h, h);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < h; ++j)
      if (plan.hidden_degree[std::size_t(i)] >= plan.hidden_degree[std::size_t(j)])
        plan.m2(i, j) = 1.0;
  plan.mo = Mat::Zero(2 * Eigen::Index(d), h);
  for (Eigen::Index o = 0; o < 2 * Eigen::Index(d); ++o)
    for (Eigen::Index j = 0; j < h; ++j)
      if (plan.hidden_degree[std::size_t(j)] <= int(o % d)) plan.mo(o, j) = 1.0;

  const double* th = p.theta.data();
  Eigen::Index off = 0;
  auto take = [&](Mat& w, Vec& b, Eigen::Index rows, Eigen::Index cols, const Mat& mask) {
    w = Eigen::Map<const Mat>(th + off, rows, cols).cwiseProduct(mask);
    off += rows * cols;
    b = Eigen::Map<const Vec>(th + off, rows);
    off += rows;
  };
  take(plan.w1, plan.b1, h, d, plan.m1);
  take(plan.w2, plan.b2, h, h, plan.m2);
  take(plan.w3, plan.b3, h, h, plan.m2);
  take(plan.wo, plan.bo, 2 * Eigen::Index(d), h, plan.mo);
}

inline void leaky_mat(Mat& m, double slope) {
  double* p = m.data();
  for (Eigen::Index i = 0, sz = m.size(); i < sz; ++i)
    if (p[i] < 0.0) p[i] *= slope;
}

inline void leaky_vec(Vec& v, double slope) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] < 0.0) v[i] *= slope;
}

}  // namespace detail

// Identity initialization. The IAF hidden layers are randomized (fan-in
// scaled truncated normal, biases zero) but the zeroed output layer still
// yields T(x) = x exactly.
inline FlowParams init_flow_params(FlowFamily family, int dim, RngStream& rng,
                                   int iaf_hidden_per_dim = 30, double leaky_slope = 0.01) {
  require(dim >= 1, "flow: dim must be >= 1");
  FlowParams p;
  p.family = family;
  p.dim = dim;
  p.iaf_hidden_per_dim = iaf_hidden_per_dim;
  p.leaky_slope = leaky_slope;
  p.theta = Vec::Zero(param_count(family, dim, iaf_hidden_per_dim));
  if (family == FlowFamily::rq_spline_mf) {
    const double draw = detail::spline_identity_deriv_raw();
    for (int j = 0; j < dim; ++j)
      for (int i = 0; i < kSplineBins - 1; ++i)
        p.theta[j * kSplineParamsPerDim + 2 * kSplineBins + i] = draw;
  } else if (family == FlowFamily::affine_iaf) {
    const Eigen::Index h = iaf_hidden_width(dim, iaf_hidden_per_dim);
    auto trunc_normal = [&rng](double scale) {
      double z;
      do {
        z = rng.normal();
      } while (std::abs(z) > 2.0);
      return scale * z;
    };
    Eigen::Index off = 0;
    auto fill_layer = [&](Eigen::Index rows, Eigen::Index cols) {
      double scale = 1.0 / std::sqrt(double(cols));
      for (Eigen::Index i = 0; i < rows * cols; ++i) p.theta[off + i] = trunc_normal(scale);
      off += rows * cols + rows;  // biases stay zero
    };
    fill_layer(h, dim);
    fill_layer(h, h);
    fill_layer(h, h);
    // output layer stays zero
  }
  return p;
}

struct FlowOutput {
  Vec y;
  double log_det = 0.0;
};

// Caches per-parameter tables (spline knots, masked IAF weights) so repeated
// evaluation at a fixed theta is cheap.
class FlowEval {
 public:
  explicit FlowEval(const FlowParams& p) : p_(&p) {
    require(p.theta.size() == param_count(p.family, p.dim, p.iaf_hidden_per_dim),
            "flow: parameter vector has wrong length");
    if (p.family == FlowFamily::rq_spline_mf) {
      require(p.theta.allFinite(), "flow: spline parameters must be finite");
      tables_.resize(std::size_t(p.dim));
      for (int j = 0; j < p.dim; ++j)
        detail::build_spline_dim(p.theta.data() + j * kSplineParamsPerDim,
                                 tables_[std::size_t(j)]);
    } else if (p.family == FlowFamily::affine_iaf) {
      detail::build_iaf_plan(p, plan_);
    }
  }

  int dim() const { return p_->dim; }
  const FlowParams& params() const { return *p_; }
  const std::vector<detail::SplineDim>& spline_tables() const { return tables_; }
  const detail::IafPlan& iaf_plan() const { return plan_; }

  FlowOutput forward(CVecRef x) const {
    require(x.size() == p_->dim, "flow: input dimension mismatch");
    FlowOutput out;
    out.y.resize(p_->dim);
    switch (p_->family) {
      case FlowFamily::identity:
        out.y = x;
        break;
      case FlowFamily::diag_affine:
        for (int i = 0; i < p_->dim; ++i) {
          double s = p_->theta[i];
          out.y[i] = std::exp(s) * x[i] + p_->theta[p_->dim + i];
          out.log_det += s;
        }
        break;
      case FlowFamily::rq_spline_mf:
        for (int i = 0; i < p_->dim; ++i) {
          double ld;
          out.y[i] = spline_forward_dim(tables_[std::size_t(i)], x[i], ld);
          out.log_det += ld;
        }
        break;
      case FlowFamily::affine_iaf: {
        const auto& pl = plan_;
        Vec a1 = pl.w1 * x + pl.b1;
        detail::leaky_vec(a1, pl.slope);
        Vec a2 = pl.w2 * a1 + pl.b2;
        detail::leaky_vec(a2, pl.slope);
        Vec a3 = pl.w3 * a2 + pl.b3;
        detail::leaky_vec(a3, pl.slope);
        Vec o = pl.wo * a3 + pl.bo;
        for (int i = 0; i < p_->dim; ++i) {
          double c = 1.0 + o[p_->dim + i];
          if (!(c > 0.0)) throw std::domain_error("affine_iaf: scale 1 + sigma is not positive");
          out.y[i] = c * x[i] + o[i];
          out.log_det += std::log(c);
        }
        break;
      }
    }
    return out;
  }

  void forward_batch(const Mat& x, Mat& y, Vec& log_det) const {
    const Eigen::Index n = x.rows();
    require(x.cols() == p_->dim, "flow: batch dimension mismatch");
    y.resize(n, p_->dim);
    log_det.setZero(n);
    switch (p_->family) {
      case FlowFamily::identity:
        y = x;
        break;
      case FlowFamily::diag_affine: {
        Vec scale = p_->theta.head(p_->dim).array().exp();
        y = x.array().rowwise() * scale.transpose().array();
        y.rowwise() += p_->theta.tail(p_->dim).transpose();
        log_det.setConstant(p_->theta.head(p_->dim).sum());
        break;
      }
      case FlowFamily::rq_spline_mf:
        for (Eigen::Index r = 0; r < n; ++r) {
          double acc = 0.0;
          for (int i = 0; i < p_->dim; ++i) {
            double ld;
            y(r, i) = spline_forward_dim(tables_[std::size_t(i)], x(r, i), ld);
            acc += ld;
          }
          log_det[r] = acc;
        }
        break;
      case FlowFamily::affine_iaf: {
        Mat a1, a2, a3, o;
        iaf_net_batch(x, a1, a2, a3, o);
        const int d = p_->dim;
        for (Eigen::Index r = 0; r < n; ++r) {
          double acc = 0.0;
          for (int i = 0; i < d; ++i) {
            double c = 1.0 + o(r, d + i);
            if (!(c > 0.0))
              throw std::domain_error("affine_iaf: scale 1 + sigma is not positive");
            y(r, i) = c * x(r, i) + o(r, i);
            acc += std::log(c);
          }
          log_det[r] = acc;
        }
        break;
      }
    }
  }

  void iaf_net_batch(const Mat& x, Mat& a1, Mat& a2, Mat& a3, Mat& o) const {
    const auto& pl = plan_;
    a1 = x * pl.w1.transpose();
    a1.rowwise() += pl.b1.transpose();
    detail::leaky_mat(a1, pl.slope);
    a2 = a1 * pl.w2.transpose();
    a2.rowwise() += pl.b2.transpose();
    detail::leaky_mat(a2, pl.slope);
    a3 = a2 * pl.w3.transpose();
    a3.rowwise() += pl.b3.transpose();
    detail::leaky_mat(a3, pl.slope);
    o = a3 * pl.wo.transpose();
    o.rowwise() += pl.bo.transpose();
  }

  static double spline_forward_dim(const detail::SplineDim& t, double x, double& log_det);
  static void spline_vjp_dim(const detail::SplineDim& t, double x, double gy, double gl,
                             double* gblock);

 private:
  const FlowParams* p_;
  std::vector<detail::SplineDim> tables_;
  detail::IafPlan plan_;
};

inline double FlowEval::spline_forward_dim(const detail::SplineDim& t, double x,
                                           double& log_det) {
  log_det = 0.0;
  if (x < -kSplineRange || x > kSplineRange) return x;
  const int k = detail::spline_bin(t, x);
  const double xa = t.xk[k], xb = t.xk[k + 1], ya = t.yk[k], yb = t.yk[k + 1];
  const double da = t.dlt[k], db = t.dlt[k + 1];
  const double w = xb - xa, h = yb - ya;
  const double s = h / w;
  // an aligned bin with unit slopes is the identity; keeps init bit-exact
  if (s == 1.0 && da == 1.0 && db == 1.0 && ya == xa) return x;
  const double xi = (x - xa) / w;
  const double A = xi * (1.0 - xi);
  const double den = s + (da + db - 2.0 * s) * A;
  const double num = h * (s * xi * xi + da * A);
  const double P = db * xi * xi + 2.0 * s * A + da * (1.0 - xi) * (1.0 - xi);
  log_det = 2.0 * std::log(s) + std::log(P) - 2.0 * std::log(den);
  return ya + num / den;
}

// Accumulates d(gy * y + gl * log_det)/dtheta for one dimension into that
// dimension's 29-entry gradient block. Derivatives of the rational quadratic
// are taken w.r.t. the bin quantities and chained through cumulative-sum
// knots, the rescaled softmax, and the softplus slopes; the boundary knots
// and slopes are constants and receive nothing.
inline void FlowEval::spline_vjp_dim(const detail::SplineDim& t, double x, double gy, double gl,
                                     double* gblock) {
  if (x < -kSplineRange || x > kSplineRange) return;
  const int k = detail::spline_bin(t, x);
  const double xa = t.xk[k], xb = t.xk[k + 1], ya = t.yk[k], yb = t.yk[k + 1];
  const double da = t.dlt[k], db = t.dlt[k + 1];
  const double w = xb - xa, h = yb - ya;
  const double s = h / w;
  const double xi = (x - xa) / w;
  const double A = xi * (1.0 - xi);
  const double den = s + (da + db - 2.0 * s) * A;
  const double num = h * (s * xi * xi + da * A);
  const double P = db * xi * xi + 2.0 * s * A + da * (1.0 - xi) * (1.0 - xi);

  const double dnum_dxi = h * (2.0 * s * xi + da * (1.0 - 2.0 * xi));
  const double dnum_ds = h * xi * xi;
  const double dnum_dh = s * xi * xi + da * A;
  const double dnum_dda = h * A;
  const double dden_dxi = (da + db - 2.0 * s) * (1.0 - 2.0 * xi);
  const double dden_ds = 1.0 - 2.0 * A;
  const double dden_dd = A;  // shared by da and db
  const double dP_dxi = 2.0 * (db * xi + s * (1.0 - 2.0 * xi) - da * (1.0 - xi));
  const double dP_ds = 2.0 * A;
  const double dP_dda = (1.0 - xi) * (1.0 - xi);
  const double dP_ddb = xi * xi;

  const double inv_den = 1.0 / den;
  auto dy = [&](double dn, double dd) { return (dn * den - num * dd) * inv_den * inv_den; };
  auto dL = [&](double dP, double dd) { return dP / P - 2.0 * dd * inv_den; };

  const double g_xi = gy * dy(dnum_dxi, dden_dxi) + gl * dL(dP_dxi, dden_dxi);
  const double g_s = gy * dy(dnum_ds, dden_ds) + gl * (2.0 / s + dL(dP_ds, dden_ds));
  const double g_h_direct = gy * dy(dnum_dh, 0.0);
  const double g_da = gy * dy(dnum_dda, dden_dd) + gl * dL(dP_dda, dden_dd);
  const double g_db = gy * dy(0.0, dden_dd) + gl * dL(dP_ddb, dden_dd);

  const double g_w = -(g_s * s + g_xi * xi) / w;
  const double g_h = g_s / w + g_h_direct;
  const double g_xa = -g_xi / w - g_w;
  const double g_xb = g_w;
  const double g_ya = gy - g_h;
  const double g_yb = g_h;

  // knots are -B + 2B * cumsum(fractions); the final knot is a constant
  const double scale = (1.0 - kSplineBins * kSplineMinFrac) * 2.0 * kSplineRange;
  double gf_w[kSplineBins] = {0}, gf_h[kSplineBins] = {0};
  for (int i = 0; i < k; ++i) {
    gf_w[i] += g_xa;
    gf_h[i] += g_ya;
  }
  if (k + 1 < kSplineBins) {
    for (int i = 0; i <= k; ++i) {
      gf_w[i] += g_xb;
      gf_h[i] += g_yb;
    }
  }

  auto softmax_back = [&](const double* sm, const double* gf, double* graw) {
    double dot = 0.0;
    for (int i = 0; i < kSplineBins; ++i) dot += gf[i] * sm[i];
    for (int i = 0; i < kSplineBins; ++i) graw[i] += scale * sm[i] * (gf[i] - dot);
  };
  softmax_back(t.sm_w, gf_w, gblock);
  softmax_back(t.sm_h, gf_h, gblock + kSplineBins);

  if (k >= 1) gblock[2 * kSplineBins + (k - 1)] += g_da * t.sig_d[k - 1];
  if (k + 1 <= kSplineBins - 1) gblock[2 * kSplineBins + k] += g_db * t.sig_d[k];
}

// Per-particle transport losses h_T(x) = V_k(T(x)) - V_{k-1}(x) - log|grad T|.
// Pass prev = nullptr to drop the parameter-independent V_{k-1} term.
inline Vec flow_loss_terms(const FlowEval& flow, const Mat& x, const TemperedPotential& cur,
                           const TemperedPotential* prev) {
  Mat y;
  Vec log_det;
  flow.forward_batch(x, y, log_det);
  Vec h(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double v = cur.eval(y.row(r).transpose()) - log_det[r];
    if (prev) v -= prev->eval(x.row(r).transpose());
    h[r] = v;
  }
  return h;
}

namespace detail {

// IAF loss/gradient over one contiguous chunk; GEMM-heavy on purpose.
inline double iaf_loss_grad_chunk(const FlowEval& flow, const Mat& xc, CVecRef wts,
                                  const TemperedPotential& cur, const TemperedPotential* prev,
                                  VecRef grad) {
  const IafPlan& pl = flow.iaf_plan();
  const int d = pl.dim;
  const Eigen::Index h = pl.h;
  const Eigen::Index n = xc.rows();

  Mat a1, a2, a3, o;
  flow.iaf_net_batch(xc, a1, a2, a3, o);

  double loss = 0.0;
  Mat go(n, 2 * d);
  Vec y(d), gy(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    double ld = 0.0;
    for (int i = 0; i < d; ++i) {
      double c = 1.0 + o(r, d + i);
      if (!(c > 0.0)) throw std::domain_error("affine_iaf: scale 1 + sigma is not positive");
      y[i] = c * xc(r, i) + o(r, i);
      ld += std::log(c);
    }
    double hv = cur.eval(y) - ld;
    if (prev) hv -= prev->eval(xc.row(r).transpose());
    const double wi = wts[r];
    loss += wi * hv;
    cur.grad(y, gy);
    for (int i = 0; i < d; ++i) {
      const double gyi = wi * gy[i];
      go(r, i) = gyi;
      go(r, d + i) = gyi * xc(r, i) - wi / (1.0 + o(r, d + i));
    }
  }

  auto lprime = [&](Mat& delta, const Mat& act) {
    for (Eigen::Index i = 0, sz = delta.size(); i < sz; ++i)
      if (act.data()[i] < 0.0) delta.data()[i] *= pl.slope;
  };

  Mat d3 = go * pl.wo;
  lprime(d3, a3);
  Mat d2 = d3 * pl.w3;
  lprime(d2, a2);
  Mat d1 = d2 * pl.w2;
  lprime(d1, a1);

  Eigen::Index off = 0;
  auto add_layer = [&](const Mat& delta, const Mat& input, const Mat& mask) {
    const Eigen::Index rows = delta.cols(), cols = input.cols();
    Eigen::Map<Mat>(grad.data() + off, rows, cols) +=
        (delta.transpose() * input).cwiseProduct(mask);
    off += rows * cols;
    Eigen::Map<Vec>(grad.data() + off, rows) += delta.colwise().sum().transpose();
    off += rows;
  };
  add_layer(d1, xc, pl.m1);
  add_layer(d2, a1, pl.m2);
  add_layer(d3, a2, pl.m2);
  add_layer(go, a3, pl.mo);
  return loss;
}

}  // namespace detail

// Weighted transport loss L = sum_i w_i h_T(x_i) and its theta-gradient.
// Reduction runs in particle-index order (chunked for the IAF), so the result
// is deterministic for a given particle count.
inline double flow_loss_and_grad(const FlowParams& params, const Mat& x, CVecRef weights,
                                 const TemperedPotential& cur, const TemperedPotential* prev,
                                 Vec& grad) {
  require(x.rows() == weights.size(), "flow loss: weights size must match particle count");
  const FlowEval flow(params);
  grad.setZero(params.theta.size());
  const int d = params.dim;
  double loss = 0.0;
  switch (params.family) {
    case FlowFamily::identity:
    case FlowFamily::diag_affine:
    case FlowFamily::rq_spline_mf: {
      Vec y(d), gy(d), xr(d);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        xr = x.row(r).transpose();
        FlowOutput out = flow.forward(xr);
        double hv = cur.eval(out.y) - out.log_det;
        if (prev) hv -= prev->eval(xr);
        const double wi = weights[r];
        loss += wi * hv;
        if (params.family == FlowFamily::identity) continue;
        cur.grad(out.y, gy);
        if (params.family == FlowFamily::diag_affine) {
          for (int i = 0; i < d; ++i) {
            grad[i] += wi * gy[i] * std::exp(params.theta[i]) * xr[i] - wi;
            grad[d + i] += wi * gy[i];
          }
        } else {
          for (int i = 0; i < d; ++i)
            FlowEval::spline_vjp_dim(flow.spline_tables()[std::size_t(i)], xr[i], wi * gy[i],
                                     -wi, grad.data() + i * kSplineParamsPerDim);
        }
      }
      break;
    }
    case FlowFamily::affine_iaf: {
      constexpr Eigen::Index kChunk = 1024;
      for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
        const Eigen::Index n = std::min(kChunk, x.rows() - start);
        loss += detail::iaf_loss_grad_chunk(flow, x.middleRows(start, n),
                                            weights.segment(start, n), cur, prev, grad);
      }
      break;
    }
  }
  return loss;
}

}  // namespace aft
