#pragma once

// Particle populations with log-space weights, effective sample size,
// multinomial resampling, and the running normalizing-constant estimate.
// Log weights stay normalized (logsumexp == 0) after every public operation.

#include <aft/common.hpp>
#include <aft/flows.hpp>
#include <aft/rng.hpp>
#include <aft/targets.hpp>

#include <cmath>
#include <limits>

namespace aft {

inline double logsumexp(CVecRef v) {
  require(v.size() > 0, "logsumexp: empty input");
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf stays -inf; propagates nan/inf
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

struct Ensemble {
  Mat positions;    // N x d
  Vec log_weights;  // normalized so logsumexp == 0
  double log_z = 0.0;

  Eigen::Index size() const { return positions.rows(); }
  int dim() const { return int(positions.cols()); }
};

inline Ensemble init_ensemble(const AnnealedFamily& family, Eigen::Index n, std::uint64_t seed,
                              SplitTag split) {
  require(n >= 2, "ensemble: at least two particles required");
  Ensemble e;
  e.positions.resize(n, family.dim);
  Vec x(family.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    RngStream rng(seed, StreamUse::init, split, std::uint64_t(i), 0);
    family.sample_base(rng, x);
    e.positions.row(i) = x.transpose();
  }
  e.log_weights = Vec::Constant(n, -std::log(double(n)));
  e.log_z = 0.0;
  return e;
}

// Transported positions ride along so transport and reweight evaluate the
// flow exactly once per particle.
struct LogIncrements {
  Mat transported;
  Vec values;
};

// values_i = log gamma_k(T(x_i)) + log|grad T(x_i)| - log gamma_{k-1}(x_i)
inline LogIncrements log_incremental_weights(const Ensemble& e, const FlowEval& flow,
                                             const TemperedPotential& cur,
                                             const TemperedPotential& prev) {
  LogIncrements inc;
  Vec log_det;
  flow.forward_batch(e.positions, inc.transported, log_det);
  inc.values.resize(e.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    inc.values[i] = -cur.eval(inc.transported.row(i).transpose()) + log_det[i] +
                    prev.eval(e.positions.row(i).transpose());
  }
  return inc;
}

inline void reweight(Ensemble& e, const LogIncrements& inc) {
  require(inc.values.size() == e.size(), "reweight: increment count mismatch");
  Vec a = e.log_weights + inc.values;
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) throw RunAbort("particle weights collapsed during reweighting");
  Vec r = a.array() - m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) s += std::exp(r[i]);
  const double lse0 = std::log(s);
  e.log_z += m + lse0;
  if (!std::isfinite(e.log_z)) throw RunAbort("normalizing-constant estimate became non-finite");
  e.log_weights = r.array() - lse0;
  e.positions = inc.transported;
}

inline double ess(const Ensemble& e) { return std::exp(-logsumexp(2.0 * e.log_weights)); }

inline double ess_fraction(const Ensemble& e) { return ess(e) / double(e.size()); }

inline void resample_multinomial(Ensemble& e, RngStream& rng) {
  const Eigen::Index n = e.size();
  Vec cum(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += std::exp(e.log_weights[i]);
    cum[i] = acc;
  }
  cum[n - 1] = 1.0;  // guard against rounding in the running sum
  Mat picked(n, e.positions.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    Eigen::Index lo = 0, hi = n - 1;
    while (lo < hi) {
      const Eigen::Index mid = (lo + hi) / 2;
      if (cum[mid] <= u)
        lo = mid + 1;
      else
        hi = mid;
    }
    picked.row(i) = e.positions.row(lo);
  }
  e.positions.swap(picked);
  e.log_weights.setConstant(-std::log(double(n)));
}

template <typename F>
double weighted_expectation(const Ensemble& e, F&& f) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i)
    acc += std::exp(e.log_weights[i]) * f(e.positions.row(i).transpose());
  return acc;
}

}  // namespace aft
