#pragma once

// Full-batch Adam training of a per-temperature flow with validation-based
// snapshot selection. The population is the batch, so training is entirely
// deterministic; no randomness enters after initialization.

#include <aft/common.hpp>
#include <aft/flows.hpp>
#include <aft/targets.hpp>

#include <cmath>
#include <limits>
#include <vector>

namespace aft {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  int iterations = 1000;  // J
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void validate_optimizer_config(const OptimizerConfig& cfg) {
  require(std::isfinite(cfg.learning_rate) && cfg.learning_rate > 0.0,
          "optimizer: learning rate must be positive");
  require(cfg.iterations >= 0, "optimizer: iteration count must be >= 0");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0,
          "optimizer: moment decays must lie in [0, 1)");
  require(cfg.eps > 0.0, "optimizer: eps must be positive");
}

struct AdamState {
  Vec m, v;
  long long step = 0;
};

inline void adam_update(AdamState& st, const OptimizerConfig& cfg, const Vec& grad,
                        VecRef params) {
  if (st.step == 0) {
    st.m = Vec::Zero(params.size());
    st.v = Vec::Zero(params.size());
  }
  require(grad.size() == params.size() && st.m.size() == params.size(),
          "adam: dimension mismatch");
  ++st.step;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(st.step));
  params.array() -=
      cfg.learning_rate * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + cfg.eps);
}

struct TrainTrace {
  std::vector<double> train_loss;  // loss driving each update, J entries
  std::vector<double> val_loss;    // before training plus after each update
  int selected = 0;                // iteration index of the returned snapshot
  bool aborted = false;            // stopped early on a non-finite loss
};

namespace detail {

inline double weighted_loss_or_nan(const FlowParams& p, const Mat& x, const Vec& w,
                                   const TemperedPotential& cur, const TemperedPotential& prev) {
  try {
    FlowEval flow(p);
    return w.dot(flow_loss_terms(flow, x, cur, &prev));
  } catch (const std::domain_error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace detail

// Trains on the weighted training population and returns the snapshot with
// the smallest validation loss; ties keep the earliest iteration, and the
// untrained flow is always a candidate, so the result never validates worse
// than no transport at all. A non-finite loss reverts to the best snapshot
// and stops.
inline FlowParams learn_flow(const OptimizerConfig& cfg, const FlowParams& init,
                             const Mat& x_train, const Vec& w_train, const Mat& x_val,
                             const Vec& w_val, const TemperedPotential& cur,
                             const TemperedPotential& prev, TrainTrace& trace) {
  validate_optimizer_config(cfg);
  trace = TrainTrace{};
  FlowParams best = init;
  double best_val = detail::weighted_loss_or_nan(init, x_val, w_val, cur, prev);
  trace.val_loss.push_back(best_val);
  if (!std::isfinite(best_val)) {
    trace.aborted = true;
    return best;
  }

  FlowParams params = init;
  AdamState state;
  Vec grad;
  for (int j = 1; j <= cfg.iterations; ++j) {
    double loss;
    try {
      loss = flow_loss_and_grad(params, x_train, w_train, cur, &prev, grad);
    } catch (const std::domain_error&) {
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(loss) || !grad.allFinite()) {
      trace.aborted = true;
      break;
    }
    trace.train_loss.push_back(loss);
    adam_update(state, cfg, grad, params.theta);
    const double vl = detail::weighted_loss_or_nan(params, x_val, w_val, cur, prev);
    if (!std::isfinite(vl)) {
      trace.aborted = true;
      break;
    }
    trace.val_loss.push_back(vl);
    if (vl < best_val) {
      best_val = vl;
      best = params;
      trace.selected = j;
    }
  }
  return best;
}

}  // namespace aft
