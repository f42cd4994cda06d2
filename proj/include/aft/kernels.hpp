#pragma once

// MCMC mutation kernels targeting a tempered potential, with step sizes
// interpolated over annealing time t = k/K. HMC, slice, and RWMH leave the
// tempered distribution exactly invariant; ULA is the unadjusted Langevin
// step and is only approximately invariant.

#include <aft/common.hpp>
#include <aft/rng.hpp>
#include <aft/targets.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace aft {

struct StepSchedule {
  std::vector<double> times;
  std::vector<double> values;
};

inline void validate_step_schedule(const StepSchedule& s) {
  require(!s.times.empty(), "step schedule: at least one knot required");
  require(s.times.size() == s.values.size(), "step schedule: times and values must pair up");
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    require(std::isfinite(s.times[i]) && s.times[i] >= 0.0 && s.times[i] <= 1.0,
            "step schedule: knot times must lie in [0, 1]");
    require(i == 0 || s.times[i] > s.times[i - 1],
            "step schedule: knot times must be strictly increasing");
    require(std::isfinite(s.values[i]) && s.values[i] >= 0.0,
            "step schedule: knot values must be finite and nonnegative");
  }
}

inline double step_size_at(const StepSchedule& s, double t) {
  if (t <= s.times.front()) return s.values.front();
  if (t >= s.times.back()) return s.values.back();
  std::size_t hi = 1;
  while (s.times[hi] < t) ++hi;
  const double t0 = s.times[hi - 1], t1 = s.times[hi];
  const double u = (t - t0) / (t1 - t0);
  return (1.0 - u) * s.values[hi - 1] + u * s.values[hi];
}

enum class KernelKind { hmc, slice, rwmh, ula };

inline std::string kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::hmc: return "hmc";
    case KernelKind::slice: return "slice";
    case KernelKind::rwmh: return "rwmh";
    case KernelKind::ula: return "ula";
  }
  return "?";
}

inline KernelKind kernel_kind_from_name(const std::string& s) {
  if (s == "hmc") return KernelKind::hmc;
  if (s == "slice") return KernelKind::slice;
  if (s == "rwmh") return KernelKind::rwmh;
  if (s == "ula") return KernelKind::ula;
  throw ConfigError("kernel: unknown kind '" + s + "'");
}

struct KernelConfig {
  KernelKind kind = KernelKind::hmc;
  // hmc: leapfrog step; slice: initial bracket width; rwmh: proposal sd;
  // ula: discretization step
  StepSchedule step{{0.0}, {0.5}};
  int num_outer = 10;     // hmc iterations or slice sweeps per mutation
  int num_leapfrog = 10;  // hmc only
  int max_doublings = 5;  // slice only
};

inline void validate_kernel_config(const KernelConfig& cfg) {
  validate_step_schedule(cfg.step);
  require(cfg.num_outer >= 1, "kernel: outer iteration count must be >= 1");
  if (cfg.kind == KernelKind::hmc)
    require(cfg.num_leapfrog >= 1, "kernel: leapfrog step count must be >= 1");
  if (cfg.kind == KernelKind::slice)
    require(cfg.max_doublings >= 0, "kernel: max doublings must be >= 0");
}

struct MutationStats {
  long long proposals = 0;
  long long accepts = 0;
  long long shrink_aborts = 0;  // slice coordinate updates that hit the cap
  long long bad_gradients = 0;  // aborted hmc trajectories, skipped ula moves
  double energy_error_sum = 0.0;
  long long energy_error_count = 0;

  double accept_rate() const {
    return proposals > 0 ? double(accepts) / double(proposals) : 0.0;
  }
};

// Shared Metropolis acceptance in log space; also the brute-force oracle hook.
inline double metropolis_log_accept(double log_gamma_cur, double log_gamma_prop) {
  return std::min(0.0, log_gamma_prop - log_gamma_cur);
}

inline void hmc_step(const KernelConfig& cfg, const TemperedPotential& pot, double t, VecRef x,
                     RngStream& rng, MutationStats& stats) {
  const double eps = step_size_at(cfg.step, t);
  const Eigen::Index d = x.size();
  Vec p(d), xp(d), g(d);
  for (int outer = 0; outer < cfg.num_outer; ++outer) {
    for (Eigen::Index i = 0; i < d; ++i) p[i] = rng.normal();
    const double h0 = pot.eval(x) + 0.5 * p.squaredNorm();
    xp = x;
    pot.grad(xp, g);
    bool ok = g.allFinite();
    if (ok) {
      p -= 0.5 * eps * g;
      for (int l = 0; l < cfg.num_leapfrog; ++l) {
        xp += eps * p;
        pot.grad(xp, g);
        if (!g.allFinite()) {
          ok = false;
          break;
        }
        p -= (l + 1 == cfg.num_leapfrog ? 0.5 : 1.0) * eps * g;
      }
    }
    ++stats.proposals;
    if (!ok) {
      ++stats.bad_gradients;
      continue;
    }
    const double h1 = pot.eval(xp) + 0.5 * p.squaredNorm();
    if (std::isfinite(h1)) {
      stats.energy_error_sum += std::abs(h1 - h0);
      ++stats.energy_error_count;
    }
    // non-finite h1 makes the bound -inf and the proposal is rejected
    if (std::log(rng.uniform_pos()) <= h0 - h1) {
      x = xp;
      ++stats.accepts;
    }
  }
}

namespace detail {

// Back-tracks the doubling sequence to check the candidate could have
// produced the same bracket; the 1.1 factor absorbs roundoff in the halving.
inline bool slice_doubling_acceptable(double x0, double x1, double level, double lo, double hi,
                                      double width,
                                      const std::function<double(double)>& pot1d) {
  bool differ = false;
  while (hi - lo > 1.1 * width) {
    const double mid = 0.5 * (lo + hi);
    if ((x0 < mid && x1 >= mid) || (x0 >= mid && x1 < mid)) differ = true;
    if (x1 < mid)
      hi = mid;
    else
      lo = mid;
    if (differ && pot1d(lo) > level && pot1d(hi) > level) return false;
  }
  return true;
}

}  // namespace detail

inline void slice_step(const KernelConfig& cfg, const TemperedPotential& pot, double t, VecRef x,
                       RngStream& rng, MutationStats& stats) {
  constexpr int kShrinkCap = 1000;
  const double width = step_size_at(cfg.step, t);
  const Eigen::Index d = x.size();
  Vec xs = x;
  for (int sweep = 0; sweep < cfg.num_outer; ++sweep) {
    for (Eigen::Index i = 0; i < d; ++i) {
      auto pot1d = std::function<double(double)>([&](double v) {
        xs[i] = v;
        return pot.eval(xs);
      });
      const double x0 = x[i];
      const double level = pot1d(x0) + rng.exponential();
      double lo = x0 - width * rng.uniform();
      double hi = lo + width;
      for (int doub = 0; doub < cfg.max_doublings; ++doub) {
        if (pot1d(lo) > level && pot1d(hi) > level) break;
        if (rng.uniform() < 0.5)
          lo -= hi - lo;
        else
          hi += hi - lo;
      }
      const double full_lo = lo, full_hi = hi;
      bool placed = false;
      for (int iter = 0; iter < kShrinkCap && !placed; ++iter) {
        const double cand = lo + (hi - lo) * rng.uniform();
        if (pot1d(cand) <= level &&
            detail::slice_doubling_acceptable(x0, cand, level, full_lo, full_hi, width, pot1d)) {
          x[i] = cand;
          placed = true;
        } else if (cand < x0) {
          lo = cand;
        } else {
          hi = cand;
        }
      }
      if (!placed) ++stats.shrink_aborts;
      xs[i] = x[i];
    }
  }
}

inline void rwmh_step(const KernelConfig& cfg, const TemperedPotential& pot, double t, VecRef x,
                      RngStream& rng, MutationStats& stats) {
  const double eps = step_size_at(cfg.step, t);
  const Eigen::Index d = x.size();
  Vec xp(d);
  for (Eigen::Index i = 0; i < d; ++i) xp[i] = x[i] + eps * rng.normal();
  const double la = metropolis_log_accept(-pot.eval(x), -pot.eval(xp));
  ++stats.proposals;
  if (std::log(rng.uniform_pos()) <= la) {
    x = xp;
    ++stats.accepts;
  }
}

inline void ula_step(const KernelConfig& cfg, const TemperedPotential& pot, double t, VecRef x,
                     RngStream& rng, MutationStats& stats) {
  const double lambda = step_size_at(cfg.step, t);
  Vec g(x.size());
  pot.grad(x, g);
  if (!g.allFinite()) {
    ++stats.bad_gradients;
    return;
  }
  const double noise = std::sqrt(2.0 * lambda);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += -lambda * g[i] + noise * rng.normal();
}

inline void mutate_particle(const KernelConfig& cfg, const TemperedPotential& pot, double t,
                            VecRef x, RngStream& rng, MutationStats& stats) {
  switch (cfg.kind) {
    case KernelKind::hmc: hmc_step(cfg, pot, t, x, rng, stats); break;
    case KernelKind::slice: slice_step(cfg, pot, t, x, rng, stats); break;
    case KernelKind::rwmh: rwmh_step(cfg, pot, t, x, rng, stats); break;
    case KernelKind::ula: ula_step(cfg, pot, t, x, rng, stats); break;
  }
}

}  // namespace aft
