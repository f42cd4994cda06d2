#pragma once

// Run orchestration: annealed transport with per-temperature learned flows,
// the plain SMC baseline (identity transport), and the flow-VI baseline with
// importance correction. A repeat is fully determined by (config, repeat
// index); every random draw comes from a counter stream keyed by
// (seed, use, split, particle, temperature), so split trajectories are
// independent and the SMC baseline is bit-identical to an untrained run.

#include <aft/common.hpp>
#include <aft/cox.hpp>
#include <aft/ensemble.hpp>
#include <aft/flows.hpp>
#include <aft/kernels.hpp>
#include <aft/rng.hpp>
#include <aft/targets.hpp>
#include <aft/trainer.hpp>

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace aft {

enum class Algorithm { aft, smc, vi };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::aft: return "aft";
    case Algorithm::smc: return "smc";
    case Algorithm::vi: return "vi";
  }
  return "?";
}

inline Algorithm algorithm_from_name(const std::string& s) {
  if (s == "aft") return Algorithm::aft;
  if (s == "smc") return Algorithm::smc;
  if (s == "vi") return Algorithm::vi;
  throw ConfigError("config: unknown algorithm '" + s + "'");
}

struct RunConfig {
  Algorithm algorithm = Algorithm::smc;

  std::string target = "gaussian_scale";
  int dim = 2;                         // gaussian_scale / std_normal
  double sigma = 2.0;                  // gaussian_scale
  std::vector<MixtureComponent> mixture;  // mixture2d; empty selects a default
  int cox_grid = 8;
  std::string cox_counts_path;         // empty draws synthetic counts
  std::uint64_t cox_counts_seed = 1;

  int num_temps = 10;                  // K
  std::vector<double> schedule;        // empty selects the linear schedule

  FlowFamily flow = FlowFamily::diag_affine;
  int iaf_hidden_per_dim = 30;
  KernelConfig kernel;
  OptimizerConfig opt;

  Eigen::Index n_train = 2000, n_val = 2000, n_test = 2000;
  double a_train = 0.3, a_val = 0.3, a_test = 0.3;

  std::uint64_t seed = 0;
  int num_repeats = 1;
};

inline AnnealedFamily make_family(const RunConfig& cfg) {
  if (cfg.target == "gaussian_scale") return make_gaussian_scale(cfg.dim, cfg.sigma);
  if (cfg.target == "std_normal") {
    AnnealedFamily f = make_gaussian_scale(cfg.dim, 1.0);
    f.target = f.base;  // normalized self-target: log Z is exactly zero
    return f;
  }
  if (cfg.target == "funnel") return make_funnel();
  if (cfg.target == "mixture2d") {
    if (!cfg.mixture.empty()) return make_mixture2d(cfg.mixture);
    std::vector<MixtureComponent> comps(2);
    comps[0].weight = 0.5;
    comps[0].mean = (Vec(2) << -2.0, 0.0).finished();
    comps[0].cov << 0.7, 0.0, 0.0, 0.7;
    comps[1].weight = 0.5;
    comps[1].mean = (Vec(2) << 2.0, 0.0).finished();
    comps[1].cov << 0.7, 0.0, 0.0, 0.7;
    return make_mixture2d(comps);
  }
  if (cfg.target == "cox") {
    CoxModel model = make_cox_model(cfg.cox_grid);
    std::vector<long> counts = cfg.cox_counts_path.empty()
                                   ? cox_synthetic_counts(model, cfg.cox_counts_seed)
                                   : load_cox_counts_csv(cfg.cox_counts_path, cfg.cox_grid);
    return make_cox_family(model, counts);
  }
  throw ConfigError("config: unknown target '" + cfg.target + "'");
}

inline std::vector<double> annealing_betas(const RunConfig& cfg) {
  if (cfg.schedule.empty()) return linear_schedule(cfg.num_temps);
  validate_schedule(cfg.schedule);
  require(int(cfg.schedule.size()) == cfg.num_temps + 1,
          "config: schedule must have K + 1 entries");
  return cfg.schedule;
}

inline void validate_run_config(const RunConfig& cfg) {
  AnnealedFamily probe = make_family(cfg);
  (void)probe;
  require(cfg.num_temps >= 1, "config: K must be >= 1");
  annealing_betas(cfg);
  validate_kernel_config(cfg.kernel);
  validate_optimizer_config(cfg.opt);
  require(cfg.iaf_hidden_per_dim >= 1, "config: hidden width per dimension must be >= 1");
  require(cfg.num_repeats >= 1, "config: num_repeats must be >= 1");
  if (cfg.algorithm == Algorithm::vi)
    require(cfg.opt.iterations <= 65535, "config: vi iteration count exceeds the stream key range");
  auto check_split = [](Eigen::Index n, double a, const char* n_key, const char* a_key) {
    require(n >= 2, std::string("config: ") + n_key + " must be >= 2");
    require(a >= 1.0 / double(n) && a < 1.0,
            std::string("config: ") + a_key + " must satisfy A ∈ [1/N, 1)");
  };
  check_split(cfg.n_test, cfg.a_test, "n_test", "a_test");
  if (cfg.algorithm == Algorithm::aft) {
    check_split(cfg.n_train, cfg.a_train, "n_train", "a_train");
    check_split(cfg.n_val, cfg.a_val, "n_val", "a_val");
  }
}

struct SplitDiag {
  double ess_fraction = std::numeric_limits<double>::quiet_NaN();
  bool resampled = false;
  double accept_rate = std::numeric_limits<double>::quiet_NaN();
  double log_z_after = std::numeric_limits<double>::quiet_NaN();
};

struct TemperatureDiag {
  double beta = 0.0;
  SplitDiag splits[3];  // indexed by SplitTag train/val/test
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  int selected_iter = 0;
};

struct RepeatReport {
  int repeat = 0;
  std::uint64_t derived_seed = 0;
  double log_z[3] = {std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::quiet_NaN()};
  std::vector<TemperatureDiag> temps;
  double vi_final_loss = std::numeric_limits<double>::quiet_NaN();
  bool aborted = false;
  std::string abort_reason;
  double wall_seconds = 0.0;
};

namespace detail {

// One temperature step for one split: transport + reweight, resample on low
// ESS, then mutate. This single code path serves both the learned-transport
// run and the SMC baseline.
inline void advance_split(Ensemble& e, const FlowEval& flow, const TemperedPotential& cur,
                          const TemperedPotential& prev, double threshold,
                          const KernelConfig& kernel, double t, int k, std::uint64_t seed,
                          SplitTag split, SplitDiag& diag) {
  LogIncrements inc = log_incremental_weights(e, flow, cur, prev);
  reweight(e, inc);
  diag.log_z_after = e.log_z;
  diag.ess_fraction = ess_fraction(e);
  if (diag.ess_fraction <= threshold) {
    RngStream rng(seed, StreamUse::resample, split, 0, std::uint64_t(k));
    resample_multinomial(e, rng);
    diag.resampled = true;
  }
  MutationStats stats;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    RngStream rng(seed, StreamUse::mutate, split, std::uint64_t(i), std::uint64_t(k));
    mutate_particle(kernel, cur, t, e.positions.row(i).transpose(), rng, stats);
  }
  diag.accept_rate = stats.proposals > 0 ? stats.accept_rate()
                                         : std::numeric_limits<double>::quiet_NaN();
}

inline FlowParams identity_flow(int dim) {
  FlowParams p;
  p.family = FlowFamily::identity;
  p.dim = dim;
  p.theta = Vec(0);
  return p;
}

inline void run_annealing(const RunConfig& cfg, std::uint64_t seed, RepeatReport& rep) {
  const AnnealedFamily family = make_family(cfg);
  const std::vector<double> betas = annealing_betas(cfg);
  const int num_k = cfg.num_temps;
  const bool learned = cfg.algorithm == Algorithm::aft;

  Ensemble test = init_ensemble(family, cfg.n_test, seed, SplitTag::test);
  Ensemble train, val;
  if (learned) {
    train = init_ensemble(family, cfg.n_train, seed, SplitTag::train);
    val = init_ensemble(family, cfg.n_val, seed, SplitTag::val);
  }

  rep.temps.reserve(std::size_t(num_k));
  for (int k = 1; k <= num_k; ++k) {
    TemperatureDiag diag;
    diag.beta = betas[std::size_t(k)];
    const TemperedPotential cur{&family, betas[std::size_t(k)]};
    const TemperedPotential prev{&family, betas[std::size_t(k - 1)]};
    const double t = double(k) / double(num_k);

    FlowParams fp = identity_flow(family.dim);
    if (learned) {
      RngStream frng(seed, StreamUse::flow_init, SplitTag::none, 0, std::uint64_t(k));
      fp = init_flow_params(cfg.flow, family.dim, frng, cfg.iaf_hidden_per_dim);
      if (cfg.opt.iterations > 0) {
        TrainTrace trace;
        Vec wt = train.log_weights.array().exp().matrix();
        Vec wv = val.log_weights.array().exp().matrix();
        fp = learn_flow(cfg.opt, fp, train.positions, wt, val.positions, wv, cur, prev, trace);
        diag.val_loss = trace.val_loss[std::size_t(trace.selected)];
        diag.selected_iter = trace.selected;
      }
    }
    const FlowEval flow(fp);

    if (learned) {
      advance_split(train, flow, cur, prev, cfg.a_train, cfg.kernel, t, k, seed,
                    SplitTag::train, diag.splits[int(SplitTag::train)]);
      advance_split(val, flow, cur, prev, cfg.a_val, cfg.kernel, t, k, seed, SplitTag::val,
                    diag.splits[int(SplitTag::val)]);
    }
    advance_split(test, flow, cur, prev, cfg.a_test, cfg.kernel, t, k, seed, SplitTag::test,
                  diag.splits[int(SplitTag::test)]);
    rep.temps.push_back(diag);
  }

  rep.log_z[int(SplitTag::test)] = test.log_z;
  if (learned) {
    rep.log_z[int(SplitTag::train)] = train.log_z;
    rep.log_z[int(SplitTag::val)] = val.log_z;
  }
}

inline void run_flow_vi(const RunConfig& cfg, std::uint64_t seed, RepeatReport& rep) {
  const AnnealedFamily family = make_family(cfg);
  const TemperedPotential target{&family, 1.0};
  const TemperedPotential base{&family, 0.0};
  const Eigen::Index n = cfg.n_test;

  RngStream frng(seed, StreamUse::flow_init, SplitTag::none, 0, 0);
  FlowParams params = init_flow_params(cfg.flow, family.dim, frng, cfg.iaf_hidden_per_dim);

  // fresh reparameterized base batch each iteration; the base-potential term
  // is parameter independent and dropped from the objective
  Mat batch(n, family.dim);
  Vec x(family.dim);
  const Vec w = Vec::Constant(n, 1.0 / double(n));
  AdamState state;
  Vec grad;
  double last_loss = std::numeric_limits<double>::quiet_NaN();
  for (int j = 1; j <= cfg.opt.iterations; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      RngStream rng(seed, StreamUse::vi_batch, SplitTag::none, std::uint64_t(i),
                    std::uint64_t(j));
      family.sample_base(rng, x);
      batch.row(i) = x.transpose();
    }
    double loss;
    try {
      loss = flow_loss_and_grad(params, batch, w, target, nullptr, grad);
    } catch (const std::domain_error&) {
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(loss) || !grad.allFinite()) break;  // keep last finite params
    last_loss = loss;
    adam_update(state, cfg.opt, grad, params.theta);
  }
  rep.vi_final_loss = last_loss;

  // importance correction over fresh samples
  const FlowEval flow(params);
  Mat xs(n, family.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    RngStream rng(seed, StreamUse::init, SplitTag::test, std::uint64_t(i), 0);
    family.sample_base(rng, x);
    xs.row(i) = x.transpose();
  }
  Mat y;
  Vec log_det;
  flow.forward_batch(xs, y, log_det);
  Vec log_g(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    log_g[i] = -target.eval(y.row(i).transpose()) + log_det[i] +
               base.eval(xs.row(i).transpose());
  }
  const double lz = logsumexp(log_g) - std::log(double(n));
  if (!std::isfinite(lz)) throw RunAbort("variational estimate became non-finite");
  rep.log_z[int(SplitTag::test)] = lz;
}

}  // namespace detail

// Executes one repeat; the repeat index is folded into the seed so repeats
// are independent and individually reproducible.
inline RepeatReport run_single(const RunConfig& cfg, int repeat) {
  validate_run_config(cfg);
  RepeatReport rep;
  rep.repeat = repeat;
  rep.derived_seed = derive_repeat_seed(cfg.seed, std::uint64_t(repeat));
  const auto start = std::chrono::steady_clock::now();
  try {
    if (cfg.algorithm == Algorithm::vi)
      detail::run_flow_vi(cfg, rep.derived_seed, rep);
    else
      detail::run_annealing(cfg, rep.derived_seed, rep);
  } catch (const RunAbort& e) {
    rep.aborted = true;
    rep.abort_reason = e.what();
  } catch (const std::domain_error& e) {
    rep.aborted = true;
    rep.abort_reason = std::string("flow left its invertible domain: ") + e.what();
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace aft
