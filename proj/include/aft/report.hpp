#pragma once

// Repeat execution and report serialization. Report files are line-delimited
// JSON: one record per repeat plus a trailing summary record. Each record
// keeps its deterministic content under "body" (byte-stable for a given
// config and seed); wall-clock timing lives outside the body.

#include <aft/config.hpp>
#include <aft/sampler.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

namespace aft {

inline std::vector<RepeatReport> run_repeats(const RunConfig& cfg, int jobs = 1) {
  validate_run_config(cfg);
  const int n = cfg.num_repeats;
  std::vector<RepeatReport> reports;
  reports.resize(std::size_t(n));
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int r = 0; r < n; ++r) reports[std::size_t(r)] = run_single(cfg, r);
    return reports;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next.fetch_add(1); r < n; r = next.fetch_add(1))
      reports[std::size_t(r)] = run_single(cfg, r);
  };
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(jobs));
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  return reports;
}

namespace detail {

inline void set_if_finite(Json& obj, const std::string& key, double v) {
  if (std::isfinite(v)) obj[key] = v;
}

}  // namespace detail

inline Json repeat_record_body(const RepeatReport& rep) {
  Json body;
  body["repeat"] = rep.repeat;
  body["seed"] = rep.derived_seed;
  body["aborted"] = rep.aborted;
  if (rep.aborted) body["abort_reason"] = rep.abort_reason;
  detail::set_if_finite(body, "log_z_train", rep.log_z[int(SplitTag::train)]);
  detail::set_if_finite(body, "log_z_val", rep.log_z[int(SplitTag::val)]);
  detail::set_if_finite(body, "log_z_test", rep.log_z[int(SplitTag::test)]);
  detail::set_if_finite(body, "vi_final_loss", rep.vi_final_loss);
  if (!rep.temps.empty()) {
    Json temps = Json::array();
    static const char* split_label[3] = {"train", "val", "test"};
    for (const TemperatureDiag& td : rep.temps) {
      Json t;
      t["beta"] = td.beta;
      for (int s = 0; s < 3; ++s) {
        const SplitDiag& sd = td.splits[s];
        if (!std::isfinite(sd.ess_fraction)) continue;
        const std::string suffix = std::string("_") + split_label[s];
        t["ess" + suffix] = sd.ess_fraction;
        t["resampled" + suffix] = sd.resampled;
        t["log_z" + suffix] = sd.log_z_after;
        detail::set_if_finite(t, "accept" + suffix, sd.accept_rate);
      }
      detail::set_if_finite(t, "val_loss", td.val_loss);
      if (td.selected_iter > 0) t["selected_iter"] = td.selected_iter;
      temps.push_back(t);
    }
    body["temps"] = temps;
  }
  return body;
}

// type-7 quantile (linear interpolation between order statistics)
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const std::size_t lo = std::size_t(std::floor(pos));
  const std::size_t hi = std::size_t(std::ceil(pos));
  const double frac = pos - double(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

struct SummaryStats {
  int num_repeats = 0;
  int num_aborted = 0;
  double median = std::numeric_limits<double>::quiet_NaN();
  double iqr = std::numeric_limits<double>::quiet_NaN();
  double mean = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
};

inline SummaryStats summarize_log_z(const std::vector<RepeatReport>& reports) {
  SummaryStats s;
  s.num_repeats = int(reports.size());
  std::vector<double> z;
  for (const RepeatReport& r : reports) {
    if (r.aborted) {
      ++s.num_aborted;
      continue;
    }
    z.push_back(r.log_z[int(SplitTag::test)]);
  }
  if (z.empty()) return s;
  s.median = quantile(z, 0.5);
  s.iqr = quantile(z, 0.75) - quantile(z, 0.25);
  double sum = 0.0;
  for (double x : z) sum += x;
  s.mean = sum / double(z.size());
  if (z.size() > 1) {
    double ss = 0.0;
    for (double x : z) ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / double(z.size() - 1) / double(z.size()));
  }
  return s;
}

inline Json summary_record_body(const RunConfig& cfg, const std::vector<RepeatReport>& reports) {
  const SummaryStats s = summarize_log_z(reports);
  Json body;
  body["num_repeats"] = s.num_repeats;
  body["num_aborted"] = s.num_aborted;
  detail::set_if_finite(body, "median_log_z_test", s.median);
  detail::set_if_finite(body, "iqr_log_z_test", s.iqr);
  detail::set_if_finite(body, "mean_log_z_test", s.mean);
  detail::set_if_finite(body, "se_log_z_test", s.se);
  body["config"] = echo_config(cfg);
  return body;
}

inline void write_report_jsonl(const std::string& path, const RunConfig& cfg,
                               const std::vector<RepeatReport>& reports) {
  std::ofstream out(path);
  if (!out) throw ConfigError("report: cannot open '" + path + "' for writing");
  double total = 0.0;
  for (const RepeatReport& rep : reports) {
    Json line;
    line["record"] = "repeat";
    line["body"] = repeat_record_body(rep);
    line["wall_seconds"] = rep.wall_seconds;
    out << line.dump() << '\n';
    total += rep.wall_seconds;
  }
  Json line;
  line["record"] = "summary";
  line["body"] = summary_record_body(cfg, reports);
  line["wall_seconds"] = total;
  out << line.dump() << '\n';
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_summary_csv(const std::string& path, const RunConfig& cfg,
                              const std::vector<RepeatReport>& reports) {
  std::ofstream out(path);
  if (!out) throw ConfigError("report: cannot open '" + path + "' for writing");
  out << "repeat,algorithm,K,N,log_z_test,wall_seconds\n";
  for (const RepeatReport& rep : reports) {
    const double lz = rep.log_z[int(SplitTag::test)];
    out << rep.repeat << ',' << algorithm_name(cfg.algorithm) << ',' << cfg.num_temps << ','
        << cfg.n_test << ',' << (rep.aborted ? "" : format_double(lz)) << ','
        << format_double(rep.wall_seconds) << '\n';
  }
}

struct SweepRow {
  double sweep_value = 0.0;
  int repeat = 0;
  double log_z_test = std::numeric_limits<double>::quiet_NaN();
  bool aborted = false;
};

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("report: cannot open '" + path + "' for writing");
  out << "sweep_value,repeat,log_z_test\n";
  for (const SweepRow& r : rows)
    out << format_double(r.sweep_value) << ',' << r.repeat << ','
        << (r.aborted ? "" : format_double(r.log_z_test)) << '\n';
}

// applies one swept value to a copy of the base config; K and N are the
// supported axes
inline RunConfig apply_sweep_value(const RunConfig& base, const std::string& param, double value) {
  RunConfig cfg = base;
  if (param == "K") {
    cfg.num_temps = int(value);
    cfg.schedule.clear();
  } else if (param == "N" || param == "n_test") {
    cfg.n_test = Eigen::Index(value);
  } else {
    throw ConfigError("sweep: unknown parameter '" + param + "' (expected K or N)");
  }
  validate_run_config(cfg);
  return cfg;
}

}  // namespace aft
