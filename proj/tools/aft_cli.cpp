#include <CLI11.hpp>

#include <aft/report.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

std::vector<double> parse_value_list(const std::string& csv) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw aft::ConfigError("sweep: value '" + item + "' is not a number");
    }
  }
  if (values.empty()) throw aft::ConfigError("sweep: the sweep value list is empty");
  return values;
}

int count_aborted(const std::vector<aft::RepeatReport>& reports) {
  int n = 0;
  for (const aft::RepeatReport& r : reports) n += r.aborted ? 1 : 0;
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annealed flow transport sampler"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
  int jobs = 1;
  std::string sweep_param = "K";
  std::string sweep_values;

  auto add_common = [&](CLI::App* cmd, bool with_output) {
    cmd->add_option("--config", config_path, "path to the JSON run configuration")->required();
    cmd->add_option("--set", overrides, "KEY=VALUE override, repeatable");
    if (with_output) {
      cmd->add_option("--jobs", jobs, "number of repeat-level worker threads");
      cmd->add_option("--out", out_dir, "output directory");
    }
  };
  CLI::App* run = app.add_subcommand("run", "execute the configured repeats and write reports");
  add_common(run, true);
  CLI::App* sweep = app.add_subcommand("sweep", "run the config across a value grid");
  add_common(sweep, true);
  sweep->add_option("--param", sweep_param, "swept parameter: K or N");
  sweep->add_option("--values", sweep_values, "comma-separated sweep values")->required();
  CLI::App* validate = app.add_subcommand("validate", "parse the config and print its echo");
  add_common(validate, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const aft::RunConfig cfg = aft::parse_config_file(config_path, overrides);

    if (validate->parsed()) {
      std::cout << aft::echo_config(cfg).dump(2) << '\n';
      return 0;
    }

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);

    if (run->parsed()) {
      const std::vector<aft::RepeatReport> reports = aft::run_repeats(cfg, jobs);
      aft::write_report_jsonl((out / "report.jsonl").string(), cfg, reports);
      aft::write_summary_csv((out / "summary.csv").string(), cfg, reports);
      const aft::SummaryStats s = aft::summarize_log_z(reports);
      std::cout << "wrote " << (out / "report.jsonl").string() << " and "
                << (out / "summary.csv").string() << '\n';
      if (s.num_repeats - s.num_aborted > 0)
        std::cout << "log_z_test median " << s.median << " iqr " << s.iqr << " mean " << s.mean
                  << " se " << s.se << '\n';
      const int aborted = count_aborted(reports);
      if (aborted > 0) {
        std::cerr << aborted << " repeat(s) aborted; see report for reasons\n";
        return 2;
      }
      return 0;
    }

    // sweep
    const std::vector<double> values = parse_value_list(sweep_values);
    std::vector<aft::SweepRow> rows;
    bool any_aborted = false;
    for (const double v : values) {
      const aft::RunConfig swept = aft::apply_sweep_value(cfg, sweep_param, v);
      const std::vector<aft::RepeatReport> reports = aft::run_repeats(swept, jobs);
      for (const aft::RepeatReport& rep : reports) {
        aft::SweepRow row;
        row.sweep_value = v;
        row.repeat = rep.repeat;
        row.log_z_test = rep.log_z[int(aft::SplitTag::test)];
        row.aborted = rep.aborted;
        any_aborted = any_aborted || rep.aborted;
        rows.push_back(row);
      }
    }
    aft::write_sweep_csv((out / "sweep.csv").string(), rows);
    std::cout << "wrote " << (out / "sweep.csv").string() << " (" << rows.size() << " rows)\n";
    if (any_aborted) {
      std::cerr << "one or more repeats aborted; see sweep output\n";
      return 2;
    }
    return 0;
  } catch (const aft::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
}
