#pragma once

// Flat JSON run configuration: strict parsing (unknown keys are errors, every
// diagnostic names the offending key), documented defaults, --set style
// overrides, and a lossless echo so any report can be re-run from its own
// config record.

#include <aft/sampler.hpp>

#include <json.hpp>

#include <fstream>
#include <string>

namespace aft {

using Json = nlohmann::json;

namespace detail {

template <typename T>
T config_value(const Json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config: key '" + key + "' has an invalid value");
  }
}

inline std::vector<double> config_doubles(const Json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("config: key '" + key + "' must be an array");
  return config_value<std::vector<double>>(v, key);
}

inline std::vector<MixtureComponent> parse_mixture(const Json& v) {
  if (!v.is_array()) throw ConfigError("config: key 'mixture' must be an array");
  std::vector<MixtureComponent> comps;
  for (const Json& item : v) {
    if (!item.is_object()) throw ConfigError("config: key 'mixture' entries must be objects");
    MixtureComponent c;
    for (const auto& [k, val] : item.items()) {
      if (k == "weight") {
        c.weight = config_value<double>(val, "mixture.weight");
      } else if (k == "mean") {
        std::vector<double> m = config_doubles(val, "mixture.mean");
        if (m.size() != 2) throw ConfigError("config: key 'mixture.mean' must have 2 entries");
        c.mean = (Vec(2) << m[0], m[1]).finished();
      } else if (k == "cov") {
        std::vector<std::vector<double>> rows =
            config_value<std::vector<std::vector<double>>>(val, "mixture.cov");
        if (rows.size() != 2 || rows[0].size() != 2 || rows[1].size() != 2)
          throw ConfigError("config: key 'mixture.cov' must be a 2x2 matrix");
        c.cov << rows[0][0], rows[0][1], rows[1][0], rows[1][1];
      } else {
        throw ConfigError("config: unknown key 'mixture." + k + "'");
      }
    }
    comps.push_back(c);
  }
  return comps;
}

}  // namespace detail

inline RunConfig parse_config_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("config: document must be a single object");
  RunConfig cfg;
  using detail::config_doubles;
  using detail::config_value;
  for (const auto& [key, v] : doc.items()) {
    if (key == "algorithm") cfg.algorithm = algorithm_from_name(config_value<std::string>(v, key));
    else if (key == "target") cfg.target = config_value<std::string>(v, key);
    else if (key == "d") cfg.dim = config_value<int>(v, key);
    else if (key == "sigma") cfg.sigma = config_value<double>(v, key);
    else if (key == "mixture") cfg.mixture = detail::parse_mixture(v);
    else if (key == "cox_grid") cfg.cox_grid = config_value<int>(v, key);
    else if (key == "cox_counts_path") cfg.cox_counts_path = config_value<std::string>(v, key);
    else if (key == "cox_counts_seed") cfg.cox_counts_seed = config_value<std::uint64_t>(v, key);
    else if (key == "K") cfg.num_temps = config_value<int>(v, key);
    else if (key == "schedule") cfg.schedule = config_doubles(v, key);
    else if (key == "flow") cfg.flow = flow_family_from_name(config_value<std::string>(v, key));
    else if (key == "iaf_hidden_per_dim") cfg.iaf_hidden_per_dim = config_value<int>(v, key);
    else if (key == "kernel") cfg.kernel.kind = kernel_kind_from_name(config_value<std::string>(v, key));
    else if (key == "kernel_step_times") cfg.kernel.step.times = config_doubles(v, key);
    else if (key == "kernel_step_values") cfg.kernel.step.values = config_doubles(v, key);
    else if (key == "kernel_num_outer") cfg.kernel.num_outer = config_value<int>(v, key);
    else if (key == "kernel_num_leapfrog") cfg.kernel.num_leapfrog = config_value<int>(v, key);
    else if (key == "kernel_max_doublings") cfg.kernel.max_doublings = config_value<int>(v, key);
    else if (key == "learning_rate") cfg.opt.learning_rate = config_value<double>(v, key);
    else if (key == "iterations") cfg.opt.iterations = config_value<int>(v, key);
    else if (key == "adam_beta1") cfg.opt.beta1 = config_value<double>(v, key);
    else if (key == "adam_beta2") cfg.opt.beta2 = config_value<double>(v, key);
    else if (key == "adam_eps") cfg.opt.eps = config_value<double>(v, key);
    else if (key == "n_train") cfg.n_train = config_value<Eigen::Index>(v, key);
    else if (key == "n_val") cfg.n_val = config_value<Eigen::Index>(v, key);
    else if (key == "n_test") cfg.n_test = config_value<Eigen::Index>(v, key);
    else if (key == "a_train") cfg.a_train = config_value<double>(v, key);
    else if (key == "a_val") cfg.a_val = config_value<double>(v, key);
    else if (key == "a_test") cfg.a_test = config_value<double>(v, key);
    else if (key == "seed") cfg.seed = config_value<std::uint64_t>(v, key);
    else if (key == "num_repeats") cfg.num_repeats = config_value<int>(v, key);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  validate_run_config(cfg);
  return cfg;
}

// KEY=VALUE override applied to the raw document before parsing; the value is
// read as JSON when possible and as a bare string otherwise.
inline void apply_override(Json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("config: override '" + assignment + "' is not KEY=VALUE");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  doc[key] = value;
}

inline RunConfig parse_config_file(const std::string& path,
                                   const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open file '" + path + "'");
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config: file '" + path + "' is not well-formed");
  for (const std::string& o : overrides) apply_override(doc, o);
  return parse_config_json(doc);
}

inline Json echo_config(const RunConfig& cfg) {
  Json doc;
  doc["algorithm"] = algorithm_name(cfg.algorithm);
  doc["target"] = cfg.target;
  doc["d"] = cfg.dim;
  doc["sigma"] = cfg.sigma;
  if (!cfg.mixture.empty()) {
    Json comps = Json::array();
    for (const MixtureComponent& c : cfg.mixture) {
      Json item;
      item["weight"] = c.weight;
      item["mean"] = {c.mean[0], c.mean[1]};
      item["cov"] = {{c.cov(0, 0), c.cov(0, 1)}, {c.cov(1, 0), c.cov(1, 1)}};
      comps.push_back(item);
    }
    doc["mixture"] = comps;
  }
  doc["cox_grid"] = cfg.cox_grid;
  if (!cfg.cox_counts_path.empty()) doc["cox_counts_path"] = cfg.cox_counts_path;
  doc["cox_counts_seed"] = cfg.cox_counts_seed;
  doc["K"] = cfg.num_temps;
  if (!cfg.schedule.empty()) doc["schedule"] = cfg.schedule;
  doc["flow"] = flow_family_name(cfg.flow);
  doc["iaf_hidden_per_dim"] = cfg.iaf_hidden_per_dim;
  doc["kernel"] = kernel_kind_name(cfg.kernel.kind);
  doc["kernel_step_times"] = cfg.kernel.step.times;
  doc["kernel_step_values"] = cfg.kernel.step.values;
  doc["kernel_num_outer"] = cfg.kernel.num_outer;
  doc["kernel_num_leapfrog"] = cfg.kernel.num_leapfrog;
  doc["kernel_max_doublings"] = cfg.kernel.max_doublings;
  doc["learning_rate"] = cfg.opt.learning_rate;
  doc["iterations"] = cfg.opt.iterations;
  doc["adam_beta1"] = cfg.opt.beta1;
  doc["adam_beta2"] = cfg.opt.beta2;
  doc["adam_eps"] = cfg.opt.eps;
  doc["n_train"] = cfg.n_train;
  doc["n_val"] = cfg.n_val;
  doc["n_test"] = cfg.n_test;
  doc["a_train"] = cfg.a_train;
  doc["a_val"] = cfg.a_val;
  doc["a_test"] = cfg.a_test;
  doc["seed"] = cfg.seed;
  doc["num_repeats"] = cfg.num_repeats;
  return doc;
}

}  // namespace aft
