#ifndef GFCA_CONFIG_HPP
#define GFCA_CONFIG_HPP

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfca/dataset.hpp"
#include "gfca/dataset_io.hpp"
#include "gfca/error.hpp"
#include "gfca/trainer.hpp"

namespace gfca {

/// One experiment: training hyperparameters, data, protocol, outputs.
///
/// The file is a JSON object. Training keys sit at the top level; the
/// synthetic generator takes a nested "synthetic" object. Relative dataset
/// paths are taken relative to the config file.
struct ExperimentConfig {
  TrainConfig train;
  std::string task = "task";
  std::optional<std::string> source_path;
  std::optional<std::string> target_path;
  std::string format = "auto";  // auto, csv, binary
  int class_count = 0;          // 0: infer from labels
  std::optional<SyntheticDomainConfig> synthetic;
  std::vector<int> few_shot_classes;
  int shots = 3;
  std::uint64_t protocol_seed = 0;
  std::string output_dir = "gfca-run";
  std::vector<std::string> report_formats{"json", "csv"};

  /// Complete JSON form with every default written out.
  nlohmann::json to_json(bool with_output_dir = true) const {
    nlohmann::json j = train.to_json();
    j["task"] = task;
    if (source_path) j["source"] = *source_path;
    if (target_path) j["target"] = *target_path;
    j["format"] = format;
    j["class_count"] = class_count;
    if (synthetic) {
      const auto& s = *synthetic;
      j["synthetic"] = {{"class_count", s.class_count},
                        {"feature_dim", s.feature_dim},
                        {"mean_scale", s.mean_scale},
                        {"mean_offset", s.mean_offset},
                        {"noise_std", s.noise_std},
                        {"rotation_degrees", s.rotation_degrees},
                        {"translation", s.translation},
                        {"samples_per_class", s.samples_per_class},
                        {"target_samples_per_class", s.target_samples_per_class},
                        {"seed", s.seed}};
    }
    j["few_shot_classes"] = few_shot_classes;
    j["shots"] = shots;
    j["protocol_seed"] = protocol_seed;
    if (with_output_dir) j["output_dir"] = output_dir;
    j["report_formats"] = report_formats;
    return j;
  }
};

namespace config_detail {

using nlohmann::json;

inline std::string type_hint(const json& v) {
  return v.is_string() ? "string" : v.is_boolean() ? "boolean" : v.is_number() ? "number" : v.is_array() ? "array" : v.is_object() ? "object" : "null";
}

inline double number(const json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field, "expected a number, got " + type_hint(v));
  return v.get<double>();
}

inline long long integer(const json& v, const std::string& field) {
  if (!v.is_number_integer()) {
    if (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>())))
      return static_cast<long long>(v.get<double>());
    throw ConfigError(field, "expected an integer, got " + (v.is_number() ? v.dump() : type_hint(v)));
  }
  return v.get<long long>();
}

inline std::uint64_t unsigned_integer(const json& v, const std::string& field) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  const long long x = integer(v, field);
  if (x < 0) throw ConfigError(field, "must be >= 0");
  return static_cast<std::uint64_t>(x);
}

inline bool boolean(const json& v, const std::string& field) {
  if (!v.is_boolean()) throw ConfigError(field, "expected true or false, got " + type_hint(v));
  return v.get<bool>();
}

inline std::string string(const json& v, const std::string& field) {
  if (!v.is_string()) throw ConfigError(field, "expected a string, got " + type_hint(v));
  return v.get<std::string>();
}

inline const json& array(const json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError(field, "expected an array, got " + type_hint(v));
  return v;
}

inline SyntheticDomainConfig parse_synthetic(const json& j) {
  if (!j.is_object()) throw ConfigError("synthetic", "expected an object");
  SyntheticDomainConfig s;
  for (const auto& [key, v] : j.items()) {
    const std::string f = "synthetic." + key;
    if (key == "class_count") s.class_count = static_cast<int>(integer(v, f));
    else if (key == "feature_dim") s.feature_dim = static_cast<int>(integer(v, f));
    else if (key == "mean_scale") s.mean_scale = number(v, f);
    else if (key == "mean_offset") s.mean_offset = number(v, f);
    else if (key == "noise_std") s.noise_std = number(v, f);
    else if (key == "rotation_degrees") {
      s.rotation_degrees.clear();
      for (const auto& x : array(v, f)) s.rotation_degrees.push_back(number(x, f));
    } else if (key == "translation") {
      s.translation.clear();
      if (v.is_number()) {
        // a scalar shifts every coordinate
        s.translation.assign(static_cast<std::size_t>(std::max(0, s.feature_dim)), v.get<double>());
      } else {
        for (const auto& x : array(v, f)) s.translation.push_back(number(x, f));
      }
    } else if (key == "samples_per_class") s.samples_per_class = static_cast<int>(integer(v, f));
    else if (key == "target_samples_per_class") s.target_samples_per_class = static_cast<int>(integer(v, f));
    else if (key == "seed") s.seed = unsigned_integer(v, f);
    else throw ConfigError(f, "unknown key");
  }
  s.validate();
  return s;
}

// Assigns `value` at a dotted key path, creating objects on the way.
inline void set_path(json& root, const std::string& key, json value) {
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "malformed key");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    json& child = (*node)[part];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError(key, "'" + part + "' is not an object");
    node = &child;
    start = dot + 1;
  }
}

}  // namespace config_detail

/// Value text of an override: JSON when it parses as JSON, a plain string otherwise.
inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

/// Applies "key=value" overrides in order.
inline void apply_overrides(nlohmann::json& root, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(o, "override must look like key=value");
    config_detail::set_path(root, o.substr(0, eq), parse_override_value(o.substr(eq + 1)));
  }
}

/// Overrides from environment variables: GFCA_NOISE_DIM=8 is noise_dim=8 and
/// GFCA_SYNTHETIC__SEED=3 is synthetic.seed=3. Sorted by name so the result
/// does not depend on environment order.
inline std::vector<std::string> environment_overrides(const std::map<std::string, std::string>& env) {
  std::vector<std::string> out;
  const std::string prefix = "GFCA_";
  for (const auto& [name, value] : env) {
    if (name.size() <= prefix.size() || name.compare(0, prefix.size(), prefix) != 0) continue;
    std::string key;
    const std::string rest = name.substr(prefix.size());
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (rest[i] == '_' && i + 1 < rest.size() && rest[i + 1] == '_') {
        key += '.';
        ++i;
      } else {
        key += static_cast<char>(std::tolower(static_cast<unsigned char>(rest[i])));
      }
    }
    out.push_back(key + "=" + value);
  }
  return out;
}

/// Builds and validates a config from its JSON form. Relative dataset paths
/// resolve against `base_dir`.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object at the top level");
  ExperimentConfig e;
  TrainConfig& t = e.train;
  std::optional<std::vector<int>> few;
  for (const auto& [key, v] : j.items()) {
    if (key == "mode") t.mode = parse_mode(string(v, key));
    else if (key == "lambda") t.lambda = number(v, key);
    else if (key == "gamma") t.gamma = number(v, key);
    else if (key == "eta") t.eta = number(v, key);
    else if (key == "batch_source") t.batch_source = integer(v, key);
    else if (key == "batch_target") t.batch_target = integer(v, key);
    else if (key == "batch_fake") t.batch_fake = integer(v, key);
    else if (key == "noise_dim") t.noise_dim = integer(v, key);
    else if (key == "hidden_dims") {
      t.hidden_dims.clear();
      for (const auto& x : array(v, key)) t.hidden_dims.push_back(integer(x, key));
    } else if (key == "slope") t.slope = number(v, key);
    else if (key == "lr_ec") t.lr_ec = number(v, key);
    else if (key == "lr_g") t.lr_g = number(v, key);
    else if (key == "lr_d") t.lr_d = number(v, key);
    else if (key == "pretrain_steps") t.pretrain_steps = static_cast<long>(integer(v, key));
    else if (key == "main_steps") t.main_steps = static_cast<long>(integer(v, key));
    else if (key == "kernel_count") t.kernel_count = static_cast<int>(integer(v, key));
    else if (key == "kernel_factor") t.kernel_factor = number(v, key);
    else if (key == "seed") t.seed = unsigned_integer(v, key);
    else if (key == "fake_label_policy") t.fake_label_policy = string(v, key);
    else if (key == "gan_loss") t.gan_loss = parse_gan_loss(string(v, key));
    else if (key == "classifier_bias") t.classifier_bias = boolean(v, key);
    else if (key == "real_weight") t.real_weight = number(v, key);
    else if (key == "fake_weight") t.fake_weight = number(v, key);
    else if (key == "mmd_include_fake") t.mmd_include_fake = boolean(v, key);
    else if (key == "fake_grad_to_generator") t.fake_grad_to_generator = boolean(v, key);
    else if (key == "synthetic_per_class") t.synthetic_per_class = integer(v, key);
    else if (key == "eval_synthetic_per_class") t.eval_synthetic_per_class = integer(v, key);
    else if (key == "log_every") t.log_every = static_cast<long>(integer(v, key));
    else if (key == "task") e.task = string(v, key);
    else if (key == "source") e.source_path = string(v, key);
    else if (key == "target") e.target_path = string(v, key);
    else if (key == "format") e.format = string(v, key);
    else if (key == "class_count") e.class_count = static_cast<int>(integer(v, key));
    else if (key == "synthetic") e.synthetic = parse_synthetic(v);
    else if (key == "few_shot_classes") {
      few.emplace();
      for (const auto& x : array(v, key)) few->push_back(static_cast<int>(integer(x, key)));
    } else if (key == "shots") e.shots = static_cast<int>(integer(v, key));
    else if (key == "protocol_seed") e.protocol_seed = unsigned_integer(v, key);
    else if (key == "output_dir") e.output_dir = string(v, key);
    else if (key == "report_formats") {
      e.report_formats.clear();
      for (const auto& x : array(v, key)) e.report_formats.push_back(string(x, key));
    } else {
      throw ConfigError(key, "unknown key");
    }
  }

  t.validate();
  if (e.synthetic && (e.source_path || e.target_path))
    throw ConfigError("synthetic", "give either dataset paths or a synthetic config, not both");
  if (!e.synthetic) {
    if (!e.source_path) throw ConfigError("source", "missing dataset path (set source and target, or synthetic)");
    if (!e.target_path) throw ConfigError("target", "missing dataset path");
    for (auto* p : {&*e.source_path, &*e.target_path}) {
      std::filesystem::path path(*p);
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      *p = path.lexically_normal().string();
    }
    if (!std::filesystem::exists(*e.source_path)) throw ConfigError("source", "no such file: " + *e.source_path);
    if (!std::filesystem::exists(*e.target_path)) throw ConfigError("target", "no such file: " + *e.target_path);
  }
  if (e.format != "auto") {
    try {
      parse_feature_format(e.format);
    } catch (const ParameterError& err) {
      throw ConfigError("format", err.what());
    }
  }
  if (e.class_count < 0) throw ConfigError("class_count", "must be >= 0");
  if (e.shots < 1) throw ConfigError("shots", "must be >= 1");
  if (!few || few->empty()) throw ConfigError("few_shot_classes", "need at least one few-shot class");
  std::sort(few->begin(), few->end());
  e.few_shot_classes = *few;
  if (e.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  if (e.report_formats.empty()) throw ConfigError("report_formats", "need at least one of json, csv");
  for (const auto& f : e.report_formats)
    if (f != "json" && f != "csv") throw ConfigError("report_formats", "unknown format '" + f + "' (json, csv)");
  return e;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path, const std::string& field) {
  std::ifstream is(path);
  if (!is) throw ConfigError(field, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& err) {
    throw ConfigError(field, path.string() + ": " + err.what());
  }
}

/// File, then environment, then command-line overrides.
inline ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& env_overrides,
                                               const std::vector<std::string>& set_overrides) {
  nlohmann::json j = read_json_file(path, "config");
  apply_overrides(j, env_overrides);
  apply_overrides(j, set_overrides);
  return parse_experiment_config(j, path.parent_path());
}

/// Source and target sets of an experiment. The target keeps its labels
/// for evaluation.
struct ExperimentData {
  DomainDataset source;
  DomainDataset target;
  std::optional<SyntheticGroundTruth> truth;
};

inline ExperimentData load_experiment_data(const ExperimentConfig& e) {
  ExperimentData out;
  if (e.synthetic) {
    auto pair = synthesize_domain_pair(*e.synthetic);
    out.source = std::move(pair.source);
    out.target = std::move(pair.target);
    out.truth = std::move(pair.truth);
    return out;
  }
  auto load = [&](const std::string& p) {
    const FeatureFormat f = e.format == "auto" ? format_for_path(p) : parse_feature_format(e.format);
    return load_features(p, f, e.class_count);
  };
  out.source = load(*e.source_path);
  out.target = load(*e.target_path);
  const int c = std::max(out.source.class_count, out.target.class_count);
  out.source.class_count = out.target.class_count = c;
  return out;
}

inline FewShotProtocol experiment_protocol(const ExperimentConfig& e, int class_count) {
  try {
    return FewShotProtocol::make(class_count, e.few_shot_classes, e.shots, e.protocol_seed);
  } catch (const ProtocolError& err) {
    throw ConfigError("few_shot_classes", err.what());
  }
}

}  // namespace gfca

#endif  // GFCA_CONFIG_HPP
