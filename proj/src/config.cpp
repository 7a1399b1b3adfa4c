#include "sasav/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>

#include "sasav/error.hpp"

namespace sasav {

namespace {

template <typename T>
T get_as(const nlohmann::json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::kInvalidConfig, "config key '" + key + "' has the wrong type: " + value.dump());
  }
}

int get_int(const nlohmann::json& value, const std::string& key) {
  if (!value.is_number_integer() && !(value.is_number() && value.get<double>() == static_cast<int>(value.get<double>()))) {
    throw Error(Errc::kInvalidConfig, "config key '" + key + "' must be an integer");
  }
  return static_cast<int>(value.get<double>());
}

const std::vector<std::string>& scalar_keys() {
  static const std::vector<std::string> keys = {
      "n_rsv",         "m_isovalues",          "k_viewpoints", "intermediate_resolution", "output_resolution",
      "downsample_target", "samples_per_segment", "confidence_threshold", "temperature", "kb_path",
      "web_adapter",   "animate",              "closed_trajectory", "render_threads"};
  return keys;
}

const std::vector<std::string>& provider_keys() {
  static const std::vector<std::string> keys = {"kind",         "endpoint",     "api_key_env",   "model_name",
                                                "embedding_model", "max_concurrency", "fixtures_dir", "embedding_dim",
                                                "image_limit",  "timeout_s"};
  return keys;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Environment values are JSON when they parse as JSON, plain strings otherwise.
nlohmann::json env_value(const std::string& raw) {
  auto doc = nlohmann::json::parse(raw, nullptr, false);
  if (doc.is_discarded() || doc.is_object() || doc.is_array()) return raw;
  return doc;
}

// Relative paths inside a config file are taken relative to that file.
nlohmann::json anchor_paths(nlohmann::json doc, const std::filesystem::path& base) {
  if (!doc.is_object()) return doc;
  const auto anchor = [&](nlohmann::json& v) {
    if (v.is_string() && !v.get<std::string>().empty() && std::filesystem::path(v.get<std::string>()).is_relative()) {
      v = (base / v.get<std::string>()).lexically_normal().string();
    }
  };
  if (doc.contains("kb_path")) anchor(doc["kb_path"]);
  if (doc.contains("provider") && doc["provider"].is_object() && doc["provider"].contains("fixtures_dir")) {
    anchor(doc["provider"]["fixtures_dir"]);
  }
  if (doc.contains("web_adapter") && doc["web_adapter"].is_string()) {
    const auto spec = doc["web_adapter"].get<std::string>();
    if (spec.starts_with("canned:")) {
      nlohmann::json path = spec.substr(7);
      anchor(path);
      doc["web_adapter"] = "canned:" + path.get<std::string>();
    }
  }
  return doc;
}

}  // namespace

void RunConfig::validate() const {
  const std::pair<const char*, int> counts[] = {{"n_rsv", n_rsv},
                                                {"m_isovalues", m_isovalues},
                                                {"k_viewpoints", k_viewpoints},
                                                {"intermediate_resolution", intermediate_resolution},
                                                {"output_resolution", output_resolution},
                                                {"downsample_target", downsample_target},
                                                {"samples_per_segment", samples_per_segment}};
  for (const auto& [name, value] : counts) {
    if (value < 1) throw Error(Errc::kInvalidConfig, std::string(name) + " must be >= 1");
  }
  if (confidence_threshold < 1 || confidence_threshold > 10) {
    throw Error(Errc::kInvalidConfig, "confidence_threshold must be in [1, 10]");
  }
  if (!(temperature >= 0.0 && temperature <= 2.0)) throw Error(Errc::kInvalidConfig, "temperature must be in [0, 2]");
  for (const auto& [role, t] : role_temperatures) {
    role_from_string(role);
    if (!(t >= 0.0 && t <= 2.0)) throw Error(Errc::kInvalidConfig, "role temperature for " + role + " outside [0, 2]");
  }
  if (render_threads < 0) throw Error(Errc::kInvalidConfig, "render_threads must be >= 0");
  if (ift.max_judgments < 0) throw Error(Errc::kInvalidConfig, "ift.max_judgments must be >= 0");
  if (!(ift.initial_step_divisor >= 1.0) || !(ift.min_step_divisor >= ift.initial_step_divisor)) {
    throw Error(Errc::kInvalidConfig, "ift step divisors must satisfy 1 <= initial <= min");
  }
  provider.validate();
}

double RunConfig::temperature_for(RoleTag role) const {
  const auto it = role_temperatures.find(std::string(to_string(role)));
  return it == role_temperatures.end() ? temperature : it->second;
}

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json provider;
  to_json(provider, c.provider);
  return {{"n_rsv", c.n_rsv},
          {"m_isovalues", c.m_isovalues},
          {"k_viewpoints", c.k_viewpoints},
          {"intermediate_resolution", c.intermediate_resolution},
          {"output_resolution", c.output_resolution},
          {"downsample_target", c.downsample_target},
          {"samples_per_segment", c.samples_per_segment},
          {"confidence_threshold", c.confidence_threshold},
          {"temperature", c.temperature},
          {"role_temperatures", c.role_temperatures},
          {"provider", provider},
          {"kb_path", c.kb_path ? nlohmann::json(c.kb_path->string()) : nlohmann::json()},
          {"web_adapter", c.web_adapter ? nlohmann::json(*c.web_adapter) : nlohmann::json()},
          {"animate", c.animate},
          {"closed_trajectory", c.closed_trajectory},
          {"render_threads", c.render_threads},
          {"ift",
           {{"enabled", c.ift.enabled},
            {"max_judgments", c.ift.max_judgments},
            {"initial_step_divisor", c.ift.initial_step_divisor},
            {"min_step_divisor", c.ift.min_step_divisor}}}};
}

void merge_config(RunConfig& c, const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(Errc::kInvalidConfig, "config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key == "n_rsv") c.n_rsv = get_int(value, key);
    else if (key == "m_isovalues") c.m_isovalues = get_int(value, key);
    else if (key == "k_viewpoints") c.k_viewpoints = get_int(value, key);
    else if (key == "intermediate_resolution") c.intermediate_resolution = get_int(value, key);
    else if (key == "output_resolution") c.output_resolution = get_int(value, key);
    else if (key == "downsample_target") c.downsample_target = get_int(value, key);
    else if (key == "samples_per_segment") c.samples_per_segment = get_int(value, key);
    else if (key == "confidence_threshold") c.confidence_threshold = get_int(value, key);
    else if (key == "render_threads") c.render_threads = get_int(value, key);
    else if (key == "temperature") c.temperature = get_as<double>(value, key);
    else if (key == "animate") c.animate = get_as<bool>(value, key);
    else if (key == "closed_trajectory") c.closed_trajectory = get_as<bool>(value, key);
    else if (key == "role_temperatures") c.role_temperatures = get_as<std::map<std::string, double>>(value, key);
    else if (key == "kb_path") {
      if (value.is_null()) c.kb_path.reset();
      else c.kb_path = get_as<std::string>(value, key);
    } else if (key == "web_adapter") {
      if (value.is_null()) c.web_adapter.reset();
      else c.web_adapter = get_as<std::string>(value, key);
    } else if (key == "provider") {
      merge_from_json(value, c.provider);
    } else if (key == "ift") {
      if (!value.is_object()) throw Error(Errc::kInvalidConfig, "ift must be an object");
      for (const auto& [ik, iv] : value.items()) {
        if (ik == "enabled") c.ift.enabled = get_as<bool>(iv, "ift." + ik);
        else if (ik == "max_judgments") c.ift.max_judgments = get_int(iv, "ift." + ik);
        else if (ik == "initial_step_divisor") c.ift.initial_step_divisor = get_as<double>(iv, "ift." + ik);
        else if (ik == "min_step_divisor") c.ift.min_step_divisor = get_as<double>(iv, "ift." + ik);
        else throw Error(Errc::kInvalidConfig, "unknown config key 'ift." + ik + "'");
      }
    } else {
      throw Error(Errc::kInvalidConfig, "unknown config key '" + key + "'");
    }
  }
}

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

nlohmann::json env_overrides(const EnvLookup& lookup) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& key : scalar_keys()) {
    if (auto v = lookup("SASAV_" + upper(key))) out[key] = env_value(*v);
  }
  for (const auto& key : provider_keys()) {
    if (auto v = lookup("SASAV_PROVIDER_" + upper(key))) {
      // Path-like and name-like fields stay strings even if they look numeric.
      out["provider"][key] = key == "max_concurrency" || key == "embedding_dim" || key == "image_limit" || key == "timeout_s"
                                 ? env_value(*v)
                                 : nlohmann::json(*v);
    }
  }
  for (const auto& key : {std::string("kb_path"), std::string("web_adapter")}) {
    if (out.contains(key)) out[key] = lookup("SASAV_" + upper(key)).value();
  }
  return out;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const nlohmann::json& flag_overrides,
                         const EnvLookup& lookup) {
  RunConfig config;
  merge_config(config, env_overrides(lookup));
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(Errc::kInvalidConfig, "cannot open config file " + file->string());
    const auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw Error(Errc::kInvalidConfig, file->string() + " is not valid JSON");
    merge_config(config, anchor_paths(doc, std::filesystem::absolute(*file).parent_path()));
  }
  if (!flag_overrides.is_null()) merge_config(config, flag_overrides);
  config.validate();
  return config;
}

}  // namespace sasav
