#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "sasav/mllm.hpp"

namespace sasav {

struct IftConfig {
  bool enabled = true;
  int max_judgments = 6;
  double initial_step_divisor = 8.0;  // first step = neighbour span / this
  double min_step_divisor = 64.0;     // stop once step < neighbour span / this
};

struct RunConfig {
  int n_rsv = 5;
  int m_isovalues = 9;
  int k_viewpoints = 32;
  int intermediate_resolution = 256;
  int output_resolution = 2048;
  int downsample_target = 256;
  int samples_per_segment = 120;
  int confidence_threshold = 4;
  double temperature = 0.1;
  std::map<std::string, double> role_temperatures;
  ProviderConfig provider;
  std::optional<std::filesystem::path> kb_path;
  std::optional<std::string> web_adapter;
  bool animate = false;
  bool closed_trajectory = false;
  int render_threads = 0;  // 0 = hardware concurrency
  IftConfig ift;

  void validate() const;
  double temperature_for(RoleTag role) const;
};

nlohmann::json config_to_json(const RunConfig& config);
/// Applies the keys present in doc; unknown keys throw Error(kInvalidConfig).
void merge_config(RunConfig& config, const nlohmann::json& doc);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

/// Overrides read from SASAV_<FIELD> (e.g. SASAV_N_RSV, SASAV_PROVIDER_KIND),
/// as a document accepted by merge_config.
nlohmann::json env_overrides(const EnvLookup& lookup = process_env);

/// defaults < environment < config file < flag overrides, then validate().
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const nlohmann::json& flag_overrides,
                         const EnvLookup& lookup = process_env);

}  // namespace sasav
