#pragma once

#include <string>
#include <vector>

#include "pagen/data.hpp"
#include "pagen/detect.hpp"

// Flat key=value run configuration shared by the command-line tool.
namespace pagen {

struct RunConfig {
  data::DatasetSpec dataset;
  detect::TrainConfig train;
  std::string out = "run";
};

// Every accepted key, in the order resolved configs are written.
const std::vector<std::string>& config_keys();

// Throws UsageError for an unknown key and ConfigError for a malformed value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Lines of `key = value`; `#` starts a comment, blank lines are skipped.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::string& path);

std::string setting_value(const RunConfig& cfg, const std::string& key);
// One `key=value` line per key; parsing it back reproduces the config.
std::string resolved_config_text(const RunConfig& cfg);

// Checks every component and their mutual consistency.
void validate(const RunConfig& cfg);

}  // namespace pagen
