#pragma once

#include <string>
#include <vector>

#include "cilbench/experiment_config.hpp"

namespace cilbench {

// Flat dotted-key config format: one `key = value` per line, `#` comments,
// blank lines ignored. The schema is closed — unknown or duplicate keys are
// errors naming every offender. Values left out keep their defaults.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Full snapshot: every schema key with its current value, in schema order.
// parse_config_text(serialize_config(c)) reproduces c exactly.
std::string serialize_config(const ExperimentConfig& cfg);

// Every key name in schema order (used by the docs generator and tests).
std::vector<std::string> config_key_names();

}  // namespace cilbench
