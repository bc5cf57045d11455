#pragma once

#include <string>

#include "cilbench/config_file.hpp"
#include "cilbench/pruning.hpp"

namespace cilbench {

// Run-directory artifact names.
namespace artifact {
inline constexpr const char* kConfig = "config.snapshot";
inline constexpr const char* kMatrix = "matrix.csv";
inline constexpr const char* kCost = "cost.json";
inline constexpr const char* kEvents = "events.log";
inline constexpr const char* kRecord = "run.json";
inline constexpr const char* kCheckpoints = "checkpoints";
}  // namespace artifact

struct RunRecord {
    std::string dir;
    std::string status;  // completed | failed
    std::string error;   // failed runs only
    uint64_t seed = 0;
    double duration_sec = 0.0;
    double acc = 0.0;
    double bwt = 0.0;
    bool has_bwt = false;
};

// `<method>-<framework>-s<seed>` when cfg.run_name is empty.
std::string default_run_name(const ExperimentConfig& cfg);

// Executes one experiment into `<out_root>/<run name>/`, writing the config
// snapshot, per-task checkpoints, accuracy matrix, cost report, event log,
// and run record. A mid-run failure yields status=failed with the partial
// artifacts retained; only the run record and the return value carry
// wall-clock time, so repeated runs produce byte-identical data artifacts.
RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& out_root);
RunRecord run_experiment_file(const std::string& config_path, const std::string& out_root);

}  // namespace cilbench
