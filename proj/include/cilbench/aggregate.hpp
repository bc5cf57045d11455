#pragma once

#include <string>
#include <vector>

#include "cilbench/metrics.hpp"

namespace cilbench {

// One completed run directory, reduced to its reportable numbers.
struct RunSummary {
    std::string dir;
    std::string method;
    std::string framework;
    std::string dataset;
    uint64_t seed = 0;
    double acc = 0.0;
    double bwt = 0.0;
    bool has_bwt = false;
    long params = 0;
    long flops = 0;
};

// Reads config snapshot, run record, accuracy matrix, and cost report.
// Throws when the directory is not a completed run.
RunSummary read_run_dir(const std::string& dir);

struct AggregateRow {
    std::string method;
    std::string framework;
    std::string dataset;
    int seeds = 0;
    double acc_mean = 0.0, acc_std = 0.0;
    double bwt_mean = 0.0, bwt_std = 0.0;
    bool has_std = false;  // at least two seeds
    bool has_bwt = false;
    long params = 0;
    long flops = 0;
};

struct AggregateReport {
    std::vector<AggregateRow> rows;
    std::string to_text() const;  // aligned columns; states the std convention
    std::string to_csv() const;   // fixed column order, empty std for 1 seed
};

// Groups by (method, framework, dataset) and reports mean and population
// standard deviation of ACC / BWT per group, plus deployed cost columns.
// Mixed groups are an error unless `grouped` is set; results do not depend
// on the order of `dirs`.
AggregateReport aggregate_runs(const std::vector<std::string>& dirs, bool grouped);

}  // namespace cilbench
