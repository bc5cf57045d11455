#pragma once

#include <string>
#include <vector>

namespace cilbench {

enum class PlotKind { AccVsTask, ForgettingBars, AccFlopsScatter };

PlotKind parse_plot_kind(const std::string& s);  // acc-vs-task | forgetting-bars | acc-flops-scatter
const char* plot_kind_name(PlotKind k);
std::string plot_filename(PlotKind k);  // deterministic output name

// Renders one SVG chart from the persisted artifacts (matrix.csv, and
// cost.json for the scatter) of the given run directories — nothing is taken
// from in-memory state. Incomplete matrices are annotated on the chart
// rather than silently skipped.
std::string render_plot(const std::vector<std::string>& run_dirs, PlotKind kind);

}  // namespace cilbench
