#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cilbench/aggregate.hpp"
#include "cilbench/common.hpp"
#include "cilbench/model_graph.hpp"
#include "cilbench/plots.hpp"
#include "cilbench/pruning.hpp"
#include "cilbench/run_store.hpp"
#include "cilbench/weights_io.hpp"

namespace {

using namespace cilbench;

// Accepts "32", "32x32", or "3x32x32"; returns the square spatial size after
// checking the channel count against the model.
int parse_input_shape(const std::string& text, const ModelGraph& model) {
    std::vector<long> dims;
    std::string part;
    std::istringstream in(text);
    while (std::getline(in, part, 'x')) {
        try {
            size_t used = 0;
            const long v = std::stol(part, &used);
            if (used != part.size() || v <= 0) throw std::invalid_argument("");
            dims.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad input shape '" + text + "' (expected e.g. 3x32x32)");
        }
    }
    if (dims.empty() || dims.size() > 3)
        throw ConfigError("bad input shape '" + text + "' (expected e.g. 3x32x32)");
    if (dims.size() >= 2 && dims[dims.size() - 1] != dims[dims.size() - 2])
        throw ConfigError("input shape '" + text + "' is not square");
    if (dims.size() == 3 && dims[0] != model.input_channels)
        throw ConfigError("input shape '" + text + "' has " + std::to_string(dims[0]) +
                          " channels but the model expects " +
                          std::to_string(model.input_channels));
    return static_cast<int>(dims.back());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
}

int cmd_run(const std::string& config_path, const std::string& out_root) {
    const RunRecord rec = run_experiment_file(config_path, out_root);
    if (rec.status != "completed") {
        std::fprintf(stderr, "error: %s (artifacts kept in %s)\n", rec.error.c_str(),
                     rec.dir.c_str());
        return 1;
    }
    std::printf("completed %s seed=%llu acc=%.4f", rec.dir.c_str(),
                static_cast<unsigned long long>(rec.seed), rec.acc);
    if (rec.has_bwt) std::printf(" bwt=%.4f", rec.bwt);
    std::printf(" (%.1fs)\n", rec.duration_sec);
    return 0;
}

int cmd_aggregate(const std::vector<std::string>& dirs, bool grouped, const std::string& csv) {
    const AggregateReport rep = aggregate_runs(dirs, grouped);
    std::fputs(rep.to_text().c_str(), stdout);
    if (!csv.empty()) {
        write_text_file(csv, rep.to_csv());
        std::printf("wrote %s\n", csv.c_str());
    }
    return 0;
}

int cmd_plot(const std::vector<std::string>& dirs, const std::string& kind_name,
             const std::string& out_dir) {
    const PlotKind kind = parse_plot_kind(kind_name);
    const std::string svg = render_plot(dirs, kind);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path path = std::filesystem::path(out_dir) / plot_filename(kind);
    write_text_file(path, svg);
    std::printf("wrote %s\n", path.string().c_str());
    return 0;
}

int cmd_flops(const std::string& weights, const std::string& arch, const std::string& shape) {
    const ModelGraph model = load_weights(weights);
    if (model.arch != arch)
        throw ConfigError("weights container holds arch '" + model.arch + "', not '" + arch +
                          "'");
    const int size = parse_input_shape(shape, model);
    const CostReport cost = model.cost_report(size);
    std::fputs(cost.to_text().c_str(), stdout);
    std::printf("gflops %.6f\n", static_cast<double>(cost.flops) / 1e9);
    return 0;
}

int cmd_prune(const std::string& weights, double ratio, double cap, bool include_stem,
              const std::string& out_dir) {
    ModelGraph model = load_weights(weights);
    const ChannelMask mask = global_prune_mask(model.prunable_scales(include_stem), ratio, cap);
    const nlohmann::json mask_json = mask.to_json(model);
    const ModelGraph pruned = apply_surgery(model, mask);

    std::filesystem::create_directories(out_dir);
    const std::string stem = std::filesystem::path(weights).stem().string();
    const std::filesystem::path base = std::filesystem::path(out_dir) / stem;
    const std::string pruned_path = base.string() + "_pruned.weights";
    const std::string mask_path = base.string() + "_mask.json";
    save_weights(pruned, pruned_path);
    write_text_file(mask_path, mask_json.dump(2) + "\n");

    const CostReport before = model.count_flops();
    const CostReport after = pruned.count_flops();
    std::printf("dropped %ld of %ld prunable channels (ratio %.4f)\n",
                static_cast<long>(mask.channels_dropped), static_cast<long>(mask.prunable_total),
                mask.ratio);
    std::printf("params %ld -> %ld\nflops  %ld -> %ld\n", before.params, after.params,
                before.flops, after.flops);
    std::fputs(after.to_text().c_str(), stdout);
    std::printf("wrote %s\nwrote %s\n", pruned_path.c_str(), mask_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-incremental learning benchmark"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::string run_config, run_out = "runs";
    auto* run = app.add_subcommand("run", "execute one experiment from a config file");
    run->add_option("config", run_config, "experiment config file")->required();
    run->add_option("--out", run_out, "root directory for run artifacts");

    std::vector<std::string> agg_dirs;
    bool agg_grouped = false;
    std::string agg_csv;
    auto* agg = app.add_subcommand("aggregate", "summarize completed run directories");
    agg->add_option("dirs", agg_dirs, "run directories")->required();
    agg->add_flag("--grouped", agg_grouped, "allow multiple (method, framework, dataset) groups");
    agg->add_option("--csv", agg_csv, "also write the report as CSV to this file");

    std::vector<std::string> plot_dirs;
    std::string plot_kind, plot_out = ".";
    auto* plot = app.add_subcommand("plot", "render an SVG chart from run directories");
    plot->add_option("dirs", plot_dirs, "run directories")->required();
    plot->add_option("--kind", plot_kind, "acc-vs-task|forgetting-bars|acc-flops-scatter")
        ->required();
    plot->add_option("--out", plot_out, "output directory");

    std::string fl_weights, fl_arch, fl_shape;
    auto* fl = app.add_subcommand("flops", "print the cost report of a saved model");
    fl->add_option("weights", fl_weights, "weights container")->required();
    fl->add_option("arch", fl_arch, "expected architecture name")->required();
    fl->add_option("input-shape", fl_shape, "input shape, e.g. 3x32x32")->required();

    std::string pr_weights, pr_out = ".";
    double pr_ratio = 0.0, pr_cap = 0.9;
    bool pr_stem = false;
    auto* pr = app.add_subcommand("prune", "prune a saved model by global scale ranking");
    pr->add_option("weights", pr_weights, "weights container")->required();
    pr->add_option("--ratio", pr_ratio, "fraction of prunable channels to drop")->required();
    pr->add_option("--cap", pr_cap, "per-layer drop cap");
    pr->add_flag("--include-stem", pr_stem, "let the stem batchnorm be pruned");
    pr->add_option("--out", pr_out, "output directory");

    try {
        app.parse(argc, argv);
        if (run->parsed()) return cmd_run(run_config, run_out);
        if (agg->parsed()) return cmd_aggregate(agg_dirs, agg_grouped, agg_csv);
        if (plot->parsed()) return cmd_plot(plot_dirs, plot_kind, plot_out);
        if (fl->parsed()) return cmd_flops(fl_weights, fl_arch, fl_shape);
        if (pr->parsed()) return cmd_prune(pr_weights, pr_ratio, pr_cap, pr_stem, pr_out);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
