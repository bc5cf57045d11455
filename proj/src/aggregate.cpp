#include "cilbench/aggregate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "cilbench/run_store.hpp"

namespace cilbench {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

struct Stats {
    double mean = 0.0, stddev = 0.0;
};

Stats population_stats(const std::vector<double>& xs) {
    Stats s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    double sq = 0.0;
    for (double x : xs) sq += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(xs.size()));
    return s;
}

}  // namespace

RunSummary read_run_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path d(dir);
    if (!fs::is_directory(d)) throw IoError("'" + dir + "' is not a run directory");

    const nlohmann::json record = nlohmann::json::parse(read_file(d / artifact::kRecord));
    const std::string status = record.at("status").get<std::string>();
    if (status != "completed")
        throw DataError("run '" + dir + "' has status '" + status + "'; only completed runs aggregate");

    const ExperimentConfig cfg = parse_config_text(read_file(d / artifact::kConfig));

    RunSummary s;
    s.dir = dir;
    s.method = method_name(cfg.method);
    s.framework = framework_name(cfg.framework);
    s.dataset = cfg.dataset_name;
    s.seed = cfg.seed;

    const AccuracyMatrix matrix = AccuracyMatrix::from_csv(read_file(d / artifact::kMatrix));
    s.acc = matrix.compute_acc();
    if (matrix.max_task() >= 2) {
        s.bwt = matrix.compute_bwt();
        s.has_bwt = true;
    }

    const nlohmann::json cost = nlohmann::json::parse(read_file(d / artifact::kCost));
    s.params = cost.at("deployed").at("params").get<long>();
    s.flops = cost.at("deployed").at("flops").get<long>();
    return s;
}

AggregateReport aggregate_runs(const std::vector<std::string>& dirs, bool grouped) {
    if (dirs.empty()) throw ConfigError("no run directories given");

    using Key = std::tuple<std::string, std::string, std::string>;
    std::map<Key, std::vector<RunSummary>> groups;
    for (const auto& dir : dirs) {
        RunSummary s = read_run_dir(dir);
        groups[{s.method, s.framework, s.dataset}].push_back(std::move(s));
    }

    if (groups.size() > 1 && !grouped) {
        std::string msg = "run directories span multiple (method, framework, dataset) groups:";
        for (const auto& [key, _] : groups)
            msg += " (" + std::get<0>(key) + ", " + std::get<1>(key) + ", " + std::get<2>(key) + ")";
        msg += "; pass --grouped to aggregate per group";
        throw ConfigError(msg);
    }

    AggregateReport report;
    for (auto& [key, runs] : groups) {
        std::sort(runs.begin(), runs.end(),
                  [](const RunSummary& a, const RunSummary& b) { return a.seed < b.seed; });
        for (size_t i = 1; i < runs.size(); ++i)
            if (runs[i].seed == runs[i - 1].seed)
                throw ConfigError("duplicate seed " + std::to_string(runs[i].seed) +
                                  " in group (" + std::get<0>(key) + ", " + std::get<1>(key) +
                                  ", " + std::get<2>(key) + ")");

        AggregateRow row;
        row.method = std::get<0>(key);
        row.framework = std::get<1>(key);
        row.dataset = std::get<2>(key);
        row.seeds = static_cast<int>(runs.size());
        row.has_std = runs.size() >= 2;
        row.has_bwt = std::all_of(runs.begin(), runs.end(),
                                  [](const RunSummary& r) { return r.has_bwt; });

        std::vector<double> accs, bwts;
        long params_sum = 0, flops_sum = 0;
        for (const auto& r : runs) {
            accs.push_back(r.acc);
            if (row.has_bwt) bwts.push_back(r.bwt);
            params_sum += r.params;
            flops_sum += r.flops;
        }
        const Stats acc_stats = population_stats(accs);
        row.acc_mean = acc_stats.mean;
        row.acc_std = acc_stats.stddev;
        if (row.has_bwt) {
            const Stats bwt_stats = population_stats(bwts);
            row.bwt_mean = bwt_stats.mean;
            row.bwt_std = bwt_stats.stddev;
        }
        row.params = params_sum / static_cast<long>(runs.size());
        row.flops = flops_sum / static_cast<long>(runs.size());
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string AggregateReport::to_text() const {
    std::vector<std::array<std::string, 8>> cells;
    cells.push_back({"method", "framework", "dataset", "seeds", "acc", "bwt", "params", "flops"});
    for (const auto& r : rows) {
        std::string acc = fmt4(r.acc_mean);
        if (r.has_std) acc += " +- " + fmt4(r.acc_std);
        std::string bwt = "-";
        if (r.has_bwt) {
            bwt = fmt4(r.bwt_mean);
            if (r.has_std) bwt += " +- " + fmt4(r.bwt_std);
        }
        cells.push_back({r.method, r.framework, r.dataset, std::to_string(r.seeds), acc, bwt,
                         std::to_string(r.params), std::to_string(r.flops)});
    }

    std::array<size_t, 8> width{};
    for (const auto& row : cells)
        for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());

    std::string out;
    for (const auto& row : cells) {
        for (size_t c = 0; c < row.size(); ++c) {
            out += row[c];
            if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 2, ' ');
        }
        out += '\n';
    }
    out += "# +- is the population standard deviation over seeds (shown for >= 2 seeds)\n";
    return out;
}

std::string AggregateReport::to_csv() const {
    std::string out = "method,framework,dataset,seeds,acc_mean,acc_std,bwt_mean,bwt_std,params,flops\n";
    for (const auto& r : rows) {
        out += r.method + "," + r.framework + "," + r.dataset + "," + std::to_string(r.seeds) + ",";
        out += fmt4(r.acc_mean) + ",";
        out += r.has_std ? fmt4(r.acc_std) : "";
        out += ",";
        out += r.has_bwt ? fmt4(r.bwt_mean) : "";
        out += ",";
        out += (r.has_bwt && r.has_std) ? fmt4(r.bwt_std) : "";
        out += "," + std::to_string(r.params) + "," + std::to_string(r.flops) + "\n";
    }
    return out;
}

}  // namespace cilbench
