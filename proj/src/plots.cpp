#include "cilbench/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cilbench/metrics.hpp"
#include "cilbench/run_store.hpp"

namespace cilbench {

namespace {

constexpr double kW = 720, kH = 480;
constexpr double kLeft = 70, kRight = 24, kTop = 48, kBottom = 64;
constexpr double kPlotW = kW - kLeft - kRight;
constexpr double kPlotH = kH - kTop - kBottom;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct Series {
    std::string label;
    AccuracyMatrix matrix;
    long flops = 0;
    bool has_flops = false;
};

std::vector<Series> load_series(const std::vector<std::string>& run_dirs, bool want_cost) {
    if (run_dirs.empty()) throw ConfigError("no run directories given");
    std::vector<Series> out;
    for (const auto& dir : run_dirs) {
        const std::filesystem::path d(dir);
        Series s;
        s.label = d.filename().string().empty() ? d.parent_path().filename().string()
                                                : d.filename().string();
        s.matrix = AccuracyMatrix::from_csv(read_file(d / artifact::kMatrix));
        if (want_cost) {
            const auto cost = nlohmann::json::parse(read_file(d / artifact::kCost));
            s.flops = cost.at("deployed").at("flops").get<long>();
            s.has_flops = true;
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct Canvas {
    std::ostringstream svg;
    std::vector<std::string> notes;  // missing-data annotations

    void open(const std::string& title) {
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
            << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
        svg << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"#ffffff\"/>\n";
        svg << "<text x=\"" << kLeft << "\" y=\"26\" font-family=\"monospace\" font-size=\"16\">"
            << title << "</text>\n";
    }

    void axes() {
        svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
            << kTop + kPlotH << "\" stroke=\"#000\"/>\n";
        svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + kPlotH << "\" x2=\""
            << kLeft + kPlotW << "\" y2=\"" << kTop + kPlotH << "\" stroke=\"#000\"/>\n";
    }

    void ytick(double y, const std::string& label) {
        svg << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << num(y) << "\" x2=\"" << kLeft
            << "\" y2=\"" << num(y) << "\" stroke=\"#000\"/>\n";
        svg << "<line x1=\"" << kLeft << "\" y1=\"" << num(y) << "\" x2=\"" << kLeft + kPlotW
            << "\" y2=\"" << num(y) << "\" stroke=\"#e0e0e0\"/>\n";
        svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(y + 4)
            << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"12\">" << label
            << "</text>\n";
    }

    void xtick(double x, const std::string& label) {
        svg << "<line x1=\"" << num(x) << "\" y1=\"" << kTop + kPlotH << "\" x2=\"" << num(x)
            << "\" y2=\"" << kTop + kPlotH + 4 << "\" stroke=\"#000\"/>\n";
        svg << "<text x=\"" << num(x) << "\" y=\"" << kTop + kPlotH + 18
            << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">" << label
            << "</text>\n";
    }

    void axis_labels(const std::string& xlabel, const std::string& ylabel) {
        svg << "<text x=\"" << kLeft + kPlotW / 2 << "\" y=\"" << kH - 18
            << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"13\">" << xlabel
            << "</text>\n";
        svg << "<text x=\"18\" y=\"" << kTop + kPlotH / 2
            << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"13\" "
            << "transform=\"rotate(-90 18 " << kTop + kPlotH / 2 << ")\">" << ylabel
            << "</text>\n";
    }

    void legend(const std::vector<std::string>& labels) {
        double y = kTop + 6;
        for (size_t i = 0; i < labels.size(); ++i) {
            const char* color = kPalette[i % kPaletteSize];
            svg << "<rect x=\"" << kLeft + kPlotW - 180 << "\" y=\"" << num(y - 9)
                << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
            svg << "<text x=\"" << kLeft + kPlotW - 164 << "\" y=\"" << num(y)
                << "\" font-family=\"monospace\" font-size=\"12\">" << labels[i] << "</text>\n";
            y += 16;
        }
    }

    std::string close() {
        double y = kH - 34;
        for (const auto& n : notes) {
            svg << "<text x=\"" << kLeft << "\" y=\"" << num(y)
                << "\" font-family=\"monospace\" font-size=\"11\" fill=\"#c00000\">missing data: "
                << n << "</text>\n";
            y -= 13;
        }
        svg << "</svg>\n";
        return svg.str();
    }
};

bool row_complete(const AccuracyMatrix& m, int row) {
    for (int t = 1; t <= row; ++t)
        if (!m.has(row, t)) return false;
    return true;
}

std::string render_acc_vs_task(const std::vector<Series>& series) {
    int t_max = 1;
    for (const auto& s : series) t_max = std::max(t_max, s.matrix.max_task());

    Canvas c;
    c.open("average accuracy after each task");
    c.axes();
    for (int k = 0; k <= 5; ++k) {
        const double v = k / 5.0;
        c.ytick(kTop + kPlotH * (1.0 - v), num(v).substr(0, 5));
    }
    auto x_of = [&](int i) {
        return t_max == 1 ? kLeft + kPlotW / 2
                          : kLeft + kPlotW * (i - 1) / static_cast<double>(t_max - 1);
    };
    for (int i = 1; i <= t_max; ++i) c.xtick(x_of(i), std::to_string(i));
    c.axis_labels("tasks trained", "mean accuracy over seen tasks");

    std::vector<std::string> labels;
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % kPaletteSize];
        labels.push_back(s.label);
        std::string points;
        for (int i = 1; i <= s.matrix.max_task(); ++i) {
            if (!row_complete(s.matrix, i)) {
                c.notes.push_back(s.label + ": accuracy row " + std::to_string(i) +
                                  " is incomplete");
                continue;
            }
            const double y = kTop + kPlotH * (1.0 - s.matrix.row_mean(i));
            points += num(x_of(i)) + "," + num(y) + " ";
            c.svg << "<circle cx=\"" << num(x_of(i)) << "\" cy=\"" << num(y)
                  << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        if (!points.empty())
            c.svg << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << color
                  << "\" stroke-width=\"1.5\"/>\n";
    }
    c.legend(labels);
    return c.close();
}

std::string render_forgetting_bars(const std::vector<Series>& series) {
    struct Bars {
        std::string label;
        std::vector<std::pair<int, double>> values;  // (task, forgetting)
        std::vector<int> incomplete;                 // tasks with missing cells
    };
    std::vector<Bars> all;
    int t_last = 1;
    double lo = 0.0, hi = 0.0;
    for (const auto& s : series) {
        Bars b;
        b.label = s.label;
        const int T = s.matrix.max_task();
        if (T >= 2) {
            t_last = std::max(t_last, T - 1);
            for (int t = 1; t < T; ++t) {
                if (!s.matrix.has(T, t) || !s.matrix.has(t, t)) {
                    b.incomplete.push_back(t);
                    continue;
                }
                const double f = s.matrix.value(T, t) - s.matrix.value(t, t);
                b.values.push_back({t, f});
                lo = std::min(lo, f);
                hi = std::max(hi, f);
            }
        }
        all.push_back(std::move(b));
    }
    const double pad = std::max(0.05, (hi - lo) * 0.1);
    lo -= pad;
    hi += pad;

    Canvas c;
    c.open("task-wise forgetting (final minus just-trained accuracy)");
    c.axes();
    auto y_of = [&](double v) { return kTop + kPlotH * (hi - v) / (hi - lo); };
    for (int k = 0; k <= 5; ++k) {
        const double v = lo + (hi - lo) * k / 5.0;
        c.ytick(y_of(v), num(v).substr(0, 6));
    }
    c.svg << "<line x1=\"" << kLeft << "\" y1=\"" << num(y_of(0)) << "\" x2=\"" << kLeft + kPlotW
          << "\" y2=\"" << num(y_of(0)) << "\" stroke=\"#606060\"/>\n";
    c.axis_labels("task", "forgetting");

    const double group_w = kPlotW / t_last;
    const double bar_w = group_w / (static_cast<double>(series.size()) + 1.0);
    std::vector<std::string> labels;
    for (size_t si = 0; si < all.size(); ++si) {
        const auto& b = all[si];
        const char* color = kPalette[si % kPaletteSize];
        labels.push_back(b.label);
        for (int t : b.incomplete)
            c.notes.push_back(b.label + ": forgetting for task " + std::to_string(t) +
                              " has missing cells");
        if (b.values.empty()) {
            if (b.incomplete.empty())
                c.notes.push_back(b.label + ": single-task run, no forgetting values");
            continue;
        }
        for (const auto& [t, f] : b.values) {
            const double gx = kLeft + group_w * (t - 1) + bar_w * (0.5 + static_cast<double>(si));
            const double y0 = y_of(std::max(0.0, f));
            const double h = std::fabs(y_of(f) - y_of(0.0));
            c.svg << "<rect x=\"" << num(gx) << "\" y=\"" << num(y0) << "\" width=\""
                  << num(bar_w * 0.9) << "\" height=\"" << num(h) << "\" fill=\"" << color
                  << "\"/>\n";
        }
    }
    for (int t = 1; t <= t_last; ++t)
        c.xtick(kLeft + group_w * (t - 0.5), std::to_string(t));
    c.legend(labels);
    return c.close();
}

std::string render_acc_flops_scatter(const std::vector<Series>& series) {
    double flops_max = 0;
    for (const auto& s : series) flops_max = std::max(flops_max, static_cast<double>(s.flops));
    double scale = 1.0;
    std::string unit = "FLOPs";
    if (flops_max >= 1e9) {
        scale = 1e9;
        unit = "GFLOPs";
    } else if (flops_max >= 1e6) {
        scale = 1e6;
        unit = "MFLOPs";
    } else if (flops_max >= 1e3) {
        scale = 1e3;
        unit = "kFLOPs";
    }
    const double x_hi = flops_max / scale * 1.15 + 1e-12;

    Canvas c;
    c.open("final average accuracy vs inference cost");
    c.axes();
    for (int k = 0; k <= 5; ++k) {
        const double v = k / 5.0;
        c.ytick(kTop + kPlotH * (1.0 - v), num(v).substr(0, 5));
    }
    for (int k = 0; k <= 5; ++k) {
        const double v = x_hi * k / 5.0;
        c.xtick(kLeft + kPlotW * k / 5.0, num(v).substr(0, 6));
    }
    c.axis_labels(unit, "final mean accuracy");

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % kPaletteSize];
        const int T = s.matrix.max_task();
        if (!row_complete(s.matrix, T)) {
            c.notes.push_back(s.label + ": final accuracy row is incomplete");
            continue;
        }
        const double acc = s.matrix.row_mean(T);
        const double x = kLeft + kPlotW * (static_cast<double>(s.flops) / scale) / x_hi;
        const double y = kTop + kPlotH * (1.0 - acc);
        c.svg << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"5\" fill=\"" << color
              << "\"/>\n";
        c.svg << "<text x=\"" << num(x + 8) << "\" y=\"" << num(y + 4)
              << "\" font-family=\"monospace\" font-size=\"11\">" << s.label << "</text>\n";
    }
    return c.close();
}

}  // namespace

PlotKind parse_plot_kind(const std::string& s) {
    if (s == "acc-vs-task") return PlotKind::AccVsTask;
    if (s == "forgetting-bars") return PlotKind::ForgettingBars;
    if (s == "acc-flops-scatter") return PlotKind::AccFlopsScatter;
    throw ConfigError("unknown plot kind '" + s +
                      "' (expected acc-vs-task|forgetting-bars|acc-flops-scatter)");
}

const char* plot_kind_name(PlotKind k) {
    switch (k) {
        case PlotKind::AccVsTask: return "acc-vs-task";
        case PlotKind::ForgettingBars: return "forgetting-bars";
        case PlotKind::AccFlopsScatter: return "acc-flops-scatter";
    }
    return "?";
}

std::string plot_filename(PlotKind k) {
    switch (k) {
        case PlotKind::AccVsTask: return "acc_vs_task.svg";
        case PlotKind::ForgettingBars: return "forgetting_bars.svg";
        case PlotKind::AccFlopsScatter: return "acc_flops_scatter.svg";
    }
    return "plot.svg";
}

std::string render_plot(const std::vector<std::string>& run_dirs, PlotKind kind) {
    const bool want_cost = kind == PlotKind::AccFlopsScatter;
    const std::vector<Series> series = load_series(run_dirs, want_cost);
    switch (kind) {
        case PlotKind::AccVsTask: return render_acc_vs_task(series);
        case PlotKind::ForgettingBars: return render_forgetting_bars(series);
        case PlotKind::AccFlopsScatter: return render_acc_flops_scatter(series);
    }
    throw ConfigError("unknown plot kind");
}

}  // namespace cilbench
