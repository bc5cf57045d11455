#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cilbench/common.hpp"
#include "cilbench/dataset.hpp"
#include "cilbench/model_graph.hpp"

namespace cilbench::testing {

// Unique scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_text(const std::string& path, const std::string& text) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// N random standardized inputs for `model`, labels drawn from `classes`.
inline Tensor random_input(const ModelGraph& model, int n, Rng& rng) {
    Tensor x({n, model.input_channels, model.input_size, model.input_size});
    for (auto& v : x.data) v = rng.normal();
    return x;
}

inline std::vector<int> random_labels(const std::vector<int>& classes, int n, Rng& rng) {
    std::vector<int> out;
    for (int i = 0; i < n; ++i)
        out.push_back(classes[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(classes.size()) - 1))]);
    return out;
}

struct FdReport {
    // Worst |fd - analytic| / (atol + rtol * max(|fd|, |analytic|)) over the
    // checked coordinates; values <= 1 pass.
    double max_score = 0.0;
    int checked = 0;
    int layer = -1;  // location and values of the worst coordinate
    int block = -1;
    size_t index = 0;
    double fd = 0.0;
    double analytic = 0.0;
};

// Central finite-difference check of d(loss)/d(params) against the gradients
// accumulated by one call of `loss`. `loss` must be a pure function of the
// parameters (batch-statistic BN reads no running state, so train-mode
// composites qualify; running-statistic drift does not affect the value).
// The absolute-tolerance floor absorbs FD roundoff, which quantizes the
// difference quotient at ~eps*|loss|/h and swamps gradients below ~1e-9.
template <typename LossFn>
FdReport fd_check(ModelGraph& model, LossFn loss, double h = 1e-5, int stride = 1,
                  double rtol = 1e-4, double atol = 1e-8) {
    model.zero_grads();
    (void)loss();
    struct Coord {
        int layer, block;
        size_t index;
        double analytic;
    };
    std::vector<Coord> coords;
    auto params = model.parameters();
    for (const auto& p : params)
        for (size_t i = 0; i < p.grad->numel(); i += static_cast<size_t>(stride))
            coords.push_back({p.layer, p.block, i, (*p.grad)[i]});

    FdReport rep;
    for (const auto& c : coords) {
        Tensor* value = nullptr;
        for (auto& p : params)
            if (p.layer == c.layer && p.block == c.block) value = p.value;
        const double saved = (*value)[c.index];
        (*value)[c.index] = saved + h;
        const double up = loss();
        (*value)[c.index] = saved - h;
        const double dn = loss();
        (*value)[c.index] = saved;
        const double fd = (up - dn) / (2.0 * h);
        const double score = std::fabs(fd - c.analytic) /
                             (atol + rtol * std::max(std::fabs(fd), std::fabs(c.analytic)));
        ++rep.checked;
        if (score > rep.max_score) {
            rep.max_score = score;
            rep.layer = c.layer;
            rep.block = c.block;
            rep.index = c.index;
            rep.fd = fd;
            rep.analytic = c.analytic;
        }
    }
    return rep;
}

}  // namespace cilbench::testing
