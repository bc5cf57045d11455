#include "cilbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cilbench/common.hpp"

namespace cilbench {

std::vector<int> LabeledDataset::class_ids() const {
    std::set<int> ids;
    for (const auto& e : train) ids.insert(e.label);
    for (const auto& e : test) ids.insert(e.label);
    return std::vector<int>(ids.begin(), ids.end());
}

LabeledDataset LabeledDataset::restrict_to(const std::vector<int>& classes) const {
    std::set<int> keep(classes.begin(), classes.end());
    LabeledDataset out;
    out.name = name;
    out.channels = channels;
    out.image_size = image_size;
    out.norm_mean = norm_mean;
    out.norm_std = norm_std;
    for (const auto& e : train) {
        if (keep.count(e.label)) out.train.push_back(e);
    }
    for (const auto& e : test) {
        if (keep.count(e.label)) out.test.push_back(e);
    }
    return out;
}

namespace {

struct BlobSpec {
    double cx, cy, radius;
    double color[3];
};

struct ClassPattern {
    BlobSpec blobs[2];
    double stripe_theta;
    double stripe_freq;
    double stripe_color[3];
    double stripe_weight;
};

ClassPattern class_pattern(uint64_t family_seed, int cls) {
    Rng rng(splitmix64(family_seed ^ 0xc1a55000u) ^ splitmix64(static_cast<uint64_t>(cls) * 0x9e37u + 11));
    ClassPattern p;
    for (auto& b : p.blobs) {
        b.cx = rng.uniform(0.2, 0.8);
        b.cy = rng.uniform(0.2, 0.8);
        b.radius = rng.uniform(0.10, 0.22);
        for (double& c : b.color) c = rng.uniform(-0.9, 0.9);
    }
    p.stripe_theta = rng.uniform(0.0, 3.14159265358979);
    p.stripe_freq = rng.uniform(2.0, 5.0);
    for (double& c : p.stripe_color) c = rng.uniform(-0.5, 0.5);
    p.stripe_weight = rng.uniform(0.25, 0.45);
    return p;
}

LabeledExample render_example(const ClassPattern& p, uint64_t family_seed, int cls, int instance,
                              int size, double norm_mean, double norm_std) {
    Rng rng(splitmix64(family_seed ^ 0x5a3d1e0du) ^
            splitmix64((static_cast<uint64_t>(cls) << 20) + static_cast<uint64_t>(instance)));
    LabeledExample ex;
    ex.label = cls;
    ex.input.resize({3, size, size});

    double jitter_x = rng.uniform(-0.08, 0.08);
    double jitter_y = rng.uniform(-0.08, 0.08);
    double amp[2] = {rng.uniform(0.75, 1.2), rng.uniform(0.75, 1.2)};
    double phase = rng.uniform(0.0, 6.28318530717959);
    double brightness = rng.uniform(-0.05, 0.05);
    double ct = std::cos(p.stripe_theta), st = std::sin(p.stripe_theta);

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double u = (x + 0.5) / size;
            double v = (y + 0.5) / size;
            double stripe = 0.5 + 0.5 * std::sin(6.28318530717959 * p.stripe_freq * (u * ct + v * st) + phase);
            double pix[3];
            for (int c = 0; c < 3; ++c) {
                pix[c] = 0.4 + brightness + p.stripe_weight * p.stripe_color[c] * stripe;
            }
            for (int b = 0; b < 2; ++b) {
                double dx = u - (p.blobs[b].cx + jitter_x);
                double dy = v - (p.blobs[b].cy + jitter_y);
                double g = amp[b] * std::exp(-(dx * dx + dy * dy) / (2.0 * p.blobs[b].radius * p.blobs[b].radius));
                for (int c = 0; c < 3; ++c) pix[c] += p.blobs[b].color[c] * g;
            }
            for (int c = 0; c < 3; ++c) {
                double val = pix[c] + 0.05 * rng.normal();
                val = std::min(1.0, std::max(0.0, val));
                ex.input[static_cast<size_t>(c) * size * size + static_cast<size_t>(y) * size + x] =
                    (val - norm_mean) / norm_std;
            }
        }
    }
    return ex;
}

}  // namespace

LabeledDataset make_synthetic_dataset(int num_classes, int image_size, int train_per_class,
                                      int test_per_class, uint64_t family_seed,
                                      double norm_mean, double norm_std) {
    if (num_classes < 1 || image_size < 4 || train_per_class < 1 || test_per_class < 1) {
        throw ConfigError("make_synthetic_dataset: invalid dimensions");
    }
    LabeledDataset ds;
    ds.name = "synthetic" + std::to_string(num_classes);
    ds.image_size = image_size;
    ds.norm_mean = norm_mean;
    ds.norm_std = norm_std;
    int per_class = train_per_class + test_per_class;
    for (int cls = 0; cls < num_classes; ++cls) {
        ClassPattern p = class_pattern(family_seed, cls);
        for (int i = 0; i < per_class; ++i) {
            LabeledExample ex = render_example(p, family_seed, cls, i, image_size, norm_mean, norm_std);
            ex.source_index = static_cast<long>(cls) * per_class + i;
            if (i < train_per_class) {
                ds.train.push_back(std::move(ex));
            } else {
                ds.test.push_back(std::move(ex));
            }
        }
    }
    return ds;
}

LabeledDataset load_array_dataset(const std::string& dir, double norm_mean, double norm_std) {
    namespace fs = std::filesystem;
    fs::path root(dir);
    std::ifstream meta(root / "meta.txt");
    if (!meta) throw IoError("load_array_dataset: cannot open " + (root / "meta.txt").string());
    LabeledDataset ds;
    ds.name = root.filename().string();
    ds.norm_mean = norm_mean;
    ds.norm_std = norm_std;
    std::string key;
    while (meta >> key) {
        if (key == "channels") meta >> ds.channels;
        else if (key == "image_size") meta >> ds.image_size;
        else { std::string skip; meta >> skip; }
    }
    if (ds.image_size <= 0 || ds.channels <= 0) throw DataError("load_array_dataset: bad meta.txt");

    std::ifstream data(root / "data.bin", std::ios::binary);
    if (!data) throw IoError("load_array_dataset: cannot open " + (root / "data.bin").string());
    size_t record = static_cast<size_t>(ds.channels) * ds.image_size * ds.image_size;
    std::vector<float> buf(record);

    std::ifstream manifest(root / "manifest.csv");
    if (!manifest) throw IoError("load_array_dataset: cannot open " + (root / "manifest.csv").string());
    std::string line;
    if (!std::getline(manifest, line) || line != "path_or_index,label,split") {
        throw DataError("load_array_dataset: bad manifest header");
    }
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string idx_s, label_s, split_s;
        if (!std::getline(ls, idx_s, ',') || !std::getline(ls, label_s, ',') || !std::getline(ls, split_s)) {
            throw DataError("load_array_dataset: short manifest row '" + line + "'");
        }
        long idx = std::stol(idx_s);
        LabeledExample ex;
        ex.label = std::stoi(label_s);
        ex.source_index = idx;
        data.seekg(static_cast<std::streamoff>(idx) * static_cast<std::streamoff>(record * sizeof(float)));
        data.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record * sizeof(float)));
        if (!data.good()) throw DataError("load_array_dataset: record " + idx_s + " out of range");
        ex.input.resize({ds.channels, ds.image_size, ds.image_size});
        for (size_t i = 0; i < record; ++i) {
            ex.input[i] = (static_cast<double>(buf[i]) - norm_mean) / norm_std;
        }
        if (split_s == "train") ds.train.push_back(std::move(ex));
        else if (split_s == "test") ds.test.push_back(std::move(ex));
        else throw DataError("load_array_dataset: unknown split '" + split_s + "'");
    }
    return ds;
}

Tensor stack_batch(const std::vector<const LabeledExample*>& items) {
    if (items.empty()) throw DataError("cannot stack an empty batch");
    const auto& s0 = items[0]->input.shape;
    Tensor out({static_cast<int>(items.size()), s0[0], s0[1], s0[2]});
    const size_t per = items[0]->input.numel();
    for (size_t i = 0; i < items.size(); ++i) {
        if (items[i]->input.shape != s0)
            throw ShapeError("batch mixes example shapes " + items[i]->input.shape_str() +
                             " and " + items[0]->input.shape_str());
        std::copy(items[i]->input.data.begin(), items[i]->input.data.end(),
                  out.data.begin() + static_cast<long>(i * per));
    }
    return out;
}

void write_array_dataset(const std::string& dir, const LabeledDataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    fs::path root(dir);
    {
        std::ofstream meta(root / "meta.txt");
        meta << "channels " << ds.channels << "\nimage_size " << ds.image_size << "\n";
    }
    std::ofstream data(root / "data.bin", std::ios::binary);
    std::ofstream manifest(root / "manifest.csv");
    manifest << "path_or_index,label,split\n";
    long idx = 0;
    auto dump = [&](const std::vector<LabeledExample>& exs, const char* split) {
        for (const auto& ex : exs) {
            std::vector<float> buf(ex.input.numel());
            for (size_t i = 0; i < buf.size(); ++i) {
                buf[i] = static_cast<float>(ex.input[i] * ds.norm_std + ds.norm_mean);
            }
            data.write(reinterpret_cast<const char*>(buf.data()),
                       static_cast<std::streamsize>(buf.size() * sizeof(float)));
            manifest << idx << "," << ex.label << "," << split << "\n";
            ++idx;
        }
    };
    dump(ds.train, "train");
    dump(ds.test, "test");
}

}  // namespace cilbench
