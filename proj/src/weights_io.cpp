#include "cilbench/weights_io.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cilbench {

namespace {

constexpr char kMagic[4] = {'C', 'I', 'L', 'W'};
constexpr uint32_t kVersion = 1;

// Serialization assumes a little-endian host, which is all this project
// targets; the container is defined as little-endian on disk.

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_i32(std::string& out, int32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.append(s);
}

void put_block(std::string& out, const Tensor& t) {
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_i32(out, d);
    for (double v : t.data) {
        float f = static_cast<float>(v);
        out.append(reinterpret_cast<const char*>(&f), 4);
    }
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    explicit Reader(const std::string& b) : buf(b) {}

    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("weights container truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Tensor block() {
        uint32_t nd = u32();
        if (nd > 8) throw IoError("weights container has a malformed tensor record");
        std::vector<int> shape(nd);
        for (auto& d : shape) d = i32();
        // A rank-0 record is an absent tensor (zero payload floats), not a
        // scalar; resizing to {} would allocate one element and misalign.
        Tensor t;
        if (!shape.empty()) t.resize(shape);
        need(t.numel() * 4);
        for (size_t i = 0; i < t.numel(); ++i) {
            float f;
            std::memcpy(&f, buf.data() + pos, 4);
            pos += 4;
            t[i] = static_cast<double>(f);
        }
        return t;
    }
};

}  // namespace

void save_weights(const ModelGraph& model, const std::string& path) {
    std::string payload;
    put_u32(payload, kVersion);

    nlohmann::json meta;
    meta["arch"] = model.arch;
    meta["width_mult"] = model.width_mult;
    meta["input_channels"] = model.input_channels;
    meta["input_size"] = model.input_size;
    meta["head_index"] = model.head_index;
    meta["feature_index"] = model.feature_index;
    meta["seen_classes"] = model.seen_classes;
    meta["layers"] = model.layers.size();
    put_str(payload, meta.dump());

    for (const Layer& l : model.layers) {
        put_str(payload, l.name);
        put_str(payload, layer_kind_name(l.kind));
        put_i32(payload, l.input);
        put_i32(payload, l.input2);
        put_i32(payload, l.in_ch);
        put_i32(payload, l.out_ch);
        put_i32(payload, l.kh);
        put_i32(payload, l.kw);
        put_i32(payload, l.stride);
        put_i32(payload, l.pad);
        put_i32(payload, l.groups);
        put_i32(payload, l.pool_k);
        put_i32(payload, l.pool_stride);
        put_u8(payload, l.has_bias ? 1 : 0);
        put_u8(payload, l.prunable_candidate ? 1 : 0);
        put_u8(payload, l.is_stem ? 1 : 0);
        put_f64(payload, l.bn_eps);
        put_f64(payload, l.bn_momentum);
        put_block(payload, l.weight);
        put_block(payload, l.bias);
        put_block(payload, l.gamma);
        put_block(payload, l.beta);
        put_block(payload, l.run_mean);
        put_block(payload, l.run_var);
    }

    const uint32_t crc = crc32(payload.data(), payload.size());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(kMagic, 4);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    f.write(reinterpret_cast<const char*>(&crc), 4);
    if (!f) throw IoError("short write to '" + path + "'");
}

ModelGraph load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (all.size() < 12 || std::memcmp(all.data(), kMagic, 4) != 0)
        throw IoError("'" + path + "' is not a weights container");
    const std::string payload = all.substr(4, all.size() - 8);
    uint32_t stored;
    std::memcpy(&stored, all.data() + all.size() - 4, 4);
    if (crc32(payload.data(), payload.size()) != stored)
        throw IoError("'" + path + "' failed its integrity check");

    Reader r(payload);
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("'" + path + "' has unsupported container version " +
                      std::to_string(version));
    nlohmann::json meta = nlohmann::json::parse(r.str());

    ModelGraph m;
    m.arch = meta.at("arch").get<std::string>();
    m.width_mult = meta.at("width_mult").get<double>();
    m.input_channels = meta.at("input_channels").get<int>();
    m.input_size = meta.at("input_size").get<int>();
    m.head_index = meta.at("head_index").get<int>();
    m.feature_index = meta.at("feature_index").get<int>();
    m.seen_classes = meta.at("seen_classes").get<std::vector<int>>();
    const size_t n_layers = meta.at("layers").get<size_t>();

    for (size_t i = 0; i < n_layers; ++i) {
        Layer l;
        l.name = r.str();
        l.kind = parse_layer_kind(r.str());
        l.input = r.i32();
        l.input2 = r.i32();
        l.in_ch = r.i32();
        l.out_ch = r.i32();
        l.kh = r.i32();
        l.kw = r.i32();
        l.stride = r.i32();
        l.pad = r.i32();
        l.groups = r.i32();
        l.pool_k = r.i32();
        l.pool_stride = r.i32();
        l.has_bias = r.u8() != 0;
        l.prunable_candidate = r.u8() != 0;
        l.is_stem = r.u8() != 0;
        l.bn_eps = r.f64();
        l.bn_momentum = r.f64();
        l.weight = r.block();
        l.bias = r.block();
        l.gamma = r.block();
        l.beta = r.block();
        l.run_mean = r.block();
        l.run_var = r.block();
        l.wgrad.resize(l.weight.shape);
        l.bgrad.resize(l.bias.shape);
        l.ggrad.resize(l.gamma.shape);
        l.begrad.resize(l.beta.shape);
        m.layers.push_back(std::move(l));
    }
    if (r.pos != payload.size()) throw IoError("'" + path + "' has trailing bytes");
    return m;
}

void load_pretrained(ModelGraph& model, const std::string& path) {
    ModelGraph src = load_weights(path);
    for (size_t i = 0; i < model.layers.size(); ++i) {
        Layer& dst = model.layers[i];
        if (static_cast<int>(i) == model.head_index) continue;
        if (dst.weight.empty() && dst.gamma.empty()) continue;

        const Layer* s = nullptr;
        for (const Layer& cand : src.layers)
            if (cand.name == dst.name) {
                s = &cand;
                break;
            }
        if (!s)
            throw ConfigError("pretrained container lacks layer '" + dst.name + "'");
        auto take = [&](Tensor& d, const Tensor& v, const char* what) {
            if (d.shape != v.shape)
                throw ConfigError("pretrained layer '" + dst.name + "' " + what + " shape " +
                                  v.shape_str() + " does not match model " + d.shape_str());
            d.data = v.data;
        };
        take(dst.weight, s->weight, "weight");
        take(dst.bias, s->bias, "bias");
        take(dst.gamma, s->gamma, "gamma");
        take(dst.beta, s->beta, "beta");
        take(dst.run_mean, s->run_mean, "running mean");
        take(dst.run_var, s->run_var, "running var");
    }
}

}  // namespace cilbench
