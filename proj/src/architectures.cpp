#include <cmath>

#include "cilbench/model_graph.hpp"

namespace cilbench {

namespace {

int make_divisible(double v, int divisor = 8) {
    int nv = std::max(divisor, (static_cast<int>(v + divisor / 2.0) / divisor) * divisor);
    if (nv < 0.9 * v) nv += divisor;
    return nv;
}

// Incremental graph assembly with deterministic parameter init:
// He-normal conv weights, unit batchnorm, N(0, 0.01^2) head rows.
struct Builder {
    ModelGraph g;
    Rng rng;
    int last = -1;

    Builder(const std::string& arch, int input_size, int channels, uint64_t seed)
        : rng(splitmix64(seed) ^ fnv1a(arch.data(), arch.size())) {
        g.arch = arch;
        g.input_channels = channels;
        g.input_size = input_size;
        Layer in;
        in.kind = LayerKind::Input;
        in.name = "input";
        g.layers.push_back(in);
        last = 0;
    }

    int push(Layer l) {
        g.layers.push_back(std::move(l));
        last = static_cast<int>(g.layers.size()) - 1;
        return last;
    }

    int conv(const std::string& name, int from, int in_ch, int out_ch, int k, int stride, int pad,
             int groups = 1) {
        Layer l;
        l.kind = LayerKind::Conv;
        l.name = name;
        l.input = from;
        l.in_ch = in_ch;
        l.out_ch = out_ch;
        l.kh = l.kw = k;
        l.stride = stride;
        l.pad = pad;
        l.groups = groups;
        l.weight.resize({out_ch, in_ch / groups, k, k});
        const double std = std::sqrt(2.0 / ((in_ch / groups) * k * k));
        for (auto& w : l.weight.data) w = std * rng.normal();
        l.wgrad.resize(l.weight.shape);
        return push(std::move(l));
    }

    int bn(const std::string& name, int from, int ch, bool candidate, bool stem = false) {
        Layer l;
        l.kind = LayerKind::BatchNorm;
        l.name = name;
        l.input = from;
        l.in_ch = l.out_ch = ch;
        l.gamma.resize({ch});
        l.beta.resize({ch});
        l.run_mean.resize({ch});
        l.run_var.resize({ch});
        for (auto& v : l.gamma.data) v = 1.0;
        for (auto& v : l.run_var.data) v = 1.0;
        l.ggrad.resize({ch});
        l.begrad.resize({ch});
        l.prunable_candidate = candidate;
        l.is_stem = stem;
        return push(std::move(l));
    }

    int act(const std::string& name, int from, bool relu6 = false) {
        Layer l;
        l.kind = relu6 ? LayerKind::ReLU6 : LayerKind::ReLU;
        l.name = name;
        l.input = from;
        return push(std::move(l));
    }

    int maxpool(const std::string& name, int from, int k, int stride) {
        Layer l;
        l.kind = LayerKind::MaxPool;
        l.name = name;
        l.input = from;
        l.pool_k = k;
        l.pool_stride = stride;
        return push(std::move(l));
    }

    int add(const std::string& name, int a, int b) {
        Layer l;
        l.kind = LayerKind::Add;
        l.name = name;
        l.input = a;
        l.input2 = b;
        return push(std::move(l));
    }

    int gap_flatten_head(int from, int feat_dim, int initial_classes) {
        Layer gap;
        gap.kind = LayerKind::GlobalAvgPool;
        gap.name = "gap";
        gap.input = from;
        int g1 = push(std::move(gap));
        Layer fl;
        fl.kind = LayerKind::Flatten;
        fl.name = "flatten";
        fl.input = g1;
        int f1 = push(std::move(fl));
        g.feature_index = f1;

        Layer head;
        head.kind = LayerKind::Linear;
        head.name = "head";
        head.input = f1;
        head.in_ch = feat_dim;
        head.out_ch = 0;
        head.has_bias = true;
        head.weight.resize({0, feat_dim});
        head.bias.resize({0});
        head.wgrad.resize({0, feat_dim});
        head.bgrad.resize({0});
        g.head_index = push(std::move(head));

        if (initial_classes > 0) {
            std::vector<int> ids(static_cast<size_t>(initial_classes));
            for (int i = 0; i < initial_classes; ++i) ids[static_cast<size_t>(i)] = i;
            g.extend_head(ClassSet(ids), rng);
        }
        return g.head_index;
    }
};

}  // namespace

ModelGraph make_toy_cnn(int input_size, double width_mult, int initial_classes, uint64_t seed) {
    Builder b("toycnn", input_size, 3, seed);
    const int base[4] = {8, 16, 32, 32};
    int w[4];
    for (int i = 0; i < 4; ++i)
        w[i] = std::max(1, static_cast<int>(std::lround(base[i] * width_mult)));
    b.g.width_mult = width_mult;

    int x = 0, in_ch = 3;
    for (int i = 0; i < 4; ++i) {
        const std::string stage = std::to_string(i + 1);
        x = b.conv("conv" + stage, x, in_ch, w[i], 3, 1, 1);
        x = b.bn("bn" + stage, x, w[i], /*candidate=*/true, /*stem=*/i == 0);
        x = b.act("relu" + stage, x);
        if (i < 3) x = b.maxpool("pool" + stage, x, 2, 2);
        in_ch = w[i];
    }
    b.gap_flatten_head(x, w[3], initial_classes);
    return std::move(b.g);
}

ModelGraph make_resnet34_cifar(int input_size, int initial_classes, uint64_t seed) {
    Builder b("resnet34", input_size, 3, seed);
    b.g.width_mult = 1.0;

    int x = b.conv("stem.conv", 0, 3, 64, 3, 1, 1);
    x = b.bn("stem.bn", x, 64, /*candidate=*/true, /*stem=*/true);
    x = b.act("stem.relu", x);

    const int widths[4] = {64, 128, 256, 512};
    const int depths[4] = {3, 4, 6, 3};
    int in_ch = 64;
    for (int s = 0; s < 4; ++s) {
        for (int j = 0; j < depths[s]; ++j) {
            const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(j);
            const int out_ch = widths[s];
            const int stride = (s > 0 && j == 0) ? 2 : 1;
            int identity = x;
            int y = b.conv(p + ".conv1", x, in_ch, out_ch, 3, stride, 1);
            y = b.bn(p + ".bn1", y, out_ch, /*candidate=*/true);
            y = b.act(p + ".relu1", y);
            y = b.conv(p + ".conv2", y, out_ch, out_ch, 3, 1, 1);
            y = b.bn(p + ".bn2", y, out_ch, /*candidate=*/true);
            if (stride != 1 || in_ch != out_ch) {
                identity = b.conv(p + ".down.conv", identity, in_ch, out_ch, 1, stride, 0);
                identity = b.bn(p + ".down.bn", identity, out_ch, /*candidate=*/true);
            }
            y = b.add(p + ".add", y, identity);
            x = b.act(p + ".relu2", y);
            in_ch = out_ch;
        }
    }
    b.gap_flatten_head(x, 512, initial_classes);
    return std::move(b.g);
}

ModelGraph make_mobilenet_v2(int input_size, double width_mult, int initial_classes,
                             uint64_t seed) {
    Builder b("mobilenetv2", input_size, 3, seed);
    b.g.width_mult = width_mult;

    // (expansion, channels, repeats, first stride)
    const int cfg[7][4] = {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
                           {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};

    int ch = make_divisible(32 * width_mult);
    int x = b.conv("stem.conv", 0, 3, ch, 3, 2, 1);
    x = b.bn("stem.bn", x, ch, /*candidate=*/true, /*stem=*/true);
    x = b.act("stem.relu", x, true);

    int blk = 0;
    for (const auto& c : cfg) {
        const int t = c[0];
        const int out_ch = make_divisible(c[1] * width_mult);
        for (int j = 0; j < c[2]; ++j) {
            const int stride = (j == 0) ? c[3] : 1;
            const std::string p = "block" + std::to_string(blk++);
            const int hidden = static_cast<int>(std::lround(ch * static_cast<double>(t)));
            int y = x;
            if (t != 1) {
                y = b.conv(p + ".expand.conv", y, ch, hidden, 1, 1, 0);
                y = b.bn(p + ".expand.bn", y, hidden, /*candidate=*/true);
                y = b.act(p + ".expand.relu", y, true);
            }
            y = b.conv(p + ".dw.conv", y, hidden, hidden, 3, stride, 1, /*groups=*/hidden);
            // Depthwise masks are slaved to the expansion decision, so this
            // scale never enters the ranking on its own.
            y = b.bn(p + ".dw.bn", y, hidden, /*candidate=*/false);
            y = b.act(p + ".dw.relu", y, true);
            y = b.conv(p + ".project.conv", y, hidden, out_ch, 1, 1, 0);
            // Projection output feeds residual sums (directly or via the next
            // block's shortcut), so channel selection skips it.
            y = b.bn(p + ".project.bn", y, out_ch, /*candidate=*/false);
            if (stride == 1 && ch == out_ch) y = b.add(p + ".add", y, x);
            x = y;
            ch = out_ch;
        }
    }
    const int last = make_divisible(1280 * std::max(1.0, width_mult));
    x = b.conv("final.conv", x, ch, last, 1, 1, 0);
    x = b.bn("final.bn", x, last, /*candidate=*/true);
    x = b.act("final.relu", x, true);
    b.gap_flatten_head(x, last, initial_classes);
    return std::move(b.g);
}

ModelGraph make_model(const std::string& arch, int input_size, double width_mult,
                      int initial_classes, uint64_t seed) {
    if (arch == "toycnn") return make_toy_cnn(input_size, width_mult, initial_classes, seed);
    if (arch == "resnet34") return make_resnet34_cifar(input_size, initial_classes, seed);
    if (arch == "mobilenetv2")
        return make_mobilenet_v2(input_size, width_mult, initial_classes, seed);
    throw ConfigError("unknown architecture '" + arch +
                      "' (expected toycnn, resnet34, or mobilenetv2)");
}

}  // namespace cilbench
