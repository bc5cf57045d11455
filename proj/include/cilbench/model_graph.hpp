#pragma once

#include <array>
#include <string>
#include <vector>

#include "cilbench/common.hpp"
#include "cilbench/metrics.hpp"
#include "cilbench/tensor.hpp"

namespace cilbench {

enum class LayerKind {
    Input,
    Conv,
    BatchNorm,
    Linear,
    ReLU,
    ReLU6,
    AvgPool,
    MaxPool,
    GlobalAvgPool,
    Add,
    Flatten,
};

const char* layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

// One node of the layered network description. Parameter tensors are empty
// for parameter-free kinds. `input` / `input2` are indices of producer
// layers (input2 only for Add).
struct Layer {
    LayerKind kind = LayerKind::Input;
    std::string name;
    int input = -1;
    int input2 = -1;

    // conv / linear geometry
    int in_ch = 0, out_ch = 0;
    int kh = 0, kw = 0, stride = 1, pad = 0, groups = 1;
    bool has_bias = false;

    // pooling geometry
    int pool_k = 2, pool_stride = 2;

    // parameters and their gradient buffers
    Tensor weight, wgrad;
    Tensor bias, bgrad;
    Tensor gamma, ggrad;   // batchnorm scale
    Tensor beta, begrad;   // batchnorm shift
    Tensor run_mean, run_var;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    // pruning metadata (BatchNorm only)
    bool prunable_candidate = false;  // internal BN eligible for channel selection
    bool is_stem = false;             // first conv's BN, excluded by default
};

struct BNScaleEntry {
    int layer = -1;    // index into ModelGraph::layers
    int channel = -1;
    double gamma = 0.0;
    bool prunable = false;
};

struct BNScaleView {
    std::vector<BNScaleEntry> entries;
    size_t prunable_count() const;
};

struct CostItem {
    std::string name;
    std::string kind;
    long params = 0;
    long flops = 0;
};

// Inference cost: FLOPs counted as 2 per multiply-accumulate, conv and
// linear layers only; params count every learnable scalar.
struct CostReport {
    long params = 0;
    long flops = 0;
    std::vector<CostItem> per_layer;

    std::string to_text() const;
    std::string to_json() const;
};

struct ForwardResult {
    Tensor logits;    // N x seen_classes
    Tensor features;  // N x feature_dim (penultimate activations)
};

// Per-layer activations and caches retained by a traced forward pass so a
// backward pass can run over the same batch.
struct Trace {
    bool train = false;
    int batch = 0;
    std::vector<Tensor> act;
    std::vector<Tensor> grad;
    std::vector<Tensor> bn_xhat;
    std::vector<std::vector<double>> bn_inv_std;
    std::vector<std::vector<int>> pool_argmax;
};

// Layered network with named prunable channels and a growing classifier
// head. Layers are stored in topological order; layers[0] is the Input node.
class ModelGraph {
public:
    std::string arch;          // constructor name (toycnn, resnet34, mobilenetv2)
    double width_mult = 1.0;
    int input_channels = 3;
    int input_size = 0;        // expected square input
    std::vector<Layer> layers;
    int head_index = -1;       // Linear classifier layer
    int feature_index = -1;    // layer producing penultimate features
    std::vector<int> seen_classes;  // global ids in head-slot order

    int num_seen() const { return static_cast<int>(seen_classes.size()); }
    int feature_dim() const;
    int slot_of(int global_class) const;  // -1 when unseen
    ClassSet seen_class_set() const { return ClassSet(seen_classes); }

    // Traced forward; train=true uses batch statistics in BN layers and
    // updates running estimates.
    ForwardResult forward(const Tensor& x, bool train, Trace& trace);

    // Untraced inference-mode forward.
    ForwardResult forward_eval(const Tensor& x) const;

    // Accumulates parameter gradients for d(loss)/d(logits); requires the
    // trace produced by `forward` over the same batch.
    void backward(Trace& trace, const Tensor& dlogits);

    // Widens the head for a disjoint set of new classes. Existing rows are
    // preserved bit-identically; new rows ~ N(0, 0.01^2), bias 0.
    void extend_head(const ClassSet& new_classes, Rng& rng);

    // All BN channels with |gamma| magnitudes and prunability flags.
    BNScaleView prunable_scales(bool include_stem = false) const;

    long count_params() const;
    CostReport count_flops() const;  // at the model's own input_size
    CostReport cost_report(int input_size) const;

    // (channels, height, width) produced by every layer for a square input.
    std::vector<std::array<int, 3>> layer_shapes(int input_size) const;

    void zero_grads();
    uint64_t parameter_checksum() const;

    // Flat views over learnable parameters, used by the optimizer and by
    // finite-difference tests.
    struct ParamRef {
        int layer;
        int block;  // 0 weight, 1 bias, 2 gamma, 3 beta
        Tensor* value;
        Tensor* grad;
    };
    std::vector<ParamRef> parameters();
};

// Built-in graph constructors. `initial_classes` creates head rows for
// global ids 0..n-1; pass 0 to start with an empty head and grow it.
ModelGraph make_toy_cnn(int input_size, double width_mult, int initial_classes, uint64_t seed);
ModelGraph make_resnet34_cifar(int input_size, int initial_classes, uint64_t seed);
ModelGraph make_mobilenet_v2(int input_size, double width_mult, int initial_classes, uint64_t seed);
ModelGraph make_model(const std::string& arch, int input_size, double width_mult, int initial_classes,
                      uint64_t seed);

}  // namespace cilbench
