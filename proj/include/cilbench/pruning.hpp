#pragma once

#include <map>

#include "cilbench/model_graph.hpp"
#include "cilbench/trainer.hpp"

namespace cilbench {

// Outcome of global magnitude selection: one keep-vector per batchnorm layer
// that owns at least one prunable channel. Layers whose channels are only
// removed transitively (depthwise stages between a pruned expansion and its
// projection) carry no entry here; surgery derives them.
struct ChannelMask {
    double ratio = 0.0;        // requested global drop fraction
    long prunable_total = 0;   // channels that were eligible
    long channels_dropped = 0;
    std::map<int, std::vector<uint8_t>> keep;  // BN layer index -> keep flag per channel

    // Per-layer kept channel indices plus the summary counts.
    nlohmann::json to_json(const ModelGraph& model) const;
};

// Sorts prunable channels by |gamma| ascending (ties by layer then channel
// index) and drops the bottom floor(ratio * prunable_total), skipping any
// drop that would push a layer past per_layer_cap or empty it and promoting
// the next-smallest candidate instead. Throws ConfigError when the caps make
// the requested count unreachable, reporting the maximum feasible ratio.
ChannelMask global_prune_mask(const BNScaleView& view, double ratio, double per_layer_cap);

// Keep-vector over every layer's output channels implied by the mask,
// propagated through the graph: depthwise convs and their BNs follow their
// input, elementwise/pool layers pass through, add junctions must agree,
// flatten expands by the spatial footprint. Index 0 is the input node.
std::vector<std::vector<uint8_t>> propagate_keep(const ModelGraph& model, const ChannelMask& mask);

// New, structurally smaller model: dropped channels are removed from the
// owning conv's output, its BN, and the input dimension of every consumer.
// Throws ConfigError when the mask does not match the model.
ModelGraph apply_surgery(const ModelGraph& model, const ChannelMask& mask);

// Zeroes gamma and beta of every dropped channel in place — including
// channels removed transitively through depthwise stages — so the full
// model's inference outputs match the surgically pruned model's.
void zero_masked_channels(ModelGraph& model, const ChannelMask& mask);

enum class PruneStrategy { Pre, Post };

struct PruningPlan {
    PruneStrategy strategy = PruneStrategy::Pre;
    double ratio = 0.4;
    int sparsity_epochs = 0;
    int recovery_epochs = 0;

    // Strategy from cfg.framework; -1 epoch fields fall back to cfg.epochs.
    static PruningPlan from(const ExperimentConfig& cfg);
    void validate() const;  // ratio in (0,1), positive epoch budgets
};

struct PruneRunResult {
    AccuracyMatrix matrix;
    CostReport unpruned_cost;
    CostReport cost;                   // pre: the deployed pruned model; post: last clone
    std::vector<CostReport> per_task;  // post: one per task's pruned clone
    ChannelMask mask;                  // pre: the applied mask; post: the last clone's
    nlohmann::json mask_json;          // named per-layer record of `mask`
};

// Compress once, then learn: task-1 alignment fine-tune with the L1 scale
// penalty, one global prune + surgery, recovery fine-tune on task 1, then
// the remaining tasks on the pruned model with the configured base method.
PruneRunResult pre_pruning_pipeline(ModelGraph model, TrainContext& ctx, const PruningPlan& plan);

// Learn large, deploy small: the full model runs the whole class-incremental
// sequence with the scale penalty active; after each task a clone is pruned,
// recovered on that task's data only, evaluated for the matrix row, and
// discarded. The full model is untouched by its clones.
PruneRunResult post_pruning_pipeline(ModelGraph model, TrainContext& ctx, const PruningPlan& plan);

}  // namespace cilbench
