#include "cilbench/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cilbench {

namespace {

std::vector<uint8_t> all_keep(int n) { return std::vector<uint8_t>(static_cast<size_t>(n), 1); }

int count_kept(const std::vector<uint8_t>& keep) {
    int n = 0;
    for (uint8_t k : keep) n += (k != 0);
    return n;
}

Tensor slice1(const Tensor& t, const std::vector<uint8_t>& keep) {
    Tensor out({count_kept(keep)});
    size_t w = 0;
    for (size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) out.data[w++] = t.data[i];
    return out;
}

// {out, in, kh, kw} weight with rows and input slices filtered.
Tensor slice_conv_weight(const Tensor& t, const std::vector<uint8_t>& keep_out,
                         const std::vector<uint8_t>& keep_in) {
    const int O = t.shape[0], I = t.shape[1], K = t.shape[2] * t.shape[3];
    Tensor out({count_kept(keep_out), count_kept(keep_in), t.shape[2], t.shape[3]});
    size_t w = 0;
    for (int o = 0; o < O; ++o) {
        if (!keep_out[static_cast<size_t>(o)]) continue;
        for (int i = 0; i < I; ++i) {
            if (!keep_in[static_cast<size_t>(i)]) continue;
            const double* src = t.ptr() + (static_cast<size_t>(o) * I + i) * K;
            std::copy(src, src + K, out.data.begin() + static_cast<long>(w));
            w += static_cast<size_t>(K);
        }
    }
    return out;
}

// {out, in} weight with input columns filtered.
Tensor slice_linear_cols(const Tensor& t, const std::vector<uint8_t>& keep_in) {
    const int O = t.shape[0], I = t.shape[1];
    Tensor out({O, count_kept(keep_in)});
    size_t w = 0;
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
            if (keep_in[static_cast<size_t>(i)]) out.data[w++] = t.data[static_cast<size_t>(o) * I + i];
    return out;
}

}  // namespace

nlohmann::json ChannelMask::to_json(const ModelGraph& model) const {
    nlohmann::json layer_records = nlohmann::json::array();
    for (const auto& [li, kv] : keep) {
        std::vector<int> kept;
        for (size_t c = 0; c < kv.size(); ++c)
            if (kv[c]) kept.push_back(static_cast<int>(c));
        layer_records.push_back({{"layer", li},
                                 {"name", model.layers[static_cast<size_t>(li)].name},
                                 {"channels", kv.size()},
                                 {"kept", kept}});
    }
    return {{"ratio", ratio},
            {"prunable_total", prunable_total},
            {"channels_dropped", channels_dropped},
            {"layers", layer_records}};
}

ChannelMask global_prune_mask(const BNScaleView& view, double ratio, double per_layer_cap) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ConfigError("prune ratio must lie strictly between 0 and 1, got " +
                          std::to_string(ratio));
    if (!(per_layer_cap > 0.0 && per_layer_cap <= 1.0))
        throw ConfigError("per-layer prune cap must lie in (0,1], got " +
                          std::to_string(per_layer_cap));
    if (view.entries.empty()) throw ConfigError("scale view is empty; nothing to prune");

    struct LayerAgg {
        long total = 0;
        long prunable = 0;
        long dropped = 0;
        long max_drop = 0;
    };
    std::map<int, LayerAgg> agg;
    for (const auto& e : view.entries) {
        LayerAgg& a = agg[e.layer];
        ++a.total;
        if (e.prunable) ++a.prunable;
    }
    const long n_prunable = static_cast<long>(view.prunable_count());
    if (n_prunable == 0)
        throw ConfigError("no prunable channels under the current prunability rules");

    long max_achievable = 0;
    for (auto& [li, a] : agg) {
        a.max_drop = std::min({static_cast<long>(std::floor(per_layer_cap * a.total)),
                               a.prunable, a.total - 1});
        max_achievable += a.max_drop;
    }

    const long requested = static_cast<long>(std::floor(ratio * n_prunable));
    if (requested > max_achievable) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f",
                      static_cast<double>(max_achievable) / static_cast<double>(n_prunable));
        throw ConfigError("prune ratio " + std::to_string(ratio) + " infeasible: requested " +
                          std::to_string(requested) + " of " + std::to_string(n_prunable) +
                          " prunable channels but per-layer caps allow at most " +
                          std::to_string(max_achievable) + " (max feasible ratio " + buf + ")");
    }

    ChannelMask mask;
    mask.ratio = ratio;
    mask.prunable_total = n_prunable;
    for (const auto& [li, a] : agg)
        if (a.prunable > 0) mask.keep[li] = all_keep(static_cast<int>(a.total));

    std::vector<const BNScaleEntry*> order;
    order.reserve(static_cast<size_t>(n_prunable));
    for (const auto& e : view.entries)
        if (e.prunable) order.push_back(&e);
    std::sort(order.begin(), order.end(), [](const BNScaleEntry* a, const BNScaleEntry* b) {
        const double ma = std::fabs(a->gamma), mb = std::fabs(b->gamma);
        if (ma != mb) return ma < mb;
        if (a->layer != b->layer) return a->layer < b->layer;
        return a->channel < b->channel;
    });

    for (const BNScaleEntry* e : order) {
        if (mask.channels_dropped == requested) break;
        LayerAgg& a = agg[e->layer];
        if (a.dropped >= a.max_drop) continue;  // capped: promote the next-smallest
        mask.keep[e->layer][static_cast<size_t>(e->channel)] = 0;
        ++a.dropped;
        ++mask.channels_dropped;
    }
    return mask;
}

std::vector<std::vector<uint8_t>> propagate_keep(const ModelGraph& model, const ChannelMask& mask) {
    const auto& layers = model.layers;

    for (const auto& [li, kv] : mask.keep) {
        if (li < 0 || li >= static_cast<int>(layers.size()))
            throw ConfigError("surgery mask references layer index " + std::to_string(li) +
                              " beyond the model");
        const Layer& l = layers[static_cast<size_t>(li)];
        if (l.kind != LayerKind::BatchNorm)
            throw ConfigError("surgery mask entry '" + l.name + "' is not a batchnorm layer");
        if (kv.size() != l.gamma.data.size())
            throw ConfigError("surgery mask for layer '" + l.name + "' has " +
                              std::to_string(kv.size()) + " channels; the model has " +
                              std::to_string(l.gamma.data.size()));
        if (count_kept(kv) == 0)
            throw ConfigError("surgery mask would remove every channel of layer '" + l.name + "'");
    }

    // The decision attaches to the conv that owns the masked BN's channels.
    std::map<int, const std::vector<uint8_t>*> conv_decision;
    for (const auto& [li, kv] : mask.keep) {
        const int p = layers[static_cast<size_t>(li)].input;
        if (p < 0 || layers[static_cast<size_t>(p)].kind != LayerKind::Conv)
            throw ConfigError("masked batchnorm '" + layers[static_cast<size_t>(li)].name +
                              "' does not directly follow a conv");
        conv_decision[p] = &kv;
    }

    const auto shapes = model.layer_shapes(model.input_size);
    std::vector<std::vector<uint8_t>> keep(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        switch (l.kind) {
            case LayerKind::Input:
                keep[i] = all_keep(model.input_channels);
                break;
            case LayerKind::Conv: {
                const auto& in = keep[static_cast<size_t>(l.input)];
                if (l.groups > 1) {
                    if (l.groups != l.in_ch || l.out_ch != l.in_ch)
                        throw ConfigError("surgery supports plain and depthwise convs only; '" +
                                          l.name + "' has groups=" + std::to_string(l.groups));
                    keep[i] = in;  // depthwise channels follow their input
                } else {
                    auto it = conv_decision.find(static_cast<int>(i));
                    keep[i] = it != conv_decision.end() ? *it->second : all_keep(l.out_ch);
                }
                break;
            }
            case LayerKind::BatchNorm:
            case LayerKind::ReLU:
            case LayerKind::ReLU6:
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
            case LayerKind::GlobalAvgPool:
                keep[i] = keep[static_cast<size_t>(l.input)];
                break;
            case LayerKind::Add: {
                const auto& a = keep[static_cast<size_t>(l.input)];
                const auto& b = keep[static_cast<size_t>(l.input2)];
                if (a != b)
                    throw ConfigError("pruning masks disagree at add junction '" + l.name + "'");
                keep[i] = a;
                break;
            }
            case LayerKind::Flatten: {
                const auto& in = keep[static_cast<size_t>(l.input)];
                const auto& s = shapes[static_cast<size_t>(l.input)];
                const int mult = s[1] * s[2];
                keep[i].reserve(in.size() * static_cast<size_t>(mult));
                for (uint8_t k : in)
                    keep[i].insert(keep[i].end(), static_cast<size_t>(mult), k);
                break;
            }
            case LayerKind::Linear:
                keep[i] = all_keep(l.out_ch);  // classifier outputs are never pruned
                break;
        }
    }
    return keep;
}

ModelGraph apply_surgery(const ModelGraph& model, const ChannelMask& mask) {
    const auto keeps = propagate_keep(model, mask);
    ModelGraph g = model;
    for (size_t i = 0; i < g.layers.size(); ++i) {
        Layer& l = g.layers[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                const auto& in = keeps[static_cast<size_t>(l.input)];
                const auto& out = keeps[i];
                const int new_out = count_kept(out);
                if (l.groups > 1) {
                    l.weight = slice_conv_weight(l.weight, out, all_keep(1));
                    l.groups = new_out;
                    l.in_ch = new_out;
                    l.out_ch = new_out;
                } else {
                    l.weight = slice_conv_weight(l.weight, out, in);
                    l.in_ch = count_kept(in);
                    l.out_ch = new_out;
                }
                l.wgrad = Tensor(l.weight.shape);
                if (l.has_bias) {
                    l.bias = slice1(l.bias, out);
                    l.bgrad = Tensor(l.bias.shape);
                }
                break;
            }
            case LayerKind::BatchNorm: {
                const auto& out = keeps[i];
                l.gamma = slice1(l.gamma, out);
                l.beta = slice1(l.beta, out);
                l.run_mean = slice1(l.run_mean, out);
                l.run_var = slice1(l.run_var, out);
                l.ggrad = Tensor(l.gamma.shape);
                l.begrad = Tensor(l.beta.shape);
                l.in_ch = l.out_ch = count_kept(out);
                break;
            }
            case LayerKind::Linear: {
                const auto& in = keeps[static_cast<size_t>(l.input)];
                const int new_in = count_kept(in);
                if (new_in != l.in_ch) {
                    l.weight = slice_linear_cols(l.weight, in);
                    l.wgrad = Tensor(l.weight.shape);
                    l.in_ch = new_in;
                }
                break;
            }
            default:
                break;
        }
    }
    return g;
}

void zero_masked_channels(ModelGraph& model, const ChannelMask& mask) {
    const auto keeps = propagate_keep(model, mask);
    for (size_t i = 0; i < model.layers.size(); ++i) {
        Layer& l = model.layers[i];
        if (l.kind != LayerKind::BatchNorm) continue;
        for (size_t c = 0; c < keeps[i].size(); ++c) {
            if (!keeps[i][c]) {
                l.gamma.data[c] = 0.0;
                l.beta.data[c] = 0.0;
            }
        }
    }
}

PruningPlan PruningPlan::from(const ExperimentConfig& cfg) {
    PruningPlan p;
    p.strategy = cfg.framework == Framework::PostPrune ? PruneStrategy::Post : PruneStrategy::Pre;
    p.ratio = cfg.prune_ratio;
    p.sparsity_epochs = cfg.prune_sparsity_epochs > 0 ? cfg.prune_sparsity_epochs : cfg.epochs;
    p.recovery_epochs = cfg.prune_recovery_epochs > 0 ? cfg.prune_recovery_epochs : cfg.epochs;
    return p;
}

void PruningPlan::validate() const {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ConfigError("prune ratio must lie strictly between 0 and 1, got " +
                          std::to_string(ratio));
    if (sparsity_epochs <= 0 || recovery_epochs <= 0)
        throw ConfigError("pruning epoch budgets must be positive");
}

namespace {

void emit_prune_event(TrainContext& ctx, int task, const ChannelMask& mask, long params_before,
                      long flops_before, const ModelGraph& after) {
    ctx.events->emit({{"event", "prune"},
                      {"task", task},
                      {"ratio", mask.ratio},
                      {"dropped", mask.channels_dropped},
                      {"prunable", mask.prunable_total},
                      {"params_before", params_before},
                      {"params_after", after.count_params()},
                      {"flops_before", flops_before},
                      {"flops_after", after.count_flops().flops}});
}

}  // namespace

PruneRunResult pre_pruning_pipeline(ModelGraph model, TrainContext& ctx, const PruningPlan& plan) {
    plan.validate();
    if (plan.strategy != PruneStrategy::Pre)
        throw ConfigError("pre_pruning_pipeline called with a post-pruning plan");
    const ExperimentConfig& cfg = *ctx.cfg;
    PruneRunResult res;
    res.unpruned_cost = model.cost_report(model.input_size);

    MethodState st = make_method_state(cfg.method, std::move(model), ctx);
    const bool saved_sparsity = ctx.sparsity_active;

    // Task 1: alignment fine-tune under the scale penalty, then one prune.
    start_task(st, ctx, 1, "model");
    ctx.sparsity_active = true;
    finetune_examples(st, ctx, 1, "sparsity_align", plan.sparsity_epochs,
                      task_examples(*ctx.stream, 1));

    const long params_before = st.model.count_params();
    const long flops_before = st.model.count_flops().flops;
    res.mask = global_prune_mask(st.model.prunable_scales(cfg.prune_include_stem), plan.ratio,
                                 cfg.prune_per_layer_cap);
    res.mask_json = res.mask.to_json(st.model);
    st.model = apply_surgery(st.model, res.mask);
    emit_prune_event(ctx, 1, res.mask, params_before, flops_before, st.model);

    ctx.sparsity_active = cfg.prune_sparsity_in_recovery;
    finetune_examples(st, ctx, 1, "recovery", plan.recovery_epochs, task_examples(*ctx.stream, 1));
    ctx.sparsity_active = false;

    update_after_task(st, ctx, 1, st.model);
    if (ctx.checkpoint) ctx.checkpoint(st.model, 1, "model");
    record_eval_row(st.model, ctx, 1, cfg.eval_classifier, st.memory ? &*st.memory : nullptr,
                    res.matrix, "model");

    // Remaining tasks run the base method on the (now fixed) pruned graph.
    for (int t = 2; t <= ctx.stream->num_tasks(); ++t) {
        start_task(st, ctx, t, "model");
        train_task(st, ctx, t, "model");
        update_after_task(st, ctx, t, st.model);
        if (ctx.checkpoint) ctx.checkpoint(st.model, t, "model");
        record_eval_row(st.model, ctx, t, cfg.eval_classifier, st.memory ? &*st.memory : nullptr,
                        res.matrix, "model");
    }
    ctx.sparsity_active = saved_sparsity;
    res.cost = st.model.cost_report(st.model.input_size);
    return res;
}

PruneRunResult post_pruning_pipeline(ModelGraph model, TrainContext& ctx,
                                     const PruningPlan& plan) {
    plan.validate();
    if (plan.strategy != PruneStrategy::Post)
        throw ConfigError("post_pruning_pipeline called with a pre-pruning plan");
    const ExperimentConfig& cfg = *ctx.cfg;
    PruneRunResult res;
    res.unpruned_cost = model.cost_report(model.input_size);

    MethodState st = make_method_state(cfg.method, std::move(model), ctx);
    const bool saved_sparsity = ctx.sparsity_active;
    const int T = ctx.stream->num_tasks();

    for (int t = 1; t <= T; ++t) {
        ctx.sparsity_active = true;  // penalty active for all large-model training
        start_task(st, ctx, t, "model");
        train_task(st, ctx, t, "model");
        update_after_task(st, ctx, t, st.model);

        const uint64_t big_before = st.model.parameter_checksum();
        ctx.events->emit({{"event", "large_model_checksum"},
                          {"task", t},
                          {"when", "before_clone"},
                          {"checksum", to_hex(big_before)}});

        const long params_before = st.model.count_params();
        const long flops_before = st.model.count_flops().flops;
        res.mask = global_prune_mask(st.model.prunable_scales(cfg.prune_include_stem), plan.ratio,
                                     cfg.prune_per_layer_cap);
        res.mask_json = res.mask.to_json(st.model);
        MethodState clone;
        clone.method = Method::Finetune;
        clone.model = apply_surgery(st.model, res.mask);
        emit_prune_event(ctx, t, res.mask, params_before, flops_before, clone.model);

        auto items = task_examples(*ctx.stream, t);
        if (st.memory)
            for (const auto* e : st.memory->all()) items.push_back(e);
        ctx.sparsity_active = cfg.prune_sparsity_in_recovery;
        finetune_examples(clone, ctx, t, "recovery", plan.recovery_epochs, items);

        if (ctx.checkpoint) {
            ctx.checkpoint(st.model, t, "model");
            ctx.checkpoint(clone.model, t, "pruned");
        }
        record_eval_row(clone.model, ctx, t, cfg.eval_classifier,
                        st.memory ? &*st.memory : nullptr, res.matrix, "pruned");
        res.per_task.push_back(clone.model.cost_report(clone.model.input_size));
        res.cost = res.per_task.back();

        const uint64_t big_after = st.model.parameter_checksum();
        ctx.events->emit({{"event", "large_model_checksum"},
                          {"task", t},
                          {"when", "after_clone"},
                          {"checksum", to_hex(big_after)}});
        if (big_after != big_before)
            throw TrainingError("large model changed during the clone phase of task " +
                                std::to_string(t));
    }
    ctx.sparsity_active = saved_sparsity;
    return res;
}

}  // namespace cilbench
