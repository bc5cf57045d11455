#include "cilbench/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace cilbench {

namespace {

bool uses_snapshot(Method m) { return m != Method::Finetune; }
bool uses_replay(Method m) { return m == Method::Icarl || m == Method::Ssil; }

Rng batch_rng(const TrainContext& ctx, const std::string& role, int task, int epoch) {
    return Rng(ctx.run_seed)
        .fork(fnv1a(role.data(), role.size()))
        .fork(static_cast<uint64_t>(task) * 100003u + static_cast<uint64_t>(epoch));
}

Rng head_rng(const TrainContext& ctx, const std::string& role, int task) {
    const std::string tag = role + "/head";
    return Rng(ctx.run_seed).fork(fnv1a(tag.data(), tag.size())).fork(static_cast<uint64_t>(task));
}

Batch to_batch(const std::vector<const LabeledExample*>& items) {
    Batch b;
    b.x = stack_batch(items);
    b.labels.reserve(items.size());
    for (const auto* e : items) b.labels.push_back(e->label);
    return b;
}

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    return idx;
}

struct EpochAccum {
    double value = 0.0, ce = 0.0, kl = 0.0, reg = 0.0;
    int steps = 0;
    void add(const LossTerm& t) {
        value += t.value;
        ce += t.ce;
        kl += t.kl;
        reg += t.reg;
        ++steps;
    }
};

void check_finite(const LossTerm& t, const std::string& role, int task, int epoch, int step) {
    if (!std::isfinite(t.value))
        throw TrainingError("loss diverged (non-finite) for " + role + " at task " +
                            std::to_string(task) + ", epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(step));
}

void emit_epoch(TrainContext& ctx, const std::string& role, int task, int epoch, double lr,
                const EpochAccum& a) {
    ctx.events->emit({{"event", "epoch"},
                      {"role", role},
                      {"task", task},
                      {"epoch", epoch},
                      {"lr", lr},
                      {"loss", a.value},
                      {"ce", a.ce},
                      {"kl", a.kl},
                      {"reg", a.reg},
                      {"steps", a.steps}});
}

// The post-pruning pipeline keeps the sparsity term active inside every
// training step of the large model.
void maybe_add_sparsity(LossTerm& t, MethodState& st, TrainContext& ctx) {
    if (!ctx.sparsity_active) return;
    const double pen = l1_scale_penalty(st.model, ctx.cfg->prune_mu, ctx.cfg->prune_include_stem);
    t.reg += pen;
    t.value += pen;
}

}  // namespace

MethodState make_method_state(Method method, ModelGraph model, const TrainContext& ctx) {
    MethodState st;
    st.method = method;
    st.model = std::move(model);
    if (uses_replay(method)) {
        const long budget = scale_buffer(ctx.cfg->buffer_base, ctx.cfg->buffer_base_train_count,
                                         ctx.stream->dataset().train_count());
        st.memory.emplace(budget);
    }
    return st;
}

void start_task(MethodState& st, TrainContext& ctx, int task, const std::string& role) {
    const ClassSet& classes = ctx.stream->descriptor(task).classes;
    Rng hr = head_rng(ctx, role, task);
    st.model.extend_head(classes, hr);
    ctx.events->emit({{"event", "task_start"},
                      {"role", role},
                      {"task", task},
                      {"classes", classes.ids()},
                      {"seen", st.model.num_seen()}});
}

namespace {

// Training loop over a single shuffled source of examples; `step` consumes
// one assembled batch and returns the loss term.
template <typename StepFn>
void single_source_epochs(MethodState& st, TrainContext& ctx, int task, const std::string& role,
                          int epochs, const std::vector<const LabeledExample*>& items,
                          StepFn&& step) {
    SgdOptimizer opt(st.model, SgdOptions::from(*ctx.cfg, epochs));
    const int B = ctx.cfg->batch_size;
    for (int e = 0; e < epochs; ++e) {
        Rng rng = batch_rng(ctx, role, task, e);
        const auto order = shuffled_indices(items.size(), rng);
        EpochAccum acc;
        for (size_t s = 0; s * static_cast<size_t>(B) < order.size(); ++s) {
            const size_t lo = s * static_cast<size_t>(B);
            const size_t hi = std::min(order.size(), lo + static_cast<size_t>(B));
            std::vector<const LabeledExample*> chunk;
            chunk.reserve(hi - lo);
            for (size_t i = lo; i < hi; ++i) chunk.push_back(items[order[i]]);
            st.model.zero_grads();
            LossTerm t = step(to_batch(chunk));
            maybe_add_sparsity(t, st, ctx);
            check_finite(t, role, task, e, static_cast<int>(s));
            opt.step(e);
            acc.add(t);
        }
        emit_epoch(ctx, role, task, e, opt.lr_at(e), acc);
    }
}

}  // namespace

std::vector<const LabeledExample*> task_examples(TaskStream& stream, int task) {
    std::vector<const LabeledExample*> items;
    items.reserve(stream.train_size(task));
    for (size_t i = 0; i < stream.train_size(task); ++i)
        items.push_back(&stream.train_example(task, i));
    return items;
}

void finetune_examples(MethodState& st, TrainContext& ctx, int task, const std::string& role,
                       int epochs, const std::vector<const LabeledExample*>& items) {
    ctx.stream->set_phase("train:" + role);
    single_source_epochs(st, ctx, task, role, epochs, items,
                         [&](const Batch& b) { return plain_ce_loss(st.model, b); });
}

namespace {

// Separated-softmax loop: a task batch plus a smaller replay sub-batch per
// step, both reshuffled per epoch; replay rows cycle when exhausted.
template <typename StepFn>
void dual_source_epochs(MethodState& st, TrainContext& ctx, int task, const std::string& role,
                        const std::vector<const LabeledExample*>& task_src,
                        const std::vector<const LabeledExample*>& mem_src, StepFn&& step) {
    const int epochs = ctx.cfg->epochs;
    SgdOptimizer opt(st.model, SgdOptions::from(*ctx.cfg, epochs));
    const int B = ctx.cfg->batch_size;
    const int mem_b = static_cast<int>(
        std::min<size_t>(static_cast<size_t>(B / 4), mem_src.size()));
    for (int e = 0; e < epochs; ++e) {
        Rng rng = batch_rng(ctx, role, task, e);
        const auto order = shuffled_indices(task_src.size(), rng);
        auto mem_order = shuffled_indices(mem_src.size(), rng);
        size_t mem_cursor = 0;
        EpochAccum acc;
        for (size_t s = 0; s * static_cast<size_t>(B) < order.size(); ++s) {
            const size_t lo = s * static_cast<size_t>(B);
            const size_t hi = std::min(order.size(), lo + static_cast<size_t>(B));
            std::vector<const LabeledExample*> chunk;
            for (size_t i = lo; i < hi; ++i) chunk.push_back(task_src[order[i]]);
            std::vector<const LabeledExample*> mem_chunk;
            for (int i = 0; i < mem_b; ++i) {
                if (mem_cursor == mem_order.size()) {
                    rng.shuffle(mem_order);
                    mem_cursor = 0;
                }
                mem_chunk.push_back(mem_src[mem_order[mem_cursor++]]);
            }
            st.model.zero_grads();
            Batch mb;
            if (!mem_chunk.empty()) mb = to_batch(mem_chunk);
            LossTerm t = step(to_batch(chunk), mb);
            maybe_add_sparsity(t, st, ctx);
            check_finite(t, role, task, e, static_cast<int>(s));
            opt.step(e);
            acc.add(t);
        }
        emit_epoch(ctx, role, task, e, opt.lr_at(e), acc);
    }
}

}  // namespace

void train_task(MethodState& st, TrainContext& ctx, int task, const std::string& role) {
    const ExperimentConfig& cfg = *ctx.cfg;
    ctx.stream->set_phase("train:" + role);
    const auto items = task_examples(*ctx.stream, task);
    const bool first = (task == 1);
    const double tau = cfg.kd_temperature;
    const double lambda = cfg.lwf_lambda;

    switch (st.method) {
        case Method::Finetune:
            single_source_epochs(st, ctx, task, role, cfg.epochs, items,
                                 [&](const Batch& b) { return plain_ce_loss(st.model, b); });
            break;
        case Method::Lwf: {
            if (first) {
                single_source_epochs(st, ctx, task, role, cfg.epochs, items,
                                     [&](const Batch& b) { return plain_ce_loss(st.model, b); });
            } else {
                const ClassSet prev = ctx.stream->classes_through(task - 1);
                single_source_epochs(st, ctx, task, role, cfg.epochs, items, [&](const Batch& b) {
                    return lwf_loss(st.model, *st.prev_snapshot, b, prev, tau, lambda);
                });
            }
            break;
        }
        case Method::Icarl: {
            if (first || st.memory->total_stored() == 0) {
                single_source_epochs(st, ctx, task, role, cfg.epochs, items,
                                     [&](const Batch& b) { return plain_ce_loss(st.model, b); });
            } else {
                // Replay rows join the task rows in one uniformly shuffled pool.
                auto mixed = items;
                for (const auto* e : st.memory->all()) mixed.push_back(e);
                const ClassSet prev = ctx.stream->classes_through(task - 1);
                single_source_epochs(st, ctx, task, role, cfg.epochs, mixed, [&](const Batch& b) {
                    return icarl_loss(st.model, *st.prev_snapshot, b, prev, tau, lambda);
                });
            }
            break;
        }
        case Method::Ssil: {
            if (first || st.memory->total_stored() == 0) {
                single_source_epochs(st, ctx, task, role, cfg.epochs, items,
                                     [&](const Batch& b) { return plain_ce_loss(st.model, b); });
            } else {
                const ClassSet cur = ctx.stream->descriptor(task).classes;
                const ClassSet prev = ctx.stream->classes_through(task - 1);
                dual_source_epochs(st, ctx, task, role, items, st.memory->all(),
                                   [&](const Batch& tb, const Batch& mb) {
                                       return ssil_loss(st.model, *st.prev_snapshot, tb, mb, cur,
                                                        prev, tau, lambda);
                                   });
            }
            break;
        }
    }
    ctx.events->emit({{"event", "task_end"},
                      {"role", role},
                      {"task", task},
                      {"checksum", to_hex(st.model.parameter_checksum())}});
}

void train_student_task(MethodState& student, const ModelGraph& teacher_ref, TrainContext& ctx,
                        int task) {
    const ExperimentConfig& cfg = *ctx.cfg;
    const std::string role = "student";
    ctx.stream->set_phase("train:student");
    const auto items = task_examples(*ctx.stream, task);
    const double tau = cfg.kd_temperature;

    const uint64_t before = teacher_ref.parameter_checksum();
    ctx.events->emit({{"event", "teacher_checksum"},
                      {"task", task},
                      {"when", "before_student"},
                      {"checksum", to_hex(before)}});

    if (task == 1) {
        single_source_epochs(student, ctx, task, role, cfg.epochs, items, [&](const Batch& b) {
            return student_init_loss(student.model, teacher_ref, b, tau, cfg.kd_lambda_init);
        });
    } else {
        const ClassSet prev = ctx.stream->classes_through(task - 1);
        const double ls = cfg.kd_lambda_sub;
        switch (student.method) {
            case Method::Finetune:
            case Method::Lwf:
                single_source_epochs(student, ctx, task, role, cfg.epochs, items,
                                     [&](const Batch& b) {
                                         return student_sub_loss(student.model, teacher_ref, b,
                                                                 prev, tau, ls);
                                     });
                break;
            case Method::Icarl: {
                auto mixed = items;
                if (student.memory)
                    for (const auto* e : student.memory->all()) mixed.push_back(e);
                single_source_epochs(student, ctx, task, role, cfg.epochs, mixed,
                                     [&](const Batch& b) {
                                         return icarl_kd_loss(student.model, teacher_ref, b, prev,
                                                              tau, ls);
                                     });
                break;
            }
            case Method::Ssil: {
                const ClassSet cur = ctx.stream->descriptor(task).classes;
                std::vector<const LabeledExample*> mem;
                if (student.memory) mem = student.memory->all();
                dual_source_epochs(student, ctx, task, role, items, mem,
                                   [&](const Batch& tb, const Batch& mb) {
                                       return ssil_kd_loss(student.model, teacher_ref, tb, mb, cur,
                                                           prev, tau, ls);
                                   });
                break;
            }
        }
    }

    const uint64_t after = teacher_ref.parameter_checksum();
    ctx.events->emit({{"event", "teacher_checksum"},
                      {"task", task},
                      {"when", "after_student"},
                      {"checksum", to_hex(after)}});
    if (after != before)
        throw TrainingError("teacher parameters changed during student training at task " +
                            std::to_string(task));
    ctx.events->emit({{"event", "task_end"},
                      {"role", role},
                      {"task", task},
                      {"checksum", to_hex(student.model.parameter_checksum())}});
}

void update_after_task(MethodState& st, TrainContext& ctx, int task,
                       const ModelGraph& feature_model) {
    if (uses_snapshot(st.method)) st.prev_snapshot = st.model;
    if (!st.memory) return;

    ctx.stream->set_phase("memory_update");
    TaskStream& stream = *ctx.stream;
    const ClassSet& classes = stream.descriptor(task).classes;

    std::map<int, ExemplarMemory::ClassCandidates> cands;
    for (int cls : classes.ids()) {
        ExemplarMemory::ClassCandidates cc;
        std::vector<const LabeledExample*> ptrs;
        for (size_t i = 0; i < stream.train_size(task); ++i) {
            const LabeledExample& ex = stream.train_example(task, i);
            if (ex.label == cls) {
                cc.examples.push_back(ex);
                ptrs.push_back(&ex);
            }
        }
        if (ptrs.empty()) continue;
        ForwardResult r = feature_model.forward_eval(stack_batch(ptrs));
        const int F = r.features.shape[1];
        for (int i = 0; i < r.features.shape[0]; ++i) {
            std::vector<double> f(r.features.data.begin() + static_cast<long>(i) * F,
                                  r.features.data.begin() + static_cast<long>(i + 1) * F);
            double sq = 0.0;
            for (double v : f) sq += v * v;
            if (sq > 0.0) {
                const double inv = 1.0 / std::sqrt(sq);
                for (double& v : f) v *= inv;
            }
            cc.features.push_back(std::move(f));
        }
        cands.emplace(cls, std::move(cc));
    }
    const int total_seen = static_cast<int>(stream.classes_through(task).size());
    st.memory->update(cands, total_seen);
    ctx.events->emit({{"event", "memory_update"},
                      {"task", task},
                      {"stored", st.memory->total_stored()},
                      {"classes", st.memory->num_classes()},
                      {"budget", st.memory->budget()}});
}

EvalResult evaluate(const ModelGraph& model, TaskStream& stream, int through_task,
                    Classifier classifier, const ExemplarMemory* memory) {
    if (through_task < 1 || through_task > stream.num_tasks())
        throw IndexError("evaluate: task " + std::to_string(through_task) + " out of range");
    stream.set_phase("evaluate");

    ClassMeans means;
    if (classifier == Classifier::Ncm) {
        if (!memory) throw MissingDataError("ncm evaluation requires an exemplar memory");
        for (int cls : model.seen_classes)
            if (!memory->has_class(cls))
                throw MissingDataError("ncm evaluation: class " + std::to_string(cls) +
                                       " has no stored exemplars");
        means = compute_class_means(model, *memory);
    }

    EvalResult res;
    constexpr size_t kEvalBatch = 64;
    for (int t = 1; t <= through_task; ++t) {
        long correct = 0;
        const size_t n = stream.test_size(t);
        for (size_t lo = 0; lo < n; lo += kEvalBatch) {
            const size_t hi = std::min(n, lo + kEvalBatch);
            std::vector<const LabeledExample*> items;
            std::vector<int> labels;
            for (size_t i = lo; i < hi; ++i) {
                const LabeledExample& ex = stream.test_example(t, i);
                items.push_back(&ex);
                labels.push_back(ex.label);
            }
            ForwardResult out = model.forward_eval(stack_batch(items));
            const int rows = out.logits.shape[0];
            if (classifier == Classifier::Mlp) {
                const int w = out.logits.shape[1];
                for (int i = 0; i < rows; ++i) {
                    const double* row = out.logits.ptr() + static_cast<size_t>(i) * w;
                    int best = 0;
                    for (int j = 1; j < w; ++j)
                        if (row[j] > row[best]) best = j;
                    if (model.seen_classes[static_cast<size_t>(best)] ==
                        labels[static_cast<size_t>(i)])
                        ++correct;
                }
            } else {
                const int F = out.features.shape[1];
                for (int i = 0; i < rows; ++i) {
                    std::vector<double> f(
                        out.features.data.begin() + static_cast<long>(i) * F,
                        out.features.data.begin() + static_cast<long>(i + 1) * F);
                    if (ncm_predict(f, means) == labels[static_cast<size_t>(i)]) ++correct;
                }
            }
        }
        res.per_task.push_back({correct, static_cast<long>(n)});
    }
    return res;
}

void record_eval_row(const ModelGraph& model, TrainContext& ctx, int after_task,
                     Classifier classifier, const ExemplarMemory* memory, AccuracyMatrix& matrix,
                     const std::string& role) {
    EvalResult r = evaluate(model, *ctx.stream, after_task, classifier, memory);
    for (int t = 1; t <= after_task; ++t) {
        const AccuracyCell& c = r.per_task[static_cast<size_t>(t - 1)];
        matrix.record(after_task, t, c.correct, c.total);
        ctx.events->emit({{"event", "eval"},
                          {"role", role},
                          {"after_task", after_task},
                          {"on_task", t},
                          {"classifier", classifier == Classifier::Mlp ? "mlp" : "ncm"},
                          {"correct", c.correct},
                          {"total", c.total}});
    }
}

AccuracyMatrix run_cil(MethodState& st, TrainContext& ctx) {
    AccuracyMatrix matrix;
    const int T = ctx.stream->num_tasks();
    for (int t = 1; t <= T; ++t) {
        start_task(st, ctx, t, "model");
        train_task(st, ctx, t, "model");
        update_after_task(st, ctx, t, st.model);
        if (ctx.checkpoint) ctx.checkpoint(st.model, t, "model");
        record_eval_row(st.model, ctx, t, ctx.cfg->eval_classifier,
                        st.memory ? &*st.memory : nullptr, matrix, "model");
    }
    return matrix;
}

AccuracyMatrix kd_run_cil(KDPairState& pair, TrainContext& ctx) {
    AccuracyMatrix matrix;
    AccuracyMatrix teacher_diag;
    const int T = ctx.stream->num_tasks();
    const bool current_teacher = ctx.cfg->distill_from_current_teacher;

    for (int t = 1; t <= T; ++t) {
        start_task(pair.teacher, ctx, t, "teacher");
        start_task(pair.student, ctx, t, "student");

        if (t == 1) {
            // First task: the teacher learns, then the student distills from it.
            train_task(pair.teacher, ctx, t, "teacher");
            train_student_task(pair.student, pair.teacher.model, ctx, t);
        } else if (current_teacher) {
            train_task(pair.teacher, ctx, t, "teacher");
            train_student_task(pair.student, pair.teacher.model, ctx, t);
        } else {
            // Student first, against the teacher as of the end of task t-1.
            train_student_task(pair.student, *pair.teacher_prev, ctx, t);
            train_task(pair.teacher, ctx, t, "teacher");
        }

        // Shared memory: one buffer, selection features from the teacher.
        update_after_task(pair.teacher, ctx, t, pair.teacher.model);
        if (pair.teacher.memory) pair.student.memory = pair.teacher.memory;
        pair.teacher_prev = pair.teacher.model;
        if (ctx.checkpoint) {
            ctx.checkpoint(pair.teacher.model, t, "teacher");
            ctx.checkpoint(pair.student.model, t, "student");
        }

        record_eval_row(pair.student.model, ctx, t, ctx.cfg->eval_classifier,
                        pair.student.memory ? &*pair.student.memory : nullptr, matrix, "student");
        record_eval_row(pair.teacher.model, ctx, t, Classifier::Mlp,
                        pair.teacher.memory ? &*pair.teacher.memory : nullptr, teacher_diag,
                        "teacher");
    }
    return matrix;
}

void pretrain_model(ModelGraph& model, const LabeledDataset& data, const ExperimentConfig& cfg,
                    EventLog& events, const std::string& role) {
    if (data.train.empty()) throw DataError("pretraining dataset has no training examples");
    Rng hr = Rng(cfg.seed).fork(fnv1a(role.data(), role.size())).fork(0x9e37u);
    model.extend_head(ClassSet(data.class_ids()), hr);

    SgdOptions opts = SgdOptions::from(cfg, cfg.pretrain_epochs);
    SgdOptimizer opt(model, opts);
    const int B = cfg.batch_size;
    for (int e = 0; e < cfg.pretrain_epochs; ++e) {
        Rng rng = Rng(cfg.seed).fork(fnv1a(role.data(), role.size())).fork(1000u + static_cast<uint64_t>(e));
        std::vector<size_t> order(data.train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        EpochAccum acc;
        for (size_t s = 0; s * static_cast<size_t>(B) < order.size(); ++s) {
            const size_t lo = s * static_cast<size_t>(B);
            const size_t hi = std::min(order.size(), lo + static_cast<size_t>(B));
            std::vector<const LabeledExample*> chunk;
            for (size_t i = lo; i < hi; ++i) chunk.push_back(&data.train[order[i]]);
            model.zero_grads();
            LossTerm t = plain_ce_loss(model, to_batch(chunk));
            if (!std::isfinite(t.value))
                throw TrainingError("pretraining loss diverged for " + role + " at epoch " +
                                    std::to_string(e) + ", step " + std::to_string(s));
            opt.step(e);
            acc.add(t);
        }
        events.emit({{"event", "pretrain_epoch"},
                     {"role", role},
                     {"epoch", e},
                     {"lr", opt.lr_at(e)},
                     {"loss", acc.value},
                     {"steps", acc.steps}});
    }
}

}  // namespace cilbench
