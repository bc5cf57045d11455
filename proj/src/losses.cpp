#include "cilbench/losses.hpp"

#include <cmath>

namespace cilbench {

namespace {

void check_tau(double tau) {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
}

void check_subset(const std::vector<int>& slots, int width, const char* what) {
    if (slots.empty()) throw ConfigError(std::string(what) + ": class subset is empty");
    for (int s : slots)
        if (s < 0 || s >= width)
            throw IndexError(std::string(what) + ": slot " + std::to_string(s) +
                             " outside logit width " + std::to_string(width));
}

// log-probabilities of the subset-restricted tempered softmax for one row.
void log_probs_row(const double* row, const std::vector<int>& slots, double tau,
                   std::vector<double>& lp) {
    lp.resize(slots.size());
    double m = row[slots[0]] / tau;
    for (size_t j = 1; j < slots.size(); ++j) m = std::max(m, row[slots[j]] / tau);
    double sum = 0.0;
    for (size_t j = 0; j < slots.size(); ++j) {
        lp[j] = row[slots[j]] / tau - m;
        sum += std::exp(lp[j]);
    }
    const double lse = std::log(sum);
    for (double& v : lp) v -= lse;
}

double ce_row(const double* row, const std::vector<int>& slots, int tpos, double* drow,
              std::vector<double>& lp) {
    log_probs_row(row, slots, 1.0, lp);
    if (drow)
        for (size_t j = 0; j < slots.size(); ++j)
            drow[slots[j]] += std::exp(lp[j]) - (static_cast<int>(j) == tpos ? 1.0 : 0.0);
    return -lp[static_cast<size_t>(tpos)];
}

double kl_row(const double* trow, const double* srow, const std::vector<int>& tslots,
              const std::vector<int>& sslots, double tau, double* dsrow, std::vector<double>& lpt,
              std::vector<double>& lps) {
    log_probs_row(trow, tslots, tau, lpt);
    log_probs_row(srow, sslots, tau, lps);
    double v = 0.0;
    for (size_t j = 0; j < tslots.size(); ++j) {
        const double pt = std::exp(lpt[j]);
        v += pt * (lpt[j] - lps[j]);
        if (dsrow) dsrow[sslots[j]] += (std::exp(lps[j]) - pt) / tau;
    }
    return v;
}

int rows_of(const Tensor& logits) {
    if (logits.shape.size() != 2) throw ShapeError("logits must be 2-d, got " + logits.shape_str());
    return logits.shape[0];
}

}  // namespace

SoftTarget softmax_temperature(const std::vector<double>& logits, const std::vector<int>& subset,
                               double tau) {
    check_tau(tau);
    check_subset(subset, static_cast<int>(logits.size()), "softmax_temperature");
    SoftTarget t;
    t.tau = tau;
    std::vector<double> lp;
    log_probs_row(logits.data(), subset, tau, lp);
    t.probs.resize(lp.size());
    for (size_t i = 0; i < lp.size(); ++i) t.probs[i] = std::exp(lp[i]);
    return t;
}

double kd_kl(const Tensor& teacher_logits, const Tensor& student_logits,
             const std::vector<int>& teacher_slots, const std::vector<int>& student_slots,
             double tau, Tensor* dstudent) {
    check_tau(tau);
    if (teacher_slots.size() != student_slots.size())
        throw ConfigError("kd_kl: slot lists must align class-by-class");
    const int n = rows_of(student_logits);
    if (rows_of(teacher_logits) != n)
        throw ShapeError("kd_kl: teacher and student batches differ");
    check_subset(teacher_slots, teacher_logits.shape[1], "kd_kl(teacher)");
    check_subset(student_slots, student_logits.shape[1], "kd_kl(student)");
    if (dstudent && dstudent->shape != student_logits.shape)
        throw ShapeError("kd_kl: gradient tensor shape mismatch");

    const int wt = teacher_logits.shape[1], ws = student_logits.shape[1];
    double v = 0.0;
    std::vector<double> lpt, lps;
    for (int i = 0; i < n; ++i) {
        v += kl_row(teacher_logits.ptr() + static_cast<size_t>(i) * wt,
                    student_logits.ptr() + static_cast<size_t>(i) * ws, teacher_slots,
                    student_slots, tau, dstudent ? dstudent->ptr() + static_cast<size_t>(i) * ws : nullptr,
                    lpt, lps);
    }
    return v;
}

double cls_loss(const Tensor& logits, const std::vector<int>& slots,
                const std::vector<int>& target_pos, Tensor* dlogits) {
    const int n = rows_of(logits);
    check_subset(slots, logits.shape[1], "cls_loss");
    if (static_cast<int>(target_pos.size()) != n)
        throw ShapeError("cls_loss: one target per row required");
    for (int t : target_pos)
        if (t < 0 || t >= static_cast<int>(slots.size()))
            throw DataError("cls_loss: label outside the class subset");
    if (dlogits && dlogits->shape != logits.shape)
        throw ShapeError("cls_loss: gradient tensor shape mismatch");

    const int w = logits.shape[1];
    double v = 0.0;
    std::vector<double> lp;
    for (int i = 0; i < n; ++i)
        v += ce_row(logits.ptr() + static_cast<size_t>(i) * w, slots,
                    target_pos[static_cast<size_t>(i)],
                    dlogits ? dlogits->ptr() + static_cast<size_t>(i) * w : nullptr, lp);
    return v;
}

std::vector<int> slots_of(const ModelGraph& m, const ClassSet& classes) {
    std::vector<int> slots;
    slots.reserve(classes.size());
    for (int c : classes.ids()) {
        const int s = m.slot_of(c);
        if (s < 0)
            throw ConfigError("model has not seen class " + std::to_string(c));
        slots.push_back(s);
    }
    return slots;
}

namespace {

std::vector<int> full_slots(const ModelGraph& m) {
    std::vector<int> s(static_cast<size_t>(m.num_seen()));
    for (int i = 0; i < m.num_seen(); ++i) s[static_cast<size_t>(i)] = i;
    return s;
}

std::vector<int> label_slots(const ModelGraph& m, const std::vector<int>& labels) {
    std::vector<int> pos(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        const int s = m.slot_of(labels[i]);
        if (s < 0)
            throw DataError("label " + std::to_string(labels[i]) + " not seen by the model");
        pos[i] = s;
    }
    return pos;
}

void check_batch(const Batch& b) {
    if (b.x.shape.size() != 4) throw ShapeError("batch inputs must be NCHW");
    if (static_cast<size_t>(b.x.shape[0]) != b.labels.size())
        throw ShapeError("batch has " + std::to_string(b.x.shape[0]) + " inputs but " +
                         std::to_string(b.labels.size()) + " labels");
    if (b.labels.empty()) throw DataError("empty batch");
}

// CE over the full seen set plus lambda * KL(ref ‖ trainee) restricted to
// kd_classes — the shared shape of the snapshot, replay, and teacher-driven
// composites.
LossTerm ce_plus_restricted_kl(ModelGraph& trainee, const ModelGraph& ref, const Batch& b,
                               const ClassSet& kd_classes, double tau, double lambda, bool train) {
    check_batch(b);
    check_tau(tau);
    if (lambda < 0.0) throw ConfigError("distillation weight must be nonnegative");

    Trace tr;
    ForwardResult out = trainee.forward(b.x, train, tr);
    Tensor dlogits(out.logits.shape);

    LossTerm t;
    t.ce = cls_loss(out.logits, full_slots(trainee), label_slots(trainee, b.labels), &dlogits);
    if (lambda > 0.0) {
        ForwardResult ref_out = ref.forward_eval(b.x);
        Tensor dkl(out.logits.shape);
        t.kl = kd_kl(ref_out.logits, out.logits, slots_of(ref, kd_classes),
                     slots_of(trainee, kd_classes), tau, &dkl);
        for (size_t i = 0; i < dlogits.numel(); ++i) dlogits[i] += lambda * dkl[i];
    }
    t.value = t.ce + lambda * t.kl;
    trainee.backward(tr, dlogits);
    return t;
}

}  // namespace

LossTerm plain_ce_loss(ModelGraph& model, const Batch& b, bool train) {
    check_batch(b);
    Trace tr;
    ForwardResult out = model.forward(b.x, train, tr);
    Tensor dlogits(out.logits.shape);
    LossTerm t;
    t.ce = cls_loss(out.logits, full_slots(model), label_slots(model, b.labels), &dlogits);
    t.value = t.ce;
    model.backward(tr, dlogits);
    return t;
}

LossTerm student_init_loss(ModelGraph& student, const ModelGraph& teacher, const Batch& b,
                           double tau, double lambda_init, bool train) {
    return ce_plus_restricted_kl(student, teacher, b, student.seen_class_set(), tau, lambda_init,
                                 train);
}

LossTerm student_sub_loss(ModelGraph& student, const ModelGraph& teacher_prev, const Batch& b,
                          const ClassSet& prev_classes, double tau, double lambda_s, bool train) {
    if (prev_classes.size() == 0)
        throw ConfigError("student_sub_loss requires a nonempty previous-class set");
    return ce_plus_restricted_kl(student, teacher_prev, b, prev_classes, tau, lambda_s, train);
}

LossTerm lwf_loss(ModelGraph& model, const ModelGraph& prev_snapshot, const Batch& b,
                  const ClassSet& prev_classes, double tau, double lambda, bool train) {
    if (prev_classes.size() == 0)
        throw ConfigError("lwf_loss requires a nonempty previous-class set");
    return ce_plus_restricted_kl(model, prev_snapshot, b, prev_classes, tau, lambda, train);
}

LossTerm icarl_loss(ModelGraph& model, const ModelGraph& prev_snapshot, const Batch& b,
                    const ClassSet& prev_classes, double tau, double lambda, bool train) {
    return lwf_loss(model, prev_snapshot, b, prev_classes, tau, lambda, train);
}

LossTerm icarl_kd_loss(ModelGraph& student, const ModelGraph& teacher_prev, const Batch& b,
                       const ClassSet& prev_classes, double tau, double lambda, bool train) {
    return lwf_loss(student, teacher_prev, b, prev_classes, tau, lambda, train);
}

namespace {

LossTerm ssil_core(ModelGraph& model, const ModelGraph& ref, const Batch& task_batch,
                   const Batch& memory_batch, const ClassSet& current_classes,
                   const ClassSet& prev_classes, double tau, double lambda, bool train) {
    check_batch(task_batch);
    check_tau(tau);
    const bool have_mem = !memory_batch.labels.empty();

    // Validate the partition before any compute.
    for (int y : task_batch.labels)
        if (!current_classes.contains(y))
            throw DataError("task batch label " + std::to_string(y) +
                            " outside the current-task classes");
    for (int y : memory_batch.labels)
        if (!prev_classes.contains(y))
            throw DataError("memory batch label " + std::to_string(y) +
                            " outside the previous-task classes");

    // One forward over the concatenation: task rows first, memory rows after.
    std::vector<int> labels = task_batch.labels;
    Tensor x;
    if (have_mem) {
        check_batch(memory_batch);
        const auto& s = task_batch.x.shape;
        if (memory_batch.x.shape[1] != s[1] || memory_batch.x.shape[2] != s[2] ||
            memory_batch.x.shape[3] != s[3])
            throw ShapeError("task and memory batches disagree on input shape");
        x.resize({s[0] + memory_batch.x.shape[0], s[1], s[2], s[3]});
        std::copy(task_batch.x.data.begin(), task_batch.x.data.end(), x.data.begin());
        std::copy(memory_batch.x.data.begin(), memory_batch.x.data.end(),
                  x.data.begin() + static_cast<long>(task_batch.x.numel()));
        labels.insert(labels.end(), memory_batch.labels.begin(), memory_batch.labels.end());
    } else {
        x = task_batch.x;
    }
    const int n_task = task_batch.x.shape[0];
    const int n_all = x.shape[0];

    Trace tr;
    ForwardResult out = model.forward(x, train, tr);
    const int w = out.logits.shape[1];
    Tensor dlogits(out.logits.shape);

    const std::vector<int> cur_slots = slots_of(model, current_classes);
    const std::vector<int> prev_slots = slots_of(model, prev_classes);

    LossTerm t;
    std::vector<double> lp, lp2;
    // Separated CE: current classes for task rows, previous classes for
    // memory rows; each renormalizes over its own subset only.
    const auto& cur_ids = current_classes.ids();
    for (int i = 0; i < n_task; ++i) {
        int tpos = -1;
        for (size_t j = 0; j < cur_ids.size(); ++j)
            if (cur_ids[j] == labels[static_cast<size_t>(i)]) tpos = static_cast<int>(j);
        t.ce += ce_row(out.logits.ptr() + static_cast<size_t>(i) * w, cur_slots, tpos,
                       dlogits.ptr() + static_cast<size_t>(i) * w, lp);
    }
    const auto& prev_ids = prev_classes.ids();
    for (int i = n_task; i < n_all; ++i) {
        int tpos = -1;
        for (size_t j = 0; j < prev_ids.size(); ++j)
            if (prev_ids[j] == labels[static_cast<size_t>(i)]) tpos = static_cast<int>(j);
        t.ce += ce_row(out.logits.ptr() + static_cast<size_t>(i) * w, prev_slots, tpos,
                       dlogits.ptr() + static_cast<size_t>(i) * w, lp);
    }
    if (lambda > 0.0 && prev_classes.size() > 0) {
        ForwardResult ref_out = ref.forward_eval(x);
        const std::vector<int> ref_prev = slots_of(ref, prev_classes);
        const int wr = ref_out.logits.shape[1];
        Tensor dkl(out.logits.shape);
        for (int i = 0; i < n_all; ++i)
            t.kl += kl_row(ref_out.logits.ptr() + static_cast<size_t>(i) * wr,
                           out.logits.ptr() + static_cast<size_t>(i) * w, ref_prev, prev_slots,
                           tau, dkl.ptr() + static_cast<size_t>(i) * w, lp, lp2);
        for (size_t i = 0; i < dlogits.numel(); ++i) dlogits[i] += lambda * dkl[i];
    }
    t.value = t.ce + lambda * t.kl;
    model.backward(tr, dlogits);
    return t;
}

}  // namespace

LossTerm ssil_loss(ModelGraph& model, const ModelGraph& prev_snapshot, const Batch& task_batch,
                   const Batch& memory_batch, const ClassSet& current_classes,
                   const ClassSet& prev_classes, double tau, double lambda, bool train) {
    return ssil_core(model, prev_snapshot, task_batch, memory_batch, current_classes,
                     prev_classes, tau, lambda, train);
}

LossTerm ssil_kd_loss(ModelGraph& student, const ModelGraph& teacher_prev, const Batch& task_batch,
                      const Batch& memory_batch, const ClassSet& current_classes,
                      const ClassSet& prev_classes, double tau, double lambda, bool train) {
    return ssil_core(student, teacher_prev, task_batch, memory_batch, current_classes,
                     prev_classes, tau, lambda, train);
}

double l1_scale_penalty(ModelGraph& model, double mu, bool include_stem) {
    if (mu < 0.0) throw ConfigError("sparsity weight must be nonnegative");
    if (mu == 0.0) return 0.0;
    double reg = 0.0;
    BNScaleView view = model.prunable_scales(include_stem);
    for (const auto& e : view.entries) {
        if (!e.prunable) continue;
        reg += mu * std::abs(e.gamma);
        Layer& l = model.layers[static_cast<size_t>(e.layer)];
        if (e.gamma > 0.0)
            l.ggrad[static_cast<size_t>(e.channel)] += mu;
        else if (e.gamma < 0.0)
            l.ggrad[static_cast<size_t>(e.channel)] -= mu;
        // exactly-zero scales stay untouched: subgradient 0
    }
    return reg;
}

LossTerm prune_regularized_loss(ModelGraph& model, const Batch& b, double mu, bool include_stem,
                                bool train) {
    LossTerm t = plain_ce_loss(model, b, train);
    t.reg = l1_scale_penalty(model, mu, include_stem);
    t.value += t.reg;
    return t;
}

}  // namespace cilbench
