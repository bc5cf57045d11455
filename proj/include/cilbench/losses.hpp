#pragma once

#include <vector>

#include "cilbench/dataset.hpp"
#include "cilbench/metrics.hpp"
#include "cilbench/model_graph.hpp"

namespace cilbench {

// Scalar objective value with its additive pieces, for logging. Parameter
// gradients are accumulated into the trainee model's grad buffers; reference
// models (teacher, previous-task snapshot) are never differentiated.
struct LossTerm {
    double value = 0.0;
    double ce = 0.0;
    double kl = 0.0;
    double reg = 0.0;
};

// Temperature-scaled probabilities over a class subset, renormalized over
// the subset only. Max-subtracted for stability.
struct SoftTarget {
    std::vector<double> probs;
    double tau = 1.0;
};

SoftTarget softmax_temperature(const std::vector<double>& logits, const std::vector<int>& subset,
                               double tau);

// Summed KL(teacher ‖ student) at temperature tau over aligned slot subsets
// (position i of both lists refers to the same class). Adds
// (p_student − p_teacher)/tau into *dstudent at student slots; logits
// outside the subset receive exactly zero gradient. No tau^2 rescaling.
double kd_kl(const Tensor& teacher_logits, const Tensor& student_logits,
             const std::vector<int>& teacher_slots, const std::vector<int>& student_slots,
             double tau, Tensor* dstudent);

// Summed cross-entropy of the subset-restricted softmax. target_pos[i] is
// the position of example i's class within `slots`. Adds into *dlogits.
double cls_loss(const Tensor& logits, const std::vector<int>& slots,
                const std::vector<int>& target_pos, Tensor* dlogits);

// A training batch: stacked inputs plus global class labels.
struct Batch {
    Tensor x;
    std::vector<int> labels;
};

// Head-slot positions of the given classes; throws ConfigError when a class
// has not been seen by the model.
std::vector<int> slots_of(const ModelGraph& m, const ClassSet& classes);

// --- Composite objectives -------------------------------------------------
// Each performs one traced forward of the trainee (train-mode batch
// statistics unless train=false), eval-mode forwards of any reference model,
// and one backward accumulating gradients in the trainee. Batch reduction is
// summation.

// Plain cross-entropy over the trainee's full seen set.
LossTerm plain_ce_loss(ModelGraph& model, const Batch& b, bool train = true);

// First-task distillation: CE + lambda_init * KL(teacher ‖ student) over the
// full (shared) class set.
LossTerm student_init_loss(ModelGraph& student, const ModelGraph& teacher, const Batch& b,
                           double tau, double lambda_init, bool train = true);

// Subsequent-task distillation: CE over all seen classes + lambda_s * KL
// restricted to prev_classes, reference = teacher state after task t-1.
LossTerm student_sub_loss(ModelGraph& student, const ModelGraph& teacher_prev, const Batch& b,
                          const ClassSet& prev_classes, double tau, double lambda_s,
                          bool train = true);

// CE over all seen classes + lambda * KL(prev_snapshot ‖ model) over
// prev_classes. Shared by the snapshot method on new-task data and, with a
// replay-augmented batch, by the exemplar method.
LossTerm lwf_loss(ModelGraph& model, const ModelGraph& prev_snapshot, const Batch& b,
                  const ClassSet& prev_classes, double tau, double lambda, bool train = true);
LossTerm icarl_loss(ModelGraph& model, const ModelGraph& prev_snapshot, const Batch& b,
                    const ClassSet& prev_classes, double tau, double lambda, bool train = true);
LossTerm icarl_kd_loss(ModelGraph& student, const ModelGraph& teacher_prev, const Batch& b,
                       const ClassSet& prev_classes, double tau, double lambda, bool train = true);

// Separated softmax: CE restricted to current_classes on the task rows, CE
// restricted to prev_classes on the memory rows, and lambda * KL over
// prev_classes on all rows. The two sub-batches run as one forward pass.
// memory_batch may be empty.
LossTerm ssil_loss(ModelGraph& model, const ModelGraph& prev_snapshot, const Batch& task_batch,
                   const Batch& memory_batch, const ClassSet& current_classes,
                   const ClassSet& prev_classes, double tau, double lambda, bool train = true);
LossTerm ssil_kd_loss(ModelGraph& student, const ModelGraph& teacher_prev, const Batch& task_batch,
                      const Batch& memory_batch, const ClassSet& current_classes,
                      const ClassSet& prev_classes, double tau, double lambda, bool train = true);

// mu * sum of |gamma| over prunable scales, with mu * sign(gamma) added to
// the gamma gradients. The subgradient at exactly zero is zero, keeping
// pruned scales pruned. Returns the penalty value.
double l1_scale_penalty(ModelGraph& model, double mu, bool include_stem = false);

// CE over the full seen set + l1_scale_penalty.
LossTerm prune_regularized_loss(ModelGraph& model, const Batch& b, double mu,
                                bool include_stem = false, bool train = true);

}  // namespace cilbench
