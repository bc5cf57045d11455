#pragma once

#include <optional>
#include <string>

#include "cilbench/events.hpp"
#include "cilbench/exemplar_memory.hpp"
#include "cilbench/experiment_config.hpp"
#include "cilbench/losses.hpp"
#include "cilbench/ncm.hpp"
#include "cilbench/optimizer.hpp"
#include "cilbench/task_stream.hpp"
#include "cilbench/weights_io.hpp"

namespace cilbench {

// One continual learner: its model, the frozen previous-task snapshot
// (snapshot-regularized methods), and the replay memory (replay methods).
struct MethodState {
    Method method = Method::Finetune;
    ModelGraph model;
    std::optional<ModelGraph> prev_snapshot;
    std::optional<ExemplarMemory> memory;
};

// Everything a training phase needs besides the learner itself.
struct TrainContext {
    const ExperimentConfig* cfg = nullptr;
    TaskStream* stream = nullptr;
    EventLog* events = nullptr;
    uint64_t run_seed = 0;
    // Keeps the mu-weighted L1 term on batchnorm scales active inside every
    // training step (large-model training in the post-pruning pipeline).
    bool sparsity_active = false;
    // Invoked with each role's model at every task boundary (after training
    // and memory update) so the runner can persist checkpoints.
    std::function<void(const ModelGraph&, int task, const std::string& role)> checkpoint;
};

// Builds the learner around an initialized model; attaches an ExemplarMemory
// (budget scaled to the stream's training-set size) for replay methods.
MethodState make_method_state(Method method, ModelGraph model, const TrainContext& ctx);

// Grows the head for task t's classes and logs the boundary.
void start_task(MethodState& st, TrainContext& ctx, int task, const std::string& role);

// Trains task t with the method's own loss (plain CE at t=1 or for
// finetune). Throws TrainingError naming the step when the loss diverges.
void train_task(MethodState& st, TrainContext& ctx, int task, const std::string& role);

// Student-side distillation training for one task: CE on the full seen set
// plus the teacher-referenced KL of the configured method.
void train_student_task(MethodState& student, const ModelGraph& teacher_ref, TrainContext& ctx,
                        int task);

// Pointers to every training example of the task, in source order.
std::vector<const LabeledExample*> task_examples(TaskStream& stream, int task);

// Plain-CE fine-tune over an explicit example pool for a fixed epoch budget,
// honoring ctx.sparsity_active. Used by the pruning pipelines' alignment and
// recovery phases.
void finetune_examples(MethodState& st, TrainContext& ctx, int task, const std::string& role,
                       int epochs, const std::vector<const LabeledExample*>& items);

// Post-task bookkeeping: refresh the previous-task snapshot and fold task
// t's classes into the replay memory (selection features from
// feature_model, normally the learner's own model; the distillation
// orchestrator passes the teacher).
void update_after_task(MethodState& st, TrainContext& ctx, int task,
                       const ModelGraph& feature_model);

struct EvalResult {
    std::vector<AccuracyCell> per_task;  // index 0 = task 1
};

// Accuracy on every test split through task `through_task`, predicting over
// all seen classes with no task identity. mlp = argmax over head logits;
// ncm = nearest class mean from exemplar features (requires memory coverage
// of every seen class).
EvalResult evaluate(const ModelGraph& model, TaskStream& stream, int through_task,
                    Classifier classifier, const ExemplarMemory* memory);

// Records evaluate() results as row `after_task` of the matrix and emits one
// eval event per cell.
void record_eval_row(const ModelGraph& model, TrainContext& ctx, int after_task,
                     Classifier classifier, const ExemplarMemory* memory, AccuracyMatrix& matrix,
                     const std::string& role);

// Base-method continual learning over the full stream.
AccuracyMatrix run_cil(MethodState& st, TrainContext& ctx);

// Teacher-student pair for the distillation framework.
struct KDPairState {
    MethodState teacher;
    MethodState student;
    // Teacher parameters as of the end of task t-1; the student's reference
    // while learning task t.
    std::optional<ModelGraph> teacher_prev;
};

// Distillation-framework continual learning. Task 1 trains the teacher then
// the student; each later task trains the student against the previous-task
// teacher BEFORE the teacher learns the task (flipped by
// kd.distill_from_current_teacher). Only student accuracy enters the
// returned matrix; teacher rows go to the event log.
AccuracyMatrix kd_run_cil(KDPairState& pair, TrainContext& ctx);

// Supervised training of `model` on a plain dataset (proxy pretraining).
void pretrain_model(ModelGraph& model, const LabeledDataset& data, const ExperimentConfig& cfg,
                    EventLog& events, const std::string& role);

}  // namespace cilbench
