#pragma once

#include <string>

namespace cilbench {

enum class Method { Finetune, Lwf, Icarl, Ssil };
enum class Framework { None, Kd, PrePrune, PostPrune };
enum class Classifier { Mlp, Ncm };
enum class LrSchedule { Constant, Cosine, Step };

const char* method_name(Method m);
const char* framework_name(Framework f);
Method parse_method(const std::string& s);
Framework parse_framework(const std::string& s);

// Full run configuration. Defaults follow the reference setup: temperature 2,
// lambda_init 1, lambda_sub 10, mu 0.1, batch size 128, buffer base 2000,
// 10 tasks; everything is overridable from a config file for small-scale runs.
struct ExperimentConfig {
    std::string run_name;
    Method method = Method::Finetune;
    Framework framework = Framework::None;
    int num_tasks = 8;
    uint64_t seed = 1;

    // knowledge-distillation framework
    double kd_temperature = 2.0;
    double kd_lambda_init = 1.0;
    double kd_lambda_sub = 10.0;
    bool distill_from_current_teacher = false;

    // base-method regularization
    double lwf_lambda = 1.0;

    // initialization
    bool teacher_pretrained = true;
    bool student_pretrained = true;

    // pruning
    double prune_mu = 0.1;
    double prune_ratio = 0.4;
    double prune_per_layer_cap = 0.9;
    bool prune_include_stem = false;
    int prune_sparsity_epochs = -1;  // -1: use optimizer epochs
    int prune_recovery_epochs = -1;
    bool prune_sparsity_in_recovery = false;

    // replay memory
    long buffer_base = 2000;
    long buffer_base_train_count = 50000;

    // optimizer
    double lr = 0.002;
    double momentum = 0.9;
    int epochs = 20;
    int batch_size = 128;
    LrSchedule schedule = LrSchedule::Cosine;
    int step_size = 10;      // step schedule: epochs per decay
    double step_gamma = 0.1;
    double cosine_floor = 0.05;  // final lr as a fraction of the initial lr

    // dataset
    std::string dataset_name = "synthetic20";
    std::string dataset_kind = "synthetic";  // synthetic | array
    std::string dataset_path;
    int dataset_classes = 20;
    int dataset_image_size = 16;
    int dataset_train_per_class = 120;
    int dataset_test_per_class = 40;
    uint64_t dataset_seed = 7;
    double norm_mean = 0.5;
    double norm_std = 0.5;

    // proxy pretraining (classes held out of the CIL universe)
    double pretrain_holdout = 0.2;
    int pretrain_epochs = 12;
    std::string pretrain_cache;  // optional weights cache path prefix

    // architectures
    std::string student_arch = "toycnn";
    double student_width = 1.0;
    std::string teacher_arch = "toycnn";
    double teacher_width = 2.0;

    // evaluation
    Classifier eval_classifier = Classifier::Mlp;

    // Throws ConfigError when any invariant is violated.
    void validate() const;
};

}  // namespace cilbench
