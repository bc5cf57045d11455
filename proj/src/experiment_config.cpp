#include "cilbench/experiment_config.hpp"

#include "cilbench/common.hpp"

namespace cilbench {

const char* method_name(Method m) {
    switch (m) {
        case Method::Finetune: return "finetune";
        case Method::Lwf: return "lwf";
        case Method::Icarl: return "icarl";
        case Method::Ssil: return "ssil";
    }
    return "?";
}

const char* framework_name(Framework f) {
    switch (f) {
        case Framework::None: return "none";
        case Framework::Kd: return "kd";
        case Framework::PrePrune: return "pre-prune";
        case Framework::PostPrune: return "post-prune";
    }
    return "?";
}

Method parse_method(const std::string& s) {
    if (s == "finetune") return Method::Finetune;
    if (s == "lwf") return Method::Lwf;
    if (s == "icarl") return Method::Icarl;
    if (s == "ssil") return Method::Ssil;
    throw ConfigError("unknown method '" + s + "'");
}

Framework parse_framework(const std::string& s) {
    if (s == "none") return Framework::None;
    if (s == "kd") return Framework::Kd;
    if (s == "pre-prune") return Framework::PrePrune;
    if (s == "post-prune") return Framework::PostPrune;
    throw ConfigError("unknown framework '" + s + "'");
}

void ExperimentConfig::validate() const {
    if (kd_temperature <= 0.0) throw ConfigError("kd.temperature must be > 0");
    if (kd_lambda_init < 0.0 || kd_lambda_sub < 0.0 || lwf_lambda < 0.0 || prune_mu < 0.0) {
        throw ConfigError("loss weights must be >= 0");
    }
    if (prune_ratio <= 0.0 || prune_ratio >= 1.0) throw ConfigError("prune.ratio must lie in (0,1)");
    if (prune_per_layer_cap <= 0.0 || prune_per_layer_cap > 1.0) {
        throw ConfigError("prune.per_layer_cap must lie in (0,1]");
    }
    if (num_tasks < 1) throw ConfigError("num_tasks must be >= 1");
    if (buffer_base < 1 || buffer_base_train_count < 1) throw ConfigError("buffer sizes must be positive");
    if (lr <= 0.0) throw ConfigError("optim.lr must be > 0");
    if (epochs < 1 || batch_size < 1) throw ConfigError("optim.epochs and optim.batch_size must be >= 1");
    if (pretrain_holdout < 0.0 || pretrain_holdout >= 1.0) {
        throw ConfigError("pretrain.holdout_fraction must lie in [0,1)");
    }
    const bool wants_pretrain =
        student_pretrained || (framework == Framework::Kd && teacher_pretrained);
    if (wants_pretrain && pretrain_holdout == 0.0) {
        throw ConfigError(
            "pretrained initialization requires pretrain.holdout_fraction > 0 "
            "(set model.student_pretrained / model.teacher_pretrained to false otherwise)");
    }
    if (framework == Framework::Kd && method == Method::Finetune) {
        throw ConfigError("framework=kd requires a base method with a forgetting regularizer (lwf/icarl/ssil)");
    }
    if (eval_classifier == Classifier::Ncm && method != Method::Icarl && method != Method::Ssil) {
        throw ConfigError("eval.classifier=ncm requires a replay-based method");
    }
}

}  // namespace cilbench
