#include "cilbench/config_file.hpp"

#include <cctype>
#include <stdexcept>

#include "cilbench/common.hpp"
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cilbench {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& raw, const char* want) {
    throw ConfigError("config key '" + key + "': cannot parse '" + raw + "' as " + want);
}

double as_double(const std::string& key, const std::string& raw) {
    try {
        size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) bad_value(key, raw, "a number");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(key, raw, "a number");
    }
}

long as_long(const std::string& key, const std::string& raw) {
    try {
        size_t used = 0;
        const long v = std::stol(raw, &used);
        if (used != raw.size()) bad_value(key, raw, "an integer");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(key, raw, "an integer");
    }
}

int as_int(const std::string& key, const std::string& raw) {
    return static_cast<int>(as_long(key, raw));
}

uint64_t as_u64(const std::string& key, const std::string& raw) {
    try {
        size_t used = 0;
        const unsigned long long v = std::stoull(raw, &used);
        if (used != raw.size()) bad_value(key, raw, "an unsigned integer");
        return static_cast<uint64_t>(v);
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(key, raw, "an unsigned integer");
    }
}

bool as_bool(const std::string& key, const std::string& raw) {
    if (raw == "true") return true;
    if (raw == "false") return false;
    bad_value(key, raw, "a boolean (true|false)");
}

LrSchedule as_schedule(const std::string& key, const std::string& raw) {
    if (raw == "constant") return LrSchedule::Constant;
    if (raw == "cosine") return LrSchedule::Cosine;
    if (raw == "step") return LrSchedule::Step;
    bad_value(key, raw, "a schedule (constant|cosine|step)");
}

Classifier as_classifier(const std::string& key, const std::string& raw) {
    if (raw == "mlp") return Classifier::Mlp;
    if (raw == "ncm") return Classifier::Ncm;
    bad_value(key, raw, "a classifier (mlp|ncm)");
}

const char* schedule_name(LrSchedule s) {
    switch (s) {
        case LrSchedule::Constant: return "constant";
        case LrSchedule::Cosine: return "cosine";
        case LrSchedule::Step: return "step";
    }
    return "?";
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct KeySpec {
    const char* name;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeySpec>& schema() {
    using C = ExperimentConfig;
    static const std::vector<KeySpec> keys = {
        {"run.name", [](C& c, const std::string& v) { c.run_name = v; },
         [](const C& c) { return c.run_name; }},
        {"method", [](C& c, const std::string& v) { c.method = parse_method(v); },
         [](const C& c) { return std::string(method_name(c.method)); }},
        {"framework", [](C& c, const std::string& v) { c.framework = parse_framework(v); },
         [](const C& c) { return std::string(framework_name(c.framework)); }},
        {"tasks", [](C& c, const std::string& v) { c.num_tasks = as_int("tasks", v); },
         [](const C& c) { return std::to_string(c.num_tasks); }},
        {"seed", [](C& c, const std::string& v) { c.seed = as_u64("seed", v); },
         [](const C& c) { return std::to_string(c.seed); }},

        {"kd.temperature",
         [](C& c, const std::string& v) { c.kd_temperature = as_double("kd.temperature", v); },
         [](const C& c) { return fmt_double(c.kd_temperature); }},
        {"kd.lambda_init",
         [](C& c, const std::string& v) { c.kd_lambda_init = as_double("kd.lambda_init", v); },
         [](const C& c) { return fmt_double(c.kd_lambda_init); }},
        {"kd.lambda_sub",
         [](C& c, const std::string& v) { c.kd_lambda_sub = as_double("kd.lambda_sub", v); },
         [](const C& c) { return fmt_double(c.kd_lambda_sub); }},
        {"kd.from_current_teacher",
         [](C& c, const std::string& v) {
             c.distill_from_current_teacher = as_bool("kd.from_current_teacher", v);
         },
         [](const C& c) { return std::string(c.distill_from_current_teacher ? "true" : "false"); }},

        {"lwf.lambda", [](C& c, const std::string& v) { c.lwf_lambda = as_double("lwf.lambda", v); },
         [](const C& c) { return fmt_double(c.lwf_lambda); }},

        {"prune.mu", [](C& c, const std::string& v) { c.prune_mu = as_double("prune.mu", v); },
         [](const C& c) { return fmt_double(c.prune_mu); }},
        {"prune.ratio",
         [](C& c, const std::string& v) { c.prune_ratio = as_double("prune.ratio", v); },
         [](const C& c) { return fmt_double(c.prune_ratio); }},
        {"prune.per_layer_cap",
         [](C& c, const std::string& v) {
             c.prune_per_layer_cap = as_double("prune.per_layer_cap", v);
         },
         [](const C& c) { return fmt_double(c.prune_per_layer_cap); }},
        {"prune.include_stem",
         [](C& c, const std::string& v) { c.prune_include_stem = as_bool("prune.include_stem", v); },
         [](const C& c) { return std::string(c.prune_include_stem ? "true" : "false"); }},
        {"prune.sparsity_epochs",
         [](C& c, const std::string& v) {
             c.prune_sparsity_epochs = as_int("prune.sparsity_epochs", v);
         },
         [](const C& c) { return std::to_string(c.prune_sparsity_epochs); }},
        {"prune.recovery_epochs",
         [](C& c, const std::string& v) {
             c.prune_recovery_epochs = as_int("prune.recovery_epochs", v);
         },
         [](const C& c) { return std::to_string(c.prune_recovery_epochs); }},
        {"prune.sparsity_in_recovery",
         [](C& c, const std::string& v) {
             c.prune_sparsity_in_recovery = as_bool("prune.sparsity_in_recovery", v);
         },
         [](const C& c) { return std::string(c.prune_sparsity_in_recovery ? "true" : "false"); }},

        {"memory.buffer_base",
         [](C& c, const std::string& v) { c.buffer_base = as_long("memory.buffer_base", v); },
         [](const C& c) { return std::to_string(c.buffer_base); }},
        {"memory.base_train_count",
         [](C& c, const std::string& v) {
             c.buffer_base_train_count = as_long("memory.base_train_count", v);
         },
         [](const C& c) { return std::to_string(c.buffer_base_train_count); }},

        {"optim.lr", [](C& c, const std::string& v) { c.lr = as_double("optim.lr", v); },
         [](const C& c) { return fmt_double(c.lr); }},
        {"optim.momentum",
         [](C& c, const std::string& v) { c.momentum = as_double("optim.momentum", v); },
         [](const C& c) { return fmt_double(c.momentum); }},
        {"optim.epochs", [](C& c, const std::string& v) { c.epochs = as_int("optim.epochs", v); },
         [](const C& c) { return std::to_string(c.epochs); }},
        {"optim.batch_size",
         [](C& c, const std::string& v) { c.batch_size = as_int("optim.batch_size", v); },
         [](const C& c) { return std::to_string(c.batch_size); }},
        {"optim.schedule",
         [](C& c, const std::string& v) { c.schedule = as_schedule("optim.schedule", v); },
         [](const C& c) { return std::string(schedule_name(c.schedule)); }},
        {"optim.step_size",
         [](C& c, const std::string& v) { c.step_size = as_int("optim.step_size", v); },
         [](const C& c) { return std::to_string(c.step_size); }},
        {"optim.step_gamma",
         [](C& c, const std::string& v) { c.step_gamma = as_double("optim.step_gamma", v); },
         [](const C& c) { return fmt_double(c.step_gamma); }},
        {"optim.cosine_floor",
         [](C& c, const std::string& v) { c.cosine_floor = as_double("optim.cosine_floor", v); },
         [](const C& c) { return fmt_double(c.cosine_floor); }},

        {"data.name", [](C& c, const std::string& v) { c.dataset_name = v; },
         [](const C& c) { return c.dataset_name; }},
        {"data.kind", [](C& c, const std::string& v) {
             if (v != "synthetic" && v != "array")
                 bad_value("data.kind", v, "a dataset kind (synthetic|array)");
             c.dataset_kind = v;
         },
         [](const C& c) { return c.dataset_kind; }},
        {"data.path", [](C& c, const std::string& v) { c.dataset_path = v; },
         [](const C& c) { return c.dataset_path; }},
        {"data.classes",
         [](C& c, const std::string& v) { c.dataset_classes = as_int("data.classes", v); },
         [](const C& c) { return std::to_string(c.dataset_classes); }},
        {"data.image_size",
         [](C& c, const std::string& v) { c.dataset_image_size = as_int("data.image_size", v); },
         [](const C& c) { return std::to_string(c.dataset_image_size); }},
        {"data.train_per_class",
         [](C& c, const std::string& v) {
             c.dataset_train_per_class = as_int("data.train_per_class", v);
         },
         [](const C& c) { return std::to_string(c.dataset_train_per_class); }},
        {"data.test_per_class",
         [](C& c, const std::string& v) {
             c.dataset_test_per_class = as_int("data.test_per_class", v);
         },
         [](const C& c) { return std::to_string(c.dataset_test_per_class); }},
        {"data.seed", [](C& c, const std::string& v) { c.dataset_seed = as_u64("data.seed", v); },
         [](const C& c) { return std::to_string(c.dataset_seed); }},
        {"data.norm_mean",
         [](C& c, const std::string& v) { c.norm_mean = as_double("data.norm_mean", v); },
         [](const C& c) { return fmt_double(c.norm_mean); }},
        {"data.norm_std",
         [](C& c, const std::string& v) { c.norm_std = as_double("data.norm_std", v); },
         [](const C& c) { return fmt_double(c.norm_std); }},

        {"pretrain.holdout_fraction",
         [](C& c, const std::string& v) {
             c.pretrain_holdout = as_double("pretrain.holdout_fraction", v);
         },
         [](const C& c) { return fmt_double(c.pretrain_holdout); }},
        {"pretrain.epochs",
         [](C& c, const std::string& v) { c.pretrain_epochs = as_int("pretrain.epochs", v); },
         [](const C& c) { return std::to_string(c.pretrain_epochs); }},
        {"pretrain.cache", [](C& c, const std::string& v) { c.pretrain_cache = v; },
         [](const C& c) { return c.pretrain_cache; }},

        {"model.student_arch", [](C& c, const std::string& v) { c.student_arch = v; },
         [](const C& c) { return c.student_arch; }},
        {"model.student_width",
         [](C& c, const std::string& v) { c.student_width = as_double("model.student_width", v); },
         [](const C& c) { return fmt_double(c.student_width); }},
        {"model.teacher_arch", [](C& c, const std::string& v) { c.teacher_arch = v; },
         [](const C& c) { return c.teacher_arch; }},
        {"model.teacher_width",
         [](C& c, const std::string& v) { c.teacher_width = as_double("model.teacher_width", v); },
         [](const C& c) { return fmt_double(c.teacher_width); }},
        {"model.student_pretrained",
         [](C& c, const std::string& v) {
             c.student_pretrained = as_bool("model.student_pretrained", v);
         },
         [](const C& c) { return std::string(c.student_pretrained ? "true" : "false"); }},
        {"model.teacher_pretrained",
         [](C& c, const std::string& v) {
             c.teacher_pretrained = as_bool("model.teacher_pretrained", v);
         },
         [](const C& c) { return std::string(c.teacher_pretrained ? "true" : "false"); }},

        {"eval.classifier",
         [](C& c, const std::string& v) { c.eval_classifier = as_classifier("eval.classifier", v); },
         [](const C& c) {
             return std::string(c.eval_classifier == Classifier::Mlp ? "mlp" : "ncm");
         }},
    };
    return keys;
}

const KeySpec* find_key(const std::string& name) {
    for (const auto& k : schema())
        if (name == k.name) return &k;
    return nullptr;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::map<std::string, int> seen;  // key -> first line
    std::vector<std::string> unknown;
    std::vector<std::string> duplicate;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;

        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");

        const KeySpec* spec = find_key(key);
        if (!spec) {
            unknown.push_back(key);
            continue;
        }
        if (!seen.emplace(key, lineno).second) {
            duplicate.push_back(key);
            continue;
        }
        spec->set(cfg, value);
    }

    if (!unknown.empty()) {
        std::string msg = "unknown config key(s):";
        for (const auto& k : unknown) msg += " " + k;
        throw ConfigError(msg);
    }
    if (!duplicate.empty()) {
        std::string msg = "duplicate config key(s):";
        for (const auto& k : duplicate) msg += " " + k;
        throw ConfigError(msg);
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : schema()) {
        out += k.name;
        out += " = ";
        out += k.get(cfg);
        out += '\n';
    }
    return out;
}

std::vector<std::string> config_key_names() {
    std::vector<std::string> names;
    for (const auto& k : schema()) names.emplace_back(k.name);
    return names;
}

}  // namespace cilbench
