#include "cilbench/run_store.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "cilbench/weights_io.hpp"

namespace cilbench {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << content;
}

std::string width_tag(double w) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%g", w);
    std::string s = buf;
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

std::shared_ptr<const LabeledDataset> build_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset_kind == "array") {
        if (cfg.dataset_path.empty())
            throw ConfigError("data.kind = array requires data.path");
        return std::make_shared<LabeledDataset>(
            load_array_dataset(cfg.dataset_path, cfg.norm_mean, cfg.norm_std));
    }
    return std::make_shared<LabeledDataset>(make_synthetic_dataset(
        cfg.dataset_classes, cfg.dataset_image_size, cfg.dataset_train_per_class,
        cfg.dataset_test_per_class, cfg.dataset_seed, cfg.norm_mean, cfg.norm_std));
}

uint64_t model_seed(const ExperimentConfig& cfg, const std::string& role) {
    return splitmix64(cfg.seed ^ fnv1a(role.data(), role.size()));
}

// Pretraining is keyed by (arch, width, dataset identity), not the run seed,
// so one proxy-pretrained backbone is shared across seeds and cacheable.
uint64_t pretrain_seed(const ExperimentConfig& cfg, const std::string& arch, double width) {
    return splitmix64(cfg.dataset_seed ^ fnv1a(arch.data(), arch.size()) ^
                      static_cast<uint64_t>(std::llround(width * 1000.0)));
}

std::string pretrain_cache_path(const ExperimentConfig& cfg, const std::string& arch,
                                double width) {
    if (cfg.pretrain_cache.empty()) return {};
    char holdout[24];
    std::snprintf(holdout, sizeof holdout, "%g", cfg.pretrain_holdout);
    return cfg.pretrain_cache + arch + "_w" + width_tag(width) + "_" + cfg.dataset_name + "_h" +
           holdout + "_e" + std::to_string(cfg.pretrain_epochs) + "_s" +
           std::to_string(cfg.dataset_seed) + ".weights";
}

struct ModelFactory {
    const ExperimentConfig& cfg;
    const LabeledDataset* pretrain_data;  // null when no holdout split exists
    EventLog& ev;
    fs::path run_dir;

    ModelGraph build(const std::string& role, const std::string& arch, double width,
                     bool pretrained) {
        ModelGraph m = make_model(arch, cfg.dataset_image_size, width, 0, model_seed(cfg, role));
        if (!pretrained) return m;
        if (!pretrain_data || pretrain_data->train.empty())
            throw ConfigError("pretrained initialization requested but the pretraining split is "
                              "empty (check pretrain.holdout_fraction)");

        // The backbone always round-trips through a container so a cached and
        // a freshly trained initialization are bit-identical (float32).
        std::string path = pretrain_cache_path(cfg, arch, width);
        if (path.empty())
            path = (run_dir / artifact::kCheckpoints /
                    ("pretrain_" + arch + "_w" + width_tag(width) + ".weights"))
                       .string();
        if (!fs::exists(path)) {
            ModelGraph pm =
                make_model(arch, cfg.dataset_image_size, width, 0, pretrain_seed(cfg, arch, width));
            pretrain_model(pm, *pretrain_data, cfg, ev, role + "_pretrain");
            fs::create_directories(fs::path(path).parent_path());
            save_weights(pm, path);
        } else {
            ev.emit({{"event", "pretrain_cache_hit"}, {"role", role}, {"path", path}});
        }
        load_pretrained(m, path);
        return m;
    }
};

}  // namespace

std::string default_run_name(const ExperimentConfig& cfg) {
    return std::string(method_name(cfg.method)) + "-" + framework_name(cfg.framework) + "-s" +
           std::to_string(cfg.seed);
}

RunRecord run_experiment(const ExperimentConfig& cfg, const std::string& out_root) {
    RunRecord rec;
    rec.seed = cfg.seed;

    const std::string name = cfg.run_name.empty() ? default_run_name(cfg) : cfg.run_name;
    const fs::path dir = fs::path(out_root) / name;
    fs::create_directories(dir / artifact::kCheckpoints);
    rec.dir = dir.string();

    write_file(dir / artifact::kConfig, serialize_config(cfg));

    std::ofstream events_file(dir / artifact::kEvents, std::ios::binary | std::ios::trunc);
    EventLog ev;
    ev.set_sink([&events_file](const std::string& line) {
        events_file << line << '\n';
        events_file.flush();
    });

    const auto t0 = std::chrono::steady_clock::now();
    try {
        cfg.validate();

        auto full = build_dataset(cfg);
        LabeledDataset pretrain_data;
        std::shared_ptr<const LabeledDataset> cil = full;
        if (cfg.pretrain_holdout > 0.0) {
            PretrainSplit split = make_pretrain_split(*full, cfg.pretrain_holdout, cfg.dataset_seed);
            pretrain_data = std::move(split.pretrain);
            cil = std::make_shared<LabeledDataset>(full->restrict_to(split.cil_classes));
        }

        TaskStream stream = split_classes(cil, cfg.num_tasks, cfg.seed);
        ev.emit({{"event", "run_start"},
                 {"method", method_name(cfg.method)},
                 {"framework", framework_name(cfg.framework)},
                 {"dataset", cfg.dataset_name},
                 {"seed", cfg.seed},
                 {"stream", nlohmann::json::parse(stream.summary_json())}});

        TrainContext ctx{&cfg, &stream, &ev, cfg.seed, false, {}};
        ctx.checkpoint = [&dir](const ModelGraph& m, int task, const std::string& role) {
            save_weights(m, (dir / artifact::kCheckpoints /
                             ("task_" + std::to_string(task) + "." + role + ".weights"))
                                .string());
        };

        ModelFactory factory{cfg, cfg.pretrain_holdout > 0.0 ? &pretrain_data : nullptr, ev, dir};

        AccuracyMatrix matrix;
        nlohmann::json cost;
        switch (cfg.framework) {
            case Framework::None: {
                MethodState st = make_method_state(
                    cfg.method,
                    factory.build("model", cfg.student_arch, cfg.student_width,
                                  cfg.student_pretrained),
                    ctx);
                matrix = run_cil(st, ctx);
                cost["deployed"] = nlohmann::json::parse(
                    st.model.cost_report(st.model.input_size).to_json());
                break;
            }
            case Framework::Kd: {
                KDPairState pair;
                pair.teacher = make_method_state(
                    cfg.method,
                    factory.build("teacher", cfg.teacher_arch, cfg.teacher_width,
                                  cfg.teacher_pretrained),
                    ctx);
                pair.student = make_method_state(
                    cfg.method,
                    factory.build("student", cfg.student_arch, cfg.student_width,
                                  cfg.student_pretrained),
                    ctx);
                matrix = kd_run_cil(pair, ctx);
                cost["deployed"] = nlohmann::json::parse(
                    pair.student.model.cost_report(pair.student.model.input_size).to_json());
                cost["teacher"] = nlohmann::json::parse(
                    pair.teacher.model.cost_report(pair.teacher.model.input_size).to_json());
                break;
            }
            case Framework::PrePrune:
            case Framework::PostPrune: {
                PruningPlan plan = PruningPlan::from(cfg);
                ModelGraph model = factory.build("model", cfg.student_arch, cfg.student_width,
                                                 cfg.student_pretrained);
                PruneRunResult r = cfg.framework == Framework::PrePrune
                                       ? pre_pruning_pipeline(std::move(model), ctx, plan)
                                       : post_pruning_pipeline(std::move(model), ctx, plan);
                matrix = std::move(r.matrix);
                cost["deployed"] = nlohmann::json::parse(r.cost.to_json());
                cost["unpruned"] = nlohmann::json::parse(r.unpruned_cost.to_json());
                cost["mask"] = r.mask_json;
                if (!r.per_task.empty()) {
                    cost["per_task"] = nlohmann::json::array();
                    for (const auto& c : r.per_task)
                        cost["per_task"].push_back(nlohmann::json::parse(c.to_json()));
                }
                break;
            }
        }

        write_file(dir / artifact::kMatrix, matrix.to_csv());
        write_file(dir / artifact::kCost, cost.dump(2) + "\n");

        rec.status = "completed";
        rec.acc = matrix.compute_acc();
        if (cfg.num_tasks >= 2) {
            rec.bwt = matrix.compute_bwt();
            rec.has_bwt = true;
        }
    } catch (const std::exception& e) {
        rec.status = "failed";
        rec.error = e.what();
    }
    rec.duration_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json record{{"status", rec.status}, {"seed", rec.seed},
                          {"duration_sec", rec.duration_sec}};
    if (rec.status == "completed") {
        record["acc"] = rec.acc;
        if (rec.has_bwt) record["bwt"] = rec.bwt;
    } else {
        record["error"] = rec.error;
    }
    write_file(dir / artifact::kRecord, record.dump(2) + "\n");
    return rec;
}

RunRecord run_experiment_file(const std::string& config_path, const std::string& out_root) {
    return run_experiment(load_config_file(config_path), out_root);
}

}  // namespace cilbench
