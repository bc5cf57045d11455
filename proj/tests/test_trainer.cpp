#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <memory>
#include <limits>
#include <optional>
#include <vector>

#include "cilbench/common.hpp"
#include "cilbench/dataset.hpp"
#include "cilbench/exemplar_memory.hpp"
#include "cilbench/experiment_config.hpp"
#include "cilbench/losses.hpp"
#include "cilbench/task_stream.hpp"
#include "cilbench/trainer.hpp"
#include "test_support.hpp"

using namespace cilbench;
using nlohmann::json;

namespace {

// Desk-scale setup: 6 classes, 8x8 images, 3 tasks of 2 classes each.
ExperimentConfig small_cfg(Method m) {
    ExperimentConfig cfg;
    cfg.method = m;
    cfg.num_tasks = 3;
    cfg.dataset_classes = 6;
    cfg.dataset_image_size = 8;
    cfg.dataset_train_per_class = 24;
    cfg.dataset_test_per_class = 10;
    cfg.dataset_seed = 7;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.lr = 0.01;
    cfg.student_width = 0.5;
    cfg.teacher_width = 1.0;
    cfg.buffer_base = 120;
    cfg.buffer_base_train_count = 144;  // equals the training-set size
    cfg.pretrain_holdout = 0.0;
    cfg.teacher_pretrained = false;
    cfg.student_pretrained = false;
    return cfg;
}

struct Bench {
    ExperimentConfig cfg;
    std::shared_ptr<const LabeledDataset> data;
    TaskStream stream;
    EventLog events;
    TrainContext ctx;

    explicit Bench(const ExperimentConfig& c)
        : cfg(c),
          data(std::make_shared<LabeledDataset>(make_synthetic_dataset(
              c.dataset_classes, c.dataset_image_size, c.dataset_train_per_class,
              c.dataset_test_per_class, c.dataset_seed, c.norm_mean, c.norm_std))),
          stream(split_classes(data, c.num_tasks, c.seed)) {
        ctx.cfg = &cfg;
        ctx.stream = &stream;
        ctx.events = &events;
        ctx.run_seed = c.seed;
    }

    MethodState student_state(uint64_t model_seed = 21) {
        return make_method_state(cfg.method,
                                 make_model(cfg.student_arch, cfg.dataset_image_size,
                                            cfg.student_width, 0, model_seed),
                                 ctx);
    }
    MethodState teacher_state(uint64_t model_seed = 22) {
        return make_method_state(cfg.method,
                                 make_model(cfg.teacher_arch, cfg.dataset_image_size,
                                            cfg.teacher_width, 0, model_seed),
                                 ctx);
    }
};

std::vector<json> parsed_events(const EventLog& log) {
    std::vector<json> out;
    for (const auto& line : log.lines()) out.push_back(json::parse(line));
    return out;
}

}  // namespace

TEST_CASE("a full continual run is deterministic") {
    auto once = [] {
        Bench b(small_cfg(Method::Finetune));
        b.cfg.epochs = 2;
        MethodState st = b.student_state();
        AccuracyMatrix m = run_cil(st, b.ctx);
        return std::tuple<std::string, std::string, uint64_t>(
            m.to_csv(), b.events.text(), st.model.parameter_checksum());
    };
    const auto a = once();
    const auto b = once();
    CHECK(std::get<0>(a) == std::get<0>(b));
    CHECK(std::get<1>(a) == std::get<1>(b));
    CHECK(std::get<2>(a) == std::get<2>(b));
    CHECK(!std::get<0>(a).empty());
}

TEST_CASE("plain finetuning forgets; replay retains; the snapshot term preserves responses") {
    struct RunOut {
        AccuracyMatrix m;
        std::map<int, ModelGraph> snaps;
        std::optional<MethodState> st;
    };
    auto run = [](Method method, uint64_t seed) {
        ExperimentConfig cfg = small_cfg(method);
        cfg.seed = seed;
        cfg.lwf_lambda = 2.0;
        Bench b(cfg);
        RunOut out;
        b.ctx.checkpoint = [&](const ModelGraph& m, int task, const std::string&) {
            out.snaps.emplace(task, m);
        };
        out.st = b.student_state();
        out.m = run_cil(*out.st, b.ctx);
        return out;
    };
    // Mean divergence over task-1 classes between the after-task-1 and
    // after-task-2 models, probed on task-2 training inputs: the quantity the
    // snapshot-regularized objective explicitly minimizes during task 2.
    auto drift = [](const RunOut& r, uint64_t seed) {
        ExperimentConfig cfg = small_cfg(Method::Finetune);
        cfg.seed = seed;
        Bench b(cfg);
        const ModelGraph& ref = r.snaps.at(1);
        const ModelGraph& cur = r.snaps.at(2);
        const ClassSet& t1 = b.stream.descriptor(1).classes;
        std::vector<const LabeledExample*> items;
        for (size_t i = 0; i < b.stream.train_size(2); ++i)
            items.push_back(&b.stream.train_example(2, i));
        const Tensor x = stack_batch(items);
        const ForwardResult a = ref.forward_eval(x);
        const ForwardResult c = cur.forward_eval(x);
        return kd_kl(a.logits, c.logits, slots_of(ref, t1), slots_of(cur, t1), 2.0, nullptr) /
               static_cast<double>(items.size());
    };

    const RunOut ft = run(Method::Finetune, 1);
    REQUIRE(ft.m.max_task() == 3);
    CAPTURE(ft.m.to_csv());

    // Unprotected sequential training: task 1 is learned, then wiped out.
    CHECK(ft.m.value(1, 1) >= 0.9);
    CHECK(ft.m.taskwise_forgetting(1) <= -0.8);
    CHECK(ft.m.compute_acc() <= 0.45);
    CHECK(!ft.st->memory.has_value());
    CHECK(!ft.st->prev_snapshot.has_value());
    CHECK(ft.st->model.num_seen() == 6);

    // Replay anchors old classes with real exemplars in every batch.
    const RunOut ic = run(Method::Icarl, 1);
    CAPTURE(ic.m.to_csv());
    CHECK(ic.m.taskwise_forgetting(1) >= -0.1);
    CHECK(ic.m.compute_acc() >= 0.9);
    CHECK(ic.m.compute_acc() >= ft.m.compute_acc() + 0.3);
    CHECK(ic.st->memory.has_value());

    // The snapshot term cannot stop cross-subset rank collapse on two-class
    // toy tasks, but it must hold the old-class response distribution on
    // new-task inputs far closer to the frozen snapshot than plain
    // finetuning does.
    for (uint64_t seed : {1ull, 4ull, 5ull}) {
        const RunOut f = seed == 1 ? run(Method::Finetune, 1) : run(Method::Finetune, seed);
        const RunOut l = run(Method::Lwf, seed);
        REQUIRE(l.m.max_task() == 3);
        CHECK(l.st->prev_snapshot.has_value());
        const double fd = drift(f, seed);
        const double ld = drift(l, seed);
        CAPTURE(seed);
        CAPTURE(fd);
        CAPTURE(ld);
        CHECK(ld < 0.7 * fd);
    }
}

TEST_CASE("replay method fills its memory and supports class-mean evaluation") {
    ExperimentConfig cfg = small_cfg(Method::Icarl);
    cfg.eval_classifier = Classifier::Ncm;
    Bench b(cfg);
    MethodState st = b.student_state();
    AccuracyMatrix m = run_cil(st, b.ctx);

    REQUIRE(m.max_task() == 3);
    REQUIRE(st.memory.has_value());
    CHECK(st.memory->budget() == 120);  // scaled: 120 * 144 / 144

    // Quota after six seen classes: floor(120 / 6) = 20 per class.
    long total = 0;
    const ClassSet seen = b.stream.classes_through(3);
    for (int cls : seen.ids()) {
        REQUIRE(st.memory->has_class(cls));
        CHECK(st.memory->exemplars(cls).size() <= 20);
        total += static_cast<long>(st.memory->exemplars(cls).size());
    }
    CHECK(total == st.memory->total_stored());
    CHECK(total <= st.memory->budget());

    // Far above the 1/6 chance level on the final row.
    CAPTURE(m.to_csv());
    CHECK(m.compute_acc() > 0.4);
    CHECK(m.value(1, 1) >= 0.7);
}

TEST_CASE("separated-softmax method completes the stream above chance") {
    ExperimentConfig cfg = small_cfg(Method::Ssil);
    cfg.epochs = 4;
    Bench b(cfg);
    MethodState st = b.student_state();
    AccuracyMatrix m = run_cil(st, b.ctx);
    REQUIRE(m.max_task() == 3);
    CAPTURE(m.to_csv());
    CHECK(m.compute_acc() > 1.0 / 6.0);
    CHECK(st.memory.has_value());
}

TEST_CASE("distillation run: student trains before the teacher moves, teacher stays constant") {
    ExperimentConfig cfg = small_cfg(Method::Icarl);
    cfg.framework = Framework::Kd;
    cfg.epochs = 4;
    cfg.kd_lambda_init = 1.0;
    cfg.kd_lambda_sub = 2.0;
    Bench b(cfg);

    KDPairState pair;
    pair.teacher = b.teacher_state(31);
    pair.student = b.student_state(32);
    AccuracyMatrix m = kd_run_cil(pair, b.ctx);
    REQUIRE(m.max_task() == 3);

    const auto evs = parsed_events(b.events);

    // Per-task first-epoch positions per role.
    auto first_epoch = [&](const std::string& role, int task) {
        for (size_t i = 0; i < evs.size(); ++i)
            if (evs[i]["event"] == "epoch" && evs[i]["role"] == role && evs[i]["task"] == task)
                return static_cast<long>(i);
        return -1L;
    };
    // Task 1: the teacher learns first, then the student distills from it.
    REQUIRE(first_epoch("teacher", 1) >= 0);
    REQUIRE(first_epoch("student", 1) >= 0);
    CHECK(first_epoch("teacher", 1) < first_epoch("student", 1));
    // Later tasks: the student updates against the previous teacher first.
    for (int t = 2; t <= 3; ++t) {
        REQUIRE(first_epoch("student", t) >= 0);
        REQUIRE(first_epoch("teacher", t) >= 0);
        CHECK(first_epoch("student", t) < first_epoch("teacher", t));
    }

    // The teacher reference is checksummed before and after every student
    // phase and never changes within one.
    std::map<int, std::vector<std::string>> sums;
    for (const auto& e : evs)
        if (e["event"] == "teacher_checksum")
            sums[e["task"].get<int>()].push_back(e["checksum"].get<std::string>());
    for (int t = 1; t <= 3; ++t) {
        REQUIRE(sums[t].size() == 2);
        CHECK(sums[t][0] == sums[t][1]);
    }

    // Matrix rows come from the student; teacher rows are diagnostics only.
    std::map<std::string, int> eval_counts;
    for (const auto& e : evs)
        if (e["event"] == "eval") eval_counts[e["role"].get<std::string>()]++;
    CHECK(eval_counts["student"] == 6);  // rows 1+2+3
    CHECK(eval_counts["teacher"] == 6);

    // One shared buffer: the student's memory equals the teacher's.
    REQUIRE(pair.teacher.memory.has_value());
    REQUIRE(pair.student.memory.has_value());
    CHECK(pair.student.memory->total_stored() == pair.teacher.memory->total_stored());
    for (int cls : pair.teacher.memory->stored_classes()) {
        REQUIRE(pair.student.memory->has_class(cls));
        const auto& te = pair.teacher.memory->exemplars(cls);
        const auto& se = pair.student.memory->exemplars(cls);
        REQUIRE(te.size() == se.size());
        for (size_t i = 0; i < te.size(); ++i) {
            CHECK(te[i].label == se[i].label);
            CHECK(te[i].input.data == se[i].input.data);
        }
    }

    // The stored previous-teacher reference is the final teacher state.
    REQUIRE(pair.teacher_prev.has_value());
    CHECK(pair.teacher_prev->parameter_checksum() == pair.teacher.model.parameter_checksum());
}

TEST_CASE("the student phase leaves the teacher untouched") {
    ExperimentConfig cfg = small_cfg(Method::Lwf);
    cfg.framework = Framework::Kd;
    cfg.epochs = 2;
    Bench b(cfg);

    MethodState teacher = b.teacher_state(41);
    MethodState student = b.student_state(42);
    start_task(teacher, b.ctx, 1, "teacher");
    start_task(student, b.ctx, 1, "student");
    train_task(teacher, b.ctx, 1, "teacher");

    const uint64_t before = teacher.model.parameter_checksum();
    train_student_task(student, teacher.model, b.ctx, 1);
    CHECK(teacher.model.parameter_checksum() == before);
}

TEST_CASE("training and evaluation never touch tasks beyond the active one") {
    ExperimentConfig cfg = small_cfg(Method::Icarl);
    cfg.epochs = 2;
    Bench b(cfg);

    struct Access {
        std::string phase;
        int task;
        bool train;
    };
    std::vector<Access> log;
    b.stream.set_access_observer([&](const std::string& phase, int task, bool train_split, long) {
        log.push_back({phase, task, train_split});
    });

    MethodState st = b.student_state();
    AccuracyMatrix m = run_cil(st, b.ctx);
    REQUIRE(m.max_task() == 3);
    REQUIRE(!log.empty());

    int max_trained = 0;
    for (const auto& a : log) {
        if (a.phase.rfind("train:", 0) == 0) {
            // Training pulls from the train split of the active task only,
            // and tasks start in order.
            CHECK(a.train);
            CHECK(a.task >= max_trained);
            CHECK(a.task <= max_trained + 1);
            max_trained = std::max(max_trained, a.task);
        } else if (a.phase == "memory_update") {
            // Selection reads the just-trained task's training pool.
            CHECK(a.train);
            CHECK(a.task == max_trained);
        } else if (a.phase == "evaluate") {
            // Inference reads test splits of seen tasks only.
            CHECK(!a.train);
            CHECK(a.task <= max_trained);
            CHECK(a.task >= 1);
        } else {
            FAIL("unexpected access phase ", a.phase);
        }
    }
    CHECK(max_trained == 3);
}

TEST_CASE("class-mean evaluation demands an exemplar for every seen class") {
    Bench b(small_cfg(Method::Finetune));
    Rng rng(3);
    ModelGraph model = make_model("toycnn", 8, 0.5, 0, 51);
    model.extend_head(b.stream.descriptor(1).classes, rng);

    CHECK_THROWS_WITH_AS(evaluate(model, b.stream, 1, Classifier::Ncm, nullptr),
                         "ncm evaluation requires an exemplar memory", MissingDataError);

    const auto ids = b.stream.descriptor(1).classes.ids();
    REQUIRE(ids.size() == 2);
    ExemplarMemory mem(10);
    ExemplarMemory::ClassCandidates cands;
    for (size_t i = 0; i < 3; ++i) {
        cands.examples.push_back(b.stream.train_example(1, i));
        cands.features.push_back({1.0 + static_cast<double>(i), 0.5});
    }
    // Cover only one of the two seen classes.
    cands.examples.resize(3);
    for (auto& ex : cands.examples) ex.label = ids[0];
    std::map<int, ExemplarMemory::ClassCandidates> upd;
    upd[ids[0]] = cands;
    mem.update(upd, 1);

    const std::string want =
        "ncm evaluation: class " + std::to_string(ids[1]) + " has no stored exemplars";
    CHECK_THROWS_WITH_AS(evaluate(model, b.stream, 1, Classifier::Ncm, &mem), want.c_str(),
                         MissingDataError);

    CHECK_THROWS_AS(evaluate(model, b.stream, 0, Classifier::Mlp, nullptr), IndexError);
    CHECK_THROWS_AS(evaluate(model, b.stream, 4, Classifier::Mlp, nullptr), IndexError);
}

TEST_CASE("a non-finite loss stops training with a located error") {
    ExperimentConfig cfg = small_cfg(Method::Finetune);
    cfg.epochs = 2;
    Bench b(cfg);
    MethodState st = b.student_state();
    start_task(st, b.ctx, 1, "model");
    auto params = st.model.parameters();
    REQUIRE(!params.empty());
    (*params.back().value)[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        train_task(st, b.ctx, 1, "model");
        FAIL("expected a divergence failure");
    } catch (const TrainingError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("loss diverged") != std::string::npos);
        CHECK(msg.find("task 1") != std::string::npos);
    }
}

TEST_CASE("proxy pretraining lifts accuracy on its own held-out classes") {
    ExperimentConfig cfg = small_cfg(Method::Finetune);
    Bench b(cfg);
    PretrainSplit split = make_pretrain_split(*b.data, 0.5, cfg.dataset_seed);
    REQUIRE(split.pretrain.class_ids().size() == 3);

    cfg.pretrain_epochs = 6;
    EventLog ev;
    ModelGraph trained = make_model("toycnn", 8, 0.5, 0, 61);
    pretrain_model(trained, split.pretrain, cfg, ev, "teacher_pretrain");

    ModelGraph fresh = make_model("toycnn", 8, 0.5, 0, 61);
    Rng rng(9);
    fresh.extend_head(ClassSet(split.pretrain.class_ids()), rng);

    auto top1 = [&](const ModelGraph& m) {
        long correct = 0;
        for (const auto& ex : split.pretrain.test) {
            std::vector<const LabeledExample*> one = {&ex};
            const ForwardResult out = m.forward_eval(stack_batch(one));
            int best = 0;
            for (int j = 1; j < out.logits.shape[1]; ++j)
                if (out.logits[static_cast<size_t>(j)] > out.logits[static_cast<size_t>(best)])
                    best = j;
            if (m.seen_classes[static_cast<size_t>(best)] == ex.label) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(split.pretrain.test.size());
    };

    const double trained_acc = top1(trained);
    const double fresh_acc = top1(fresh);
    CAPTURE(trained_acc);
    CAPTURE(fresh_acc);
    CHECK(trained_acc >= 0.7);
    CHECK(trained_acc > fresh_acc + 0.2);

    int pretrain_epochs = 0;
    for (const auto& e : parsed_events(ev))
        if (e["event"] == "pretrain_epoch") {
            ++pretrain_epochs;
            CHECK(e["role"] == "teacher_pretrain");
        }
    CHECK(pretrain_epochs == 6);
}
