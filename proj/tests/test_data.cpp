#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cilbench/common.hpp"
#include "cilbench/dataset.hpp"
#include "cilbench/exemplar_memory.hpp"
#include "cilbench/task_stream.hpp"
#include "test_support.hpp"

using namespace cilbench;
using cilbench::testing::TempDir;

namespace {

std::shared_ptr<const LabeledDataset> tiny_dataset(int classes = 6, uint64_t seed = 11) {
    return std::make_shared<LabeledDataset>(
        make_synthetic_dataset(classes, 8, 10, 4, seed, 0.5, 0.5));
}

}  // namespace

TEST_CASE("synthetic dataset is a pure function of its seed") {
    const auto a = make_synthetic_dataset(4, 8, 6, 3, 99, 0.5, 0.5);
    const auto b = make_synthetic_dataset(4, 8, 6, 3, 99, 0.5, 0.5);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].label == b.train[i].label);
        CHECK(a.train[i].input.data == b.train[i].input.data);
    }
    const auto c = make_synthetic_dataset(4, 8, 6, 3, 100, 0.5, 0.5);
    CHECK(a.train[0].input.data != c.train[0].input.data);
}

TEST_CASE("synthetic dataset has the advertised shape and counts") {
    const auto ds = make_synthetic_dataset(5, 8, 7, 3, 1, 0.4, 0.3);
    CHECK(ds.train.size() == 35);
    CHECK(ds.test.size() == 15);
    CHECK(ds.class_ids() == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(ds.image_size == 8);
    CHECK(ds.norm_mean == 0.4);
    for (const auto& e : ds.train) {
        CHECK(e.input.shape == std::vector<int>{3, 8, 8});
        CHECK(e.source_index >= 0);
    }
    // standardized pixels: (v - mean) / std with v in [0,1]
    for (double v : ds.train[0].input.data) {
        CHECK(v >= (0.0 - 0.4) / 0.3 - 1e-12);
        CHECK(v <= (1.0 - 0.4) / 0.3 + 1e-12);
    }
}

TEST_CASE("restrict_to keeps only the requested classes") {
    const auto ds = make_synthetic_dataset(6, 8, 5, 2, 2, 0.5, 0.5);
    const auto sub = ds.restrict_to({1, 4});
    CHECK(sub.class_ids() == std::vector<int>{1, 4});
    CHECK(sub.train.size() == 10);
    CHECK(sub.test.size() == 4);
    for (const auto& e : sub.train) CHECK((e.label == 1 || e.label == 4));
}

TEST_CASE("array dataset round-trips through its directory format") {
    TempDir tmp("arrayds");
    auto ds = make_synthetic_dataset(3, 8, 4, 2, 5, 0.5, 0.5);
    ds.name = "roundtrip";
    write_array_dataset(tmp.str(), ds);
    const auto back = load_array_dataset(tmp.str(), 0.5, 0.5);
    REQUIRE(back.train.size() == ds.train.size());
    REQUIRE(back.test.size() == ds.test.size());
    for (size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].label == ds.train[i].label);
        REQUIRE(back.train[i].input.data.size() == ds.train[i].input.data.size());
        for (size_t j = 0; j < ds.train[i].input.data.size(); ++j)
            CHECK(back.train[i].input.data[j] ==
                  doctest::Approx(ds.train[i].input.data[j]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(load_array_dataset(tmp.str() + "-missing", 0.5, 0.5), IoError);
}

TEST_CASE("split_classes partitions the class universe disjointly") {
    const auto ds = tiny_dataset(7);
    TaskStream stream = split_classes(ds, 3, 42);
    CHECK(stream.num_tasks() == 3);

    std::set<int> seen;
    size_t covered = 0;
    for (int t = 1; t <= 3; ++t) {
        const auto& cls = stream.descriptor(t).classes.ids();
        for (int c : cls) CHECK(seen.insert(c).second);  // disjoint
        covered += cls.size();
        CHECK(stream.descriptor(t).index == t);
        CHECK(stream.train_size(t) == cls.size() * 10);
        CHECK(stream.test_size(t) == cls.size() * 4);
    }
    CHECK(covered == 7);  // exhaustive
    // ceil(7/3)=3 classes for the first two tasks, remainder 1 for the last
    CHECK(stream.descriptor(1).classes.size() == 3);
    CHECK(stream.descriptor(2).classes.size() == 3);
    CHECK(stream.descriptor(3).classes.size() == 1);

    // same seed, same order; different seed, (very likely) different order
    TaskStream again = split_classes(ds, 3, 42);
    CHECK(again.class_order() == stream.class_order());
    TaskStream other = split_classes(ds, 3, 43);
    CHECK(other.class_order() != stream.class_order());
}

TEST_CASE("task examples carry only their task's classes") {
    const auto ds = tiny_dataset(6);
    TaskStream stream = split_classes(ds, 3, 1);
    for (int t = 1; t <= 3; ++t) {
        const ClassSet& cls = stream.descriptor(t).classes;
        for (size_t i = 0; i < stream.train_size(t); ++i)
            CHECK(cls.contains(stream.train_example(t, i).label));
        for (size_t i = 0; i < stream.test_size(t); ++i)
            CHECK(cls.contains(stream.test_example(t, i).label));
    }
    CHECK(stream.classes_through(2).size() == 4);
    CHECK_THROWS_AS(stream.task(0), IndexError);
    CHECK_THROWS_AS(stream.task(4), IndexError);
}

TEST_CASE("access observer sees every fetch with phase and split") {
    const auto ds = tiny_dataset(4);
    TaskStream stream = split_classes(ds, 2, 9);
    struct Rec {
        std::string phase;
        int task;
        bool train;
    };
    std::vector<Rec> log;
    stream.set_access_observer([&](const std::string& phase, int task, bool train, long) {
        log.push_back({phase, task, train});
    });
    stream.set_phase("train:model");
    (void)stream.train_example(1, 0);
    stream.set_phase("evaluate");
    (void)stream.test_example(2, 1);
    REQUIRE(log.size() == 2);
    CHECK(log[0].phase == "train:model");
    CHECK(log[0].task == 1);
    CHECK(log[0].train);
    CHECK(log[1].phase == "evaluate");
    CHECK(log[1].task == 2);
    CHECK(!log[1].train);
}

TEST_CASE("pretrain split holds out a disjoint class subset") {
    const auto ds = make_synthetic_dataset(10, 8, 6, 2, 3, 0.5, 0.5);
    const PretrainSplit split = make_pretrain_split(ds, 0.3, 17);
    CHECK(split.pretrain_classes.size() == 3);  // floor(0.3 * 10)
    CHECK(split.cil_classes.size() == 7);
    for (int c : split.pretrain_classes)
        CHECK(std::find(split.cil_classes.begin(), split.cil_classes.end(), c) ==
              split.cil_classes.end());
    CHECK(split.pretrain.train.size() == 3 * 6);
    for (const auto& e : split.pretrain.train)
        CHECK(std::find(split.pretrain_classes.begin(), split.pretrain_classes.end(), e.label) !=
              split.pretrain_classes.end());
    // deterministic in the seed
    const PretrainSplit again = make_pretrain_split(ds, 0.3, 17);
    CHECK(again.pretrain_classes == split.pretrain_classes);
}

TEST_CASE("buffer scaling is proportional with rounding") {
    CHECK(scale_buffer(2000, 50000, 50000) == 2000);
    CHECK(scale_buffer(2000, 50000, 25000) == 1000);
    CHECK(scale_buffer(2000, 50000, 100) == 4);
    CHECK(scale_buffer(2000, 50000, 126) == 5);  // 5.04 rounds down
    CHECK(scale_buffer(2000, 50000, 112) == 4);  // 4.48 rounds down
    CHECK(scale_buffer(2000, 50000, 113) == 5);  // 4.52 rounds up
}

TEST_CASE("select_exemplars ranks by distance to the feature mean") {
    // mean of {0, 1, 10, 3} along one axis is 3.5; distances: 3.5, 2.5, 6.5, 0.5
    std::vector<std::vector<double>> feats = {{0.0}, {1.0}, {10.0}, {3.0}};
    bool truncated = false;
    const auto top2 = select_exemplars(feats, 2, &truncated);
    CHECK(top2 == std::vector<int>{3, 1});
    CHECK(truncated);
    const auto all = select_exemplars(feats, 10, &truncated);
    CHECK(all == std::vector<int>{3, 1, 0, 2});
    CHECK(!truncated);
}

TEST_CASE("select_exemplars breaks distance ties by input index") {
    std::vector<std::vector<double>> feats = {{1.0}, {-1.0}, {1.0}, {-1.0}};  // mean 0
    const auto picked = select_exemplars(feats, 3);
    CHECK(picked == std::vector<int>{0, 1, 2});
}

TEST_CASE("exemplar memory rebalances to floor(budget / seen classes)") {
    const auto ds = tiny_dataset(6);
    auto cand_for = [&](int cls) {
        ExemplarMemory::ClassCandidates c;
        for (const auto& e : ds->train)
            if (e.label == cls) {
                c.examples.push_back(e);
                c.features.push_back(
                    {static_cast<double>(e.source_index), static_cast<double>(cls)});
            }
        return c;
    };

    ExemplarMemory mem(10);
    std::map<int, ExemplarMemory::ClassCandidates> batch1;
    batch1[0] = cand_for(0);
    batch1[1] = cand_for(1);
    mem.update(batch1, 2);  // quota 5
    CHECK(mem.total_stored() == 10);
    CHECK(mem.exemplars(0).size() == 5);
    CHECK(mem.stored_classes() == std::vector<int>{0, 1});

    std::map<int, ExemplarMemory::ClassCandidates> batch2;
    batch2[2] = cand_for(2);
    batch2[3] = cand_for(3);
    mem.update(batch2, 4);  // quota 2: old classes truncate, new classes fill
    CHECK(mem.exemplars(0).size() == 2);
    CHECK(mem.exemplars(3).size() == 2);
    CHECK(mem.total_stored() == 8);
    CHECK(mem.all().size() == 8);
    for (const auto& e : mem.exemplars(2)) CHECK(e.label == 2);

    // truncation keeps the best-ranked (earliest) exemplars
    ExemplarMemory fresh(10);
    std::map<int, ExemplarMemory::ClassCandidates> b1;
    b1[0] = cand_for(0);
    fresh.update(b1, 1);
    const auto rank10 = fresh.exemplars(0);
    std::map<int, ExemplarMemory::ClassCandidates> b2;
    b2[1] = cand_for(1);
    fresh.update(b2, 5);  // quota 2
    const auto rank2 = fresh.exemplars(0);
    REQUIRE(rank2.size() == 2);
    CHECK(rank2[0].source_index == rank10[0].source_index);
    CHECK(rank2[1].source_index == rank10[1].source_index);

    // zero quota is a configuration error
    std::map<int, ExemplarMemory::ClassCandidates> b3;
    b3[2] = cand_for(2);
    CHECK_THROWS_AS(fresh.update(b3, 11), ConfigError);
    CHECK_THROWS_AS(fresh.exemplars(9), MissingDataError);
}

TEST_CASE("stack_batch concatenates in order") {
    const auto ds = tiny_dataset(3);
    std::vector<const LabeledExample*> items = {&ds->train[2], &ds->train[0]};
    const Tensor b = stack_batch(items);
    CHECK(b.shape == std::vector<int>{2, 3, 8, 8});
    const size_t n = ds->train[2].input.data.size();
    for (size_t j = 0; j < n; ++j) {
        CHECK(b.data[j] == ds->train[2].input.data[j]);
        CHECK(b.data[n + j] == ds->train[0].input.data[j]);
    }
}
