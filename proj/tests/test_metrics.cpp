#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cilbench/common.hpp"
#include "cilbench/metrics.hpp"

using namespace cilbench;

namespace {

// Brute-force re-derivations, written independently of the library versions:
// everything recomputed from the raw (correct, total) cells.

double cell_acc(const AccuracyMatrix& m, int i, int t) {
    const AccuracyCell& c = m.cell(i, t);
    return static_cast<double>(c.correct) / static_cast<double>(c.total);
}

double brute_acc(const AccuracyMatrix& m) {
    const int T = m.max_task();
    double s = 0.0;
    for (int t = 1; t <= T; ++t) s += cell_acc(m, T, t);
    return s / T;
}

double brute_bwt(const AccuracyMatrix& m) {
    const int T = m.max_task();
    double s = 0.0;
    for (int t = 1; t < T; ++t) s += cell_acc(m, T, t) - cell_acc(m, t, t);
    return s / (T - 1);
}

AccuracyMatrix random_matrix(Rng& rng, int T) {
    AccuracyMatrix m;
    for (int i = 1; i <= T; ++i)
        for (int t = 1; t <= i; ++t) {
            const long total = rng.uniform_int(1, 500);
            const long correct = rng.uniform_int(0, static_cast<int>(total));
            m.record(i, t, correct, total);
        }
    return m;
}

}  // namespace

TEST_CASE("accuracy cells are exact rationals") {
    AccuracyMatrix m;
    m.record(1, 1, 7, 9);
    CHECK(m.has(1, 1));
    CHECK(!m.has(1, 2));
    CHECK(m.cell(1, 1).correct == 7);
    CHECK(m.cell(1, 1).total == 9);
    CHECK(m.value(1, 1) == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("matrix cells are write-once") {
    AccuracyMatrix m;
    m.record(1, 1, 3, 4);
    CHECK_THROWS_AS(m.record(1, 1, 3, 4), ImmutabilityError);
}

TEST_CASE("lower-triangular domain and count ranges are enforced") {
    AccuracyMatrix m;
    CHECK_THROWS_AS(m.record(1, 2, 1, 2), IndexError);   // future task
    CHECK_THROWS_AS(m.record(0, 1, 1, 2), IndexError);   // tasks are 1-based
    CHECK_THROWS_AS(m.record(1, 1, 3, 0), IndexError);   // empty denominator
    CHECK_THROWS_AS(m.record(1, 1, 5, 4), IndexError);   // correct > total
    CHECK_THROWS_AS(m.record(1, 1, -1, 4), IndexError);
}

TEST_CASE("three-task worked example") {
    // Hand-computed: rows (1,1)=0.9; (2,*)=0.7,0.8; (3,*)=0.6,0.7,0.9.
    AccuracyMatrix m;
    m.record(1, 1, 90, 100);
    m.record(2, 1, 70, 100);
    m.record(2, 2, 80, 100);
    m.record(3, 1, 60, 100);
    m.record(3, 2, 70, 100);
    m.record(3, 3, 90, 100);

    // ACC = (0.6 + 0.7 + 0.9) / 3
    CHECK(m.compute_acc() == doctest::Approx(2.2 / 3.0).epsilon(1e-12));
    // BWT = ((0.6-0.9) + (0.7-0.8)) / 2 = -0.2
    CHECK(m.compute_bwt() == doctest::Approx(-0.2).epsilon(1e-12));
    // forgetting_t = a_{T,t} - a_{t,t}
    CHECK(m.taskwise_forgetting(1) == doctest::Approx(-0.3).epsilon(1e-12));
    CHECK(m.taskwise_forgetting(2) == doctest::Approx(-0.1).epsilon(1e-12));
    // row means through each task
    CHECK(m.row_mean(1) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(m.row_mean(2) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(m.row_mean(3) == doctest::Approx(2.2 / 3.0).epsilon(1e-12));
}

TEST_CASE("single-task matrix: ACC defined, BWT and forgetting undefined") {
    AccuracyMatrix m;
    m.record(1, 1, 1, 2);
    CHECK(m.compute_acc() == doctest::Approx(0.5));
    CHECK_THROWS_AS(m.compute_bwt(), MissingDataError);
    CHECK_THROWS_AS(m.taskwise_forgetting(1), IndexError);
}

TEST_CASE("metrics equal brute-force re-summation on random matrices") {
    Rng rng(20260818);
    for (int rep = 0; rep < 1000; ++rep) {
        const int T = rng.uniform_int(1, 12);
        AccuracyMatrix m = random_matrix(rng, T);
        CHECK(m.compute_acc() == doctest::Approx(brute_acc(m)).epsilon(1e-13));
        if (T >= 2) {
            CHECK(m.compute_bwt() == doctest::Approx(brute_bwt(m)).epsilon(1e-13));
            for (int t = 1; t < T; ++t)
                CHECK(m.taskwise_forgetting(t) ==
                      doctest::Approx(cell_acc(m, T, t) - cell_acc(m, t, t)).epsilon(1e-13));
        }
        for (int i = 1; i <= T; ++i) {
            double s = 0.0;
            for (int t = 1; t <= i; ++t) s += cell_acc(m, i, t);
            CHECK(m.row_mean(i) == doctest::Approx(s / i).epsilon(1e-13));
        }
    }
}

TEST_CASE("perfect retention gives BWT zero exactly") {
    AccuracyMatrix m;
    for (int i = 1; i <= 4; ++i)
        for (int t = 1; t <= i; ++t) m.record(i, t, 17, 20);
    CHECK(m.compute_bwt() == 0.0);
    for (int t = 1; t < 4; ++t) CHECK(m.taskwise_forgetting(t) == 0.0);
}

TEST_CASE("incomplete matrix refuses summary metrics") {
    AccuracyMatrix m;
    m.record(1, 1, 1, 2);
    m.record(2, 2, 1, 2);  // (2,1) never recorded
    CHECK_THROWS_AS(m.compute_acc(), MissingDataError);
    CHECK_THROWS_AS(m.compute_bwt(), MissingDataError);
    CHECK_THROWS_AS(m.row_mean(2), MissingDataError);
}

TEST_CASE("csv round trip preserves every cell exactly") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        AccuracyMatrix m = random_matrix(rng, rng.uniform_int(1, 9));
        AccuracyMatrix back = AccuracyMatrix::from_csv(m.to_csv());
        CHECK(back.max_task() == m.max_task());
        for (const auto& [key, cell] : m.entries()) {
            CHECK(back.cell(key.first, key.second).correct == cell.correct);
            CHECK(back.cell(key.first, key.second).total == cell.total);
        }
        CHECK(back.to_csv() == m.to_csv());
    }
}

TEST_CASE("csv parser rejects malformed input") {
    CHECK_THROWS_AS(AccuracyMatrix::from_csv("bogus header\n1,1,1,2\n"), DataError);
    CHECK_THROWS_AS(AccuracyMatrix::from_csv("after_task,on_task,correct,total\n1,1,x,2\n"),
                    DataError);
    CHECK_THROWS_AS(AccuracyMatrix::from_csv("after_task,on_task,correct,total\n1,1,1\n"),
                    DataError);
}

TEST_CASE("class sets preserve insertion order and reject overlap") {
    ClassSet a(std::vector<int>{3, 1, 2});
    CHECK(a.ids() == std::vector<int>{3, 1, 2});
    CHECK(a.contains(1));
    CHECK(!a.contains(4));
    CHECK_THROWS_AS(ClassSet(std::vector<int>{1, 1}), ConfigError);
    a.extend(ClassSet(std::vector<int>{5, 4}));
    CHECK(a.ids() == std::vector<int>{3, 1, 2, 5, 4});
    CHECK_THROWS_AS(a.extend(ClassSet(std::vector<int>{2})), ConfigError);
    CHECK(ClassSet(std::vector<int>{1, 2}).disjoint_with(ClassSet(std::vector<int>{3})));
}
