#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cilbench/common.hpp"
#include "cilbench/losses.hpp"
#include "cilbench/model_graph.hpp"
#include "test_support.hpp"

using namespace cilbench;
using cilbench::testing::fd_check;
using cilbench::testing::random_input;
using cilbench::testing::random_labels;

namespace {

Batch random_batch(const ModelGraph& m, int n, Rng& rng) {
    Batch b;
    b.x = random_input(m, n, rng);
    b.labels = random_labels(m.seen_classes, n, rng);
    return b;
}

Batch batch_with_labels(const ModelGraph& m, const std::vector<int>& labels, Rng& rng) {
    Batch b;
    b.x = random_input(m, static_cast<int>(labels.size()), rng);
    b.labels = labels;
    return b;
}

Tensor random_logits(int n, int w, Rng& rng) {
    Tensor t({n, w});
    for (auto& v : t.data) v = rng.normal();
    return t;
}

// Central differences over every logit coordinate against the analytic
// gradient, scored with the same allclose criterion as fd_check.
template <typename F>
void fd_logits(Tensor& logits, const Tensor& analytic, F value, double h = 1e-6,
               double rtol = 1e-4, double atol = 1e-10) {
    REQUIRE(analytic.shape == logits.shape);
    for (size_t i = 0; i < logits.numel(); ++i) {
        const double saved = logits[i];
        logits[i] = saved + h;
        const double up = value();
        logits[i] = saved - h;
        const double dn = value();
        logits[i] = saved;
        const double fd = (up - dn) / (2.0 * h);
        const double score = std::fabs(fd - analytic[i]) /
                             (atol + rtol * std::max(std::fabs(fd), std::fabs(analytic[i])));
        CAPTURE(i);
        CAPTURE(fd);
        CAPTURE(analytic[i]);
        CHECK(score <= 1.0);
    }
}

// Reference softmax over a slot subset, independent of the library path.
std::vector<double> ref_softmax(const double* row, const std::vector<int>& slots, double tau) {
    double m = row[slots[0]] / tau;
    for (int s : slots) m = std::max(m, row[s] / tau);
    std::vector<double> p(slots.size());
    double z = 0.0;
    for (size_t j = 0; j < slots.size(); ++j) {
        p[j] = std::exp(row[slots[j]] / tau - m);
        z += p[j];
    }
    for (double& v : p) v /= z;
    return p;
}

void check_grads_equal(ModelGraph& a, ModelGraph& b, double eps) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    double worst = 0.0;
    for (size_t k = 0; k < pa.size(); ++k) {
        REQUIRE(pa[k].grad->numel() == pb[k].grad->numel());
        for (size_t i = 0; i < pa[k].grad->numel(); ++i)
            worst = std::max(worst, std::fabs((*pa[k].grad)[i] - (*pb[k].grad)[i]));
    }
    CHECK(worst <= eps);
}

}  // namespace

TEST_CASE("tempered subset softmax: normalization, restriction, stability") {
    const std::vector<double> logits = {0.3, -0.7, 1.2, 0.05};

    SoftTarget full = softmax_temperature(logits, {0, 1, 2, 3}, 1.0);
    REQUIRE(full.probs.size() == 4);
    double sum = 0.0;
    for (double p : full.probs) {
        CHECK(p > 0.0);
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    const auto want = ref_softmax(logits.data(), {0, 1, 2, 3}, 1.0);
    for (size_t j = 0; j < 4; ++j) CHECK(full.probs[j] == doctest::Approx(want[j]).epsilon(1e-12));

    // Restriction renormalizes over the subset only.
    SoftTarget sub = softmax_temperature(logits, {2, 0}, 1.0);
    REQUIRE(sub.probs.size() == 2);
    CHECK(sub.probs[0] + sub.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
    const double want0 = std::exp(1.2) / (std::exp(1.2) + std::exp(0.3));
    CHECK(sub.probs[0] == doctest::Approx(want0).epsilon(1e-12));

    // Higher temperature flattens toward uniform.
    SoftTarget hot = softmax_temperature(logits, {0, 1, 2, 3}, 50.0);
    double hot_max = 0.0, cold_max = 0.0;
    for (double p : hot.probs) hot_max = std::max(hot_max, p);
    for (double p : full.probs) cold_max = std::max(cold_max, p);
    CHECK(hot_max < cold_max);
    CHECK(hot_max == doctest::Approx(0.25).epsilon(1e-2));
    CHECK(hot.tau == 50.0);

    // Max subtraction keeps huge logits finite.
    SoftTarget big = softmax_temperature({1e4, 1e4 - 1.0, -1e4}, {0, 1, 2}, 1.0);
    for (double p : big.probs) CHECK(std::isfinite(p));
    CHECK(big.probs[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-12));
    CHECK(big.probs[2] == 0.0);

    CHECK_THROWS_AS(softmax_temperature(logits, {0, 1}, 0.0), ConfigError);
    CHECK_THROWS_AS(softmax_temperature(logits, {0, 1}, -2.0), ConfigError);
    CHECK_THROWS_AS(softmax_temperature(logits, {}, 1.0), ConfigError);
    CHECK_THROWS_AS(softmax_temperature(logits, {0, 4}, 1.0), IndexError);
}

TEST_CASE("distillation divergence matches precomputed values, no extra temperature factor") {
    Tensor lt({1, 3});
    lt.data = {1.0, 2.0, 0.5};
    Tensor ls({1, 3});
    ls.data = {0.3, -0.7, 1.2};

    // Full subset at tau = 2. The value is the plain divergence of the
    // tempered distributions and the gradient carries a single 1/tau factor.
    Tensor d({1, 3});
    const double v = kd_kl(lt, ls, {0, 1, 2}, {0, 1, 2}, 2.0, &d);
    CHECK(v == doctest::Approx(0.24539098889221217).epsilon(1e-12));
    CHECK(d[0] == doctest::Approx(0.011610128375583256).epsilon(1e-12));
    CHECK(d[1] == doctest::Approx(-0.14499076422591675).epsilon(1e-12));
    CHECK(d[2] == doctest::Approx(0.1333806358503335).epsilon(1e-12));

    // The same pair restricted to slots {0, 2} at tau = 1.5.
    const double vs = kd_kl(lt, ls, {0, 2}, {0, 2}, 1.5, nullptr);
    CHECK(vs == doctest::Approx(0.10758123516130436).epsilon(1e-12));

    // Doubling tau must not square-rescale the value: recompute the tempered
    // divergence directly and require an exact match.
    const auto pt = ref_softmax(lt.ptr(), {0, 1, 2}, 2.0);
    const auto ps = ref_softmax(ls.ptr(), {0, 1, 2}, 2.0);
    double direct = 0.0;
    for (size_t j = 0; j < 3; ++j) direct += pt[j] * (std::log(pt[j]) - std::log(ps[j]));
    CHECK(v == doctest::Approx(direct).epsilon(1e-12));

    // Identical inputs: zero value, zero gradient.
    Tensor dz({1, 3});
    CHECK(kd_kl(lt, lt, {0, 1, 2}, {0, 1, 2}, 2.0, &dz) == 0.0);
    for (size_t i = 0; i < dz.numel(); ++i) CHECK(dz[i] == 0.0);
}

TEST_CASE("distillation gradient is exactly zero outside the aligned subsets") {
    Rng rng(401);
    const int n = 5;
    Tensor lt = random_logits(n, 5, rng);
    Tensor ls = random_logits(n, 7, rng);
    const std::vector<int> tslots = {0, 1, 2};
    const std::vector<int> sslots = {1, 3, 4};

    Tensor d({n, 7});
    const double v = kd_kl(lt, ls, tslots, sslots, 1.3, &d);
    CHECK(v >= 0.0);
    for (int i = 0; i < n; ++i)
        for (int j : {0, 2, 5, 6})
            CHECK(d[static_cast<size_t>(i) * 7 + static_cast<size_t>(j)] == 0.0);

    // In-subset gradients sum to zero per row (both distributions normalize).
    for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j : sslots) row += d[static_cast<size_t>(i) * 7 + static_cast<size_t>(j)];
        CHECK(row == doctest::Approx(0.0).epsilon(1e-12));
    }

    // Batch reduction is summation over rows.
    double per_row = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor rt({1, 5}), rs({1, 7});
        for (int j = 0; j < 5; ++j) rt[static_cast<size_t>(j)] = lt[static_cast<size_t>(i) * 5 + j];
        for (int j = 0; j < 7; ++j) rs[static_cast<size_t>(j)] = ls[static_cast<size_t>(i) * 7 + j];
        per_row += kd_kl(rt, rs, tslots, sslots, 1.3, nullptr);
    }
    CHECK(v == doctest::Approx(per_row).epsilon(1e-12));

    // Gradient accumulates rather than overwrites.
    Tensor d2 = d;
    kd_kl(lt, ls, tslots, sslots, 1.3, &d2);
    for (size_t i = 0; i < d2.numel(); ++i)
        CHECK(d2[i] == doctest::Approx(2.0 * d[i]).epsilon(1e-12));

    CHECK_THROWS_AS(kd_kl(lt, ls, {0, 1}, sslots, 1.3, nullptr), ConfigError);
    CHECK_THROWS_AS(kd_kl(lt, ls, tslots, {1, 3, 9}, 1.3, nullptr), IndexError);
    Tensor bad({n, 6});
    CHECK_THROWS_AS(kd_kl(lt, ls, tslots, sslots, 1.3, &bad), ShapeError);
    Tensor shorter = random_logits(n - 1, 5, rng);
    CHECK_THROWS_AS(kd_kl(shorter, ls, tslots, sslots, 1.3, nullptr), ShapeError);
}

TEST_CASE("distillation divergence passes central differences on the logits") {
    Rng rng(402);
    Tensor lt = random_logits(2, 6, rng);
    Tensor ls = random_logits(2, 7, rng);
    const std::vector<int> tslots = {0, 2, 3, 5};
    const std::vector<int> sslots = {6, 1, 2, 4};

    Tensor analytic({2, 7});
    kd_kl(lt, ls, tslots, sslots, 1.7, &analytic);
    fd_logits(ls, analytic, [&] { return kd_kl(lt, ls, tslots, sslots, 1.7, nullptr); });
}

TEST_CASE("subset cross-entropy matches precomputed values and sums over rows") {
    Tensor one({1, 3});
    one.data = {0.3, -0.7, 1.2};
    Tensor d({1, 3});
    const double v = cls_loss(one, {0, 1, 2}, {2}, &d);
    CHECK(v == doctest::Approx(0.4422072900359523).epsilon(1e-12));
    CHECK(d[0] == doctest::Approx(0.26126833664902405).epsilon(1e-12));
    CHECK(d[1] == doctest::Approx(0.09611524968223523).epsilon(1e-12));
    CHECK(d[2] == doctest::Approx(-0.3573835863312592).epsilon(1e-12));
    // Per-row gradient sums to zero: probabilities minus a one-hot.
    CHECK(d[0] + d[1] + d[2] == doctest::Approx(0.0).epsilon(1e-12));

    // Subset restriction: target position indexes into the slot list.
    const double vs = cls_loss(one, {0, 2}, {0}, nullptr);
    CHECK(vs == doctest::Approx(1.2411538747320878).epsilon(1e-12));

    Tensor two({2, 3});
    two.data = {0.3, -0.7, 1.2, 0.1, 0.4, -0.2};
    const double vb = cls_loss(two, {0, 1, 2}, {2, 1}, nullptr);
    CHECK(vb == doctest::Approx(1.2705974599420766).epsilon(1e-12));

    CHECK_THROWS_AS(cls_loss(two, {0, 1, 2}, {2}, nullptr), ShapeError);
    CHECK_THROWS_AS(cls_loss(two, {0, 2}, {2, 0}, nullptr), DataError);
    CHECK_THROWS_AS(cls_loss(two, {0, 3}, {0, 0}, nullptr), IndexError);
    Tensor bad({2, 4});
    CHECK_THROWS_AS(cls_loss(two, {0, 1, 2}, {2, 1}, &bad), ShapeError);
}

TEST_CASE("subset cross-entropy passes central differences, zero outside the subset") {
    Rng rng(403);
    Tensor logits = random_logits(3, 6, rng);
    const std::vector<int> slots = {5, 0, 2, 3};
    const std::vector<int> targets = {1, 3, 0};

    Tensor analytic({3, 6});
    cls_loss(logits, slots, targets, &analytic);
    for (int i = 0; i < 3; ++i)
        for (int j : {1, 4}) CHECK(analytic[static_cast<size_t>(i) * 6 + j] == 0.0);
    fd_logits(logits, analytic, [&] { return cls_loss(logits, slots, targets, nullptr); });
}

TEST_CASE("class-to-slot resolution follows the class set order") {
    ModelGraph m = make_model("toycnn", 8, 0.5, 5, 11);
    CHECK(slots_of(m, ClassSet({3, 1})) == std::vector<int>{3, 1});
    CHECK(slots_of(m, ClassSet({0, 1, 2, 3, 4})) == std::vector<int>{0, 1, 2, 3, 4});
    CHECK_THROWS_WITH_AS(slots_of(m, ClassSet({1, 9})), "model has not seen class 9", ConfigError);

    Rng rng(7);
    ModelGraph grown = make_model("toycnn", 8, 0.5, 2, 11);
    grown.extend_head(ClassSet({7, 5}), rng);
    CHECK(slots_of(grown, ClassSet({5, 0, 7})) == std::vector<int>{3, 0, 2});
}

TEST_CASE("composite objectives pass central differences through a small model") {
    Rng rng(404);
    ModelGraph model = make_model("toycnn", 8, 0.5, 6, 31);
    const ModelGraph prev = make_model("toycnn", 8, 0.5, 3, 77);      // classes 0..2
    const ModelGraph teacher = make_model("toycnn", 8, 0.5, 6, 55);   // same class set
    const ClassSet prev_classes({0, 1, 2});
    const ClassSet cur_classes({3, 4, 5});

    const Batch b = random_batch(model, 3, rng);
    const Batch task_b = batch_with_labels(model, {3, 5, 4}, rng);
    const Batch mem_b = batch_with_labels(model, {0, 2}, rng);

    SUBCASE("snapshot-referenced objective") {
        auto rep = fd_check(
            model, [&] { return lwf_loss(model, prev, b, prev_classes, 2.0, 0.7, true).value; },
            1e-5, 3);
        CAPTURE(rep.layer);
        CAPTURE(rep.block);
        CAPTURE(rep.fd);
        CAPTURE(rep.analytic);
        CHECK(rep.max_score <= 1.0);
        CHECK(rep.checked > 100);
    }
    SUBCASE("replay-referenced objective") {
        const Batch mixed = batch_with_labels(model, {0, 4, 2, 5}, rng);
        auto rep = fd_check(
            model,
            [&] { return icarl_loss(model, prev, mixed, prev_classes, 2.0, 1.3, true).value; },
            1e-5, 3);
        CHECK(rep.max_score <= 1.0);
    }
    SUBCASE("first-task student objective") {
        auto rep = fd_check(
            model,
            [&] { return student_init_loss(model, teacher, b, 2.0, 0.9, true).value; }, 1e-5, 3);
        CHECK(rep.max_score <= 1.0);
    }
    SUBCASE("later-task student objective") {
        auto rep = fd_check(
            model,
            [&] {
                return student_sub_loss(model, prev, b, prev_classes, 2.0, 2.0, true).value;
            },
            1e-5, 3);
        CHECK(rep.max_score <= 1.0);
    }
    SUBCASE("teacher-referenced replay objective") {
        const Batch mixed = batch_with_labels(model, {1, 3, 0, 4}, rng);
        auto rep = fd_check(
            model,
            [&] { return icarl_kd_loss(model, prev, mixed, prev_classes, 2.0, 10.0, true).value; },
            1e-5, 3);
        CHECK(rep.max_score <= 1.0);
    }
    SUBCASE("separated-softmax objective") {
        auto rep = fd_check(
            model,
            [&] {
                return ssil_loss(model, prev, task_b, mem_b, cur_classes, prev_classes, 2.0, 1.1,
                                 true)
                    .value;
            },
            1e-5, 3);
        CHECK(rep.max_score <= 1.0);
    }
    SUBCASE("teacher-referenced separated-softmax objective") {
        auto rep = fd_check(
            model,
            [&] {
                return ssil_kd_loss(model, teacher, task_b, mem_b, cur_classes, prev_classes, 2.0,
                                    1.1, true)
                    .value;
            },
            1e-5, 3);
        CHECK(rep.max_score <= 1.0);
    }
    SUBCASE("sparsity-regularized objective") {
        auto rep = fd_check(
            model, [&] { return prune_regularized_loss(model, b, 0.05, false, true).value; },
            1e-5, 3);
        CHECK(rep.max_score <= 1.0);
    }
}

TEST_CASE("zero distillation weight collapses every composite to plain cross-entropy") {
    Rng rng(405);
    ModelGraph model = make_model("toycnn", 8, 0.5, 6, 31);
    const ModelGraph prev = make_model("toycnn", 8, 0.5, 3, 77);
    const ModelGraph teacher = make_model("toycnn", 8, 0.5, 6, 55);
    const ClassSet prev_classes({0, 1, 2});
    const Batch b = random_batch(model, 4, rng);

    ModelGraph plain = model;
    plain.zero_grads();
    const LossTerm ce = plain_ce_loss(plain, b, true);

    auto collapses = [&](LossTerm t, ModelGraph& m) {
        CHECK(std::fabs(t.value - ce.value) <= 1e-8);
        CHECK(t.kl == 0.0);
        CHECK(t.ce == doctest::Approx(ce.ce).epsilon(1e-12));
        check_grads_equal(m, plain, 1e-12);
    };

    SUBCASE("snapshot-referenced") {
        model.zero_grads();
        collapses(lwf_loss(model, prev, b, prev_classes, 2.0, 0.0, true), model);
    }
    SUBCASE("replay-referenced") {
        model.zero_grads();
        collapses(icarl_loss(model, prev, b, prev_classes, 2.0, 0.0, true), model);
    }
    SUBCASE("first-task student") {
        model.zero_grads();
        collapses(student_init_loss(model, teacher, b, 2.0, 0.0, true), model);
    }
    SUBCASE("later-task student") {
        model.zero_grads();
        collapses(student_sub_loss(model, prev, b, prev_classes, 2.0, 0.0, true), model);
    }
    SUBCASE("teacher-referenced replay") {
        model.zero_grads();
        collapses(icarl_kd_loss(model, prev, b, prev_classes, 2.0, 0.0, true), model);
    }
    SUBCASE("zero sparsity weight") {
        model.zero_grads();
        const LossTerm t = prune_regularized_loss(model, b, 0.0, false, true);
        CHECK(t.reg == 0.0);
        CHECK(std::fabs(t.value - ce.value) <= 1e-8);
        check_grads_equal(model, plain, 1e-12);
    }
}

TEST_CASE("separated softmax: per-subset renormalized terms, validated partition") {
    Rng rng(406);
    ModelGraph model = make_model("toycnn", 8, 0.5, 6, 31);
    const ModelGraph prev = make_model("toycnn", 8, 0.5, 3, 77);
    const ClassSet prev_classes({0, 1, 2});
    const ClassSet cur_classes({3, 4, 5});
    const Batch task_b = batch_with_labels(model, {3, 5}, rng);
    const Batch mem_b = batch_with_labels(model, {0, 2}, rng);

    // With zero distillation weight the value equals the sum of the two
    // subset-restricted terms, each computed independently here from
    // deterministic eval-mode logits.
    const LossTerm t = ssil_loss(model, prev, task_b, mem_b, cur_classes, prev_classes, 2.0, 0.0,
                                 false);
    CHECK(t.kl == 0.0);

    Tensor x({4, task_b.x.shape[1], task_b.x.shape[2], task_b.x.shape[3]});
    std::copy(task_b.x.data.begin(), task_b.x.data.end(), x.data.begin());
    std::copy(mem_b.x.data.begin(), mem_b.x.data.end(),
              x.data.begin() + static_cast<long>(task_b.x.numel()));
    const ForwardResult out = model.forward_eval(x);
    const int w = out.logits.shape[1];
    double want = 0.0;
    const std::vector<int> cur_slots = {3, 4, 5};
    const std::vector<int> prev_slots = {0, 1, 2};
    const std::vector<int> tpos = {0, 2};  // labels {3, 5} within {3, 4, 5}
    const std::vector<int> mpos = {0, 2};  // labels {0, 2} within {0, 1, 2}
    for (int i = 0; i < 2; ++i) {
        const auto p = ref_softmax(out.logits.ptr() + static_cast<size_t>(i) * w, cur_slots, 1.0);
        want -= std::log(p[static_cast<size_t>(tpos[static_cast<size_t>(i)])]);
    }
    for (int i = 2; i < 4; ++i) {
        const auto p = ref_softmax(out.logits.ptr() + static_cast<size_t>(i) * w, prev_slots, 1.0);
        want -= std::log(p[static_cast<size_t>(mpos[static_cast<size_t>(i - 2)])]);
    }
    CHECK(t.value == doctest::Approx(want).epsilon(1e-10));

    // Without memory rows the term over previous classes has no targets, but
    // the distillation term still applies to the task rows.
    const LossTerm no_mem =
        ssil_loss(model, prev, task_b, Batch{}, cur_classes, prev_classes, 2.0, 1.0, false);
    CHECK(no_mem.kl > 0.0);
    CHECK(no_mem.value == doctest::Approx(no_mem.ce + no_mem.kl).epsilon(1e-12));

    // A first task has neither previous classes nor memory: plain restricted
    // cross-entropy.
    ModelGraph first = make_model("toycnn", 8, 0.5, 3, 31);
    const Batch fb = batch_with_labels(first, {0, 2, 1}, rng);
    const LossTerm ft =
        ssil_loss(first, prev, fb, Batch{}, ClassSet({0, 1, 2}), ClassSet(), 2.0, 1.0, false);
    CHECK(ft.kl == 0.0);
    const ForwardResult fout = first.forward_eval(fb.x);
    Tensor dummy;
    const double fwant = cls_loss(fout.logits, {0, 1, 2}, {0, 2, 1}, nullptr);
    CHECK(ft.value == doctest::Approx(fwant).epsilon(1e-10));

    // Labels must respect the partition.
    const Batch bad_task = batch_with_labels(model, {3, 0}, rng);
    CHECK_THROWS_AS(ssil_loss(model, prev, bad_task, mem_b, cur_classes, prev_classes, 2.0, 1.0,
                              false),
                    DataError);
    const Batch bad_mem = batch_with_labels(model, {4}, rng);
    CHECK_THROWS_AS(ssil_loss(model, prev, task_b, bad_mem, cur_classes, prev_classes, 2.0, 1.0,
                              false),
                    DataError);
}

TEST_CASE("composite values decompose, sum over examples, and reject bad arguments") {
    Rng rng(407);
    ModelGraph model = make_model("toycnn", 8, 0.5, 6, 31);
    const ModelGraph prev = make_model("toycnn", 8, 0.5, 3, 77);
    const ClassSet prev_classes({0, 1, 2});
    const Batch b = random_batch(model, 3, rng);

    const LossTerm t = lwf_loss(model, prev, b, prev_classes, 2.0, 0.7, false);
    CHECK(t.kl >= 0.0);
    CHECK(t.ce > 0.0);
    CHECK(t.value == doctest::Approx(t.ce + 0.7 * t.kl).epsilon(1e-12));

    // Eval-mode batch reduction is summation: per-example values add up.
    double per_example = 0.0;
    for (int i = 0; i < 3; ++i) {
        Batch one;
        one.x.resize({1, b.x.shape[1], b.x.shape[2], b.x.shape[3]});
        const size_t stride = one.x.numel();
        std::copy(b.x.data.begin() + static_cast<long>(stride * static_cast<size_t>(i)),
                  b.x.data.begin() + static_cast<long>(stride * static_cast<size_t>(i + 1)),
                  one.x.data.begin());
        one.labels = {b.labels[static_cast<size_t>(i)]};
        per_example += lwf_loss(model, prev, one, prev_classes, 2.0, 0.7, false).value;
    }
    CHECK(t.value == doctest::Approx(per_example).epsilon(1e-9));

    // Same arguments, same value.
    const LossTerm again = lwf_loss(model, prev, b, prev_classes, 2.0, 0.7, false);
    CHECK(again.value == t.value);

    CHECK_THROWS_AS(lwf_loss(model, prev, b, prev_classes, 0.0, 0.7, false), ConfigError);
    CHECK_THROWS_AS(lwf_loss(model, prev, b, prev_classes, 2.0, -0.1, false), ConfigError);
    CHECK_THROWS_AS(lwf_loss(model, prev, b, ClassSet(), 2.0, 0.7, false), ConfigError);
    CHECK_THROWS_AS(student_sub_loss(model, prev, b, ClassSet(), 2.0, 1.0, false), ConfigError);

    Batch empty;
    empty.x.resize({0, 3, 8, 8});
    CHECK_THROWS_AS(plain_ce_loss(model, empty, false), DataError);
    Batch unseen = b;
    unseen.labels[0] = 9;
    CHECK_THROWS_WITH_AS(plain_ce_loss(model, unseen, false),
                         "label 9 not seen by the model", DataError);
    Batch flat;
    flat.x.resize({2, 3 * 8 * 8});
    flat.labels = {0, 1};
    CHECK_THROWS_AS(plain_ce_loss(model, flat, false), ShapeError);
}

TEST_CASE("scale penalty: weighted absolute sum with sign gradients, zeros stay put") {
    ModelGraph m = make_model("toycnn", 8, 0.5, 4, 13);
    const double mu = 0.3;

    // Pin a few prunable scales to known values, including an exact zero.
    BNScaleView view = m.prunable_scales(false);
    std::vector<BNScaleEntry> prunable;
    for (const auto& e : view.entries)
        if (e.prunable) prunable.push_back(e);
    REQUIRE(prunable.size() >= 3);
    const auto& e0 = prunable[0];
    const auto& e1 = prunable[1];
    const auto& e2 = prunable[2];
    m.layers[static_cast<size_t>(e0.layer)].gamma[static_cast<size_t>(e0.channel)] = 0.5;
    m.layers[static_cast<size_t>(e1.layer)].gamma[static_cast<size_t>(e1.channel)] = -0.25;
    m.layers[static_cast<size_t>(e2.layer)].gamma[static_cast<size_t>(e2.channel)] = 0.0;

    double want = 0.0;
    for (const auto& e : m.prunable_scales(false).entries)
        if (e.prunable) want += mu * std::fabs(e.gamma);

    m.zero_grads();
    const double got = l1_scale_penalty(m, mu, false);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    CHECK(m.layers[static_cast<size_t>(e0.layer)].ggrad[static_cast<size_t>(e0.channel)] == mu);
    CHECK(m.layers[static_cast<size_t>(e1.layer)].ggrad[static_cast<size_t>(e1.channel)] == -mu);
    CHECK(m.layers[static_cast<size_t>(e2.layer)].ggrad[static_cast<size_t>(e2.channel)] == 0.0);

    // Non-prunable scales receive no gradient even when the stem is excluded
    // from the penalty.
    for (const auto& e : m.prunable_scales(true).entries)
        if (!e.prunable)
            CHECK(m.layers[static_cast<size_t>(e.layer)].ggrad[static_cast<size_t>(e.channel)] ==
                  0.0);

    // Including the stem enlarges the penalty (its scales initialize to one).
    m.zero_grads();
    const double with_stem = l1_scale_penalty(m, mu, true);
    CHECK(with_stem > got);
    double want_stem = 0.0;
    for (const auto& e : m.prunable_scales(true).entries)
        if (e.prunable) want_stem += mu * std::fabs(e.gamma);
    CHECK(with_stem == doctest::Approx(want_stem).epsilon(1e-12));

    CHECK(l1_scale_penalty(m, 0.0, false) == 0.0);
    CHECK_THROWS_AS(l1_scale_penalty(m, -0.5, false), ConfigError);
}

TEST_CASE("sparsity-regularized objective adds the penalty on top of cross-entropy") {
    Rng rng(408);
    ModelGraph m = make_model("toycnn", 8, 0.5, 4, 13);
    const Batch b = random_batch(m, 3, rng);
    const double mu = 0.12;

    ModelGraph plain = m;
    plain.zero_grads();
    const LossTerm ce = plain_ce_loss(plain, b, true);

    m.zero_grads();
    const LossTerm t = prune_regularized_loss(m, b, mu, false, true);
    CHECK(t.ce == doctest::Approx(ce.ce).epsilon(1e-12));
    double want_reg = 0.0;
    for (const auto& e : m.prunable_scales(false).entries)
        if (e.prunable) want_reg += mu * std::fabs(e.gamma);
    CHECK(t.reg == doctest::Approx(want_reg).epsilon(1e-12));
    CHECK(t.value == doctest::Approx(t.ce + t.reg).epsilon(1e-12));

    // Gradients differ from the plain objective exactly on the scale
    // coordinates of prunable normalization layers.
    auto pm = m.parameters();
    auto pp = plain.parameters();
    REQUIRE(pm.size() == pp.size());
    double max_scale_delta = 0.0;
    for (size_t k = 0; k < pm.size(); ++k) {
        for (size_t i = 0; i < pm[k].grad->numel(); ++i) {
            const double delta = std::fabs((*pm[k].grad)[i] - (*pp[k].grad)[i]);
            if (pm[k].block == 2)
                max_scale_delta = std::max(max_scale_delta, delta);
            else
                CHECK(delta == 0.0);
        }
    }
    CHECK(max_scale_delta == doctest::Approx(mu).epsilon(1e-12));
}
