#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "helpers.hpp"
#include "rccr/errors.hpp"
#include "rccr/metrics.hpp"
#include "rccr/model.hpp"

using namespace rccr;
using metrics::EvalBatch;

namespace {

// Independent rank computation: stable sort, then average over tie groups.
std::vector<double> oracle_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) { ma += a[i]; mb += b[i]; }
    ma /= n; mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

std::size_t oracle_argmax(const std::vector<double>& row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) best = i;  // strict: ties keep the lowest index
    }
    return best;
}

// Scores drawn from a coarse grid so ties are frequent.
std::vector<double> grid_scores(Rng& rng, std::size_t n) {
    std::vector<double> s(n);
    for (auto& v : s) v = static_cast<double>(rng.below(8)) / 8.0;
    return s;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("average ranks handle ties") {
    std::vector<double> v = {10.0, 20.0, 20.0, 5.0};
    CHECK(metrics::average_ranks(v) == std::vector<double>{2.0, 3.5, 3.5, 1.0});
}

TEST_CASE("AUROC equals the pair-counting statistic") {
    Rng rng(8401);
    int informative = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> scores = grid_scores(rng, n);
        std::vector<int> labels(n);
        for (auto& y : labels) y = static_cast<int>(rng.below(2));

        std::size_t pos = 0;
        for (int y : labels) pos += static_cast<std::size_t>(y);
        auto got = metrics::auroc(scores, labels);
        if (pos == 0 || pos == n) {
            CHECK_FALSE(got.has_value());
            continue;
        }
        ++informative;
        double wins = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != 1) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[j] != 0) continue;
                if (scores[i] > scores[j]) wins += 1.0;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        }
        const double expected =
            wins / (static_cast<double>(pos) * static_cast<double>(n - pos));
        REQUIRE(got.has_value());
        CHECK(*got == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(informative > 150);
}

TEST_CASE("AUROC conventions and contracts") {
    std::vector<double> flat = {0.5, 0.5, 0.5, 0.5};
    std::vector<int> labels = {1, 0, 1, 0};
    CHECK(*metrics::auroc(flat, labels) == doctest::Approx(0.5).epsilon(1e-12));
    std::vector<double> perfect = {0.9, 0.1, 0.8, 0.2};
    CHECK(*metrics::auroc(perfect, labels) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(metrics::auroc({}, {}), ContractError);
    std::vector<double> s = {0.1};
    std::vector<int> bad = {2};
    CHECK_THROWS_AS(metrics::auroc(s, bad), ContractError);
}

TEST_CASE("AUPRC matches step-interpolated references") {
    std::vector<double> scores = {0.9, 0.8, 0.7, 0.6};
    std::vector<int> labels = {1, 0, 1, 1};
    CHECK(*metrics::auprc(scores, labels) == doctest::Approx(29.0 / 36.0).epsilon(1e-12));

    // An exact tie merges into one threshold group.
    std::vector<double> tied = {0.5, 0.5};
    std::vector<int> tied_labels = {1, 0};
    CHECK(*metrics::auprc(tied, tied_labels) == doctest::Approx(0.5).epsilon(1e-12));

    std::vector<int> none = {0, 0};
    CHECK_FALSE(metrics::auprc(tied, none).has_value());
}

TEST_CASE("Spearman equals Pearson on independently computed ranks") {
    Rng rng(8402);
    int informative = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 3 + rng.below(48);
        std::vector<double> a = grid_scores(rng, n);
        std::vector<double> b = grid_scores(rng, n);
        auto got = metrics::spearman(a, b);
        bool a_const = std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; });
        bool b_const = std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; });
        if (a_const || b_const) {
            CHECK_FALSE(got.has_value());
            continue;
        }
        ++informative;
        REQUIRE(got.has_value());
        CHECK(*got == doctest::Approx(oracle_pearson(oracle_ranks(a), oracle_ranks(b)))
                          .epsilon(1e-12));
    }
    CHECK(informative > 150);
}

TEST_CASE("Pearson basics") {
    std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
    std::vector<double> y = {2.0, 4.0, 6.0, 8.0};
    CHECK(*metrics::pearson(x, y) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> z = {-1.0, -2.0, -3.0, -4.0};
    CHECK(*metrics::pearson(x, z) == doctest::Approx(-1.0).epsilon(1e-12));
    std::vector<double> c = {5.0, 5.0, 5.0, 5.0};
    CHECK_FALSE(metrics::pearson(x, c).has_value());
    std::vector<double> one = {1.0};
    CHECK_THROWS_AS(metrics::pearson(one, one), ContractError);
}

TEST_CASE("binary MCC matches the confusion-matrix formula") {
    Rng rng(8403);
    int informative = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<int> truth(n), pred(n);
        for (auto& y : truth) y = static_cast<int>(rng.below(2));
        for (auto& y : pred) y = static_cast<int>(rng.below(2));

        auto got = metrics::mcc(truth, pred, 2);
        const bool single = std::all_of(truth.begin(), truth.end(),
                                        [&](int y) { return y == truth[0]; });
        if (single) {
            CHECK_FALSE(got.has_value());
            continue;
        }
        ++informative;
        double tp = 0, tn = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (truth[i] == 1 && pred[i] == 1) ++tp;
            if (truth[i] == 0 && pred[i] == 0) ++tn;
            if (truth[i] == 0 && pred[i] == 1) ++fp;
            if (truth[i] == 1 && pred[i] == 0) ++fn;
        }
        const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
        const double expected =
            denom == 0.0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(denom);
        REQUIRE(got.has_value());
        CHECK(*got == doctest::Approx(expected).epsilon(1e-9));
    }
    CHECK(informative > 150);
}

TEST_CASE("multi-class MCC") {
    std::vector<int> truth = {0, 1, 2, 0, 1, 2};
    CHECK(*metrics::mcc(truth, truth, 3) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<int> shifted = {1, 2, 0, 1, 2, 0};
    CHECK(*metrics::mcc(truth, shifted, 3) == doctest::Approx(-0.5).epsilon(1e-12));
    std::vector<int> ones(6, 1);
    CHECK_FALSE(metrics::mcc(ones, truth, 3).has_value());
    std::vector<int> out = {0, 3};
    std::vector<int> ok = {0, 1};
    CHECK_THROWS_AS(metrics::mcc(out, ok, 3), ContractError);
}

TEST_CASE("strand flip rate counts argmax disagreements with low-index ties") {
    Rng rng(8404);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(40);
        EvalBatch batch;
        batch.head = model::HeadKind::sequence_classification(3);
        std::size_t expected_flips = 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> f = grid_scores(rng, 3);
            std::vector<double> r = f;
            if (rng.below(2)) r = grid_scores(rng, 3);  // half the rows may flip
            expected_flips += oracle_argmax(f) != oracle_argmax(r) ? 1 : 0;
            batch.forward.push_back(Tensor::from({3}, f));
            batch.rc_aligned.push_back(Tensor::from({3}, r));
            batch.labels.emplace_back(0);
        }
        CHECK(metrics::sfr(batch) ==
              static_cast<double>(expected_flips) / static_cast<double>(n));
    }
}

TEST_CASE("exact probability ties are never flips") {
    EvalBatch batch;
    batch.head = model::HeadKind::sequence_classification(2);
    batch.forward.push_back(Tensor::from({2}, {0.5, 0.5}));
    batch.rc_aligned.push_back(Tensor::from({2}, {0.5, 0.5}));
    batch.labels.emplace_back(0);
    CHECK(metrics::sfr(batch) == 0.0);
    // A tie on one side against a decisive other side is a flip iff the
    // decisive argmax is not the tie-break index 0.
    batch.forward.push_back(Tensor::from({2}, {0.5, 0.5}));
    batch.rc_aligned.push_back(Tensor::from({2}, {0.1, 0.9}));
    batch.labels.emplace_back(0);
    CHECK(metrics::sfr(batch) == 0.5);
}

TEST_CASE("binned classification counts every bin row") {
    EvalBatch batch;
    batch.head = model::HeadKind::bin_classification(2, 2);
    // Example with two bins: first agrees, second flips -> SFR 0.5.
    batch.forward.push_back(Tensor::from({2, 2}, {0.9, 0.1, 0.8, 0.2}));
    batch.rc_aligned.push_back(Tensor::from({2, 2}, {0.8, 0.2, 0.1, 0.9}));
    batch.labels.emplace_back(Tensor::from({2, 1}, {0.0, 0.0}));
    CHECK(metrics::sfr(batch) == 0.5);
}

TEST_CASE("sfr contract errors") {
    EvalBatch batch;
    batch.head = model::HeadKind::sequence_regression(2);
    batch.forward.push_back(Tensor::from({2}, {0.0, 0.0}));
    batch.rc_aligned.push_back(Tensor::from({2}, {0.0, 0.0}));
    batch.labels.emplace_back(std::vector<double>{0.0, 0.0});
    CHECK_THROWS_AS(metrics::sfr(batch), ContractError);

    EvalBatch ragged;
    ragged.head = model::HeadKind::sequence_classification(2);
    ragged.forward.push_back(Tensor::from({3}, {0.1, 0.2, 0.7}));
    ragged.rc_aligned.push_back(Tensor::from({3}, {0.1, 0.2, 0.7}));
    ragged.labels.emplace_back(0);
    CHECK_THROWS_AS(metrics::sfr(ragged), DimensionError);
}

TEST_CASE("rc_corr: exact agreement scores 1, constants are degenerate") {
    EvalBatch batch;
    batch.head = model::HeadKind::bin_regression(3, 1);
    Tensor varying = Tensor::from({3, 1}, {1.0, 2.0, 5.0});
    batch.forward = {varying, Tensor::from({3, 1}, {2.0, 2.0, 2.0})};
    batch.rc_aligned = {varying, Tensor::from({3, 1}, {2.0, 2.0, 2.0})};
    batch.labels = {Label{Tensor({3, 1})}, Label{Tensor({3, 1})}};

    std::size_t degenerate = 0;
    CHECK(metrics::rc_corr(batch, &degenerate) == 0.5);  // (1 + 0) / 2 exactly
    CHECK(degenerate == 1);

    // Anti-correlated outputs clamp at -1.
    EvalBatch anti;
    anti.head = model::HeadKind::bin_regression(3, 1);
    anti.forward = {Tensor::from({3, 1}, {1.0, 2.0, 3.0})};
    anti.rc_aligned = {Tensor::from({3, 1}, {3.0, 2.0, 1.0})};
    anti.labels = {Label{Tensor({3, 1})}};
    CHECK(metrics::rc_corr(anti) == doctest::Approx(-1.0).epsilon(1e-12));

    EvalBatch scalar;
    scalar.head = model::HeadKind::sequence_regression(1);
    scalar.forward = {Tensor::from({1}, {1.0})};
    scalar.rc_aligned = {Tensor::from({1}, {1.0})};
    scalar.labels = {Label{std::vector<double>{0.0}}};
    CHECK_THROWS_AS(metrics::rc_corr(scalar), ContractError);
    CHECK_THROWS_AS(metrics::rc_corr_pooled(scalar), ContractError);  // 1 pooled entry
}

TEST_CASE("rc_corr_pooled concatenates example outputs") {
    EvalBatch batch;
    batch.head = model::HeadKind::sequence_regression(1);
    batch.forward = {Tensor::from({1}, {1.0}), Tensor::from({1}, {3.0})};
    batch.rc_aligned = {Tensor::from({1}, {1.0}), Tensor::from({1}, {3.0})};
    batch.labels = {Label{std::vector<double>{0.0}}, Label{std::vector<double>{0.0}}};
    CHECK(metrics::rc_corr_pooled(batch) == 1.0);  // bitwise-equal, nonconstant

    batch.rc_aligned = {Tensor::from({1}, {3.0}), Tensor::from({1}, {1.0})};
    CHECK(metrics::rc_corr_pooled(batch) == doctest::Approx(-1.0).epsilon(1e-12));

    batch.forward = {Tensor::from({1}, {2.0}), Tensor::from({1}, {2.0})};
    batch.rc_aligned = batch.forward;
    CHECK(metrics::rc_corr_pooled(batch) == 0.0);  // equal but constant
}

TEST_CASE("rc_mse averages squared differences over all outputs") {
    EvalBatch batch;
    batch.head = model::HeadKind::bin_regression(2, 1);
    batch.forward = {Tensor::from({2, 1}, {1.0, 2.0})};
    batch.rc_aligned = {Tensor::from({2, 1}, {1.0, 4.0})};
    batch.labels = {Label{Tensor({2, 1})}};
    CHECK(metrics::rc_mse(batch) == doctest::Approx(2.0).epsilon(1e-12));  // (0+4)/2

    EvalBatch clf;
    clf.head = model::HeadKind::sequence_classification(2);
    clf.forward = {Tensor::from({2}, {0.5, 0.5})};
    clf.rc_aligned = {Tensor::from({2}, {0.5, 0.5})};
    clf.labels = {Label{0}};
    CHECK_THROWS_AS(metrics::rc_mse(clf), ContractError);
}

TEST_CASE("expected calibration error on a hand-built example") {
    std::vector<std::vector<double>> probs = {{0.95, 0.05}, {0.55, 0.45}, {0.65, 0.35}};
    std::vector<int> labels = {0, 1, 0};
    CHECK(metrics::ece(probs, labels, 5) == doctest::Approx(0.95 / 3.0).epsilon(1e-12));

    std::vector<std::vector<double>> sure = {{1.0, 0.0}, {0.0, 1.0}};
    std::vector<int> right = {0, 1};
    CHECK(metrics::ece(sure, right, 15) == 0.0);

    CHECK_THROWS_AS(metrics::ece(probs, labels, 0), ConfigError);
    std::vector<std::vector<double>> empty_row = {{}};
    std::vector<int> one = {0};
    CHECK_THROWS_AS(metrics::ece(empty_row, one), ContractError);
}

TEST_CASE("rmse and r-squared") {
    std::vector<double> truth = {1.0, 2.0, 3.0};
    CHECK(metrics::rmse(truth, truth) == 0.0);
    std::vector<double> off = {2.0, 3.0, 4.0};
    CHECK(metrics::rmse(truth, off) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*metrics::r_squared(truth, truth) == 1.0);
    CHECK(*metrics::r_squared(truth, off) == doctest::Approx(-0.5).epsilon(1e-12));
    std::vector<double> flat = {2.0, 2.0, 2.0};
    CHECK_FALSE(metrics::r_squared(flat, truth).has_value());
    CHECK_THROWS_AS(metrics::rmse({}, {}), ContractError);
}

TEST_CASE("task metrics for classification batches") {
    EvalBatch batch;
    batch.head = model::HeadKind::sequence_classification(2);
    batch.forward = {Tensor::from({2}, {0.9, 0.1}), Tensor::from({2}, {0.2, 0.8}),
                     Tensor::from({2}, {0.7, 0.3})};
    batch.rc_aligned = batch.forward;
    batch.labels = {Label{0}, Label{1}, Label{0}};

    auto rep = metrics::task_metrics(batch);
    CHECK(rep.counts.at("n") == 3);
    CHECK(rep.counts.at("n_class_0") == 2);
    CHECK(rep.counts.at("n_class_1") == 1);
    CHECK(rep.at("accuracy") == 1.0);
    CHECK(rep.at("mcc") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.at("auroc") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.at("auprc") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.has("ece"));

    // Single-class labels leave rank statistics undefined, reported as such.
    EvalBatch mono = batch;
    mono.labels = {Label{0}, Label{0}, Label{0}};
    auto rep2 = metrics::task_metrics(mono);
    CHECK(rep2.is_undefined("mcc"));
    CHECK(rep2.is_undefined("auroc"));
    CHECK(rep2.is_undefined("auprc"));
    CHECK(rep2.to_json().find("\"mcc\":null") != std::string::npos);
    CHECK_THROWS_AS(rep2.at("mcc"), ContractError);
}

TEST_CASE("task metrics for regression batches") {
    EvalBatch batch;
    batch.head = model::HeadKind::sequence_regression(1);
    batch.forward = {Tensor::from({1}, {1.0}), Tensor::from({1}, {2.0}),
                     Tensor::from({1}, {3.0})};
    batch.rc_aligned = batch.forward;
    batch.labels = {Label{std::vector<double>{1.0}}, Label{std::vector<double>{2.0}},
                    Label{std::vector<double>{3.0}}};
    auto rep = metrics::task_metrics(batch);
    CHECK(rep.at("rmse") == 0.0);
    CHECK(rep.at("r2") == 1.0);
    CHECK(rep.at("pearson") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.at("spearman") == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("eval batch validation") {
    EvalBatch batch;
    batch.head = model::HeadKind::sequence_classification(2);
    batch.forward = {Tensor::from({2}, {0.5, 0.5})};
    batch.labels = {Label{0}};
    CHECK_THROWS_AS(batch.validate(), ContractError);  // rc_aligned missing

    batch.rc_aligned = {Tensor::from({3}, {0.1, 0.2, 0.7})};
    CHECK_THROWS_AS(batch.validate(), DimensionError);  // per-example shape mismatch
}

TEST_SUITE_END();
