#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "helpers.hpp"
#include "rccr/autodiff.hpp"
#include "rccr/errors.hpp"
#include "rccr/rng.hpp"
#include "rccr/symmetry.hpp"

using namespace rccr;
using ad::Value;

namespace {

// All self-inverse permutations of {0..k-1}.
std::vector<std::vector<std::size_t>> involutions(std::size_t k) {
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<std::vector<std::size_t>> out;
    do {
        bool ok = true;
        for (std::size_t i = 0; i < k; ++i) {
            if (perm[perm[i]] != i) { ok = false; break; }
        }
        if (ok) out.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("symmetry");

TEST_CASE("enum names round-trip") {
    using namespace sym;
    CHECK(head_layout_from_string(to_string(HeadLayout::Binned)) == HeadLayout::Binned);
    CHECK(link_kind_from_string(to_string(LinkKind::Softmax)) == LinkKind::Softmax);
    for (auto k : {DivergenceKind::SymmetricKL, DivergenceKind::JensenShannon,
                   DivergenceKind::ScaledMse, DivergenceKind::Huber,
                   DivergenceKind::SymmetricPoissonKL}) {
        CHECK(divergence_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(sym::link_kind_from_string("softplus"), ConfigError);
    CHECK_THROWS_AS(sym::divergence_kind_from_string("kl"), ConfigError);
    CHECK_THROWS_AS(sym::head_layout_from_string("flat"), ConfigError);
}

TEST_CASE("sequence-layout alignment is the identity") {
    sym::AlignmentSpec spec;  // Sequence
    auto y = ad::constant(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto aligned = sym::align(y, spec);
    CHECK(aligned.node() == y.node());  // same graph vertex, not a copy
}

TEST_CASE("binned alignment reverses bins and permutes channels") {
    sym::AlignmentSpec spec;
    spec.layout = sym::HeadLayout::Binned;
    spec.channel_perm = {1, 0};
    Tensor y = Tensor::from({1, 3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor a = sym::align(y, spec);
    // bins reversed then channels swapped: bin0 <- (6,5), bin1 <- (4,3), bin2 <- (2,1)
    CHECK(a == Tensor::from({1, 3, 2}, {6, 5, 4, 3, 2, 1}));
}

TEST_CASE("alignment applied twice is the identity for every self-inverse permutation") {
    Rng rng(8201);
    for (std::size_t k = 1; k <= 4; ++k) {
        for (const auto& perm : involutions(k)) {
            sym::AlignmentSpec spec;
            spec.layout = sym::HeadLayout::Binned;
            spec.channel_perm = perm;
            for (int trial = 0; trial < 5; ++trial) {
                Tensor y = testutil::random_tensor(rng, {2, 1 + rng.below(6), k});
                CHECK(sym::align(sym::align(y, spec), spec) == y);
            }
            // rank-2 (B, K) inputs align the same way
            Tensor flat = testutil::random_tensor(rng, {5, k});
            CHECK(sym::align(sym::align(flat, spec), spec) == flat);
        }
    }
}

TEST_CASE("alignment validation rejects malformed specs") {
    sym::AlignmentSpec spec;
    spec.layout = sym::HeadLayout::Binned;
    Tensor y({1, 4, 3});

    spec.channel_perm = {1, 2, 0};  // a 3-cycle is not self-inverse
    CHECK_THROWS_AS(sym::align(y, spec), ContractError);
    spec.channel_perm = {0, 0, 1};
    CHECK_THROWS_AS(sym::align(y, spec), ContractError);
    spec.channel_perm = {0, 1};
    CHECK_THROWS_AS(sym::align(y, spec), ContractError);  // size vs channels

    spec.channel_perm.clear();
    spec.mask = Tensor::from({2}, {1.0, 0.0});
    CHECK_THROWS_AS(sym::align(y, spec), ContractError);  // mask length vs channels
    spec.mask = Tensor::from({3}, {1.0, 0.5, 0.0});
    CHECK_THROWS_AS(sym::align(y, spec), ContractError);  // non-binary mask

    spec.mask.reset();
    CHECK_THROWS_AS(sym::align(Tensor({4}), spec), DimensionError);  // rank too low
}

TEST_CASE("links map raw outputs into the comparison space") {
    auto y = ad::constant(Tensor::from({1, 2}, {0.0, 3.0}));
    CHECK(sym::apply_link(y, {sym::LinkKind::Identity, 2.0}).node() == y.node());

    Tensor p = sym::apply_link(y.tensor(), {sym::LinkKind::Softmax, 2.0});
    CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[1] > p[0]);

    Tensor l = sym::apply_link(Tensor::from({2}, {0.0, 1.0}), {sym::LinkKind::Log1p, 2.0});
    CHECK(l[0] == 0.0);
    CHECK(l[1] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(
        sym::apply_link(Tensor::from({1}, {-0.5}), {sym::LinkKind::Log1p, 2.0}),
        NumericError);
    CHECK_THROWS_AS(sym::apply_link(y, {sym::LinkKind::Softmax, 0.0}), ConfigError);
}

TEST_CASE("divergence values match independently computed references") {
    using sym::DivergenceKind;
    const Tensor p = Tensor::from({2}, {0.5, 0.5});
    const Tensor q = Tensor::from({2}, {0.9, 0.1});
    CHECK(sym::divergence_value(p, q, {DivergenceKind::SymmetricKL}) ==
          doctest::Approx(0.87888983093448769).epsilon(1e-13));
    CHECK(sym::divergence_value(p, q, {DivergenceKind::JensenShannon}) ==
          doctest::Approx(0.10174922507919681).epsilon(1e-13));

    // Symmetric Poisson KL between rates 1 and 2 collapses to log 2.
    CHECK(sym::divergence_value(Tensor::from({1}, {1.0}), Tensor::from({1}, {2.0}),
                                {DivergenceKind::SymmetricPoissonKL}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-13));

    sym::DivergenceSpec mse{DivergenceKind::ScaledMse};
    CHECK(sym::divergence_value(Tensor::from({2}, {1.0, 1.0}),
                                Tensor::from({2}, {1.0, 3.0}), mse) ==
          doctest::Approx(2.0).epsilon(1e-13));
    mse.sigma = 2.0;
    CHECK(sym::divergence_value(Tensor::from({2}, {1.0, 1.0}),
                                Tensor::from({2}, {1.0, 3.0}), mse) ==
          doctest::Approx(0.5).epsilon(1e-13));

    sym::DivergenceSpec hub{DivergenceKind::Huber};
    CHECK(sym::divergence_value(Tensor::from({2}, {0.5, 0.0}),
                                Tensor::from({2}, {0.0, 3.0}), hub, false) ==
          doctest::Approx(0.125 + 2.5).epsilon(1e-13));

    // Multi-row inputs: sum over channels, mean over rows.
    Tensor u = Tensor::from({2, 2}, {0.5, 0.5, 0.9, 0.1});
    Tensor v = Tensor::from({2, 2}, {0.9, 0.1, 0.9, 0.1});
    CHECK(sym::divergence_value(u, v, {DivergenceKind::SymmetricKL}) ==
          doctest::Approx(0.87888983093448769 / 2.0).epsilon(1e-13));
}

TEST_CASE("divergences are symmetric, nonnegative, and zero at equality") {
    Rng rng(8202);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = 2 + rng.below(5);
        Tensor u = Tensor::from({dim}, testutil::random_prob_row(rng, dim));
        Tensor v = Tensor::from({dim}, testutil::random_prob_row(rng, dim));
        for (auto kind : {sym::DivergenceKind::SymmetricKL,
                          sym::DivergenceKind::JensenShannon}) {
            sym::DivergenceSpec spec{kind};
            const double duv = sym::divergence_value(u, v, spec);
            const double dvu = sym::divergence_value(v, u, spec);
            CHECK(duv >= 0.0);
            CHECK(duv == doctest::Approx(dvu).epsilon(1e-12));
            CHECK(sym::divergence_value(u, u, spec) == 0.0);
        }
        Tensor a = testutil::random_tensor(rng, {dim});
        Tensor b = testutil::random_tensor(rng, {dim});
        for (auto kind : {sym::DivergenceKind::ScaledMse, sym::DivergenceKind::Huber}) {
            sym::DivergenceSpec spec{kind};
            CHECK(sym::divergence_value(a, b, spec) >= 0.0);
            CHECK(sym::divergence_value(a, b, spec) ==
                  doctest::Approx(sym::divergence_value(b, a, spec)).epsilon(1e-12));
            CHECK(sym::divergence_value(a, a, spec) == 0.0);
        }
    }
}

TEST_CASE("Jensen-Shannon is dominated by half the symmetric KL") {
    Rng rng(8203);
    sym::DivergenceSpec js{sym::DivergenceKind::JensenShannon};
    sym::DivergenceSpec skl{sym::DivergenceKind::SymmetricKL};
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t dim = 2 + rng.below(5);
        Tensor u = Tensor::from({dim}, testutil::random_prob_row(rng, dim));
        Tensor v = Tensor::from({dim}, testutil::random_prob_row(rng, dim));
        const double dj = sym::divergence_value(u, v, js);
        const double ds = sym::divergence_value(u, v, skl);
        CHECK(dj < 0.5 * ds);  // strict: distinct rows almost surely
    }
}

TEST_CASE("probability-row contract guards SKL and JS") {
    Tensor bad = Tensor::from({2}, {0.6, 0.5});  // sums to 1.1
    Tensor good = Tensor::from({2}, {0.5, 0.5});
    CHECK_THROWS_AS(
        sym::divergence_value(bad, good, {sym::DivergenceKind::SymmetricKL}),
        ContractError);
    CHECK_THROWS_AS(
        sym::divergence_value(good, bad, {sym::DivergenceKind::JensenShannon}),
        ContractError);
    // The guard can be disabled for masked comparisons.
    CHECK(sym::divergence_value(bad, good, {sym::DivergenceKind::SymmetricKL}, false) >
          0.0);
    CHECK_THROWS_AS(sym::divergence_value(Tensor::from({1}, {-1.0}),
                                          Tensor::from({1}, {1.0}),
                                          {sym::DivergenceKind::SymmetricPoissonKL}),
                    ContractError);
}

TEST_CASE("consistency penalty composes link, mask, and divergence") {
    sym::LinkSpec softmax{sym::LinkKind::Softmax, 2.0};
    sym::DivergenceSpec skl{sym::DivergenceKind::SymmetricKL};
    auto u = ad::parameter(Tensor::from({2, 2}, {0.2, -0.3, 1.0, 0.5}));
    auto v = ad::parameter(Tensor::from({2, 2}, {-0.1, 0.4, 0.9, 0.6}));

    Value pen = sym::consistency_penalty(u, v, softmax, skl);
    const double manual = sym::divergence_value(
        sym::apply_link(u.tensor(), softmax), sym::apply_link(v.tensor(), softmax), skl);
    CHECK(pen.tensor().item() == doctest::Approx(manual).epsilon(1e-13));

    // Gradients reach both orientation branches.
    ad::backward(pen);
    double gu = 0.0, gv = 0.0;
    for (double g : u.grad().values()) gu += std::abs(g);
    for (double g : v.grad().values()) gv += std::abs(g);
    CHECK(gu > 0.0);
    CHECK(gv > 0.0);
}

TEST_CASE("a full-zero channel mask kills the penalty") {
    sym::LinkSpec link{sym::LinkKind::Identity, 2.0};
    sym::DivergenceSpec mse{sym::DivergenceKind::ScaledMse};
    auto u = ad::constant(Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    auto v = ad::constant(Tensor::from({2, 2}, {5.0, 6.0, 7.0, 8.0}));
    Tensor zero = Tensor::from({2}, {0.0, 0.0});
    CHECK(sym::consistency_penalty(u, v, link, mse, &zero).tensor().item() == 0.0);

    Tensor keep_first = Tensor::from({2}, {1.0, 0.0});
    // Only channel 0 differences remain: ((5-1)^2 + (7-3)^2)/2 rows / (2 sigma^2).
    CHECK(sym::consistency_penalty(u, v, link, mse, &keep_first).tensor().item() ==
          doctest::Approx((16.0 + 16.0) / 2.0 / 2.0).epsilon(1e-13));

    Tensor bad_len = Tensor::from({3}, {1.0, 0.0, 1.0});
    CHECK_THROWS_AS(sym::consistency_penalty(u, v, link, mse, &bad_len), ContractError);
    Tensor bad_val = Tensor::from({2}, {1.0, 0.5});
    CHECK_THROWS_AS(sym::consistency_penalty(u, v, link, mse, &bad_val), ContractError);
}

TEST_CASE("Poisson penalty requires the identity link and exponentiates raw outputs") {
    sym::DivergenceSpec poisson{sym::DivergenceKind::SymmetricPoissonKL};
    auto u = ad::constant(Tensor::from({1, 1}, {0.0}));           // rate 1
    auto v = ad::constant(Tensor::from({1, 1}, {std::log(2.0)}));  // rate 2
    CHECK_THROWS_AS(sym::consistency_penalty(u, v, {sym::LinkKind::Softmax, 2.0}, poisson),
                    ContractError);
    CHECK(sym::consistency_penalty(u, v, {sym::LinkKind::Identity, 2.0}, poisson)
              .tensor()
              .item() == doctest::Approx(std::log(2.0)).epsilon(1e-13));
}

TEST_CASE("the full objective adds lambda times the penalty") {
    sym::LinkSpec link{sym::LinkKind::Softmax, 2.0};
    sym::DivergenceSpec skl{sym::DivergenceKind::SymmetricKL};
    auto task = ad::parameter(Tensor::scalar(1.25));
    auto u = ad::parameter(Tensor::from({1, 2}, {0.3, -0.2}));
    auto v = ad::parameter(Tensor::from({1, 2}, {-0.5, 0.1}));

    // lambda == 0 short-circuits to the task node: no reverse-complement branch.
    CHECK(sym::rccr_loss(task, u, v, link, skl, 0.0).node() == task.node());

    const double pen = sym::consistency_penalty(u, v, link, skl).tensor().item();
    Value total = sym::rccr_loss(task, u, v, link, skl, 0.7);
    CHECK(total.tensor().item() == doctest::Approx(1.25 + 0.7 * pen).epsilon(1e-13));

    ad::backward(total);
    CHECK(task.grad().item() == 1.0);
    double gu = 0.0, gv = 0.0;
    for (double g : u.grad().values()) gu += std::abs(g);
    for (double g : v.grad().values()) gv += std::abs(g);
    CHECK(gu > 0.0);
    CHECK(gv > 0.0);

    CHECK_THROWS_AS(sym::rccr_loss(task, u, v, link, skl, -0.1), ConfigError);
    CHECK_THROWS_AS(sym::rccr_loss(u, u, v, link, skl, 0.5), ContractError);
}

TEST_CASE("gradients of every link and divergence pairing check out") {
    Rng rng(8204);
    struct Pairing { sym::LinkKind link; sym::DivergenceKind div; };
    const std::vector<Pairing> pairings = {
        {sym::LinkKind::Softmax, sym::DivergenceKind::SymmetricKL},
        {sym::LinkKind::Softmax, sym::DivergenceKind::JensenShannon},
        {sym::LinkKind::Softmax, sym::DivergenceKind::ScaledMse},
        {sym::LinkKind::Softmax, sym::DivergenceKind::Huber},
        {sym::LinkKind::Identity, sym::DivergenceKind::ScaledMse},
        {sym::LinkKind::Identity, sym::DivergenceKind::Huber},
        {sym::LinkKind::Log1p, sym::DivergenceKind::ScaledMse},
        {sym::LinkKind::Log1p, sym::DivergenceKind::Huber},
        {sym::LinkKind::Identity, sym::DivergenceKind::SymmetricPoissonKL},
    };
    for (const auto& pairing : pairings) {
        const sym::LinkSpec link{pairing.link, 2.0};
        const sym::DivergenceSpec div{pairing.div};
        double worst = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
            // Log1p needs nonnegative inputs; keep everything in a safe band.
            const double lo = pairing.link == sym::LinkKind::Log1p ? 0.1 : -1.0;
            std::vector<Tensor> inputs = {testutil::random_tensor(rng, {2, 3}, lo, 1.0),
                                          testutil::random_tensor(rng, {2, 3}, lo, 1.0)};
            worst = std::max(worst, ad::grad_check(
                [&link, &div](const std::vector<Value>& v) {
                    return sym::consistency_penalty(v[0], v[1], link, div);
                },
                inputs, 1e-4));
        }
        CHECK_MESSAGE(worst < 1e-5, to_string(pairing.link), "+", to_string(pairing.div));
    }
}

TEST_CASE("symmetrization averages branches and fixes agreeing pairs") {
    Rng rng(8205);
    Tensor t = testutil::random_tensor(rng, {3, 4});
    CHECK(sym::symmetrize(t, t) == t);  // bit-exact fixed point

    Tensor a = Tensor::from({2}, {1.0, 3.0});
    Tensor b = Tensor::from({2}, {2.0, 5.0});
    CHECK(sym::symmetrize(a, b) == Tensor::from({2}, {1.5, 4.0}));
    CHECK_THROWS_AS(sym::symmetrize(a, Tensor({3})), DimensionError);
}

TEST_CASE("small softmax perturbations follow the Fisher quadratic form") {
    Rng rng(8206);
    for (double temperature : {1.0, 2.0}) {
        for (int trial = 0; trial < 50; ++trial) {
            Tensor p = Tensor::from({3}, testutil::random_prob_row(rng, 3, 0.05));
            Tensor delta = testutil::random_tensor(rng, {3});
            double norm = 0.0;
            for (double d : delta.values()) norm += d * d;
            norm = std::sqrt(norm);
            for (auto& d : delta.values()) d *= 1e-3 / norm;
            auto res = sym::fisher_quadratic_check(p, delta, temperature);
            REQUIRE_FALSE(res.skipped);
            CHECK(std::abs(res.ratio - 1.0) < 0.01);
        }
    }
}

TEST_CASE("halving the perturbation shrinks the Fisher residual") {
    Rng rng(8207);
    int informative = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor p = Tensor::from({3}, testutil::random_prob_row(rng, 3, 0.05));
        Tensor delta = testutil::random_tensor(rng, {3});
        double norm = 0.0;
        for (double d : delta.values()) norm += d * d;
        norm = std::sqrt(norm);
        for (auto& d : delta.values()) d *= 0.1 / norm;
        Tensor half = delta;
        for (auto& d : half.values()) d *= 0.5;
        const double err = std::abs(sym::fisher_quadratic_check(p, delta, 2.0).ratio - 1.0);
        const double err_half =
            std::abs(sym::fisher_quadratic_check(p, half, 2.0).ratio - 1.0);
        if (err < 1e-5) continue;  // residual already at noise level
        ++informative;
        // First-order decay predicts a factor 2; allow slack for the next order.
        CHECK(err_half <= 0.6 * err + 1e-9);
    }
    CHECK(informative >= 10);
}

TEST_CASE("Fisher check conventions and contracts") {
    // A pure logit shift does not move the softmax: ratio is 1 by convention.
    Tensor p = Tensor::from({3}, {0.2, 0.3, 0.5});
    Tensor shift = Tensor::from({3}, {1e-3, 1e-3, 1e-3});
    auto res = sym::fisher_quadratic_check(p, shift, 2.0);
    CHECK(res.ratio == 1.0);

    Tensor degenerate = Tensor::from({3}, {0.0, 0.5, 0.5});
    auto skipped = sym::fisher_quadratic_check(degenerate, shift, 2.0);
    CHECK(skipped.skipped);
    CHECK_FALSE(skipped.note.empty());

    CHECK_THROWS_AS(sym::fisher_quadratic_check(p, Tensor({2}), 2.0), DimensionError);
    CHECK_THROWS_AS(sym::fisher_quadratic_check(p, shift, 0.0), ConfigError);
}

TEST_SUITE_END();
