#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "rccr/errors.hpp"
#include "rccr/model.hpp"
#include "rccr/seq.hpp"

using namespace rccr;

namespace {

Tensor random_onehot_batch(Rng& rng, std::size_t n, std::size_t len) {
    std::vector<SequenceRecord> records(n);
    std::vector<const SequenceRecord*> ptrs;
    for (auto& r : records) {
        r.bases = testutil::random_bases(rng, len);
        ptrs.push_back(&r);
    }
    return one_hot_batch(ptrs);
}

bool same_params(const model::Predictor& a, const model::Predictor& b) {
    if (a.named_params.size() != b.named_params.size()) return false;
    for (std::size_t i = 0; i < a.named_params.size(); ++i) {
        if (a.named_params[i].first != b.named_params[i].first) return false;
        if (!(a.named_params[i].second.tensor() == b.named_params[i].second.tensor())) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("seeded builds are bit-identical and seeds matter") {
    model::BackboneConfig cfg;
    cfg.conv = {{8, 5, 1}, {8, 3, 1}};
    cfg.hidden = 16;
    auto head = model::HeadKind::sequence_classification(2);
    auto a = model::build_predictor(cfg, head, 40);
    auto b = model::build_predictor(cfg, head, 40);
    CHECK(same_params(a, b));

    cfg.seed = 7;
    auto c = model::build_predictor(cfg, head, 40);
    CHECK_FALSE(same_params(a, c));
}

TEST_CASE("forward output shapes follow the head kind") {
    Rng rng(8301);
    model::BackboneConfig cfg;
    cfg.conv = {{6, 3, 1}, {6, 3, 1}};
    cfg.hidden = 8;
    Tensor batch = random_onehot_batch(rng, 3, 64);

    auto clf = model::build_predictor(cfg, model::HeadKind::sequence_classification(3), 64);
    CHECK(clf.forward(batch).tensor().shape() == std::vector<std::size_t>{3, 3});

    auto reg = model::build_predictor(cfg, model::HeadKind::sequence_regression(2), 64);
    CHECK(reg.forward(batch).tensor().shape() == std::vector<std::size_t>{3, 2});

    auto binreg = model::build_predictor(cfg, model::HeadKind::bin_regression(8, 2), 64);
    CHECK(binreg.forward(batch).tensor().shape() == std::vector<std::size_t>{3, 8, 2});

    auto binclf = model::build_predictor(cfg, model::HeadKind::bin_classification(4, 2), 64);
    CHECK(binclf.forward(batch).tensor().shape() == std::vector<std::size_t>{3, 4, 2});

    // Forward is a pure function of parameters and input.
    CHECK(clf.forward(batch).tensor() == clf.forward(batch).tensor());
}

TEST_CASE("forward validates its input batch") {
    model::BackboneConfig cfg;
    cfg.conv = {{4, 3, 1}};
    cfg.hidden = 8;
    auto p = model::build_predictor(cfg, model::HeadKind::sequence_classification(2), 32);
    CHECK_THROWS_AS(p.forward(Tensor({2, 32})), DimensionError);
    CHECK_THROWS_AS(p.forward(Tensor({2, 16, 4})), DimensionError);
    CHECK_THROWS_AS(p.forward(Tensor({2, 32, 5})), DimensionError);
}

TEST_CASE("config validation rejects malformed networks") {
    model::BackboneConfig cfg;
    cfg.conv = {{8, 4, 1}};  // even kernel
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.conv = {};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.conv = {{8, 5, 0}};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.conv = {{8, 5, 1}};
    cfg.hidden = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.hidden = 16;
    cfg.activation = "tanh";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.activation = "gelu";
    CHECK_NOTHROW(cfg.validate());

    model::HeadKind bad;
    bad.classes = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(model::build_predictor(cfg, model::HeadKind::sequence_classification(2), 0),
                    ConfigError);
}

TEST_CASE("bins_for divides the sequence into resolution-sized windows") {
    CHECK(model::bins_for(2048, 128) == 16);
    CHECK(model::bins_for(256, 64) == 4);
    CHECK_THROWS_AS(model::bins_for(0, 64), ConfigError);
    CHECK_THROWS_AS(model::bins_for(256, 0), ConfigError);
}

TEST_CASE("parameters are shared leaves with gradients") {
    Rng rng(8302);
    model::BackboneConfig cfg;
    cfg.conv = {{4, 3, 1}};
    cfg.hidden = 8;
    auto p = model::build_predictor(cfg, model::HeadKind::sequence_classification(2), 24);

    std::size_t total = 0;
    for (const auto& [name, v] : p.named_params) {
        CHECK_FALSE(name.empty());
        CHECK(v.requires_grad());
        total += v.tensor().size();
    }
    CHECK(p.parameter_count() == total);
    CHECK(p.parameters().size() == p.named_params.size());

    Tensor batch = random_onehot_batch(rng, 2, 24);
    ad::backward(ad::mean_all(p.forward(batch)));
    bool some_grad = false;
    for (const auto& v : p.parameters()) {
        for (double g : v.grad().values()) {
            if (g != 0.0) some_grad = true;
        }
    }
    CHECK(some_grad);
    p.zero_grad();
    for (const auto& v : p.parameters()) {
        CHECK_THROWS_AS(v.grad(), ContractError);  // buffers released
    }
}

TEST_CASE("a fresh predictor is not orientation-symmetric") {
    // Nothing in the architecture enforces strand symmetry; an untrained
    // network should disagree with itself under reverse complement.
    Rng rng(8303);
    model::BackboneConfig cfg;
    cfg.conv = {{8, 5, 1}, {8, 5, 1}};
    cfg.hidden = 16;
    auto p = model::build_predictor(cfg, model::HeadKind::sequence_classification(2), 50);

    int differing = 0;
    for (int trial = 0; trial < 10; ++trial) {
        SequenceRecord r;
        r.bases = testutil::random_bases(rng, 50);
        SequenceRecord rc = reverse_complement(r);
        Tensor fwd = p.forward(one_hot_batch({&r})).tensor();
        Tensor rev = p.forward(one_hot_batch({&rc})).tensor();
        if (testutil::max_abs_diff(fwd, rev) > 1e-6) ++differing;
    }
    CHECK(differing >= 8);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Rng rng(8304);
    model::BackboneConfig cfg;
    cfg.conv = {{6, 3, 1}, {4, 3, 2}};
    cfg.hidden = 12;
    cfg.activation = "gelu";
    cfg.seed = 99;
    auto p = model::build_predictor(cfg, model::HeadKind::bin_regression(8, 2), 64);

    const std::string path = "tmp_model_roundtrip.ckpt";
    model::save_checkpoint(p, path);
    auto q = model::load_checkpoint(path);

    CHECK(q.backbone.hidden == 12);
    CHECK(q.backbone.activation == "gelu");
    CHECK(q.backbone.seed == 99);
    REQUIRE(q.backbone.conv.size() == 2);
    CHECK(q.backbone.conv[1].channels == 4);
    CHECK(q.backbone.conv[1].stride == 2);
    CHECK(q.head.type == model::HeadType::BinRegression);
    CHECK(q.head.bins == 8);
    CHECK(q.head.channels == 2);
    CHECK(q.input_length == 64);
    CHECK(same_params(p, q));

    Tensor batch = random_onehot_batch(rng, 2, 64);
    CHECK(p.forward(batch).tensor() == q.forward(batch).tensor());
    std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected with parse errors") {
    model::BackboneConfig cfg;
    cfg.conv = {{4, 3, 1}};
    cfg.hidden = 8;
    auto p = model::build_predictor(cfg, model::HeadKind::sequence_classification(2), 24);
    const std::string path = "tmp_model_corrupt.ckpt";
    model::save_checkpoint(p, path);

    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 8);
    CHECK_THROWS_AS(model::load_checkpoint(path), ParseError);

    model::save_checkpoint(p, path);
    {
        std::ofstream out(path, std::ios::binary | std::ios::app);
        out.put('x');
    }
    CHECK_THROWS_AS(model::load_checkpoint(path), ParseError);

    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "not a checkpoint\n";
    }
    CHECK_THROWS_AS(model::load_checkpoint(path), ParseError);

    std::filesystem::remove(path);
    CHECK_THROWS_AS(model::load_checkpoint(path), ContractError);
}

TEST_SUITE_END();
