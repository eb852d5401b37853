#include <doctest.h>

#include "kgfuse/common.hpp"
#include "kgfuse/model.hpp"
#include "support/test_util.hpp"

using namespace kgfuse;

namespace {
ModelConfig toy_config(int vocab = 32, int hidden = 8, int layers = 2, int heads = 2,
                       int ffn = 16, int bottleneck = 4) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.hidden_dim = hidden;
    c.layer_count = layers;
    c.head_count = heads;
    c.ffn_dim = ffn;
    c.max_seq_len = 16;
    c.adapter_bottleneck_dim = bottleneck;
    return c;
}

std::vector<int> random_tokens(const ModelConfig& cfg, int len, SeededRng& rng) {
    std::vector<int> ids{cfg.cls_token_id};
    for (int i = 0; i < len; ++i)
        ids.push_back(5 + static_cast<int>(rng.uniform_int(
                              static_cast<uint64_t>(cfg.vocab_size - 5))));
    ids.push_back(cfg.sep_token_id);
    return ids;
}

double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }
}  // namespace

TEST_SUITE("model") {
    TEST_CASE("initialization is deterministic in the seed") {
        ModelConfig cfg = toy_config();
        BackboneParams a = init_backbone(cfg, 7);
        BackboneParams b = init_backbone(cfg, 7);
        BackboneParams c = init_backbone(cfg, 8);
        CHECK(a.digest() == b.digest());
        CHECK(a.digest() != c.digest());
    }

    TEST_CASE("config invariants are enforced") {
        ModelConfig cfg = toy_config();
        cfg.head_count = 3;  // does not divide hidden_dim = 8
        CHECK_THROWS(init_backbone(cfg, 1));
        ModelConfig cfg2 = toy_config();
        cfg2.adapter_bottleneck_dim = 8;
        CHECK_THROWS(cfg2.validate());
        ModelConfig cfg3 = toy_config();
        cfg3.pad_token_id = cfg3.cls_token_id;
        CHECK_THROWS(cfg3.validate());
    }

    TEST_CASE("parameter count matches the closed form") {
        ModelConfig cfg;  // the default desk-scale shape
        BackboneParams p = init_backbone(cfg, 1);
        const size_t V = static_cast<size_t>(cfg.vocab_size);
        const size_t H = static_cast<size_t>(cfg.hidden_dim);
        const size_t F = static_cast<size_t>(cfg.ffn_dim);
        const size_t P = static_cast<size_t>(cfg.max_seq_len);
        const size_t L = static_cast<size_t>(cfg.layer_count);
        const size_t per_layer = 4 * (H * H + H)      // attention projections
                                 + 2 * H              // ln1
                                 + H * F + F + F * H + H  // ffn
                                 + 2 * H;             // ln2
        const size_t expected = V * H + P * H + 2 * H   // embeddings
                                + L * per_layer
                                + H * H + H + 2 * H + H * V + V;  // mlm head
        CHECK(p.parameter_count() == expected);
    }

    TEST_CASE("plain forward produces normalized logits and is deterministic") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 3);
        SeededRng rng(4);
        auto ids = random_tokens(cfg, 5, rng);
        ForwardTrace t1 = forward_plain(p, ids);
        ForwardTrace t2 = forward_plain(p, ids);
        REQUIRE(t1.h_plm.size() == 2);
        CHECK(max_abs_diff(t1.mlm_logits, t2.mlm_logits) == 0.0);
        for (int r = 0; r < t1.mlm_logits.rows(); ++r) {
            Eigen::ArrayXd row = t1.mlm_logits.row(r).array();
            const double mx = row.maxCoeff();
            const double softmax_sum = ((row - mx).exp() / (row - mx).exp().sum()).sum();
            CHECK(softmax_sum == doctest::Approx(1.0).epsilon(1e-6));
        }
        CHECK(all_finite(t1.mlm_logits));
        CHECK(t1.cls_hidden.cols() == cfg.hidden_dim);
    }

    TEST_CASE("padding suffix never changes non-pad logits") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 5);
        SeededRng rng(6);
        auto ids = random_tokens(cfg, 4, rng);
        ForwardTrace base = forward_plain(p, ids);
        auto padded = ids;
        padded.push_back(cfg.pad_token_id);
        padded.push_back(cfg.pad_token_id);
        ForwardTrace pad = forward_plain(p, padded);
        for (int r = 0; r < base.mlm_logits.rows(); ++r)
            for (int c = 0; c < base.mlm_logits.cols(); ++c)
                CHECK(std::abs(base.mlm_logits(r, c) - pad.mlm_logits(r, c)) < 1e-6);
    }

    TEST_CASE("sequences beyond max_seq_len are rejected") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 5);
        std::vector<int> ids(static_cast<size_t>(cfg.max_seq_len + 1), 5);
        CHECK_THROWS_WITH_AS(forward_plain(p, ids), doctest::Contains("max_seq_len"), Error);
        std::vector<int> bad{5, cfg.vocab_size};
        CHECK_THROWS(forward_plain(p, bad));
    }

    TEST_CASE("zero-initialized adapters are exact identities") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 9);
        AdapterParams phi = init_adapter(cfg, "expert:test", 10);
        SeededRng rng(11);
        for (int trial = 0; trial < 5; ++trial) {
            auto ids = random_tokens(cfg, 3 + trial, rng);
            ForwardTrace plain = forward_plain(p, ids);
            ForwardTrace adapted = forward_adapter(p, phi, ids);
            CHECK(max_abs_diff(plain.mlm_logits, adapted.mlm_logits) <= 1e-7);
            CHECK(max_abs_diff(plain.cls_hidden, adapted.cls_hidden) <= 1e-7);
        }
    }

    TEST_CASE("a perturbed adapter changes the hidden states") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 12);
        AdapterParams phi = init_adapter(cfg, "expert:test", 13);
        phi.blocks[0].up_w(0, 0) = 0.1;
        SeededRng rng(14);
        auto ids = random_tokens(cfg, 5, rng);
        ForwardTrace plain = forward_plain(p, ids);
        ForwardTrace adapted = forward_adapter(p, phi, ids);
        CHECK(max_abs_diff(plain.mlm_logits, adapted.mlm_logits) > 0.0);
        REQUIRE(adapted.h_expert.size() == 1);
        for (const auto& h : adapted.h_expert[0]) CHECK(all_finite(h));
    }

    TEST_CASE("single-expert fusion at identity values reproduces the expert") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 15);
        AdapterParams phi = init_adapter(cfg, "expert:test", 16);
        phi.blocks[0].up_w(1, 2) = 0.3;  // make the expert non-trivial
        phi.blocks[1].up_w(2, 1) = -0.2;
        FusionParams psi = init_fusion(cfg, 17);
        SeededRng rng(18);
        for (int trial = 0; trial < 5; ++trial) {
            auto ids = random_tokens(cfg, 4 + trial, rng);
            ForwardTrace expert = forward_adapter(p, phi, ids);
            ForwardTrace fused = forward_fusion(p, {&phi}, psi, ids, QueryMode::plm);
            CHECK(max_abs_diff(expert.mlm_logits, fused.mlm_logits) <= 1e-6);
            for (const auto& attn : fused.attention)
                CHECK(max_abs_diff(attn, Mat::Ones(attn.rows(), 1)) <= 1e-12);
        }
    }

    TEST_CASE("fusion attention rows are distributions") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 19);
        AdapterParams e1 = init_adapter(cfg, "expert:a", 20);
        AdapterParams e2 = init_adapter(cfg, "expert:b", 21);
        e1.blocks[0].up_w(0, 1) = 0.4;
        e2.blocks[1].up_w(1, 0) = -0.5;
        FusionParams psi = init_fusion(cfg, 22);
        SeededRng rng(23);
        for (int trial = 0; trial < 20; ++trial) {
            auto ids = random_tokens(cfg, 2 + static_cast<int>(rng.uniform_int(8)), rng);
            ForwardTrace fused = forward_fusion(p, {&e1, &e2}, psi, ids, QueryMode::plm);
            REQUIRE(fused.attention.size() == 2);
            for (const auto& attn : fused.attention) {
                for (int r = 0; r < attn.rows(); ++r) {
                    CHECK(attn.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
                    for (int c = 0; c < attn.cols(); ++c) CHECK(attn(r, c) >= 0.0);
                }
            }
        }
    }

    TEST_CASE("muting one of two experts reduces fusion to the other") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 24);
        AdapterParams e1 = init_adapter(cfg, "expert:a", 25);
        AdapterParams e2 = init_adapter(cfg, "expert:b", 26);
        e1.blocks[0].up_w(0, 1) = 0.4;
        e2.blocks[0].up_w(1, 0) = -0.7;
        FusionParams psi = init_fusion(cfg, 27);
        SeededRng rng(28);
        auto ids = random_tokens(cfg, 6, rng);
        ForwardTrace muted = forward_fusion(p, {&e1, &e2}, psi, ids, QueryMode::plm, nullptr,
                                            /*mute_experts=*/{1});
        ForwardTrace solo = forward_fusion(p, {&e1}, psi, ids, QueryMode::plm);
        CHECK(max_abs_diff(muted.mlm_logits, solo.mlm_logits) <= 1e-6);
    }

    TEST_CASE("fusion demands experts and the kgc query needs its adapter") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 29);
        FusionParams psi = init_fusion(cfg, 30);
        SeededRng rng(31);
        auto ids = random_tokens(cfg, 4, rng);
        CHECK_THROWS(forward_fusion(p, {}, psi, ids, QueryMode::plm));
        AdapterParams e1 = init_adapter(cfg, "expert:a", 32);
        CHECK_THROWS(forward_fusion(p, {&e1}, psi, ids, QueryMode::kgc, nullptr));
        AdapterParams kgc = init_adapter(cfg, "kgc", 33);
        ForwardTrace t = forward_fusion(p, {&e1}, psi, ids, QueryMode::kgc, &kgc);
        CHECK(t.h_kgc.size() == 2);
    }

    TEST_CASE("kg classification returns a distribution and checks CLS") {
        ModelConfig cfg = toy_config();
        BackboneParams p = init_backbone(cfg, 34);
        AdapterParams kgc = init_adapter(cfg, "kgc", 35);
        ClassifierHead head = init_classifier(cfg, 4, 36);
        SeededRng rng(37);
        auto ids = random_tokens(cfg, 5, rng);
        auto probs = classify_kg(p, kgc, head, ids);
        REQUIRE(probs.size() == 4);
        double sum = 0.0;
        for (double v : probs) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

        ClassifierHead single = init_classifier(cfg, 1, 38);
        auto one = classify_kg(p, kgc, single, ids);
        REQUIRE(one.size() == 1);
        CHECK(one[0] == 1.0);

        std::vector<int> no_cls{5, 6, 7};
        CHECK_THROWS_WITH_AS(classify_kg(p, kgc, head, no_cls), doctest::Contains("CLS"),
                             Error);
    }
}
