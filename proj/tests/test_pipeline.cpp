#include <doctest.h>

#include <filesystem>

#include "kgfuse/checkpoint.hpp"
#include "kgfuse/common.hpp"
#include "kgfuse/evalkit.hpp"
#include "kgfuse/pipeline.hpp"
#include "support/test_util.hpp"

using namespace kgfuse;
using kgfuse::test::TempDir;

namespace {

ModelConfig micro_config() {
    ModelConfig c;
    c.vocab_size = 64;
    c.hidden_dim = 16;
    c.layer_count = 1;
    c.head_count = 2;
    c.ffn_dim = 32;
    c.max_seq_len = 16;
    c.adapter_bottleneck_dim = 4;
    return c;
}

// A tiny category->label QA dataset the micro model can learn quickly.
QaDataset micro_dataset(const std::string& kg, int n, uint64_t seed) {
    const std::vector<std::string> cats{"kite", "drum", "ladle", "anvil"};
    const std::vector<std::string> labels{"toy", "instrument", "utensil", "tool"};
    SeededRng rng(seed);
    QaDataset ds;
    ds.kg = kg;
    for (int i = 0; i < n; ++i) {
        const size_t c = static_cast<size_t>(i) % cats.size();
        QaSample s;
        s.id = kg + "-" + std::to_string(i);
        s.kg = kg;
        s.question = cats[c] + " item" + std::to_string(rng.uniform_int(12)) + " is a [MASK]";
        s.label = 0;
        s.options = {labels[c], labels[(c + 1) % 4], labels[(c + 2) % 4]};
        // shuffle so the gold index varies
        const int rot = static_cast<int>(rng.uniform_int(3));
        std::rotate(s.options.begin(), s.options.begin() + rot, s.options.end());
        s.label = static_cast<int>(std::find(s.options.begin(), s.options.end(), labels[c]) -
                                   s.options.begin());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Tokenizer micro_tokenizer(const std::vector<QaDataset>& sets, int vocab) {
    std::vector<std::string> corpus{"."};
    for (const auto& ds : sets)
        for (const auto& s : ds.samples) {
            corpus.push_back(s.question);
            for (const auto& o : s.options) corpus.push_back(o);
        }
    return Tokenizer::build(corpus, vocab);
}

// Mean (gold NLL - best distractor NLL); more negative means the gold answer
// is preferred by a wider margin.
double gold_margin(const ModelView& view, const Tokenizer& tok, const QaDataset& ds) {
    double total = 0.0;
    for (const auto& s : ds.samples) {
        ScoredOptions scored = score_sample(view, tok, s);
        double best_other = 1e300;
        for (size_t j = 0; j < scored.scores.size(); ++j)
            if (static_cast<int>(j) != s.label) best_other = std::min(best_other, scored.scores[j]);
        total += scored.scores[static_cast<size_t>(s.label)] - best_other;
    }
    return total / static_cast<double>(ds.samples.size());
}

}  // namespace

TEST_SUITE("pipeline") {
    TEST_CASE("pretraining with zero steps returns theta unchanged") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 60);
        Tokenizer tok = Tokenizer::build({"a b c"}, cfg.vocab_size);
        BackboneParams out = pretrain_backbone(theta, tok, {"a b c"}, 0, TrainHyper{});
        CHECK(out.digest() == theta.digest());
        TrainHyper hyper;
        CHECK_THROWS_WITH_AS(pretrain_backbone(theta, tok, {}, 5, hyper),
                             doctest::Contains("empty corpus"), Error);
    }

    TEST_CASE("pretraining lowers the masked-token loss") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 61);
        std::vector<std::string> corpus;
        const std::vector<std::string> cats{"kite", "drum", "ladle", "anvil", "sled"};
        const std::vector<std::string> labels{"toy", "instrument", "utensil", "tool", "ride"};
        for (int i = 0; i < 50; ++i)
            corpus.push_back(cats[static_cast<size_t>(i) % 5] + " thing" + std::to_string(i) +
                             " is a " + labels[static_cast<size_t>(i) % 5] + ".");
        Tokenizer tok = Tokenizer::build(corpus, cfg.vocab_size);
        const double before = mlm_eval_loss(theta, tok, corpus, 99);
        TrainHyper hyper;
        hyper.learning_rate = 2e-3;
        hyper.batch_size = 8;
        hyper.seed = 7;
        std::vector<double> curve;
        BackboneParams trained = pretrain_backbone(theta, tok, corpus, 500, hyper, &curve);
        const double after = mlm_eval_loss(trained, tok, corpus, 99);
        CHECK(after < before);
        CHECK(curve.size() == 500);
        CHECK(std::isfinite(after));
        CHECK(after >= 0.0);
    }

    TEST_CASE("expert training never touches the backbone") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 62);
        QaDataset data = micro_dataset("kg1", 24, 1);
        Tokenizer tok = micro_tokenizer({data}, cfg.vocab_size);
        const std::string before = theta.digest();
        TrainHyper hyper;
        hyper.learning_rate = 5e-3;
        hyper.batch_size = 8;
        hyper.epochs = 1;
        hyper.seed = 3;
        AdapterParams phi = train_expert(theta, tok, data, hyper);
        CHECK(theta.digest() == before);  // bitwise freeze contract
        CHECK(phi.role == "expert:kg1");

        QaDataset mix = data;
        mix.kg = "mixture";
        CHECK_THROWS_WITH_AS(train_expert(theta, tok, mix, hyper),
                             doctest::Contains("single-KG"), Error);
    }

    TEST_CASE("the first recorded loss equals a standalone evaluation at init") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 63);
        QaDataset data = micro_dataset("kg1", 12, 2);
        Tokenizer tok = micro_tokenizer({data}, cfg.vocab_size);
        TrainHyper hyper;
        hyper.learning_rate = 1e-3;
        hyper.batch_size = 4;
        hyper.epochs = 1;
        hyper.seed = 17;
        std::vector<double> curve;
        train_expert(theta, tok, data, hyper, &curve);
        REQUIRE(!curve.empty());

        // Replay the first batch with a fresh zero-initialized adapter.
        std::vector<size_t> order(data.samples.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        SeededRng order_rng(derive_seed(hyper.seed, "expert.order"));
        order_rng.shuffle(order);
        AdapterParams phi0 = init_adapter(cfg, "expert:kg1", hyper.seed);
        ModelView view;
        view.backbone = &theta;
        view.adapter = &phi0;
        RankingHyper rh;
        rh.margin = hyper.margin;
        rh.option_count = 3;
        double expect = 0.0;
        for (int i = 0; i < hyper.batch_size; ++i) {
            const QaSample& s = data.samples[order[static_cast<size_t>(i)]];
            expect += ranking_loss(score_sample(view, tok, s), s.label, rh);
        }
        expect /= hyper.batch_size;
        CHECK(curve[0] == doctest::Approx(expect).epsilon(1e-10));
    }

    TEST_CASE("expert training widens the gold margin epoch over epoch") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 64);
        QaDataset data = micro_dataset("kg1", 32, 3);
        Tokenizer tok = micro_tokenizer({data}, cfg.vocab_size);
        TrainHyper hyper;
        hyper.learning_rate = 8e-3;
        hyper.batch_size = 8;
        hyper.seed = 5;
        std::vector<double> margins;
        for (int epochs = 0; epochs <= 3; ++epochs) {
            TrainHyper h = hyper;
            h.epochs = std::max(1, epochs);
            AdapterParams phi =
                epochs == 0 ? init_adapter(cfg, "expert:kg1", hyper.seed)
                            : train_expert(theta, tok, data, h);
            ModelView view;
            view.backbone = &theta;
            view.adapter = &phi;
            margins.push_back(gold_margin(view, tok, data));
        }
        // Same order stream every run, so run k extends run k-1 by one epoch.
        CHECK(margins[1] < margins[0]);
        CHECK(margins[2] < margins[1]);
        CHECK(margins[3] < margins[2]);
    }

    TEST_CASE("kgc training freezes theta and starts near uniform") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 65);
        QaDataset a = micro_dataset("kga", 16, 4);
        QaDataset b = micro_dataset("kgb", 16, 5);
        for (auto& s : b.samples) s.question = replace_all(s.question, "is a", "works as a");
        Tokenizer tok = micro_tokenizer({a, b}, cfg.vocab_size);
        auto kgc = derive_kgc({a, b}, "[MASK]");
        const std::string before = theta.digest();
        TrainHyper hyper;
        hyper.learning_rate = 2e-3;
        hyper.batch_size = 8;
        hyper.epochs = 1;
        hyper.seed = 6;
        std::vector<double> curve;
        auto [phi, head] = train_kgc(theta, tok, kgc, 2, hyper, &curve);
        CHECK(theta.digest() == before);
        CHECK(head.w.rows() == 2);
        REQUIRE(!curve.empty());
        CHECK(curve[0] == doctest::Approx(std::log(2.0)).epsilon(0.15));

        auto single = derive_kgc({a}, "[MASK]");
        CHECK_THROWS_WITH_AS(train_kgc(theta, tok, single, 2, hyper),
                             doctest::Contains("distinct KG labels"), Error);
    }

    TEST_CASE("fusion training freezes every input bundle bitwise") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 66);
        QaDataset a = micro_dataset("kga", 12, 7);
        QaDataset b = micro_dataset("kgb", 12, 8);
        Tokenizer tok = micro_tokenizer({a, b}, cfg.vocab_size);
        TrainHyper hyper;
        hyper.learning_rate = 1e-3;
        hyper.batch_size = 6;
        hyper.epochs = 1;
        hyper.seed = 9;
        AdapterParams e1 = train_expert(theta, tok, a, hyper);
        AdapterParams e2 = train_expert(theta, tok, b, hyper);
        auto [kgc_phi, head] = train_kgc(theta, tok, derive_kgc({a, b}, "[MASK]"), 2, hyper);

        QaDataset mix = build_fusion_mixture({a, b}, {8, 11});
        const std::string t0 = theta.digest(), d1 = e1.digest(), d2 = e2.digest(),
                          dk = kgc_phi.digest();
        FusionParams psi = train_fusion(theta, {&e1, &e2}, tok, mix, hyper, QueryMode::kgc,
                                        &kgc_phi, 0.1);
        CHECK(theta.digest() == t0);
        CHECK(e1.digest() == d1);
        CHECK(e2.digest() == d2);
        CHECK(kgc_phi.digest() == dk);
        CHECK(psi.blocks.size() == 1);

        CHECK_THROWS_WITH_AS(
            train_fusion(theta, {&e1, &e2}, tok, a, hyper, QueryMode::plm, nullptr, 0.0),
            doctest::Contains("mixture"), Error);
        CHECK_THROWS_WITH_AS(
            train_fusion(theta, {&e1, &e2}, tok, mix, hyper, QueryMode::kgc, nullptr, 0.0),
            doctest::Contains("classifier"), Error);
    }

    TEST_CASE("single-task and multi-task full training coincide on one dataset") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 67);
        QaDataset data = micro_dataset("kg1", 16, 10);
        Tokenizer tok = micro_tokenizer({data}, cfg.vocab_size);
        TrainHyper hyper;
        hyper.learning_rate = 1e-3;
        hyper.batch_size = 8;
        hyper.epochs = 1;
        hyper.seed = 11;
        const std::string before = theta.digest();
        BackboneParams stl = train_full(theta, tok, {data}, hyper);
        BackboneParams mtl = train_full(theta, tok, {data}, hyper);
        CHECK(theta.digest() == before);  // functional update
        CHECK(stl.digest() == mtl.digest());
        CHECK(stl.digest() != before);
    }

    TEST_CASE("multi-task training loss decreases epoch over epoch") {
        ModelConfig cfg = micro_config();
        BackboneParams theta = init_backbone(cfg, 68);
        QaDataset a = micro_dataset("kga", 16, 12);
        QaDataset b = micro_dataset("kgb", 16, 13);
        Tokenizer tok = micro_tokenizer({a, b}, cfg.vocab_size);
        TrainHyper hyper;
        hyper.learning_rate = 3e-3;
        hyper.batch_size = 8;
        hyper.epochs = 3;
        hyper.seed = 14;
        std::vector<double> curve;
        train_full(theta, tok, {a, b}, hyper, &curve);
        const size_t per_epoch = curve.size() / 3;
        double e0 = 0, e1 = 0, e2 = 0;
        for (size_t i = 0; i < per_epoch; ++i) {
            e0 += curve[i];
            e1 += curve[per_epoch + i];
            e2 += curve[2 * per_epoch + i];
        }
        CHECK(e1 < e0);
        CHECK(e2 < e1);
    }

    TEST_CASE("the full framework runs end to end and resumes without retraining") {
        TempDir dir;
        auto spec1 = kgfuse::test::fixture_kg_one(60);
        auto spec2 = kgfuse::test::fixture_kg_two(60);
        kgfuse::test::write_text(dir.file("kg1.tsv"), make_fixture_tsv(spec1));
        kgfuse::test::write_text(dir.file("kg2.tsv"), make_fixture_tsv(spec2));
        ExperimentConfig config =
            kgfuse::test::fixture_config(dir.file("out"), dir.file("kg1.tsv"), dir.file("kg2.tsv"));
        // shrink for unit-test speed; the acceptance suite runs the full size
        config.model.hidden_dim = 16;
        config.model.ffn_dim = 32;
        config.model.layer_count = 1;
        config.model.adapter_bottleneck_dim = 4;
        config.backbone_pretrain_steps = 30;
        config.expert_hyper.epochs = 1;
        config.kgc_hyper.epochs = 1;
        config.fusion_hyper.epochs = 1;
        config.mixture_per_kg = 24;

        ArtifactBundle bundle = run_algorithm1(config, false);
        CHECK(checkpoint_exists(bundle.backbone_dir));
        REQUIRE(bundle.expert_dirs.size() == 2);
        CHECK(checkpoint_exists(bundle.expert_dirs[0].second));
        CHECK(checkpoint_exists(bundle.expert_dirs[1].second));
        CHECK(checkpoint_exists(bundle.kgc_dir));
        CHECK(checkpoint_exists(bundle.fusion_dir));

        CheckpointInfo info = read_checkpoint_info(bundle.expert_dirs[0].second);
        BackboneParams theta = load_backbone(bundle.backbone_dir);
        CHECK(info.provenance.at("backbone_digest") == theta.digest());

        // Resume: everything is complete, so nothing may change on disk.
        const std::string snapshot = dir.file("snapshot");
        std::filesystem::copy(config.output_root, snapshot,
                              std::filesystem::copy_options::recursive);
        ArtifactBundle again = run_algorithm1(config, true);
        CHECK(again.fusion_dir == bundle.fusion_dir);
        CHECK(kgfuse::test::dirs_equal(config.output_root + "/checkpoints",
                                       snapshot + "/checkpoints"));

        // Dependency errors name the missing checkpoint.
        ExperimentConfig broken = config;
        broken.output_root = dir.file("broken");
        std::filesystem::create_directories(broken.data_dir());
        for (const auto& kg : broken.kgs) {
            std::filesystem::copy(config.qa_path(kg.name, "train"),
                                  broken.qa_path(kg.name, "train"));
        }
        std::filesystem::copy(config.mixture_path("train"), broken.mixture_path("train"));
        CHECK_THROWS_WITH_AS(run_stage(broken, "expert:kgalpha", false),
                             doctest::Contains("missing checkpoint"), Error);
    }

    TEST_CASE("run manifests record status and config digests") {
        TempDir dir;
        RunManifest m;
        m.stage = "expert:kg1";
        m.status = "complete";
        m.mode = "expert_adapter";
        m.seed = 123;
        m.config_digest = "abc";
        m.dataset_digests["qa"] = "def";
        m.checkpoints = {"x"};
        m.loss_curve = {1.0, 0.5};
        m.wall_time_s = 2.5;
        m.write(dir.file("m.json"));
        RunManifest back = RunManifest::read(dir.file("m.json"));
        CHECK(back.stage == m.stage);
        CHECK(back.status == "complete");
        CHECK(back.dataset_digests.at("qa") == "def");
        CHECK(back.loss_curve == m.loss_curve);
    }
}
