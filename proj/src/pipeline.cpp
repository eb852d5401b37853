#include "kgfuse/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>

#include "kgfuse/checkpoint.hpp"
#include "kgfuse/common.hpp"
#include "kgfuse/digest.hpp"

namespace kgfuse {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::expert_adapter: return "expert_adapter";
        case TrainMode::kgc_adapter: return "kgc_adapter";
        case TrainMode::fusion: return "fusion";
        case TrainMode::stl_plm: return "stl_plm";
        case TrainMode::mtl: return "mtl";
    }
    return "?";
}

std::string RunManifest::to_json() const {
    json j{{"stage", stage},
           {"status", status},
           {"mode", mode},
           {"seed", seed},
           {"config_digest", config_digest},
           {"dataset_digests", dataset_digests},
           {"checkpoints", checkpoints},
           {"loss_curve", loss_curve},
           {"wall_time_s", wall_time_s},
           {"error", error}};
    return j.dump(2);
}

RunManifest RunManifest::from_json(const std::string& text) {
    json j = json::parse(text);
    RunManifest m;
    m.stage = j.at("stage").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.mode = j.at("mode").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.dataset_digests = j.at("dataset_digests").get<std::map<std::string, std::string>>();
    m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    m.wall_time_s = j.at("wall_time_s").get<double>();
    m.error = j.value("error", "");
    return m;
}

void RunManifest::write(const std::string& path) const { write_file_atomic(path, to_json()); }

RunManifest RunManifest::read(const std::string& path) { return from_json(read_file(path)); }

// --- shared training machinery -----------------------------------------------

namespace {

struct GradAccum {
    std::map<std::string, Mat> sums;
    long count = 0;

    void add(Tape& t, const NamedVars& reg) {
        for (const auto& [name, var] : reg) {
            const Mat& g = t.grad(var);
            auto it = sums.find(name);
            if (it == sums.end())
                sums.emplace(name, g);
            else
                it->second += g;
        }
        ++count;
    }

    std::map<std::string, Mat> mean() const {
        std::map<std::string, Mat> out = sums;
        const double inv = 1.0 / static_cast<double>(std::max<long>(1, count));
        for (auto& [name, g] : out) g *= inv;
        return out;
    }
};

long steps_per_epoch(size_t n, int batch_size) {
    return static_cast<long>((n + static_cast<size_t>(batch_size) - 1) /
                             static_cast<size_t>(batch_size));
}

// Shared epoch/batch loop over per-sample tapes built by `sample_loss`.
// Records the mean pre-update loss of every batch into `curve`.
void run_batched_training(
    size_t n_samples, const TrainHyper& hyper, AdamW& adam, const ParamRefs& trainable,
    SeededRng& order_rng, std::vector<double>* curve,
    const std::function<double(size_t sample_index, GradAccum& accum)>& sample_loss) {
    std::vector<size_t> order(n_samples);
    for (size_t i = 0; i < n_samples; ++i) order[i] = i;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (size_t start = 0; start < n_samples; start += static_cast<size_t>(hyper.batch_size)) {
            const size_t end = std::min(n_samples, start + static_cast<size_t>(hyper.batch_size));
            GradAccum accum;
            double loss_sum = 0.0;
            for (size_t i = start; i < end; ++i) loss_sum += sample_loss(order[i], accum);
            adam.step(trainable, accum.mean());
            if (curve) curve->push_back(loss_sum / static_cast<double>(end - start));
        }
    }
}

std::vector<int> statement_ids(const std::string& statement, const Tokenizer& tok,
                               const ModelConfig& cfg) {
    std::vector<int> ids;
    ids.push_back(cfg.cls_token_id);
    for (int id : tok.encode(statement)) ids.push_back(id);
    ids.push_back(cfg.sep_token_id);
    if (static_cast<int>(ids.size()) > cfg.max_seq_len)
        throw Error("statement exceeds max_seq_len: '" + statement + "'");
    return ids;
}

}  // namespace

// --- pretraining ---------------------------------------------------------------

namespace {
struct MaskedSentence {
    std::vector<int> ids;       // with masks applied
    std::vector<int> rows;      // masked positions
    std::vector<int> originals;
};

MaskedSentence mask_sentence(const std::vector<int>& ids, const ModelConfig& cfg,
                             SeededRng& rng) {
    std::vector<int> candidates;
    for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
        const int id = ids[static_cast<size_t>(i)];
        if (id != cfg.cls_token_id && id != cfg.sep_token_id && id != cfg.pad_token_id)
            candidates.push_back(i);
    }
    MaskedSentence m;
    m.ids = ids;
    if (candidates.empty()) return m;
    const size_t k = std::max<size_t>(
        1, static_cast<size_t>(std::llround(0.15 * static_cast<double>(candidates.size()))));
    auto picks = rng.sample_without_replacement(candidates.size(), k);
    std::sort(picks.begin(), picks.end());
    for (size_t p : picks) {
        const int pos = candidates[p];
        m.rows.push_back(pos);
        m.originals.push_back(m.ids[static_cast<size_t>(pos)]);
        m.ids[static_cast<size_t>(pos)] = cfg.mask_token_id;
    }
    return m;
}

std::vector<std::vector<int>> corpus_ids(const std::vector<std::string>& corpus,
                                         const Tokenizer& tok, const ModelConfig& cfg) {
    std::vector<std::vector<int>> out;
    for (const auto& text : corpus) {
        std::vector<int> body = tok.encode(text);
        if (static_cast<int>(body.size()) > cfg.max_seq_len - 2)
            body.resize(static_cast<size_t>(cfg.max_seq_len - 2));
        std::vector<int> ids;
        ids.push_back(cfg.cls_token_id);
        ids.insert(ids.end(), body.begin(), body.end());
        ids.push_back(cfg.sep_token_id);
        out.push_back(std::move(ids));
    }
    return out;
}

// Pooled negative log-likelihood of the masked tokens of one sentence.
// Returns the summed NLL; `masked` gets the mask count.
double masked_nll(Tape& t, const LiftedView& lv, const MaskedSentence& m, Tape::Var* loss_var) {
    Tape::Var hidden = encode_stream(t, lv, m.ids, static_cast<int>(m.ids.size()));
    Tape::Var rows = t.gather_rows(hidden, m.rows);
    Tape::Var logp = t.log_softmax_rows(mlm_logits(t, lv, rows));
    std::vector<std::pair<int, int>> targets;
    for (size_t i = 0; i < m.originals.size(); ++i)
        targets.emplace_back(static_cast<int>(i), m.originals[i]);
    Tape::Var nll = t.scale(t.sum_all(t.gather_elems(logp, targets)), -1.0);
    if (loss_var) *loss_var = nll;
    return t.val(nll)(0, 0);
}
}  // namespace

BackboneParams pretrain_backbone(const BackboneParams& theta, const Tokenizer& tok,
                                 const std::vector<std::string>& corpus, long steps,
                                 const TrainHyper& hyper, std::vector<double>* loss_curve) {
    BackboneParams out = theta;
    if (steps == 0) return out;
    if (steps < 0) throw Error("pretrain: steps must be non-negative");
    if (corpus.empty()) throw Error("pretrain: empty corpus");
    hyper.validate();

    const ModelConfig& cfg = theta.config;
    auto sentences = corpus_ids(corpus, tok, cfg);
    SeededRng order_rng(derive_seed(hyper.seed, "pretrain.order"));
    SeededRng mask_rng(derive_seed(hyper.seed, "pretrain.mask"));
    AdamW adam(hyper, steps);
    ModelView view;
    view.backbone = &out;

    for (long step = 0; step < steps; ++step) {
        // Draw the batch and its masks first so the pooled normalizer is known.
        std::vector<MaskedSentence> batch;
        size_t total_masked = 0;
        for (int b = 0; b < hyper.batch_size; ++b) {
            const size_t idx = static_cast<size_t>(order_rng.uniform_int(sentences.size()));
            MaskedSentence m = mask_sentence(sentences[idx], cfg, mask_rng);
            total_masked += m.rows.size();
            batch.push_back(std::move(m));
        }
        GradAccum accum;
        double nll_sum = 0.0;
        for (const auto& m : batch) {
            if (m.rows.empty()) continue;
            Tape t;
            NamedVars reg;
            LiftedView lv = lift_view(t, view, LiftedView::Train::backbone, &reg);
            Tape::Var nll{};
            nll_sum += masked_nll(t, lv, m, &nll);
            t.backward(t.scale(nll, 1.0 / static_cast<double>(total_masked)));
            accum.add(t, reg);
        }
        if (total_masked == 0) continue;
        accum.count = 1;  // gradients already carry the pooled normalizer
        adam.step(out.params(), accum.mean());
        if (loss_curve) loss_curve->push_back(nll_sum / static_cast<double>(total_masked));
    }
    return out;
}

double mlm_eval_loss(const BackboneParams& theta, const Tokenizer& tok,
                     const std::vector<std::string>& sentences, uint64_t mask_seed) {
    if (sentences.empty()) throw Error("mlm_eval_loss: empty input");
    SeededRng mask_rng(derive_seed(mask_seed, "pretrain.mask"));
    auto ids = corpus_ids(sentences, tok, theta.config);
    ModelView view;
    view.backbone = &theta;
    double nll = 0.0;
    size_t total = 0;
    for (const auto& s : ids) {
        MaskedSentence m = mask_sentence(s, theta.config, mask_rng);
        if (m.rows.empty()) continue;
        Tape t;
        LiftedView lv = lift_view(t, view, LiftedView::Train::none);
        nll += masked_nll(t, lv, m, nullptr);
        total += m.rows.size();
    }
    if (total == 0) throw Error("mlm_eval_loss: nothing to score");
    return nll / static_cast<double>(total);
}

// --- ranking-loss trainers ------------------------------------------------------

namespace {

// Precomputed option sequences for a dataset; tokenization happens once.
std::vector<std::vector<BuiltSequence>> build_all_sequences(const QaDataset& data,
                                                            const Tokenizer& tok,
                                                            const ModelConfig& cfg) {
    std::vector<std::vector<BuiltSequence>> out;
    out.reserve(data.samples.size());
    for (const auto& s : data.samples) out.push_back(build_sequences(s, tok, cfg));
    return out;
}

double ranking_sample_loss(Tape& t, const LiftedView& lv,
                           const std::vector<BuiltSequence>& seqs, int label, double margin,
                           bool answer_only) {
    ScoringOpts opts;
    opts.answer_only = answer_only;
    std::vector<Tape::Var> scores;
    scores.reserve(seqs.size());
    for (const auto& seq : seqs) scores.push_back(pseudo_ll_var(t, lv, seq, opts));
    Tape::Var loss = ranking_loss_var(t, scores, label, margin);
    t.backward(loss);
    return t.val(loss)(0, 0);
}

}  // namespace

AdapterParams train_expert(const BackboneParams& theta, const Tokenizer& tok,
                           const QaDataset& dataset, const TrainHyper& hyper,
                           std::vector<double>* loss_curve) {
    if (dataset.kg == "mixture")
        throw Error("train_expert: expert training requires a single-KG dataset");
    if (dataset.samples.empty()) throw Error("train_expert: empty dataset");
    hyper.validate();

    AdapterParams phi = init_adapter(theta.config, "expert:" + dataset.kg, hyper.seed);
    ModelView view;
    view.backbone = &theta;
    view.adapter = &phi;

    auto seqs = build_all_sequences(dataset, tok, theta.config);
    SeededRng order_rng(derive_seed(hyper.seed, "expert.order"));
    AdamW adam(hyper, hyper.epochs * steps_per_epoch(dataset.samples.size(), hyper.batch_size));
    run_batched_training(
        dataset.samples.size(), hyper, adam, phi.params(), order_rng, loss_curve,
        [&](size_t i, GradAccum& accum) {
            Tape t;
            NamedVars reg;
            LiftedView lv = lift_view(t, view, LiftedView::Train::adapter, &reg);
            const double loss = ranking_sample_loss(t, lv, seqs[i], dataset.samples[i].label,
                                                    hyper.margin, false);
            accum.add(t, reg);
            return loss;
        });
    return phi;
}

std::pair<AdapterParams, ClassifierHead> train_kgc(const BackboneParams& theta,
                                                   const Tokenizer& tok,
                                                   const std::vector<KgcSample>& data,
                                                   int kg_count, const TrainHyper& hyper,
                                                   std::vector<double>* loss_curve) {
    if (data.empty()) throw Error("train_kgc: empty dataset");
    std::set<int> labels;
    for (const auto& s : data) {
        if (s.kg_label < 0 || s.kg_label >= kg_count)
            throw Error("train_kgc: kg_label out of range for sample '" + s.id + "'");
        labels.insert(s.kg_label);
    }
    if (labels.size() < 2)
        throw Error("train_kgc: need at least 2 distinct KG labels, got " +
                    std::to_string(labels.size()));
    hyper.validate();

    AdapterParams phi = init_adapter(theta.config, "kgc", hyper.seed);
    ClassifierHead head = init_classifier(theta.config, kg_count, hyper.seed);
    ModelView view;
    view.backbone = &theta;
    view.adapter = &phi;

    std::vector<std::vector<int>> ids;
    ids.reserve(data.size());
    for (const auto& s : data) ids.push_back(statement_ids(s.statement, tok, theta.config));

    ParamRefs trainable = phi.params();
    trainable.emplace_back("head.w", &head.w);

    SeededRng order_rng(derive_seed(hyper.seed, "kgc.order"));
    AdamW adam(hyper, hyper.epochs * steps_per_epoch(data.size(), hyper.batch_size));
    run_batched_training(
        data.size(), hyper, adam, trainable, order_rng, loss_curve,
        [&](size_t i, GradAccum& accum) {
            Tape t;
            NamedVars reg;
            LiftedView lv = lift_view(t, view, LiftedView::Train::adapter, &reg);
            Tape::Var w = t.leaf(head.w, true);
            reg.emplace_back("head.w", w);
            Tape::Var hidden = encode_stream(t, lv, ids[i], static_cast<int>(ids[i].size()));
            Tape::Var logits = t.matmul_nt(t.gather_rows(hidden, {0}), w);
            Tape::Var logp = t.log_softmax_rows(logits);
            Tape::Var loss =
                t.scale(t.gather_elems(logp, {{0, data[i].kg_label}}), -1.0);
            t.backward(loss);
            accum.add(t, reg);
            return t.val(loss)(0, 0);
        });
    return {std::move(phi), std::move(head)};
}

FusionParams train_fusion(const BackboneParams& theta,
                          const std::vector<const AdapterParams*>& experts,
                          const Tokenizer& tok, const QaDataset& mixture,
                          const TrainHyper& hyper, QueryMode query_mode,
                          const AdapterParams* phi_kgc, double attention_dropout,
                          std::vector<double>* loss_curve) {
    if (mixture.kg != "mixture")
        throw Error("train_fusion: dataset must be the balanced mixture (tag 'mixture')");
    if (mixture.samples.empty()) throw Error("train_fusion: empty mixture");
    if (experts.empty()) throw Error("train_fusion: need at least one expert");
    if (query_mode == QueryMode::kgc && !phi_kgc)
        throw Error("train_fusion: kgc query mode requires the classifier adapter");
    hyper.validate();

    FusionParams psi = init_fusion(theta.config, hyper.seed);
    psi.attention_dropout = attention_dropout;
    ModelView view;
    view.backbone = &theta;
    view.experts = experts;
    view.fusion = &psi;
    view.query_mode = query_mode;
    view.kgc_adapter = phi_kgc;

    auto seqs = build_all_sequences(mixture, tok, theta.config);
    SeededRng order_rng(derive_seed(hyper.seed, "fusion.order"));
    SeededRng dropout_rng(derive_seed(hyper.seed, "fusion.dropout"));
    AdamW adam(hyper, hyper.epochs * steps_per_epoch(mixture.samples.size(), hyper.batch_size));
    run_batched_training(
        mixture.samples.size(), hyper, adam, psi.params(), order_rng, loss_curve,
        [&](size_t i, GradAccum& accum) {
            Tape t;
            NamedVars reg;
            LiftedView lv = lift_view(t, view, LiftedView::Train::fusion, &reg);
            lv.attention_dropout = attention_dropout;
            lv.dropout_rng = &dropout_rng;
            const double loss = ranking_sample_loss(t, lv, seqs[i], mixture.samples[i].label,
                                                    hyper.margin, false);
            accum.add(t, reg);
            return loss;
        });
    return psi;
}

BackboneParams train_full(const BackboneParams& theta, const Tokenizer& tok,
                          const std::vector<QaDataset>& datasets, const TrainHyper& hyper,
                          std::vector<double>* loss_curve) {
    if (datasets.empty()) throw Error("train_full: need at least one dataset");
    hyper.validate();

    BackboneParams out = theta;
    ModelView view;
    view.backbone = &out;

    std::vector<const QaSample*> samples;
    std::vector<std::vector<BuiltSequence>> seqs;
    for (const auto& d : datasets) {
        for (const auto& s : d.samples) {
            samples.push_back(&s);
            seqs.push_back(build_sequences(s, tok, theta.config));
        }
    }
    if (samples.empty()) throw Error("train_full: no samples");

    SeededRng order_rng(derive_seed(hyper.seed, "full.order"));
    AdamW adam(hyper, hyper.epochs * steps_per_epoch(samples.size(), hyper.batch_size));
    run_batched_training(
        samples.size(), hyper, adam, out.params(), order_rng, loss_curve,
        [&](size_t i, GradAccum& accum) {
            Tape t;
            NamedVars reg;
            LiftedView lv = lift_view(t, view, LiftedView::Train::backbone, &reg);
            const double loss =
                ranking_sample_loss(t, lv, seqs[i], samples[i]->label, hyper.margin, false);
            accum.add(t, reg);
            return loss;
        });
    return out;
}

// --- orchestration ---------------------------------------------------------------

namespace {

TrainHyper with_seed(TrainHyper h, uint64_t seed) {
    h.seed = seed;
    return h;
}

std::string file_digest(const std::string& path) { return sha256_hex(read_file(path)); }

struct StageGuard {
    // Writes the running manifest up front and the failed one on unwind
    // unless finish() ran.
    StageGuard(const ExperimentConfig& config, const std::string& stage, uint64_t seed,
               const std::string& mode)
        : config_(config), stage_(stage), start_(std::chrono::steady_clock::now()) {
        manifest_.stage = stage;
        manifest_.status = "running";
        manifest_.mode = mode;
        manifest_.seed = seed;
        manifest_.config_digest = config.digest();
        manifest_.write(config.run_manifest_path(stage));
    }

    ~StageGuard() {
        if (!finished_) {
            manifest_.status = "failed";
            manifest_.wall_time_s = elapsed();
            try {
                manifest_.write(config_.run_manifest_path(stage_));
            } catch (...) {
            }
        }
    }

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    void finish(std::vector<std::string> checkpoints, std::vector<double> curve) {
        manifest_.status = "complete";
        manifest_.checkpoints = std::move(checkpoints);
        manifest_.loss_curve = std::move(curve);
        manifest_.wall_time_s = elapsed();
        manifest_.write(config_.run_manifest_path(stage_));
        finished_ = true;
    }

    RunManifest manifest_;

  private:
    const ExperimentConfig& config_;
    std::string stage_;
    std::chrono::steady_clock::time_point start_;
    bool finished_ = false;
};

bool stage_complete(const ExperimentConfig& config, const std::string& stage) {
    const std::string path = config.run_manifest_path(stage);
    if (!fs::exists(path)) return false;
    RunManifest m = RunManifest::read(path);
    return m.status == "complete" && m.config_digest == config.digest();
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw Error("missing " + what + " '" + path + "' (generate it first)");
}

std::vector<std::string> kgc_statements(const std::vector<KgcSample>& samples) {
    std::vector<std::string> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.statement);
    return out;
}

Tokenizer build_vocab(const ExperimentConfig& config) {
    std::vector<std::string> corpus;
    for (const auto& kg : config.kgs) {
        QaDataset train = read_qa_jsonl(config.qa_path(kg.name, "train"));
        for (const auto& s : train.samples) {
            corpus.push_back(s.question);
            for (const auto& o : s.options) corpus.push_back(o);
        }
    }
    corpus.push_back(".");  // statements end with a period even if questions do not
    return Tokenizer::build(corpus, config.model.vocab_size, config.mask_token);
}

}  // namespace

std::vector<KgCounts> generate_data(const ExperimentConfig& config, bool force) {
    config.validate(true);
    const TemplateRegistry registry = config.registry();
    fs::create_directories(config.data_dir());

    std::vector<std::string> would_write;
    for (const auto& kg : config.kgs) {
        would_write.push_back(config.qa_path(kg.name, "train"));
        would_write.push_back(config.qa_path(kg.name, "valid"));
    }
    would_write.push_back(config.kgc_path("train"));
    would_write.push_back(config.kgc_path("valid"));
    would_write.push_back(config.mixture_path("train"));
    would_write.push_back(config.mixture_path("valid"));
    if (!force)
        for (const auto& p : would_write)
            if (fs::exists(p))
                throw Error("refusing to overwrite '" + p + "' (use --force)");

    std::vector<QaDataset> trains, valids;
    std::vector<KgCounts> counts;
    for (const auto& kg : config.kgs) {
        KgSource src = load_triples(kg.path, kg.name);
        SeededRng gen_rng(derive_seed(config.seed, "gen." + kg.name));
        QaDataset all;
        try {
            all = generate_qa(src, registry, config.option_count, gen_rng,
                              config.same_relation_distractors);
        } catch (const Error& e) {
            throw Error("KG '" + kg.name + "': " + e.what());
        }
        SeededRng split_rng(derive_seed(config.seed, "split." + kg.name));
        auto [train, valid] = split(all, config.valid_fraction, split_rng);
        write_qa_jsonl(train, config.qa_path(kg.name, "train"));
        write_qa_jsonl(valid, config.qa_path(kg.name, "valid"));
        counts.push_back({kg.name, train.size(), valid.size()});
        trains.push_back(std::move(train));
        valids.push_back(std::move(valid));
    }

    write_kgc_jsonl(derive_kgc(trains, config.mask_token), config.kgc_path("train"));
    write_kgc_jsonl(derive_kgc(valids, config.mask_token), config.kgc_path("valid"));

    MixtureSpec train_spec{config.mixture_per_kg, derive_seed(config.seed, "mixture.train")};
    write_qa_jsonl(build_fusion_mixture(trains, train_spec), config.mixture_path("train"));
    MixtureSpec valid_spec{config.mixture_per_kg, derive_seed(config.seed, "mixture.valid")};
    write_qa_jsonl(build_fusion_mixture(valids, valid_spec), config.mixture_path("valid"));
    return counts;
}

std::string run_stage(const ExperimentConfig& config, const std::string& stage, bool resume,
                      std::ostream* progress) {
    config.validate(false);
    const std::string dir = config.checkpoint_dir(stage);
    if (resume && stage_complete(config, stage) && checkpoint_exists(dir)) {
        if (progress) *progress << "[skip] " << stage << " (complete)\n";
        return dir;
    }
    if (progress) *progress << "[train] " << stage << "\n";
    fs::create_directories(config.output_root + "/runs");

    auto load_theta = [&](Tokenizer& tok) {
        const std::string bdir = config.checkpoint_dir("backbone");
        if (!checkpoint_exists(bdir))
            throw Error("stage '" + stage + "': missing checkpoint '" + bdir + "'");
        return load_backbone(bdir, &tok);
    };

    if (stage == "backbone") {
        for (const auto& kg : config.kgs)
            require_file(config.qa_path(kg.name, "train"), "dataset");
        require_file(config.kgc_path("train"), "dataset");
        const uint64_t seed = derive_seed(config.seed, "backbone");
        StageGuard guard(config, stage, seed, "pretrain");
        guard.manifest_.dataset_digests["kgc.train"] = file_digest(config.kgc_path("train"));

        Tokenizer tok = build_vocab(config);
        BackboneParams theta = init_backbone(config.model, seed);
        std::vector<double> curve;
        if (config.backbone_pretrain_steps > 0) {
            auto corpus = kgc_statements(read_kgc_jsonl(config.kgc_path("train")));
            theta = pretrain_backbone(theta, tok, corpus, config.backbone_pretrain_steps,
                                      with_seed(config.backbone_hyper, seed), &curve);
        }
        save_backbone(dir, theta, tok, seed,
                      {{"stage", stage},
                       {"pretrain_steps", std::to_string(config.backbone_pretrain_steps)}});
        guard.finish({dir}, curve);
        return dir;
    }

    if (starts_with(stage, "expert:")) {
        const std::string kg = stage.substr(7);
        if (config.kg_index(kg) < 0) throw ConfigError("unknown KG '" + kg + "'");
        require_file(config.qa_path(kg, "train"), "dataset");
        const uint64_t seed = derive_seed(config.seed, "expert." + kg);
        StageGuard guard(config, stage, seed, to_string(TrainMode::expert_adapter));
        Tokenizer tok = Tokenizer::from_tokens({"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"});
        BackboneParams theta = load_theta(tok);
        guard.manifest_.dataset_digests["qa-" + kg + ".train"] =
            file_digest(config.qa_path(kg, "train"));
        const std::string theta_digest = theta.digest();

        QaDataset train = read_qa_jsonl(config.qa_path(kg, "train"));
        std::vector<double> curve;
        AdapterParams phi = train_expert(theta, tok, train, with_seed(config.expert_hyper, seed),
                                         &curve);
        if (theta.digest() != theta_digest)
            throw Error("freeze contract violated: backbone changed during expert training");
        save_adapter(dir, phi, config.model, seed,
                     {{"stage", stage}, {"kg", kg}, {"backbone_digest", theta_digest}});
        guard.finish({dir}, curve);
        return dir;
    }

    if (stage == "kgc") {
        require_file(config.kgc_path("train"), "dataset");
        const uint64_t seed = derive_seed(config.seed, "kgc");
        StageGuard guard(config, stage, seed, to_string(TrainMode::kgc_adapter));
        Tokenizer tok = Tokenizer::from_tokens({"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"});
        BackboneParams theta = load_theta(tok);
        guard.manifest_.dataset_digests["kgc.train"] = file_digest(config.kgc_path("train"));
        const std::string theta_digest = theta.digest();

        auto data = read_kgc_jsonl(config.kgc_path("train"));
        std::vector<double> curve;
        auto [phi, head] = train_kgc(theta, tok, data, static_cast<int>(config.kgs.size()),
                                     with_seed(config.kgc_hyper, seed), &curve);
        if (theta.digest() != theta_digest)
            throw Error("freeze contract violated: backbone changed during kgc training");
        save_kgc(dir, phi, head, config.model, seed,
                 {{"stage", stage}, {"backbone_digest", theta_digest}});
        guard.finish({dir}, curve);
        return dir;
    }

    if (stage == "fusion") {
        require_file(config.mixture_path("train"), "dataset");
        const uint64_t seed = derive_seed(config.seed, "fusion");
        StageGuard guard(config, stage, seed, to_string(TrainMode::fusion));
        Tokenizer tok = Tokenizer::from_tokens({"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"});
        BackboneParams theta = load_theta(tok);
        guard.manifest_.dataset_digests["mixture.train"] =
            file_digest(config.mixture_path("train"));

        std::vector<AdapterParams> experts;
        std::vector<std::string> frozen_digests;
        for (const auto& kg : config.kgs) {
            const std::string edir = config.checkpoint_dir("expert:" + kg.name);
            if (!checkpoint_exists(edir))
                throw Error("stage 'fusion': missing checkpoint '" + edir + "'");
            experts.push_back(load_adapter(edir, config.model));
            frozen_digests.push_back(experts.back().digest());
        }
        AdapterParams kgc_adapter;
        bool has_kgc = false;
        if (config.query_mode == QueryMode::kgc) {
            const std::string kdir = config.checkpoint_dir("kgc");
            if (!checkpoint_exists(kdir))
                throw Error("stage 'fusion': missing checkpoint '" + kdir + "'");
            kgc_adapter = load_kgc(kdir, config.model).first;
            has_kgc = true;
        }
        const std::string theta_digest = theta.digest();

        QaDataset mixture = read_qa_jsonl(config.mixture_path("train"));
        std::vector<const AdapterParams*> expert_ptrs;
        for (const auto& e : experts) expert_ptrs.push_back(&e);
        std::vector<double> curve;
        FusionParams psi =
            train_fusion(theta, expert_ptrs, tok, mixture, with_seed(config.fusion_hyper, seed),
                         config.query_mode, has_kgc ? &kgc_adapter : nullptr,
                         config.fusion_attention_dropout, &curve);
        if (theta.digest() != theta_digest)
            throw Error("freeze contract violated: backbone changed during fusion training");
        for (size_t k = 0; k < experts.size(); ++k)
            if (experts[k].digest() != frozen_digests[k])
                throw Error("freeze contract violated: expert changed during fusion training");

        Provenance prov{{"stage", stage},
                        {"backbone_digest", theta_digest},
                        {"query_mode", config.query_mode == QueryMode::kgc ? "kgc" : "plm"}};
        for (size_t k = 0; k < config.kgs.size(); ++k)
            prov["expert_digest." + config.kgs[k].name] = frozen_digests[k];
        save_fusion(dir, psi, config.model, seed, prov);
        guard.finish({dir}, curve);
        return dir;
    }

    if (starts_with(stage, "stl-plm:") || stage == "mtl") {
        std::vector<std::string> kg_names;
        TrainMode mode = TrainMode::mtl;
        if (stage == "mtl") {
            for (const auto& kg : config.kgs) kg_names.push_back(kg.name);
        } else {
            mode = TrainMode::stl_plm;
            const std::string kg = stage.substr(8);
            if (config.kg_index(kg) < 0) throw ConfigError("unknown KG '" + kg + "'");
            kg_names.push_back(kg);
        }
        for (const auto& kg : kg_names) require_file(config.qa_path(kg, "train"), "dataset");
        const uint64_t seed = derive_seed(config.seed, "full." + stage);
        StageGuard guard(config, stage, seed, to_string(mode));
        Tokenizer tok = Tokenizer::from_tokens({"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"});
        BackboneParams theta = load_theta(tok);
        std::vector<QaDataset> datasets;
        for (const auto& kg : kg_names) {
            guard.manifest_.dataset_digests["qa-" + kg + ".train"] =
                file_digest(config.qa_path(kg, "train"));
            datasets.push_back(read_qa_jsonl(config.qa_path(kg, "train")));
        }
        std::vector<double> curve;
        BackboneParams trained =
            train_full(theta, tok, datasets, with_seed(config.full_hyper, seed), &curve);
        save_backbone(dir, trained, tok, seed, {{"stage", stage}});
        guard.finish({dir}, curve);
        return dir;
    }

    throw ConfigError("unknown stage '" + stage + "'");
}

ArtifactBundle run_algorithm1(const ExperimentConfig& config, bool resume,
                              std::ostream* progress) {
    config.validate(true);
    auto step = [&](const std::string& name, auto&& fn) {
        try {
            return fn();
        } catch (const Error&) {
            if (progress) *progress << "[fail] " << name << "\n";
            throw;
        }
    };

    // Data generation is idempotent under resume; otherwise it regenerates.
    const bool have_data = fs::exists(config.mixture_path("train"));
    if (!(resume && have_data)) {
        if (progress) *progress << "[generate] synthetic QA + KGC + mixture\n";
        step("generate", [&] { return generate_data(config, /*force=*/true); });
    } else if (progress) {
        *progress << "[skip] generate (data present)\n";
    }

    ArtifactBundle bundle;
    bundle.backbone_dir =
        step("backbone", [&] { return run_stage(config, "backbone", resume, progress); });
    for (const auto& kg : config.kgs) {
        const std::string stage = "expert:" + kg.name;
        bundle.expert_dirs.emplace_back(
            kg.name, step(stage, [&] { return run_stage(config, stage, resume, progress); }));
    }
    bundle.kgc_dir = step("kgc", [&] { return run_stage(config, "kgc", resume, progress); });
    bundle.fusion_dir =
        step("fusion", [&] { return run_stage(config, "fusion", resume, progress); });
    return bundle;
}

LoadedModel load_model(const ExperimentConfig& config, const std::string& ref) {
    LoadedModel m;
    const std::string bdir = config.checkpoint_dir("backbone");

    if (ref == "backbone" || starts_with(ref, "stl-plm:") || ref == "mtl") {
        const std::string dir = config.checkpoint_dir(ref);
        if (!checkpoint_exists(dir)) throw Error("missing checkpoint '" + dir + "'");
        m.backbone = load_backbone(dir, &m.tokenizer);
        m.view.backbone = &m.backbone;
        return m;
    }

    if (!checkpoint_exists(bdir)) throw Error("missing checkpoint '" + bdir + "'");
    m.backbone = load_backbone(bdir, &m.tokenizer);
    m.view.backbone = &m.backbone;

    if (starts_with(ref, "expert:")) {
        const std::string dir = config.checkpoint_dir(ref);
        if (!checkpoint_exists(dir)) throw Error("missing checkpoint '" + dir + "'");
        m.adapter = load_adapter(dir, config.model);
        m.has_adapter = true;
        m.view.adapter = &m.adapter;
        return m;
    }
    if (ref == "kgc") {
        const std::string dir = config.checkpoint_dir("kgc");
        if (!checkpoint_exists(dir)) throw Error("missing checkpoint '" + dir + "'");
        auto [phi, head] = load_kgc(dir, config.model);
        m.kgc_adapter = std::move(phi);
        m.kgc_head = std::move(head);
        m.has_kgc = true;
        m.adapter = m.kgc_adapter;
        m.has_adapter = true;
        m.view.adapter = &m.adapter;
        return m;
    }
    if (ref == "fusion") {
        const std::string dir = config.checkpoint_dir("fusion");
        if (!checkpoint_exists(dir)) throw Error("missing checkpoint '" + dir + "'");
        for (const auto& kg : config.kgs) {
            const std::string edir = config.checkpoint_dir("expert:" + kg.name);
            if (!checkpoint_exists(edir)) throw Error("missing checkpoint '" + edir + "'");
            m.experts.push_back(load_adapter(edir, config.model));
        }
        m.fusion = load_fusion(dir, config.model);
        m.has_fusion = true;
        if (config.query_mode == QueryMode::kgc) {
            const std::string kdir = config.checkpoint_dir("kgc");
            if (!checkpoint_exists(kdir)) throw Error("missing checkpoint '" + kdir + "'");
            m.kgc_adapter = load_kgc(kdir, config.model).first;
            m.has_kgc = true;
            m.view.kgc_adapter = &m.kgc_adapter;
        }
        for (const auto& e : m.experts) m.view.experts.push_back(&e);
        m.view.fusion = &m.fusion;
        m.view.query_mode = config.query_mode;
        return m;
    }
    throw ConfigError("unknown model reference '" + ref + "'");
}

}  // namespace kgfuse
