#include "kgfuse/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "kgfuse/common.hpp"

namespace kgfuse {

using nlohmann::json;

EvalResult evaluate(const ModelView& view, const Tokenizer& tokenizer, const QaDataset& dataset,
                    const std::string& model_tag, const ScoringOpts& opts) {
    if (dataset.samples.empty()) throw Error("evaluate: empty dataset");
    EvalResult result;
    size_t correct = 0;
    for (const auto& sample : dataset.samples) {
        ScoredOptions scored = score_sample(view, tokenizer, sample, opts);
        PredictionRecord rec;
        rec.id = sample.id;
        rec.gold = sample.label;
        rec.pred = predict(scored);
        rec.scores = scored.scores;
        rec.model = model_tag;
        if (rec.pred == rec.gold) ++correct;
        result.records.push_back(std::move(rec));
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.samples.size());
    return result;
}

double evaluate_kgc(const BackboneParams& theta, const AdapterParams& phi_kgc,
                    const ClassifierHead& head, const Tokenizer& tokenizer,
                    const std::vector<KgcSample>& data) {
    if (data.empty()) throw Error("evaluate_kgc: empty dataset");
    size_t correct = 0;
    for (const auto& s : data) {
        std::vector<int> ids;
        ids.push_back(theta.config.cls_token_id);
        for (int id : tokenizer.encode(s.statement)) ids.push_back(id);
        ids.push_back(theta.config.sep_token_id);
        auto probs = classify_kg(theta, phi_kgc, head, ids);
        const int pred = static_cast<int>(
            std::max_element(probs.begin(), probs.end()) - probs.begin());
        if (pred == s.kg_label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double interference_ratio(const InterferenceInput& input) {
    if (input.stl_records.empty()) throw Error("interference: no STL record sets");
    auto ids_of = [](const std::vector<PredictionRecord>& recs) {
        std::set<std::string> ids;
        for (const auto& r : recs) {
            if (!ids.insert(r.id).second)
                throw Error("interference: duplicate sample id '" + r.id + "'");
        }
        return ids;
    };
    const std::set<std::string> universe = ids_of(input.multi_records);
    for (const auto& set : input.stl_records)
        if (ids_of(set) != universe)
            throw Error("interference: prediction sets cover different sample ids");

    // C = samples every STL model predicts correctly.
    std::set<std::string> common_correct = universe;
    for (const auto& set : input.stl_records) {
        std::set<std::string> correct;
        for (const auto& r : set)
            if (r.pred == r.gold) correct.insert(r.id);
        std::set<std::string> next;
        std::set_intersection(common_correct.begin(), common_correct.end(), correct.begin(),
                              correct.end(), std::inserter(next, next.begin()));
        common_correct = std::move(next);
    }
    if (common_correct.empty())
        throw Error("interference ratio undefined: common-correct set is empty");

    size_t wrong = 0;
    for (const auto& r : input.multi_records)
        if (common_correct.count(r.id) && r.pred != r.gold) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(common_correct.size());
}

namespace {
std::vector<int> statement_sequence(const QaSample& sample, const Tokenizer& tok,
                                    const ModelConfig& cfg) {
    std::string statement =
        fill_option(sample.question, sample.options[static_cast<size_t>(sample.label)],
                    tok.mask_token());
    if (statement.empty() || statement.back() != '.') statement += ".";
    std::vector<int> ids;
    ids.push_back(cfg.cls_token_id);
    for (int id : tok.encode(statement)) ids.push_back(id);
    ids.push_back(cfg.sep_token_id);
    return ids;
}
}  // namespace

AttentionDump attention_dump(const ModelView& view, const Tokenizer& tokenizer,
                             const QaDataset& dataset) {
    if (!view.fusion) throw Error("attention_dump: needs a fusion view");
    if (dataset.samples.empty()) throw Error("attention_dump: empty dataset");
    const int L = static_cast<int>(view.backbone->config.layer_count);
    const int K = static_cast<int>(view.experts.size());
    AttentionDump dump;
    for (size_t k = 0; k < view.experts.size(); ++k) {
        const std::string& role = view.experts[k]->role;
        dump.expert_names.push_back(starts_with(role, "expert:") ? role.substr(7) : role);
    }
    dump.mean = Mat::Zero(L, K);
    for (const auto& sample : dataset.samples) {
        auto ids = statement_sequence(sample, tokenizer, view.backbone->config);
        ForwardTrace trace = forward_fusion(*view.backbone, view.experts, *view.fusion, ids,
                                            view.query_mode, view.kgc_adapter);
        Mat cls_attn(L, K);
        for (int l = 0; l < L; ++l) cls_attn.row(l) = trace.attention[static_cast<size_t>(l)].row(0);
        dump.mean += cls_attn;
        dump.per_sample.emplace_back(sample.id, std::move(cls_attn));
    }
    dump.mean /= static_cast<double>(dataset.samples.size());
    return dump;
}

std::vector<EmbeddingRow> export_cls_embeddings(const ModelView& view,
                                                const Tokenizer& tokenizer,
                                                const QaDataset& dataset) {
    std::vector<EmbeddingRow> rows;
    for (const auto& sample : dataset.samples) {
        auto ids = statement_sequence(sample, tokenizer, view.backbone->config);
        Tape t;
        LiftedView lv = lift_view(t, view, LiftedView::Train::none);
        Tape::Var h = encode_stream(t, lv, ids, static_cast<int>(ids.size()));
        const Mat cls = t.val(h).row(0);
        EmbeddingRow row;
        row.id = sample.id;
        row.tag = sample.kg;
        for (int c = 0; c < cls.cols(); ++c) row.values.push_back(cls(0, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {
std::string combo_key(const std::vector<std::string>& kgs) {
    std::string out;
    for (const auto& kg : kgs) {
        if (!out.empty()) out += ",";
        out += kg;
    }
    return out;
}
}  // namespace

std::vector<ImprovementCell> relative_improvement(const std::vector<ResultEntry>& results,
                                                  const std::string& baseline_family) {
    // Baselines: single-KG accuracies of the chosen family.
    std::map<std::pair<std::string, std::string>, double> baselines;  // (kg, benchmark)
    for (const auto& r : results)
        if (r.model == baseline_family && r.kgs.size() == 1)
            baselines[{r.kgs[0], r.benchmark}] = r.accuracy;

    std::vector<ImprovementCell> cells;
    for (const auto& r : results) {
        if (r.kgs.empty()) throw Error("relative_improvement: entry without a KG combination");
        double best = 0.0;
        bool first = true;
        for (const auto& kg : r.kgs) {
            auto it = baselines.find({kg, r.benchmark});
            if (it == baselines.end())
                throw Error("relative_improvement: missing baseline for KG '" + kg +
                            "' on benchmark '" + r.benchmark + "' in family '" +
                            baseline_family + "'");
            best = first ? it->second : std::max(best, it->second);
            first = false;
        }
        cells.push_back({r.model, r.kgs, r.benchmark, (r.accuracy - best) * 100.0});
    }
    return cells;
}

// --- files -------------------------------------------------------------------

void write_predictions_jsonl(const std::vector<PredictionRecord>& records,
                             const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    for (const auto& r : records) {
        json j{{"id", r.id},
               {"gold", r.gold},
               {"pred", r.pred},
               {"scores", r.scores},
               {"model", r.model}};
        out << j.dump() << "\n";
    }
}

std::vector<PredictionRecord> read_predictions_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::vector<PredictionRecord> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            json j = json::parse(line);
            PredictionRecord r;
            r.id = j.at("id").get<std::string>();
            r.gold = j.at("gold").get<int>();
            r.pred = j.at("pred").get<int>();
            r.scores = j.at("scores").get<std::vector<double>>();
            r.model = j.at("model").get<std::string>();
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw ParseError(path, line_no, e.what());
        }
    }
    if (out.empty()) throw Error("empty predictions file '" + path + "'");
    return out;
}

void write_attention_csv(const AttentionDump& dump, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << "# CLS fusion attention probabilities; one row per (sample, layer).\n";
    out << "# The 'mean' rows hold the dataset average per layer.\n";
    out << "sample_id,layer";
    for (const auto& name : dump.expert_names) out << "," << name;
    out << "\n";
    out << std::setprecision(10);
    auto emit = [&](const std::string& id, const Mat& m) {
        for (int l = 0; l < m.rows(); ++l) {
            out << id << "," << l;
            for (int k = 0; k < m.cols(); ++k) out << "," << m(l, k);
            out << "\n";
        }
    };
    emit("mean", dump.mean);
    for (const auto& [id, m] : dump.per_sample) emit(id, m);
}

void write_embeddings_csv(const std::vector<EmbeddingRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    if (rows.empty()) throw Error("no embeddings to write");
    out << "id,dataset";
    for (size_t i = 0; i < rows[0].values.size(); ++i) out << ",h" << i;
    out << "\n";
    out << std::setprecision(10);
    for (const auto& r : rows) {
        out << r.id << "," << r.tag;
        for (double v : r.values) out << "," << v;
        out << "\n";
    }
}

void write_improvement_csv(const std::vector<ImprovementCell>& cells, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << "# relative improvement in accuracy points over the best constituent\n";
    out << "# single-KG baseline; positive means the combination helps.\n";
    out << "model,kgs,benchmark,points\n";
    out << std::setprecision(10);
    for (const auto& c : cells)
        out << c.model << ",\"" << combo_key(c.kgs) << "\"," << c.benchmark << "," << c.points
            << "\n";
}

std::vector<ResultEntry> read_results_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error("results file '" + path + "': " + e.what());
    }
    std::vector<ResultEntry> out;
    for (const auto& e : j.at("entries")) {
        ResultEntry r;
        r.model = e.at("model").get<std::string>();
        r.kgs = e.at("kgs").get<std::vector<std::string>>();
        r.benchmark = e.at("benchmark").get<std::string>();
        r.accuracy = e.at("accuracy").get<double>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace kgfuse
