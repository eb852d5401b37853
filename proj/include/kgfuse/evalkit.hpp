#pragma once

#include <string>
#include <vector>

#include "kgfuse/matrix.hpp"
#include "kgfuse/objectives.hpp"

namespace kgfuse {

struct PredictionRecord {
    std::string id;
    int gold = 0;
    int pred = 0;
    std::vector<double> scores;
    std::string model;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<PredictionRecord> records;  // dataset order
};

// Scores every sample with the view and predicts by minimum score. Pure:
// repeated calls give identical records.
EvalResult evaluate(const ModelView& view, const Tokenizer& tokenizer, const QaDataset& dataset,
                    const std::string& model_tag, const ScoringOpts& opts = {});

// Classification accuracy of the KG classifier on a KGC dataset.
double evaluate_kgc(const BackboneParams& theta, const AdapterParams& phi_kgc,
                    const ClassifierHead& head, const Tokenizer& tokenizer,
                    const std::vector<KgcSample>& data);

struct InterferenceInput {
    std::vector<std::vector<PredictionRecord>> stl_records;  // one set per KG
    std::vector<PredictionRecord> multi_records;
};

// Among the samples every STL model predicts correctly, the fraction the
// multi-KG model gets wrong. Throws when the common-correct set is empty
// (0 would falsely read as "no interference").
double interference_ratio(const InterferenceInput& input);

struct AttentionDump {
    std::vector<std::string> expert_names;
    Mat mean;  // layers x experts
    std::vector<std::pair<std::string, Mat>> per_sample;
};

// CLS-position fusion attention for every sample, plus the dataset mean.
// Each sample contributes its gold-filled statement sequence.
AttentionDump attention_dump(const ModelView& view, const Tokenizer& tokenizer,
                             const QaDataset& dataset);

struct EmbeddingRow {
    std::string id;
    std::string tag;
    std::vector<double> values;  // H floats
};

// Final-layer CLS representation of each sample's gold-filled statement,
// suitable for external projection tools.
std::vector<EmbeddingRow> export_cls_embeddings(const ModelView& view,
                                                const Tokenizer& tokenizer,
                                                const QaDataset& dataset);

struct ResultEntry {
    std::string model;
    std::vector<std::string> kgs;  // the KG combination this accuracy belongs to
    std::string benchmark;
    double accuracy = 0.0;  // as a ratio in [0, 1]
};

struct ImprovementCell {
    std::string model;
    std::vector<std::string> kgs;
    std::string benchmark;
    double points = 0.0;  // accuracy minus best constituent baseline, in points (x100)
};

// cell = acc(combination) - max over the combination's single-KG baselines
// from `baseline_family`. A missing baseline is an error naming the gap.
std::vector<ImprovementCell> relative_improvement(const std::vector<ResultEntry>& results,
                                                  const std::string& baseline_family);

// --- files ---
void write_predictions_jsonl(const std::vector<PredictionRecord>& records,
                             const std::string& path);
std::vector<PredictionRecord> read_predictions_jsonl(const std::string& path);
void write_attention_csv(const AttentionDump& dump, const std::string& path);
void write_embeddings_csv(const std::vector<EmbeddingRow>& rows, const std::string& path);
void write_improvement_csv(const std::vector<ImprovementCell>& cells, const std::string& path);
std::vector<ResultEntry> read_results_json(const std::string& path);

}  // namespace kgfuse
