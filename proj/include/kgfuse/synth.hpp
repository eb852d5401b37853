#pragma once

#include <string>
#include <vector>

#include "kgfuse/kg.hpp"
#include "kgfuse/rng.hpp"

namespace kgfuse {

struct QaSample {
    std::string id;
    std::string question;
    std::vector<std::string> options;  // m >= 2, pairwise distinct
    int label = 0;                     // index of the gold option
    std::string kg;
};

struct QaDataset {
    std::string kg;  // KG name, or "mixture"
    std::vector<QaSample> samples;

    size_t size() const { return samples.size(); }
};

struct KgcSample {
    std::string id;
    std::string statement;  // question with the gold answer filled in
    int kg_label = 0;       // index into the dataset order
    std::string kg;
};

struct MixtureSpec {
    size_t per_kg_count = 0;
    uint64_t seed = 0;
};

// Fills an answer option into a question stem: when the question carries the
// mask slot the option replaces it, otherwise the option is appended after a
// single space. Both the scoring sequences and the KG-classification
// statements go through this rule.
std::string fill_option(const std::string& question, const std::string& option,
                        const std::string& mask_token);

// One QA sample per triple: gold tail plus m-1 distractor tails drawn
// uniformly from the other triples, rejecting duplicates; option order
// shuffled. Pure function of (source, registry, m, rng seed).
QaDataset generate_qa(const KgSource& source, const TemplateRegistry& registry, int m,
                      SeededRng& rng, bool same_relation_distractors = false);

// Eq-style KG classification set: statements from gold-filled questions, one
// label per source dataset in the given order. Size is exactly the sum of the
// dataset sizes.
std::vector<KgcSample> derive_kgc(const std::vector<QaDataset>& datasets,
                                  const std::string& mask_token);

// Balanced mixture: per_kg_count samples drawn without replacement from each
// dataset (the whole dataset when it is smaller), concatenated and shuffled.
QaDataset build_fusion_mixture(const std::vector<QaDataset>& datasets, const MixtureSpec& spec);

// Disjoint covering partition, deterministic under the rng seed.
// valid gets floor(n * valid_fraction) samples; train keeps the rest.
std::pair<QaDataset, QaDataset> split(const QaDataset& dataset, double valid_fraction,
                                      SeededRng& rng);

void validate(const QaSample& s);

// --- JSONL files ---
void write_qa_jsonl(const QaDataset& ds, const std::string& path);
QaDataset read_qa_jsonl(const std::string& path);
void write_kgc_jsonl(const std::vector<KgcSample>& samples, const std::string& path);
std::vector<KgcSample> read_kgc_jsonl(const std::string& path);

struct KgCounts {
    std::string kg;
    size_t train = 0;
    size_t valid = 0;
};

// Per-KG counts table (plain text, aligned columns) printed by `generate`.
std::string format_stats_table(const std::vector<KgCounts>& rows);

}  // namespace kgfuse
