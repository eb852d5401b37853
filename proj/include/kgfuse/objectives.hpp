#pragma once

#include <vector>

#include "kgfuse/model.hpp"
#include "kgfuse/synth.hpp"
#include "kgfuse/tokenizer.hpp"

namespace kgfuse {

// Per-token-averaged negative log-likelihoods for the m options of one sample.
// Lower is more likely.
struct ScoredOptions {
    std::vector<double> scores;
    std::vector<int> token_counts;  // scoreable positions per option
};

struct RankingHyper {
    double margin = 1.0;
    int option_count = 0;
};

struct BuiltSequence {
    std::vector<int> ids;  // [CLS] question-with-option [SEP]
    int answer_begin = 0;  // token span the option occupies
    int answer_end = 0;
};

struct ScoringOpts {
    // Off by default: score every non-special position. When set, only the
    // answer span contributes.
    bool answer_only = false;
};

// One input sequence per option; the option replaces the mask slot or is
// appended after the question, mirroring the KG-classification fill rule.
std::vector<BuiltSequence> build_sequences(const QaSample& sample, const Tokenizer& tokenizer,
                                           const ModelConfig& config);

// Exact pseudo-log-likelihood: one masked forward per scoreable position,
// negative mean log-probability of the original token. The masked variants of
// a sequence run as one batched encoder pass.
double pseudo_ll_score(const ModelView& view, const BuiltSequence& seq,
                       const ScoringOpts& opts = {});

ScoredOptions score_sample(const ModelView& view, const Tokenizer& tokenizer,
                           const QaSample& sample, const ScoringOpts& opts = {});

// Hinge over the gold/distractor score gaps, averaged over m:
// loss = (1/m) * sum_{j != label} max(0, margin + S_label - S_j).
// Zero exactly when every distractor is at least `margin` less likely.
double ranking_loss(const ScoredOptions& scored, int label, const RankingHyper& hyper);

// Index of the most likely option (minimum score); ties break low.
int predict(const ScoredOptions& scored);

// Cross-entropy -log y_hat[gold] for a probability vector against a one-hot
// target. y_hat must already be normalized (checked to 1e-4).
double kgc_loss(const std::vector<double>& y_hat, const std::vector<double>& y_onehot);

// --- tape-level variants used by the trainers --------------------------------

Tape::Var pseudo_ll_var(Tape& t, const LiftedView& view, const BuiltSequence& seq,
                        const ScoringOpts& opts = {});

Tape::Var ranking_loss_var(Tape& t, const std::vector<Tape::Var>& scores, int label,
                           double margin);

}  // namespace kgfuse
