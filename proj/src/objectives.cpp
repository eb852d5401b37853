#include "kgfuse/objectives.hpp"

#include <cmath>

#include "kgfuse/common.hpp"

namespace kgfuse {

std::vector<BuiltSequence> build_sequences(const QaSample& sample, const Tokenizer& tokenizer,
                                           const ModelConfig& config) {
    validate(sample);
    const std::string& mask = tokenizer.mask_token();
    const size_t slot = sample.question.find(mask);

    std::vector<BuiltSequence> out;
    out.reserve(sample.options.size());
    for (const auto& option : sample.options) {
        if (trim(option).empty()) throw Error("sample '" + sample.id + "': empty option text");
        std::vector<int> prefix, answer, suffix;
        if (slot != std::string::npos) {
            prefix = tokenizer.encode(sample.question.substr(0, slot));
            answer = tokenizer.encode(option);
            suffix = tokenizer.encode(sample.question.substr(slot + mask.size()));
        } else {
            prefix = tokenizer.encode(sample.question);
            answer = tokenizer.encode(option);
        }
        BuiltSequence seq;
        seq.ids.push_back(config.cls_token_id);
        seq.ids.insert(seq.ids.end(), prefix.begin(), prefix.end());
        seq.answer_begin = static_cast<int>(seq.ids.size());
        seq.ids.insert(seq.ids.end(), answer.begin(), answer.end());
        seq.answer_end = static_cast<int>(seq.ids.size());
        seq.ids.insert(seq.ids.end(), suffix.begin(), suffix.end());
        seq.ids.push_back(config.sep_token_id);
        if (static_cast<int>(seq.ids.size()) > config.max_seq_len)
            throw Error("sample '" + sample.id + "': sequence length " +
                        std::to_string(seq.ids.size()) + " exceeds max_seq_len " +
                        std::to_string(config.max_seq_len));
        out.push_back(std::move(seq));
    }
    return out;
}

namespace {
std::vector<int> scoreable_positions(const BuiltSequence& seq, const ModelConfig& cfg,
                                     bool answer_only) {
    std::vector<int> pos;
    for (int i = 0; i < static_cast<int>(seq.ids.size()); ++i) {
        const int id = seq.ids[static_cast<size_t>(i)];
        if (id == cfg.cls_token_id || id == cfg.sep_token_id || id == cfg.pad_token_id) continue;
        if (answer_only && (i < seq.answer_begin || i >= seq.answer_end)) continue;
        pos.push_back(i);
    }
    return pos;
}
}  // namespace

Tape::Var pseudo_ll_var(Tape& t, const LiftedView& view, const BuiltSequence& seq,
                        const ScoringOpts& opts) {
    const ModelConfig& cfg = *view.config;
    const std::vector<int> positions = scoreable_positions(seq, cfg, opts.answer_only);
    if (positions.empty()) throw Error("pseudo-log-likelihood: no scoreable positions");

    const int T = static_cast<int>(seq.ids.size());
    const int n = static_cast<int>(positions.size());
    std::vector<int> stacked;
    stacked.reserve(static_cast<size_t>(n * T));
    std::vector<int> masked_rows(static_cast<size_t>(n));
    std::vector<std::pair<int, int>> targets(static_cast<size_t>(n));
    for (int v = 0; v < n; ++v) {
        const int p = positions[static_cast<size_t>(v)];
        for (int i = 0; i < T; ++i)
            stacked.push_back(i == p ? cfg.mask_token_id : seq.ids[static_cast<size_t>(i)]);
        masked_rows[static_cast<size_t>(v)] = v * T + p;
        targets[static_cast<size_t>(v)] = {v, seq.ids[static_cast<size_t>(p)]};
    }

    Tape::Var hidden = encode_stream(t, view, stacked, T);
    Tape::Var rows = t.gather_rows(hidden, masked_rows);
    Tape::Var logp = t.log_softmax_rows(mlm_logits(t, view, rows));
    Tape::Var picked = t.gather_elems(logp, targets);
    return t.scale(t.sum_all(picked), -1.0 / static_cast<double>(n));
}

double pseudo_ll_score(const ModelView& view, const BuiltSequence& seq,
                       const ScoringOpts& opts) {
    Tape t;
    LiftedView lv = lift_view(t, view, LiftedView::Train::none);
    return t.val(pseudo_ll_var(t, lv, seq, opts))(0, 0);
}

ScoredOptions score_sample(const ModelView& view, const Tokenizer& tokenizer,
                           const QaSample& sample, const ScoringOpts& opts) {
    auto seqs = build_sequences(sample, tokenizer, view.backbone->config);
    ScoredOptions scored;
    for (const auto& seq : seqs) {
        scored.scores.push_back(pseudo_ll_score(view, seq, opts));
        scored.token_counts.push_back(static_cast<int>(
            scoreable_positions(seq, view.backbone->config, opts.answer_only).size()));
    }
    return scored;
}

double ranking_loss(const ScoredOptions& scored, int label, const RankingHyper& hyper) {
    const int m = static_cast<int>(scored.scores.size());
    if (m < 2) throw Error("ranking_loss: need at least 2 options");
    if (label < 0 || label >= m) throw Error("ranking_loss: label out of range");
    if (hyper.margin <= 0.0) throw Error("ranking_loss: margin must be positive");
    double loss = 0.0;
    const double gold = scored.scores[static_cast<size_t>(label)];
    for (int j = 0; j < m; ++j) {
        if (j == label) continue;
        loss += std::max(0.0, hyper.margin + gold - scored.scores[static_cast<size_t>(j)]);
    }
    return loss / static_cast<double>(m);
}

Tape::Var ranking_loss_var(Tape& t, const std::vector<Tape::Var>& scores, int label,
                           double margin) {
    const int m = static_cast<int>(scores.size());
    if (m < 2) throw Error("ranking_loss: need at least 2 options");
    if (label < 0 || label >= m) throw Error("ranking_loss: label out of range");
    Tape::Var acc;
    for (int j = 0; j < m; ++j) {
        if (j == label) continue;
        Tape::Var hinge = t.relu(t.add_const(
            t.sub(scores[static_cast<size_t>(label)], scores[static_cast<size_t>(j)]), margin));
        acc = acc.valid() ? t.add(acc, hinge) : hinge;
    }
    return t.scale(acc, 1.0 / static_cast<double>(m));
}

int predict(const ScoredOptions& scored) {
    if (scored.scores.empty()) throw Error("predict: no scores");
    int best = 0;
    for (int j = 1; j < static_cast<int>(scored.scores.size()); ++j)
        if (scored.scores[static_cast<size_t>(j)] < scored.scores[static_cast<size_t>(best)])
            best = j;
    return best;
}

double kgc_loss(const std::vector<double>& y_hat, const std::vector<double>& y_onehot) {
    if (y_hat.empty() || y_hat.size() != y_onehot.size())
        throw Error("kgc_loss: prediction/target size mismatch");
    double sum = 0.0;
    for (double p : y_hat) sum += p;
    if (std::abs(sum - 1.0) > 1e-4) throw Error("kgc_loss: prediction is not a distribution");
    int gold = -1;
    for (size_t k = 0; k < y_onehot.size(); ++k) {
        if (y_onehot[k] == 1.0) {
            if (gold >= 0) throw Error("kgc_loss: target is not one-hot");
            gold = static_cast<int>(k);
        } else if (y_onehot[k] != 0.0) {
            throw Error("kgc_loss: target is not one-hot");
        }
    }
    if (gold < 0) throw Error("kgc_loss: target is not one-hot");
    return -std::log(y_hat[static_cast<size_t>(gold)]);
}

}  // namespace kgfuse
