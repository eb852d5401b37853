#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "kgfuse/matrix.hpp"
#include "kgfuse/rng.hpp"
#include "kgfuse/tape.hpp"

namespace kgfuse {

struct ModelConfig {
    int vocab_size = 512;
    int hidden_dim = 64;
    int layer_count = 2;
    int head_count = 2;
    int ffn_dim = 128;
    int max_seq_len = 64;
    int adapter_bottleneck_dim = 16;
    int mask_token_id = 3;
    int cls_token_id = 1;
    int pad_token_id = 0;
    int sep_token_id = 2;

    void validate() const;  // throws on violated invariants
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// Named views over a parameter bundle, in a fixed order. The same order drives
// initialization draws, checkpoint layout, digests, and optimizer slots.
using ParamRefs = std::vector<std::pair<std::string, Mat*>>;
using ConstParamRefs = std::vector<std::pair<std::string, const Mat*>>;

struct LayerParams {
    Mat wq, bq, wk, bk, wv, bv, wo, bo;
    Mat ln1_g, ln1_b;
    Mat w1, b1, w2, b2;
    Mat ln2_g, ln2_b;
};

struct MlmHead {
    Mat wt, bt;      // transform
    Mat ln_g, ln_b;  // transform norm
    Mat wo, bo;      // projection to vocabulary
};

// The backbone (theta): a small trainable masked-LM encoder standing in for
// the frozen PLM of the full-scale setting.
struct BackboneParams {
    ModelConfig config;
    Mat tok_emb;  // V x H
    Mat pos_emb;  // max_seq_len x H
    Mat emb_ln_g, emb_ln_b;
    std::vector<LayerParams> layers;
    MlmHead head;

    ParamRefs params();
    ConstParamRefs params() const;
    size_t parameter_count() const;
    std::string digest() const;  // sha256 over the float32 wire image
};

// A bottleneck adapter (phi): one residual block per backbone layer. The up
// projection starts at zero so a fresh adapter is an exact identity.
struct AdapterParams {
    std::string role;  // "expert:<kg>" or "kgc"
    struct Block {
        Mat down_w, down_b;  // H -> b
        Mat up_w, up_b;      // b -> H
    };
    std::vector<Block> blocks;

    ParamRefs params();
    ConstParamRefs params() const;
    std::string digest() const;
};

// Per-layer fusion weights (psi). W_v starts at identity so single-expert
// fusion reproduces the expert exactly at initialization.
struct FusionParams {
    double temperature = 1.0;
    double attention_dropout = 0.1;
    struct Block {
        Mat wq, wk, wv;  // H x H each
    };
    std::vector<Block> blocks;

    ParamRefs params();
    ConstParamRefs params() const;
    std::string digest() const;
};

struct ClassifierHead {
    Mat w;  // K x H, no bias

    ParamRefs params();
    ConstParamRefs params() const;
    std::string digest() const;
};

BackboneParams init_backbone(const ModelConfig& config, uint64_t seed);
AdapterParams init_adapter(const ModelConfig& config, const std::string& role, uint64_t seed);
FusionParams init_fusion(const ModelConfig& config, uint64_t seed);
ClassifierHead init_classifier(const ModelConfig& config, int kg_count, uint64_t seed);

enum class QueryMode { plm, kgc };

// Per-layer activations of one forward pass.
struct ForwardTrace {
    std::vector<Mat> h_plm;                 // backbone block outputs, per layer
    std::vector<std::vector<Mat>> h_expert; // [expert][layer] adapter outputs
    std::vector<Mat> h_kgc;                 // classifier-adapter outputs (kgc query mode)
    std::vector<Mat> z;                     // fused outputs, per layer
    std::vector<Mat> attention;             // fusion probabilities, per layer, T x K
    Mat mlm_logits;                         // T x V
    Mat cls_hidden;                         // 1 x H, final stream at position 0
};

// Which model composition a forward or scoring pass runs through.
struct ModelView {
    const BackboneParams* backbone = nullptr;
    const AdapterParams* adapter = nullptr;           // single-adapter path
    std::vector<const AdapterParams*> experts;        // fusion path
    const FusionParams* fusion = nullptr;
    const AdapterParams* kgc_adapter = nullptr;
    QueryMode query_mode = QueryMode::plm;
    std::vector<int> mute_experts;  // diagnostic: force these experts' scores to -inf

    enum class Kind { plain, adapter, fusion };
    Kind kind() const;
    void validate() const;
};

ForwardTrace forward_plain(const BackboneParams& theta, const std::vector<int>& tokens);
ForwardTrace forward_adapter(const BackboneParams& theta, const AdapterParams& phi,
                             const std::vector<int>& tokens);
ForwardTrace forward_fusion(const BackboneParams& theta,
                            const std::vector<const AdapterParams*>& experts,
                            const FusionParams& psi, const std::vector<int>& tokens,
                            QueryMode query_mode, const AdapterParams* phi_kgc = nullptr,
                            const std::vector<int>& mute_experts = {});

// softmax(W_kgc h_cls) over the K experiment KGs; tokens must begin with CLS.
std::vector<double> classify_kg(const BackboneParams& theta, const AdapterParams& phi_kgc,
                                const ClassifierHead& head, const std::vector<int>& tokens);

// ---------------------------------------------------------------------------
// Tape-level building blocks shared by the public forwards, the scorer, and
// the trainers.

struct LayerVars {
    Tape::Var wq, bq, wk, bk, wv, bv, wo, bo;
    Tape::Var ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
};

struct BackboneVars {
    Tape::Var tok_emb, pos_emb, emb_ln_g, emb_ln_b;
    std::vector<LayerVars> layers;
    Tape::Var head_wt, head_bt, head_ln_g, head_ln_b, head_wo, head_bo;
};

struct AdapterVars {
    struct Block {
        Tape::Var down_w, down_b, up_w, up_b;
    };
    std::vector<Block> blocks;
};

struct FusionVars {
    std::vector<std::array<Tape::Var, 3>> blocks;  // wq, wk, wv
    double temperature = 1.0;
};

// Named handles of the trainable leaves, in params() order; the trainers read
// gradients through these names and the optimizer keys its slots by them.
using NamedVars = std::vector<std::pair<std::string, Tape::Var>>;

BackboneVars lift(Tape& t, const BackboneParams& p, bool trainable, NamedVars* reg = nullptr);
AdapterVars lift(Tape& t, const AdapterParams& p, bool trainable, NamedVars* reg = nullptr);
FusionVars lift(Tape& t, const FusionParams& p, bool trainable, NamedVars* reg = nullptr);

// A ModelView lifted onto a tape, with exactly one trainable group.
struct LiftedView {
    enum class Train { none, backbone, adapter, fusion, kgc_head };
    const ModelConfig* config = nullptr;
    BackboneVars theta;
    std::optional<AdapterVars> adapter;
    std::vector<AdapterVars> experts;
    std::optional<FusionVars> fusion;
    std::optional<AdapterVars> kgc;
    QueryMode query_mode = QueryMode::plm;
    std::vector<int> mute_experts;
    // Training-time fusion attention dropout; 0 disables.
    double attention_dropout = 0.0;
    SeededRng* dropout_rng = nullptr;
};

LiftedView lift_view(Tape& t, const ModelView& view, LiftedView::Train train,
                     NamedVars* reg = nullptr);

// Runs the encoder over `ids`, which holds rows/block_len independent
// sequences of equal length (the masked variants of one sequence are batched
// this way). Returns the final hidden states, rows x H.
Tape::Var encode_stream(Tape& t, const LiftedView& view, const std::vector<int>& ids,
                        int block_len, ForwardTrace* trace = nullptr);

// MLM head over a subset of hidden rows.
Tape::Var mlm_logits(Tape& t, const LiftedView& view, Tape::Var hidden_rows);

}  // namespace kgfuse
