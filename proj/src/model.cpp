#include "kgfuse/model.hpp"

#include <nlohmann/json.hpp>
#include <set>

#include "kgfuse/common.hpp"
#include "kgfuse/digest.hpp"

namespace kgfuse {

using nlohmann::json;

void ModelConfig::validate() const {
    if (vocab_size < 6) throw Error("config: vocab_size must be at least 6");
    if (hidden_dim <= 0 || ffn_dim <= 0 || max_seq_len <= 0)
        throw Error("config: dimensions must be positive");
    if (layer_count < 0) throw Error("config: layer_count must be non-negative");
    if (head_count <= 0 || hidden_dim % head_count != 0)
        throw Error("config: head_count must divide hidden_dim");
    if (adapter_bottleneck_dim <= 0 || adapter_bottleneck_dim >= hidden_dim)
        throw Error("config: adapter bottleneck must be positive and smaller than hidden_dim");
    std::set<int> specials{mask_token_id, cls_token_id, pad_token_id, sep_token_id};
    if (specials.size() != 4) throw Error("config: special token ids must be distinct");
    for (int id : specials)
        if (id < 0 || id >= vocab_size) throw Error("config: special token id out of vocabulary");
}

std::string ModelConfig::to_json() const {
    json j{{"vocab_size", vocab_size},
           {"hidden_dim", hidden_dim},
           {"layer_count", layer_count},
           {"head_count", head_count},
           {"ffn_dim", ffn_dim},
           {"max_seq_len", max_seq_len},
           {"adapter_bottleneck_dim", adapter_bottleneck_dim},
           {"mask_token_id", mask_token_id},
           {"cls_token_id", cls_token_id},
           {"pad_token_id", pad_token_id},
           {"sep_token_id", sep_token_id}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.layer_count = j.at("layer_count").get<int>();
    c.head_count = j.at("head_count").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.adapter_bottleneck_dim = j.at("adapter_bottleneck_dim").get<int>();
    c.mask_token_id = j.at("mask_token_id").get<int>();
    c.cls_token_id = j.at("cls_token_id").get<int>();
    c.pad_token_id = j.at("pad_token_id").get<int>();
    c.sep_token_id = j.at("sep_token_id").get<int>();
    c.validate();
    return c;
}

// --- parameter listings -----------------------------------------------------

namespace {
template <typename Self, typename Refs>
Refs backbone_params(Self& p) {
    Refs out;
    out.emplace_back("tok_emb", &p.tok_emb);
    out.emplace_back("pos_emb", &p.pos_emb);
    out.emplace_back("emb_ln_g", &p.emb_ln_g);
    out.emplace_back("emb_ln_b", &p.emb_ln_b);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        auto& l = p.layers[i];
        const std::string b = "layer" + std::to_string(i) + ".";
        out.emplace_back(b + "attn.wq", &l.wq);
        out.emplace_back(b + "attn.bq", &l.bq);
        out.emplace_back(b + "attn.wk", &l.wk);
        out.emplace_back(b + "attn.bk", &l.bk);
        out.emplace_back(b + "attn.wv", &l.wv);
        out.emplace_back(b + "attn.bv", &l.bv);
        out.emplace_back(b + "attn.wo", &l.wo);
        out.emplace_back(b + "attn.bo", &l.bo);
        out.emplace_back(b + "ln1_g", &l.ln1_g);
        out.emplace_back(b + "ln1_b", &l.ln1_b);
        out.emplace_back(b + "ffn.w1", &l.w1);
        out.emplace_back(b + "ffn.b1", &l.b1);
        out.emplace_back(b + "ffn.w2", &l.w2);
        out.emplace_back(b + "ffn.b2", &l.b2);
        out.emplace_back(b + "ln2_g", &l.ln2_g);
        out.emplace_back(b + "ln2_b", &l.ln2_b);
    }
    out.emplace_back("head.wt", &p.head.wt);
    out.emplace_back("head.bt", &p.head.bt);
    out.emplace_back("head.ln_g", &p.head.ln_g);
    out.emplace_back("head.ln_b", &p.head.ln_b);
    out.emplace_back("head.wo", &p.head.wo);
    out.emplace_back("head.bo", &p.head.bo);
    return out;
}

template <typename Self, typename Refs>
Refs adapter_params(Self& p) {
    Refs out;
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string s = "block" + std::to_string(i) + ".";
        out.emplace_back(s + "down_w", &b.down_w);
        out.emplace_back(s + "down_b", &b.down_b);
        out.emplace_back(s + "up_w", &b.up_w);
        out.emplace_back(s + "up_b", &b.up_b);
    }
    return out;
}

template <typename Self, typename Refs>
Refs fusion_params(Self& p) {
    Refs out;
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string s = "block" + std::to_string(i) + ".";
        out.emplace_back(s + "wq", &b.wq);
        out.emplace_back(s + "wk", &b.wk);
        out.emplace_back(s + "wv", &b.wv);
    }
    return out;
}

std::string digest_of(const ConstParamRefs& refs) {
    Sha256 h;
    for (const auto& [name, m] : refs) {
        h.update(name);
        h.update(":" + std::to_string(m->rows()) + "x" + std::to_string(m->cols()) + ";");
        auto bytes = to_f32_bytes(*m);
        h.update(bytes.data(), bytes.size());
    }
    return h.hex();
}
}  // namespace

ParamRefs BackboneParams::params() { return backbone_params<BackboneParams, ParamRefs>(*this); }
ConstParamRefs BackboneParams::params() const {
    return backbone_params<const BackboneParams, ConstParamRefs>(*this);
}
size_t BackboneParams::parameter_count() const {
    size_t n = 0;
    for (const auto& [name, m] : params()) n += static_cast<size_t>(m->size());
    return n;
}
std::string BackboneParams::digest() const { return digest_of(params()); }

ParamRefs AdapterParams::params() { return adapter_params<AdapterParams, ParamRefs>(*this); }
ConstParamRefs AdapterParams::params() const {
    return adapter_params<const AdapterParams, ConstParamRefs>(*this);
}
std::string AdapterParams::digest() const { return digest_of(params()); }

ParamRefs FusionParams::params() { return fusion_params<FusionParams, ParamRefs>(*this); }
ConstParamRefs FusionParams::params() const {
    return fusion_params<const FusionParams, ConstParamRefs>(*this);
}
std::string FusionParams::digest() const { return digest_of(params()); }

ParamRefs ClassifierHead::params() { return {{"w", &w}}; }
ConstParamRefs ClassifierHead::params() const { return {{"w", &w}}; }
std::string ClassifierHead::digest() const { return digest_of(params()); }

// --- initialization ---------------------------------------------------------

namespace {
constexpr double kInitStd = 0.02;
}

BackboneParams init_backbone(const ModelConfig& config, uint64_t seed) {
    config.validate();
    SeededRng rng(derive_seed(seed, "init.backbone"));
    const int H = config.hidden_dim, F = config.ffn_dim, V = config.vocab_size;
    BackboneParams p;
    p.config = config;
    p.tok_emb = normal_matrix(V, H, kInitStd, rng);
    p.pos_emb = normal_matrix(config.max_seq_len, H, kInitStd, rng);
    p.emb_ln_g = Mat::Ones(1, H);
    p.emb_ln_b = Mat::Zero(1, H);
    p.layers.resize(static_cast<size_t>(config.layer_count));
    for (auto& l : p.layers) {
        l.wq = normal_matrix(H, H, kInitStd, rng);
        l.bq = Mat::Zero(1, H);
        l.wk = normal_matrix(H, H, kInitStd, rng);
        l.bk = Mat::Zero(1, H);
        l.wv = normal_matrix(H, H, kInitStd, rng);
        l.bv = Mat::Zero(1, H);
        l.wo = normal_matrix(H, H, kInitStd, rng);
        l.bo = Mat::Zero(1, H);
        l.ln1_g = Mat::Ones(1, H);
        l.ln1_b = Mat::Zero(1, H);
        l.w1 = normal_matrix(H, F, kInitStd, rng);
        l.b1 = Mat::Zero(1, F);
        l.w2 = normal_matrix(F, H, kInitStd, rng);
        l.b2 = Mat::Zero(1, H);
        l.ln2_g = Mat::Ones(1, H);
        l.ln2_b = Mat::Zero(1, H);
    }
    p.head.wt = normal_matrix(H, H, kInitStd, rng);
    p.head.bt = Mat::Zero(1, H);
    p.head.ln_g = Mat::Ones(1, H);
    p.head.ln_b = Mat::Zero(1, H);
    p.head.wo = normal_matrix(H, V, kInitStd, rng);
    p.head.bo = Mat::Zero(1, V);
    return p;
}

AdapterParams init_adapter(const ModelConfig& config, const std::string& role, uint64_t seed) {
    config.validate();
    SeededRng rng(derive_seed(seed, "init.adapter." + role));
    const int H = config.hidden_dim, B = config.adapter_bottleneck_dim;
    AdapterParams p;
    p.role = role;
    p.blocks.resize(static_cast<size_t>(config.layer_count));
    for (auto& b : p.blocks) {
        b.down_w = normal_matrix(H, B, kInitStd, rng);
        b.down_b = Mat::Zero(1, B);
        b.up_w = Mat::Zero(B, H);  // identity start
        b.up_b = Mat::Zero(1, H);
    }
    return p;
}

FusionParams init_fusion(const ModelConfig& config, uint64_t seed) {
    config.validate();
    SeededRng rng(derive_seed(seed, "init.fusion"));
    const int H = config.hidden_dim;
    FusionParams p;
    p.blocks.resize(static_cast<size_t>(config.layer_count));
    for (auto& b : p.blocks) {
        b.wq = normal_matrix(H, H, kInitStd, rng);
        b.wk = normal_matrix(H, H, kInitStd, rng);
        b.wv = Mat::Identity(H, H);  // non-destructive start
    }
    return p;
}

ClassifierHead init_classifier(const ModelConfig& config, int kg_count, uint64_t seed) {
    config.validate();
    if (kg_count < 1) throw Error("classifier: need at least one KG");
    SeededRng rng(derive_seed(seed, "init.classifier"));
    ClassifierHead h;
    h.w = normal_matrix(kg_count, config.hidden_dim, kInitStd, rng);
    return h;
}

// --- lifting ----------------------------------------------------------------

BackboneVars lift(Tape& t, const BackboneParams& p, bool trainable, NamedVars* reg) {
    auto L = [&](const std::string& name, const Mat& m) {
        Tape::Var v = t.leaf(m, trainable);
        if (trainable && reg) reg->emplace_back(name, v);
        return v;
    };
    BackboneVars v;
    v.tok_emb = L("tok_emb", p.tok_emb);
    v.pos_emb = L("pos_emb", p.pos_emb);
    v.emb_ln_g = L("emb_ln_g", p.emb_ln_g);
    v.emb_ln_b = L("emb_ln_b", p.emb_ln_b);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        const std::string b = "layer" + std::to_string(i) + ".";
        LayerVars lv;
        lv.wq = L(b + "attn.wq", l.wq);
        lv.bq = L(b + "attn.bq", l.bq);
        lv.wk = L(b + "attn.wk", l.wk);
        lv.bk = L(b + "attn.bk", l.bk);
        lv.wv = L(b + "attn.wv", l.wv);
        lv.bv = L(b + "attn.bv", l.bv);
        lv.wo = L(b + "attn.wo", l.wo);
        lv.bo = L(b + "attn.bo", l.bo);
        lv.ln1_g = L(b + "ln1_g", l.ln1_g);
        lv.ln1_b = L(b + "ln1_b", l.ln1_b);
        lv.w1 = L(b + "ffn.w1", l.w1);
        lv.b1 = L(b + "ffn.b1", l.b1);
        lv.w2 = L(b + "ffn.w2", l.w2);
        lv.b2 = L(b + "ffn.b2", l.b2);
        lv.ln2_g = L(b + "ln2_g", l.ln2_g);
        lv.ln2_b = L(b + "ln2_b", l.ln2_b);
        v.layers.push_back(lv);
    }
    v.head_wt = L("head.wt", p.head.wt);
    v.head_bt = L("head.bt", p.head.bt);
    v.head_ln_g = L("head.ln_g", p.head.ln_g);
    v.head_ln_b = L("head.ln_b", p.head.ln_b);
    v.head_wo = L("head.wo", p.head.wo);
    v.head_bo = L("head.bo", p.head.bo);
    return v;
}

AdapterVars lift(Tape& t, const AdapterParams& p, bool trainable, NamedVars* reg) {
    auto L = [&](const std::string& name, const Mat& m) {
        Tape::Var v = t.leaf(m, trainable);
        if (trainable && reg) reg->emplace_back(name, v);
        return v;
    };
    AdapterVars v;
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        const auto& b = p.blocks[i];
        const std::string bp = "block" + std::to_string(i) + ".";
        AdapterVars::Block bv;
        bv.down_w = L(bp + "down_w", b.down_w);
        bv.down_b = L(bp + "down_b", b.down_b);
        bv.up_w = L(bp + "up_w", b.up_w);
        bv.up_b = L(bp + "up_b", b.up_b);
        v.blocks.push_back(bv);
    }
    return v;
}

FusionVars lift(Tape& t, const FusionParams& p, bool trainable, NamedVars* reg) {
    auto L = [&](const std::string& name, const Mat& m) {
        Tape::Var v = t.leaf(m, trainable);
        if (trainable && reg) reg->emplace_back(name, v);
        return v;
    };
    FusionVars v;
    v.temperature = p.temperature;
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        const auto& b = p.blocks[i];
        const std::string bp = "block" + std::to_string(i) + ".";
        v.blocks.push_back({L(bp + "wq", b.wq), L(bp + "wk", b.wk), L(bp + "wv", b.wv)});
    }
    return v;
}

ModelView::Kind ModelView::kind() const {
    if (fusion) return Kind::fusion;
    if (adapter) return Kind::adapter;
    return Kind::plain;
}

void ModelView::validate() const {
    if (!backbone) throw Error("model view: backbone missing");
    if (fusion) {
        if (experts.empty()) throw Error("model view: fusion requires at least one expert");
        if (query_mode == QueryMode::kgc && !kgc_adapter)
            throw Error("model view: kgc query mode requires the classifier adapter");
        for (const auto* e : experts)
            if (e->blocks.size() != static_cast<size_t>(backbone->config.layer_count))
                throw Error("model view: expert adapter layer count mismatch");
    } else if (adapter) {
        if (adapter->blocks.size() != static_cast<size_t>(backbone->config.layer_count))
            throw Error("model view: adapter layer count mismatch");
    }
}

LiftedView lift_view(Tape& t, const ModelView& view, LiftedView::Train train, NamedVars* reg) {
    view.validate();
    LiftedView lv;
    lv.config = &view.backbone->config;
    lv.theta = lift(t, *view.backbone, train == LiftedView::Train::backbone, reg);
    if (view.adapter)
        lv.adapter = lift(t, *view.adapter, train == LiftedView::Train::adapter, reg);
    for (const auto* e : view.experts) lv.experts.push_back(lift(t, *e, false));
    if (view.fusion) lv.fusion = lift(t, *view.fusion, train == LiftedView::Train::fusion, reg);
    if (view.kgc_adapter) lv.kgc = lift(t, *view.kgc_adapter, false);
    lv.query_mode = view.query_mode;
    lv.mute_experts = view.mute_experts;
    return lv;
}

// --- forward graph ----------------------------------------------------------

namespace {

Tape::Var adapter_block(Tape& t, Tape::Var h, const AdapterVars::Block& b) {
    Tape::Var u = t.gelu(t.add_rowvec(t.matmul(h, b.down_w), b.down_b));
    return t.add(h, t.add_rowvec(t.matmul(u, b.up_w), b.up_b));
}

}  // namespace

Tape::Var encode_stream(Tape& t, const LiftedView& view, const std::vector<int>& ids,
                        int block_len, ForwardTrace* trace) {
    const ModelConfig& cfg = *view.config;
    if (ids.empty()) throw Error("encode: empty token sequence");
    if (block_len <= 0 || ids.size() % static_cast<size_t>(block_len) != 0)
        throw Error("encode: ids must hold whole blocks");
    if (block_len > cfg.max_seq_len)
        throw Error("encode: sequence length " + std::to_string(block_len) +
                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab_size) throw Error("encode: token id out of vocabulary");

    const int rows = static_cast<int>(ids.size());
    std::vector<int> pos(ids.size());
    std::vector<uint8_t> pad_mask(ids.size(), 0);
    bool any_pad = false;
    for (size_t i = 0; i < ids.size(); ++i) {
        pos[i] = static_cast<int>(i) % block_len;
        if (ids[i] == cfg.pad_token_id) {
            pad_mask[i] = 1;
            any_pad = true;
        }
    }

    Tape::Var x = t.add(t.gather_rows(view.theta.tok_emb, ids),
                        t.gather_rows(view.theta.pos_emb, pos));
    x = t.layer_norm(x, view.theta.emb_ln_g, view.theta.emb_ln_b);

    const bool fused = view.fusion.has_value();
    // Backbone attention scales by 1/sqrt(d_head) inside the op; the fusion
    // scores over experts scale by 1/sqrt(H).
    const double fusion_scale =
        1.0 / (std::sqrt(static_cast<double>(cfg.hidden_dim)) *
               (view.fusion ? view.fusion->temperature : 1.0));

    for (size_t l = 0; l < view.theta.layers.size(); ++l) {
        const LayerVars& lv = view.theta.layers[l];
        Tape::Var attn = t.self_attention(x, lv.wq, lv.bq, lv.wk, lv.bk, lv.wv, lv.bv, lv.wo,
                                          lv.bo, cfg.head_count, block_len,
                                          any_pad ? pad_mask : std::vector<uint8_t>{});
        Tape::Var x1 = t.layer_norm(t.add(x, attn), lv.ln1_g, lv.ln1_b);
        Tape::Var ffn = t.add_rowvec(
            t.matmul(t.gelu(t.add_rowvec(t.matmul(x1, lv.w1), lv.b1)), lv.w2), lv.b2);
        Tape::Var h_plm = t.layer_norm(t.add(x1, ffn), lv.ln2_g, lv.ln2_b);
        if (trace) trace->h_plm.push_back(t.val(h_plm));

        if (fused) {
            std::vector<Tape::Var> h_exp;
            h_exp.reserve(view.experts.size());
            for (size_t k = 0; k < view.experts.size(); ++k) {
                Tape::Var he = adapter_block(t, h_plm, view.experts[k].blocks[l]);
                if (trace) {
                    if (trace->h_expert.size() <= k) trace->h_expert.resize(k + 1);
                    trace->h_expert[k].push_back(t.val(he));
                }
                h_exp.push_back(he);
            }
            Tape::Var q_src = h_plm;
            if (view.query_mode == QueryMode::kgc) {
                q_src = adapter_block(t, h_plm, view.kgc->blocks[l]);
                if (trace) trace->h_kgc.push_back(t.val(q_src));
            }
            const auto& fb = view.fusion->blocks[l];
            Tape::Var q = t.matmul(q_src, fb[0]);
            std::vector<Tape::Var> keys, vals;
            for (Tape::Var he : h_exp) {
                keys.push_back(t.matmul(he, fb[1]));
                vals.push_back(t.matmul(he, fb[2]));
            }
            Tape::Var scores = t.expert_scores(q, keys, fusion_scale);
            if (!view.mute_experts.empty()) {
                Mat mute = Mat::Zero(rows, static_cast<int>(h_exp.size()));
                for (int k : view.mute_experts) {
                    if (k < 0 || k >= static_cast<int>(h_exp.size()))
                        throw Error("encode: muted expert index out of range");
                    mute.col(k).setConstant(-1e30);
                }
                scores = t.add(scores, t.leaf(std::move(mute), false));
            }
            Tape::Var probs = t.softmax_rows(scores);
            if (trace) trace->attention.push_back(t.val(probs));
            Tape::Var mix_p = probs;
            if (view.attention_dropout > 0.0 && view.dropout_rng) {
                const double keep = 1.0 - view.attention_dropout;
                Mat mask(rows, static_cast<int>(h_exp.size()));
                for (int r = 0; r < mask.rows(); ++r)
                    for (int c = 0; c < mask.cols(); ++c)
                        mask(r, c) =
                            view.dropout_rng->uniform_real() < view.attention_dropout
                                ? 0.0
                                : 1.0 / keep;
                mix_p = t.mul_elem(probs, t.leaf(std::move(mask), false));
            }
            Tape::Var z = t.mix_values(mix_p, vals);
            if (trace) trace->z.push_back(t.val(z));
            x = z;
        } else if (view.adapter) {
            Tape::Var he = adapter_block(t, h_plm, view.adapter->blocks[l]);
            if (trace) {
                if (trace->h_expert.empty()) trace->h_expert.resize(1);
                trace->h_expert[0].push_back(t.val(he));
            }
            x = he;
        } else {
            x = h_plm;
        }
    }
    return x;
}

Tape::Var mlm_logits(Tape& t, const LiftedView& view, Tape::Var hidden_rows) {
    const BackboneVars& th = view.theta;
    Tape::Var tr = t.gelu(t.add_rowvec(t.matmul(hidden_rows, th.head_wt), th.head_bt));
    tr = t.layer_norm(tr, th.head_ln_g, th.head_ln_b);
    return t.add_rowvec(t.matmul(tr, th.head_wo), th.head_bo);
}

// --- public forwards (evaluation mode) ---------------------------------------

namespace {
ForwardTrace run_forward(const ModelView& view, const std::vector<int>& tokens) {
    view.validate();
    Tape t;
    LiftedView lv = lift_view(t, view, LiftedView::Train::none);
    ForwardTrace trace;
    Tape::Var h = encode_stream(t, lv, tokens, static_cast<int>(tokens.size()), &trace);
    trace.mlm_logits = t.val(mlm_logits(t, lv, h));
    trace.cls_hidden = t.val(h).row(0);
    return trace;
}
}  // namespace

ForwardTrace forward_plain(const BackboneParams& theta, const std::vector<int>& tokens) {
    ModelView v;
    v.backbone = &theta;
    return run_forward(v, tokens);
}

ForwardTrace forward_adapter(const BackboneParams& theta, const AdapterParams& phi,
                             const std::vector<int>& tokens) {
    ModelView v;
    v.backbone = &theta;
    v.adapter = &phi;
    return run_forward(v, tokens);
}

ForwardTrace forward_fusion(const BackboneParams& theta,
                            const std::vector<const AdapterParams*>& experts,
                            const FusionParams& psi, const std::vector<int>& tokens,
                            QueryMode query_mode, const AdapterParams* phi_kgc,
                            const std::vector<int>& mute_experts) {
    ModelView v;
    v.backbone = &theta;
    v.experts = experts;
    v.fusion = &psi;
    v.query_mode = query_mode;
    v.kgc_adapter = phi_kgc;
    v.mute_experts = mute_experts;
    return run_forward(v, tokens);
}

std::vector<double> classify_kg(const BackboneParams& theta, const AdapterParams& phi_kgc,
                                const ClassifierHead& head, const std::vector<int>& tokens) {
    if (tokens.empty() || tokens[0] != theta.config.cls_token_id)
        throw Error("classify_kg: sequence must begin with the CLS token");
    Tape t;
    ModelView v;
    v.backbone = &theta;
    v.adapter = &phi_kgc;
    LiftedView lv = lift_view(t, v, LiftedView::Train::none);
    Tape::Var h = encode_stream(t, lv, tokens, static_cast<int>(tokens.size()));
    Tape::Var cls = t.gather_rows(h, {0});
    Tape::Var logits = t.matmul_nt(cls, t.leaf(head.w, false));
    Tape::Var probs = t.softmax_rows(logits);
    const Mat& p = t.val(probs);
    std::vector<double> out(static_cast<size_t>(p.cols()));
    for (int k = 0; k < p.cols(); ++k) out[static_cast<size_t>(k)] = p(0, k);
    return out;
}

}  // namespace kgfuse
