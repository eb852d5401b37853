#include "kgfuse/config.hpp"

#include <filesystem>
#include <nlohmann/json.hpp>
#include <set>

#include "kgfuse/checkpoint.hpp"
#include "kgfuse/common.hpp"
#include "kgfuse/digest.hpp"

namespace kgfuse {

using nlohmann::json;
namespace fs = std::filesystem;

ExperimentConfig default_config() {
    ExperimentConfig c;
    // Stage defaults: experts 8e-5, classifier 1e-5 (batch 64), fusion 1e-5,
    // full-model baselines 1e-5 for a single epoch. Margin 1.0 everywhere.
    c.expert_hyper.learning_rate = 8e-5;
    c.expert_hyper.epochs = 5;
    c.kgc_hyper.learning_rate = 1e-5;
    c.kgc_hyper.batch_size = 64;
    c.kgc_hyper.epochs = 5;
    c.fusion_hyper.learning_rate = 1e-5;
    c.fusion_hyper.epochs = 5;
    c.full_hyper.learning_rate = 1e-5;
    c.full_hyper.epochs = 1;
    // Backbone pretraining is toolkit plumbing; the rate suits the toy scale.
    c.backbone_hyper.learning_rate = 1e-3;
    c.backbone_hyper.epochs = 1;
    return c;
}

namespace {
void overlay_hyper(TrainHyper& h, const json& j) {
    if (j.contains("learning_rate")) h.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) h.batch_size = j.at("batch_size").get<int>();
    if (j.contains("weight_decay")) h.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("beta1")) h.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) h.beta2 = j.at("beta2").get<double>();
    if (j.contains("eps")) h.eps = j.at("eps").get<double>();
    if (j.contains("warmup_proportion"))
        h.warmup_proportion = j.at("warmup_proportion").get<double>();
    if (j.contains("margin")) h.margin = j.at("margin").get<double>();
    if (j.contains("epochs")) h.epochs = j.at("epochs").get<int>();
}

json hyper_json(const TrainHyper& h) {
    return json{{"learning_rate", h.learning_rate},
                {"batch_size", h.batch_size},
                {"weight_decay", h.weight_decay},
                {"beta1", h.beta1},
                {"beta2", h.beta2},
                {"eps", h.eps},
                {"warmup_proportion", h.warmup_proportion},
                {"margin", h.margin},
                {"epochs", h.epochs}};
}

void overlay_model(ModelConfig& m, const json& j) {
    if (j.contains("vocab_size")) m.vocab_size = j.at("vocab_size").get<int>();
    if (j.contains("hidden_dim")) m.hidden_dim = j.at("hidden_dim").get<int>();
    if (j.contains("layer_count")) m.layer_count = j.at("layer_count").get<int>();
    if (j.contains("head_count")) m.head_count = j.at("head_count").get<int>();
    if (j.contains("ffn_dim")) m.ffn_dim = j.at("ffn_dim").get<int>();
    if (j.contains("max_seq_len")) m.max_seq_len = j.at("max_seq_len").get<int>();
    if (j.contains("adapter_bottleneck_dim"))
        m.adapter_bottleneck_dim = j.at("adapter_bottleneck_dim").get<int>();
}
}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig c = default_config();
    try {
        if (!j.contains("kgs")) throw ConfigError("config: missing 'kgs'");
        for (const auto& e : j.at("kgs"))
            c.kgs.push_back({e.at("name").get<std::string>(), e.at("path").get<std::string>()});
        if (j.contains("templates")) {
            const json& t = j.at("templates");
            if (t.contains("mask_token")) c.mask_token = t.at("mask_token").get<std::string>();
            if (t.contains("name_pool"))
                c.name_pool = t.at("name_pool").get<std::vector<std::string>>();
            if (t.contains("overrides"))
                for (auto& [rel, pre] : t.at("overrides").items())
                    c.template_overrides[rel] = pre.get<std::string>();
        }
        if (j.contains("model")) overlay_model(c.model, j.at("model"));
        if (j.contains("data")) {
            const json& d = j.at("data");
            if (d.contains("option_count")) c.option_count = d.at("option_count").get<int>();
            if (d.contains("valid_fraction"))
                c.valid_fraction = d.at("valid_fraction").get<double>();
            if (d.contains("same_relation_distractors"))
                c.same_relation_distractors = d.at("same_relation_distractors").get<bool>();
            if (d.contains("answer_only_scoring"))
                c.answer_only_scoring = d.at("answer_only_scoring").get<bool>();
        }
        if (j.contains("mixture")) {
            const json& m = j.at("mixture");
            if (m.contains("per_kg_count"))
                c.mixture_per_kg = m.at("per_kg_count").get<size_t>();
        }
        if (j.contains("train")) {
            const json& t = j.at("train");
            if (t.contains("backbone")) {
                overlay_hyper(c.backbone_hyper, t.at("backbone"));
                if (t.at("backbone").contains("pretrain_steps"))
                    c.backbone_pretrain_steps = t.at("backbone").at("pretrain_steps").get<long>();
            }
            if (t.contains("expert")) overlay_hyper(c.expert_hyper, t.at("expert"));
            if (t.contains("kgc")) overlay_hyper(c.kgc_hyper, t.at("kgc"));
            if (t.contains("fusion")) {
                overlay_hyper(c.fusion_hyper, t.at("fusion"));
                if (t.at("fusion").contains("attention_dropout"))
                    c.fusion_attention_dropout =
                        t.at("fusion").at("attention_dropout").get<double>();
            }
            if (t.contains("full")) overlay_hyper(c.full_hyper, t.at("full"));
        }
        if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
        if (j.contains("query_mode")) {
            const std::string q = j.at("query_mode").get<std::string>();
            if (q == "plm")
                c.query_mode = QueryMode::plm;
            else if (q == "kgc")
                c.query_mode = QueryMode::kgc;
            else
                throw ConfigError("config: query_mode must be 'plm' or 'kgc'");
        }
        if (j.contains("output_root")) c.output_root = j.at("output_root").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    ExperimentConfig c = from_json(read_file(path));
    // Relative KG paths resolve against the config file's directory.
    const fs::path base = fs::path(path).parent_path();
    for (auto& kg : c.kgs) {
        if (!kg.path.empty() && fs::path(kg.path).is_relative())
            kg.path = (base / kg.path).string();
    }
    return c;
}

std::string ExperimentConfig::to_json() const {
    json kgs_j = json::array();
    for (const auto& kg : kgs) kgs_j.push_back({{"name", kg.name}, {"path", kg.path}});
    json fusion_j = hyper_json(fusion_hyper);
    fusion_j["attention_dropout"] = fusion_attention_dropout;
    json backbone_j = hyper_json(backbone_hyper);
    backbone_j["pretrain_steps"] = backbone_pretrain_steps;
    json j{{"kgs", kgs_j},
           {"templates",
            {{"mask_token", mask_token},
             {"name_pool", name_pool},
             {"overrides", template_overrides}}},
           {"model", json::parse(model.to_json())},
           {"data",
            {{"option_count", option_count},
             {"valid_fraction", valid_fraction},
             {"same_relation_distractors", same_relation_distractors},
             {"answer_only_scoring", answer_only_scoring}}},
           {"mixture", {{"per_kg_count", mixture_per_kg}}},
           {"train",
            {{"backbone", backbone_j},
             {"expert", hyper_json(expert_hyper)},
             {"kgc", hyper_json(kgc_hyper)},
             {"fusion", fusion_j},
             {"full", hyper_json(full_hyper)}}},
           {"seed", seed},
           {"query_mode", query_mode == QueryMode::kgc ? "kgc" : "plm"},
           {"output_root", output_root}};
    return j.dump(2);
}

std::string ExperimentConfig::digest() const { return sha256_hex(to_json()); }

void ExperimentConfig::validate(bool check_files) const {
    if (kgs.empty()) throw ConfigError("config: at least one KG is required");
    std::set<std::string> names;
    for (const auto& kg : kgs) {
        if (trim(kg.name).empty()) throw ConfigError("config: empty KG name");
        if (kg.name == "mixture") throw ConfigError("config: 'mixture' is a reserved KG name");
        if (!names.insert(kg.name).second)
            throw ConfigError("config: duplicate KG name '" + kg.name + "'");
        if (check_files && !fs::exists(kg.path))
            throw ConfigError("config: triple file '" + kg.path + "' does not exist");
    }
    try {
        model.validate();
        backbone_hyper.validate();
        expert_hyper.validate();
        kgc_hyper.validate();
        fusion_hyper.validate();
        full_hyper.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (option_count < 2) throw ConfigError("config: option_count must be at least 2");
    if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
        throw ConfigError("config: valid_fraction must lie in (0, 1)");
    if (mixture_per_kg < 1) throw ConfigError("config: mixture per_kg_count must be positive");
    if (backbone_pretrain_steps < 0)
        throw ConfigError("config: pretrain_steps must be non-negative");
    if (fusion_attention_dropout < 0.0 || fusion_attention_dropout >= 1.0)
        throw ConfigError("config: attention_dropout must lie in [0, 1)");
    if (trim(output_root).empty()) throw ConfigError("config: output_root must be set");
    // Round-trip stability: parsing our own serialization must be lossless.
    if (from_json(to_json()).to_json() != to_json())
        throw ConfigError("config: serialization does not round-trip");
}

TemplateRegistry ExperimentConfig::registry() const {
    TemplateRegistry r = default_templates();
    r.mask_token = mask_token;
    if (!name_pool.empty()) r.name_pool = name_pool;
    for (const auto& [rel, pre] : template_overrides) r.add(rel, pre);
    for (const auto& [rel, pre] : r.entries) r.style(rel);  // rejects multi-slot prefixes
    return r;
}

int ExperimentConfig::kg_index(const std::string& name) const {
    for (size_t i = 0; i < kgs.size(); ++i)
        if (kgs[i].name == name) return static_cast<int>(i);
    return -1;
}

std::string ExperimentConfig::data_dir() const { return output_root + "/data"; }

std::string ExperimentConfig::qa_path(const std::string& kg, const std::string& split) const {
    return data_dir() + "/qa-" + kg + "." + split + ".jsonl";
}

std::string ExperimentConfig::kgc_path(const std::string& split) const {
    return data_dir() + "/kgc." + split + ".jsonl";
}

std::string ExperimentConfig::mixture_path(const std::string& split) const {
    return data_dir() + "/mixture." + split + ".jsonl";
}

std::string ExperimentConfig::checkpoint_dir(const std::string& stage) const {
    std::string s = stage;
    for (char& c : s)
        if (c == ':') c = '-';
    return output_root + "/checkpoints/" + s;
}

std::string ExperimentConfig::run_manifest_path(const std::string& stage) const {
    std::string s = stage;
    for (char& c : s)
        if (c == ':') c = '-';
    return output_root + "/runs/" + s + ".json";
}

std::string ExperimentConfig::metrics_dir() const { return output_root + "/metrics"; }

}  // namespace kgfuse
