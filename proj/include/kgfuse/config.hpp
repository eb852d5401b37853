#pragma once

#include <map>
#include <string>
#include <vector>

#include "kgfuse/kg.hpp"
#include "kgfuse/model.hpp"
#include "kgfuse/optim.hpp"

namespace kgfuse {

// One JSON document declares the whole experiment: KG files, templates, model
// shape, per-stage hyperparameters, seeds, and the output root. Every command
// validates the full config before touching the filesystem, and the config
// digest is recorded in each run manifest.
struct ExperimentConfig {
    struct KgDecl {
        std::string name;
        std::string path;
    };
    std::vector<KgDecl> kgs;  // order defines the kg_label indices

    std::string mask_token = "[MASK]";
    std::vector<std::string> name_pool;                      // empty: built-in pool
    std::map<std::string, std::string> template_overrides;   // relation -> prefix

    ModelConfig model;

    int option_count = 3;
    double valid_fraction = 0.1;
    bool same_relation_distractors = false;
    bool answer_only_scoring = false;

    size_t mixture_per_kg = 2500;

    long backbone_pretrain_steps = 500;
    TrainHyper backbone_hyper;  // pretraining
    TrainHyper expert_hyper;
    TrainHyper kgc_hyper;
    TrainHyper fusion_hyper;
    TrainHyper full_hyper;  // stl-plm / mtl
    double fusion_attention_dropout = 0.1;

    uint64_t seed = 42;
    QueryMode query_mode = QueryMode::kgc;
    std::string output_root = "out";

    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
    std::string to_json() const;
    std::string digest() const;

    // check_files also requires every referenced triple file to exist.
    void validate(bool check_files) const;

    TemplateRegistry registry() const;
    int kg_index(const std::string& name) const;  // -1 when unknown

    // --- canonical artifact layout under output_root ---
    std::string data_dir() const;
    std::string qa_path(const std::string& kg, const std::string& split) const;
    std::string kgc_path(const std::string& split) const;
    std::string mixture_path(const std::string& split) const;
    std::string checkpoint_dir(const std::string& stage) const;
    std::string run_manifest_path(const std::string& stage) const;
    std::string metrics_dir() const;
};

ExperimentConfig default_config();

}  // namespace kgfuse
