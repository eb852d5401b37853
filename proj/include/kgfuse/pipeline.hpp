#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "kgfuse/config.hpp"
#include "kgfuse/model.hpp"
#include "kgfuse/objectives.hpp"
#include "kgfuse/optim.hpp"
#include "kgfuse/synth.hpp"
#include "kgfuse/tokenizer.hpp"

namespace kgfuse {

// Training modes and the parameter sets they leave frozen. Freeze contracts
// are exact: a frozen bundle is bitwise identical before and after training.
enum class TrainMode { expert_adapter, kgc_adapter, fusion, stl_plm, mtl };
std::string to_string(TrainMode mode);

struct RunManifest {
    std::string stage;
    std::string status;  // running | complete | failed
    std::string mode;
    uint64_t seed = 0;
    std::string config_digest;
    std::map<std::string, std::string> dataset_digests;
    std::vector<std::string> checkpoints;
    std::vector<double> loss_curve;
    double wall_time_s = 0.0;
    std::string error;

    std::string to_json() const;
    static RunManifest from_json(const std::string& text);
    void write(const std::string& path) const;  // atomic
    static RunManifest read(const std::string& path);
};

// --- training operations ------------------------------------------------------
// All trainers are functional: inputs are const and returned bundles are new.
// Every random draw (order, masking, dropout) derives from hyper.seed.

// Masked-LM pretraining, 15% of non-special positions masked per sentence.
// steps == 0 returns theta unchanged.
BackboneParams pretrain_backbone(const BackboneParams& theta, const Tokenizer& tok,
                                 const std::vector<std::string>& corpus, long steps,
                                 const TrainHyper& hyper,
                                 std::vector<double>* loss_curve = nullptr);

// Deterministic masked-token loss on held-out sentences (no training).
double mlm_eval_loss(const BackboneParams& theta, const Tokenizer& tok,
                     const std::vector<std::string>& sentences, uint64_t mask_seed);

// Eq-style expert training: theta frozen, ranking loss over pseudo-LL scores.
AdapterParams train_expert(const BackboneParams& theta, const Tokenizer& tok,
                           const QaDataset& dataset, const TrainHyper& hyper,
                           std::vector<double>* loss_curve = nullptr);

// KG-classification training: theta frozen, adapter and linear head learned
// jointly with cross-entropy on the CLS state.
std::pair<AdapterParams, ClassifierHead> train_kgc(const BackboneParams& theta,
                                                   const Tokenizer& tok,
                                                   const std::vector<KgcSample>& data,
                                                   int kg_count, const TrainHyper& hyper,
                                                   std::vector<double>* loss_curve = nullptr);

// Fusion training on the balanced mixture: theta, experts and the classifier
// adapter all frozen; only the per-layer query/key/value matrices learn.
FusionParams train_fusion(const BackboneParams& theta,
                          const std::vector<const AdapterParams*>& experts,
                          const Tokenizer& tok, const QaDataset& mixture,
                          const TrainHyper& hyper, QueryMode query_mode,
                          const AdapterParams* phi_kgc, double attention_dropout,
                          std::vector<double>* loss_curve = nullptr);

// Full-model baseline: one dataset is single-task, several are multi-task
// (concatenated, reshuffled each epoch). Returns a new theta.
BackboneParams train_full(const BackboneParams& theta, const Tokenizer& tok,
                          const std::vector<QaDataset>& datasets, const TrainHyper& hyper,
                          std::vector<double>* loss_curve = nullptr);

// --- orchestration -------------------------------------------------------------

struct ArtifactBundle {
    std::string backbone_dir;
    std::vector<std::pair<std::string, std::string>> expert_dirs;  // kg -> dir
    std::string kgc_dir;
    std::string fusion_dir;
};

// Writes the QA / KGC / mixture JSONL files (train and valid splits) and
// returns the per-KG counts. `force` overwrites existing files.
std::vector<KgCounts> generate_data(const ExperimentConfig& config, bool force);

// Runs one named training stage: backbone | expert:<kg> | kgc | fusion |
// stl-plm:<kg> | mtl. Dependencies must exist; `resume` skips a stage whose
// manifest is already complete. Returns the checkpoint directory.
std::string run_stage(const ExperimentConfig& config, const std::string& stage, bool resume,
                      std::ostream* progress = nullptr);

// The whole framework: generate both synthetic supervision sets, train each
// expert, the KG classifier, and the fusion weights, with per-stage manifests.
ArtifactBundle run_algorithm1(const ExperimentConfig& config, bool resume,
                              std::ostream* progress = nullptr);

// Loads the composed view for a checkpoint reference ("backbone",
// "expert:<kg>", "stl-plm:<kg>", "mtl", "fusion"). The returned views borrow
// from the holder, which owns every loaded bundle.
struct LoadedModel {
    BackboneParams backbone;
    Tokenizer tokenizer = Tokenizer::from_tokens(
        {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"});
    std::vector<AdapterParams> experts;
    AdapterParams adapter;  // single-adapter refs (expert / kgc)
    bool has_adapter = false;
    FusionParams fusion;
    bool has_fusion = false;
    AdapterParams kgc_adapter;
    ClassifierHead kgc_head;
    bool has_kgc = false;
    ModelView view;  // points into the fields above
};

LoadedModel load_model(const ExperimentConfig& config, const std::string& ref);

}  // namespace kgfuse
