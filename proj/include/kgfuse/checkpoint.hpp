#pragma once

#include <map>
#include <string>
#include <vector>

#include "kgfuse/model.hpp"
#include "kgfuse/tokenizer.hpp"

namespace kgfuse {

// A checkpoint is a directory: manifest.json describing role, model config,
// seed, provenance and parameter shapes, plus one raw little-endian float32
// file per named parameter. The directory is assembled under a temporary name
// and renamed into place, so a checkpoint either exists completely or not at
// all. Loading validates every shape against the manifest.

using Provenance = std::map<std::string, std::string>;

void save_backbone(const std::string& dir, const BackboneParams& theta, const Tokenizer& tok,
                   uint64_t seed, const Provenance& provenance);
BackboneParams load_backbone(const std::string& dir, Tokenizer* tok_out = nullptr);

void save_adapter(const std::string& dir, const AdapterParams& phi, const ModelConfig& config,
                  uint64_t seed, const Provenance& provenance);
AdapterParams load_adapter(const std::string& dir, const ModelConfig& expected);

void save_kgc(const std::string& dir, const AdapterParams& phi, const ClassifierHead& head,
              const ModelConfig& config, uint64_t seed, const Provenance& provenance);
std::pair<AdapterParams, ClassifierHead> load_kgc(const std::string& dir,
                                                  const ModelConfig& expected);

void save_fusion(const std::string& dir, const FusionParams& psi, const ModelConfig& config,
                 uint64_t seed, const Provenance& provenance);
FusionParams load_fusion(const std::string& dir, const ModelConfig& expected);

bool checkpoint_exists(const std::string& dir);
// Manifest fields without loading parameters (role, provenance, seed).
struct CheckpointInfo {
    std::string role;
    uint64_t seed = 0;
    Provenance provenance;
    ModelConfig config;
};
CheckpointInfo read_checkpoint_info(const std::string& dir);

// write-temp-then-rename; parent directories are created as needed.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace kgfuse
