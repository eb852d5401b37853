#include "kgfuse/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "kgfuse/common.hpp"
#include "kgfuse/digest.hpp"

namespace kgfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr const char* kFormat = "kgfuse-checkpoint-v1";

std::string param_file(const std::string& name) { return name + ".f32"; }

void write_bytes(const fs::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to '" + path.string() + "'");
}

std::vector<uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

// Assembles the checkpoint in <dir>.tmp and renames it into place.
void save_bundle(const std::string& dir, const std::string& role, const ModelConfig& config,
                 uint64_t seed, const Provenance& provenance, const ConstParamRefs& params,
                 const json& extra, const Tokenizer* tok) {
    const fs::path target(dir);
    const fs::path tmp(dir + ".tmp");
    std::error_code ec;
    fs::remove_all(tmp, ec);
    fs::create_directories(tmp);

    json manifest;
    manifest["format"] = kFormat;
    manifest["role"] = role;
    manifest["config"] = json::parse(config.to_json());
    manifest["seed"] = seed;
    manifest["provenance"] = provenance;
    json plist = json::array();
    for (const auto& [name, m] : params) {
        write_bytes(tmp / param_file(name), to_f32_bytes(*m));
        plist.push_back({{"name", name},
                         {"file", param_file(name)},
                         {"rows", m->rows()},
                         {"cols", m->cols()}});
    }
    manifest["params"] = plist;
    for (auto& [k, v] : extra.items()) manifest[k] = v;
    if (tok) {
        json v{{"tokens", tok->tokens()}, {"mask_token", tok->mask_token()}};
        std::ofstream out(tmp / "vocab.json");
        out << v.dump(2) << "\n";
    }
    std::ofstream out(tmp / "manifest.json");
    out << manifest.dump(2) << "\n";
    out.close();

    fs::remove_all(target, ec);
    fs::create_directories(target.parent_path(), ec);
    fs::rename(tmp, target);
}

json load_manifest(const std::string& dir, const std::string& expect_role_prefix) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    if (!fs::exists(mpath)) throw Error("missing checkpoint '" + dir + "'");
    json manifest = json::parse(read_file(mpath.string()));
    if (manifest.value("format", "") != kFormat)
        throw Error("'" + dir + "' is not a recognized checkpoint");
    const std::string role = manifest.at("role").get<std::string>();
    if (!expect_role_prefix.empty() && !starts_with(role, expect_role_prefix))
        throw Error("checkpoint '" + dir + "' has role '" + role + "', expected '" +
                    expect_role_prefix + "'");
    return manifest;
}

// Loads parameters into an already-shaped bundle, validating names and shapes.
void load_params(const std::string& dir, const json& manifest, const ParamRefs& refs) {
    std::map<std::string, json> listed;
    for (const auto& e : manifest.at("params")) listed[e.at("name").get<std::string>()] = e;
    if (listed.size() != refs.size())
        throw Error("checkpoint '" + dir + "': expected " + std::to_string(refs.size()) +
                    " parameters, manifest lists " + std::to_string(listed.size()));
    for (auto& [name, m] : refs) {
        auto it = listed.find(name);
        if (it == listed.end())
            throw Error("checkpoint '" + dir + "': missing parameter '" + name + "'");
        const int rows = it->second.at("rows").get<int>();
        const int cols = it->second.at("cols").get<int>();
        if (rows != m->rows() || cols != m->cols())
            throw Error("checkpoint '" + dir + "': shape mismatch for '" + name + "': file has " +
                        std::to_string(rows) + "x" + std::to_string(cols) + ", model needs " +
                        std::to_string(m->rows()) + "x" + std::to_string(m->cols()));
        auto bytes = read_bytes(fs::path(dir) / it->second.at("file").get<std::string>());
        *m = from_f32_bytes(bytes, rows, cols);
    }
}

ModelConfig config_from_manifest(const json& manifest) {
    return ModelConfig::from_json(manifest.at("config").dump());
}
}  // namespace

void save_backbone(const std::string& dir, const BackboneParams& theta, const Tokenizer& tok,
                   uint64_t seed, const Provenance& provenance) {
    save_bundle(dir, "backbone", theta.config, seed, provenance, theta.params(), json::object(),
                &tok);
}

BackboneParams load_backbone(const std::string& dir, Tokenizer* tok_out) {
    json manifest = load_manifest(dir, "");
    BackboneParams theta = init_backbone(config_from_manifest(manifest), 0);
    load_params(dir, manifest, theta.params());
    if (tok_out) {
        json v = json::parse(read_file((fs::path(dir) / "vocab.json").string()));
        *tok_out = Tokenizer::from_tokens(v.at("tokens").get<std::vector<std::string>>(),
                                          v.at("mask_token").get<std::string>());
    }
    return theta;
}

void save_adapter(const std::string& dir, const AdapterParams& phi, const ModelConfig& config,
                  uint64_t seed, const Provenance& provenance) {
    save_bundle(dir, phi.role, config, seed, provenance, phi.params(), json::object(), nullptr);
}

AdapterParams load_adapter(const std::string& dir, const ModelConfig& expected) {
    json manifest = load_manifest(dir, "");
    const ModelConfig cfg = config_from_manifest(manifest);
    if (cfg.to_json() != expected.to_json())
        throw Error("checkpoint '" + dir + "': model config does not match the backbone");
    AdapterParams phi = init_adapter(cfg, manifest.at("role").get<std::string>(), 0);
    load_params(dir, manifest, phi.params());
    return phi;
}

void save_kgc(const std::string& dir, const AdapterParams& phi, const ClassifierHead& head,
              const ModelConfig& config, uint64_t seed, const Provenance& provenance) {
    ConstParamRefs refs;
    for (auto& [name, m] : phi.params()) refs.emplace_back("adapter." + name, m);
    for (auto& [name, m] : head.params()) refs.emplace_back("head." + name, m);
    json extra{{"kg_count", head.w.rows()}};
    save_bundle(dir, "kgc", config, seed, provenance, refs, extra, nullptr);
}

std::pair<AdapterParams, ClassifierHead> load_kgc(const std::string& dir,
                                                  const ModelConfig& expected) {
    json manifest = load_manifest(dir, "kgc");
    const ModelConfig cfg = config_from_manifest(manifest);
    if (cfg.to_json() != expected.to_json())
        throw Error("checkpoint '" + dir + "': model config does not match the backbone");
    AdapterParams phi = init_adapter(cfg, "kgc", 0);
    ClassifierHead head = init_classifier(cfg, manifest.at("kg_count").get<int>(), 0);
    ParamRefs refs;
    for (auto& [name, m] : phi.params()) refs.emplace_back("adapter." + name, m);
    for (auto& [name, m] : head.params()) refs.emplace_back("head." + name, m);
    load_params(dir, manifest, refs);
    return {std::move(phi), std::move(head)};
}

void save_fusion(const std::string& dir, const FusionParams& psi, const ModelConfig& config,
                 uint64_t seed, const Provenance& provenance) {
    json extra{{"temperature", psi.temperature}, {"attention_dropout", psi.attention_dropout}};
    save_bundle(dir, "fusion", config, seed, provenance, psi.params(), extra, nullptr);
}

FusionParams load_fusion(const std::string& dir, const ModelConfig& expected) {
    json manifest = load_manifest(dir, "fusion");
    const ModelConfig cfg = config_from_manifest(manifest);
    if (cfg.to_json() != expected.to_json())
        throw Error("checkpoint '" + dir + "': model config does not match the backbone");
    FusionParams psi = init_fusion(cfg, 0);
    psi.temperature = manifest.value("temperature", 1.0);
    psi.attention_dropout = manifest.value("attention_dropout", 0.1);
    load_params(dir, manifest, psi.params());
    return psi;
}

bool checkpoint_exists(const std::string& dir) {
    return fs::exists(fs::path(dir) / "manifest.json");
}

CheckpointInfo read_checkpoint_info(const std::string& dir) {
    json manifest = load_manifest(dir, "");
    CheckpointInfo info;
    info.role = manifest.at("role").get<std::string>();
    info.seed = manifest.at("seed").get<uint64_t>();
    info.provenance = manifest.at("provenance").get<Provenance>();
    info.config = config_from_manifest(manifest);
    return info;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    std::error_code ec;
    if (target.has_parent_path()) fs::create_directories(target.parent_path(), ec);
    const fs::path tmp(path + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out << content;
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace kgfuse
