#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include <random>
#include <string>
#include <vector>

#include "kgfuse/config.hpp"
#include "kgfuse/kg.hpp"
#include "kgfuse/rng.hpp"

namespace kgfuse::test {

// Unique scratch directory removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag = "kgfuse") {
        static std::atomic<unsigned> counter{0};
        const auto base = std::filesystem::temp_directory_path();
        path_ = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                        std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

  private:
    std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Byte-compares two directory trees (same relative files, same contents).
inline bool dirs_equal(const std::string& a, const std::string& b) {
    namespace fs = std::filesystem;
    std::vector<std::string> rel_a, rel_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a).string());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b).string());
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const auto& rel : rel_a)
        if (read_all((fs::path(a) / rel).string()) != read_all((fs::path(b) / rel).string()))
            return false;
    return true;
}

// Synthetic KG with a learnable head->tail rule: every head is
// "<category word> <instance word>" and the tail is a function of the
// category, so held-out (category, instance) pairs are predictable from the
// category token alone. Instance words come from a small reused pool, which
// keeps the evaluation split free of unknown tokens.
struct FixtureKgSpec {
    std::string name;
    std::string relation = "IsA";
    std::vector<std::string> categories;
    std::vector<std::string> labels;  // one per category
    std::string instance_prefix = "na";
    int instance_pool = 40;
    int triples = 300;
    uint64_t seed = 0;
};

inline std::string make_fixture_tsv(const FixtureKgSpec& spec) {
    if (spec.categories.size() != spec.labels.size() || spec.categories.empty())
        throw std::runtime_error("fixture: categories/labels mismatch");
    SeededRng rng(derive_seed(spec.seed, "fixture." + spec.name));
    std::string out;
    const size_t n_cat = spec.categories.size();
    for (int i = 0; i < spec.triples; ++i) {
        const size_t c = static_cast<size_t>(i) % n_cat;
        const int inst = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.instance_pool)));
        out += spec.categories[c] + " " + spec.instance_prefix +
               (inst < 10 ? "0" : "") + std::to_string(inst) + "\t" + spec.relation + "\t" +
               spec.labels[c] + "\n";
    }
    return out;
}

inline FixtureKgSpec fixture_kg_one(int triples = 300, uint64_t seed = 0) {
    FixtureKgSpec spec;
    spec.name = "kgalpha";
    spec.relation = "IsA";
    spec.categories = {"kite",   "drum",   "ladle",  "anvil", "sled",
                       "quilt",  "flute",  "easel",  "prism", "lathe",
                       "oriole", "walnut", "geyser", "fjord", "comet"};
    spec.labels = {"toy",     "instrument", "utensil", "tool",    "vehicle",
                   "fabric",  "woodwind",   "stand",   "glass",   "machine",
                   "bird",    "nut",        "spring",  "inlet",   "body"};
    spec.instance_prefix = "na";
    spec.triples = triples;
    spec.seed = seed;
    return spec;
}

inline FixtureKgSpec fixture_kg_two(int triples = 300, uint64_t seed = 0) {
    FixtureKgSpec spec;
    spec.name = "kgbeta";
    spec.relation = "UsedFor";
    spec.categories = {"scythe",  "piccolo", "trowel", "sextant", "crampon",
                       "mortar",  "gimlet",  "awl",    "bellows", "churn",
                       "loom",    "pestle",  "chisel", "plumb",   "tongs"};
    spec.labels = {"mowing",   "melody",  "digging",  "sailing", "climbing",
                   "grinding", "boring",  "piercing", "airflow", "butter",
                   "weaving",  "mashing", "carving",  "leveling", "gripping"};
    spec.instance_prefix = "mb";
    spec.triples = triples;
    spec.seed = seed;
    return spec;
}

// A compact experiment config over the two fixture KGs, tuned so a full
// Algorithm-1 run finishes in about a minute of CPU.
inline ExperimentConfig fixture_config(const std::string& root, const std::string& kg1_tsv,
                                       const std::string& kg2_tsv, uint64_t seed = 42) {
    ExperimentConfig c = default_config();
    c.kgs = {{"kgalpha", kg1_tsv}, {"kgbeta", kg2_tsv}};
    c.model.vocab_size = 192;
    c.model.hidden_dim = 64;
    c.model.layer_count = 2;
    c.model.head_count = 2;
    c.model.ffn_dim = 128;
    c.model.max_seq_len = 64;
    c.model.adapter_bottleneck_dim = 16;
    c.option_count = 3;
    c.valid_fraction = 0.2;
    c.mixture_per_kg = 120;
    c.seed = seed;
    c.output_root = root;
    c.query_mode = QueryMode::kgc;
    c.backbone_pretrain_steps = 200;
    c.backbone_hyper.learning_rate = 2e-3;
    c.backbone_hyper.batch_size = 16;
    c.expert_hyper.learning_rate = 8e-3;
    c.expert_hyper.epochs = 12;
    c.expert_hyper.batch_size = 8;
    c.kgc_hyper.learning_rate = 3e-3;
    c.kgc_hyper.epochs = 2;
    c.kgc_hyper.batch_size = 32;
    c.fusion_hyper.learning_rate = 2e-3;
    c.fusion_hyper.epochs = 5;
    c.fusion_hyper.batch_size = 16;
    c.full_hyper.learning_rate = 1e-3;
    c.full_hyper.epochs = 1;
    c.full_hyper.batch_size = 16;
    return c;
}

}  // namespace kgfuse::test
