#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace kgfuse {

// Deterministic random stream. All draws are implemented on top of the raw
// mt19937_64 output so results do not depend on libstdc++'s distribution
// internals; the same seed gives the same stream on every platform.
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, n) via rejection sampling (unbiased). n must be > 0.
    uint64_t uniform_int(uint64_t n);

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform_real();

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates, fixed order of draws.
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Draws k distinct indices from [0, n) without replacement, in draw order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k);

  private:
    std::mt19937_64 eng_;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

// FNV-1a over the label, mixed with the master seed. Substreams derived from
// different labels are independent for practical purposes, so parallel
// generators (one per KG, per stage, ...) never share a stream.
uint64_t derive_seed(uint64_t master_seed, const std::string& label);

}  // namespace kgfuse
