#include "kgfuse/rng.hpp"

#include <cmath>

#include "kgfuse/common.hpp"

namespace kgfuse {

uint64_t SeededRng::uniform_int(uint64_t n) {
    if (n == 0) throw Error("uniform_int: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return x % n;
}

double SeededRng::uniform_real() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1, u2;
    do {
        u1 = uniform_real();
    } while (u1 <= 0.0);
    u2 = uniform_real();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
}

std::vector<size_t> SeededRng::sample_without_replacement(size_t n, size_t k) {
    if (k > n) throw Error("sample_without_replacement: k > n");
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    // Partial Fisher-Yates: only the first k positions are finalized.
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + static_cast<size_t>(uniform_int(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

uint64_t derive_seed(uint64_t master_seed, const std::string& label) {
    uint64_t h = 1469598103934665603ull;  // FNV offset basis
    for (unsigned char c : label) {
        h ^= c;
        h *= 1099511628211ull;  // FNV prime
    }
    // splitmix64 finalizer over the combination.
    uint64_t z = master_seed ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace kgfuse
