#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kgfuse {

// Hex-encoded SHA-256 (via OpenSSL). Used for dataset and parameter digests
// recorded in manifests.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_hex(const std::vector<uint8_t>& bytes);

// Incremental variant, for digesting many buffers in a fixed order.
class Sha256 {
  public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;
    void update(const void* data, size_t len);
    void update(const std::string& s);
    std::string hex();  // finalizes; the object must not be reused afterwards

  private:
    void* ctx_;
};

}  // namespace kgfuse
