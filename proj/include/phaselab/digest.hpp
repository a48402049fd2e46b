#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace phaselab {

using Sha256 = std::array<std::uint8_t, 32>;

// Incremental SHA-256 (OpenSSL-backed).
class DigestBuilder {
public:
    DigestBuilder();
    ~DigestBuilder();
    DigestBuilder(const DigestBuilder&) = delete;
    DigestBuilder& operator=(const DigestBuilder&) = delete;

    DigestBuilder& add(std::span<const std::uint8_t> bytes);
    DigestBuilder& add(std::string_view text);
    DigestBuilder& add_u64(std::uint64_t v);   // little-endian
    DigestBuilder& add_f64(double v);          // IEEE bits, little-endian
    Sha256 finish();

private:
    void* ctx_;
};

Sha256 sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);
// First eight digest bytes as a little-endian integer; used to key PRNG streams.
std::uint64_t digest_prefix_u64(const Sha256& d);

}  // namespace phaselab
