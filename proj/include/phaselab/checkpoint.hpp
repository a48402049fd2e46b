#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phaselab/digest.hpp"
#include "phaselab/model.hpp"

namespace phaselab {

// Binary container (.ckpt):
//   "PHLB01" | u32 format_version | u32 header_len | header (canonical JSON)
//   | u64 payload_len | payload (float32, little-endian, concatenated) | SHA-256(header ++ payload)
inline constexpr char kCheckpointMagic[] = "PHLB01";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { kBadMagic, kTruncated, kHashMismatch, kUnknownVersion, kMalformed, kIo };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct LoadedCheckpoint {
    ParameterSet params;
    std::optional<AdapterSet> adapters;
    std::string content_hash;
};

std::vector<std::uint8_t> save_checkpoint(const ParameterSet& params, const AdapterSet* adapters = nullptr);
LoadedCheckpoint load_checkpoint(const std::vector<std::uint8_t>& bytes);

// Digest over header + payload; identical to the hash stored in the container.
Sha256 checkpoint_digest(const ParameterSet& params, const AdapterSet* adapters);

void write_checkpoint_file(const std::filesystem::path& path, const ParameterSet& params,
                           const AdapterSet* adapters = nullptr);
LoadedCheckpoint read_checkpoint_file(const std::filesystem::path& path);

}  // namespace phaselab
