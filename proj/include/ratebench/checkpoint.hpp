#pragma once

#include "ratebench/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace ratebench {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Self-describing archive: a JSON metadata document plus named float arrays.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, nn::Tensor> tensors;
};

/// Writes atomically (temporary file + rename).
void write_checkpoint(const std::filesystem::path & path, const Checkpoint & ckpt);

/// Throws UnsupportedVersion for other format versions and std::invalid_argument
/// for missing, truncated or corrupted files.
Checkpoint read_checkpoint(const std::filesystem::path & path);

}  // namespace ratebench
