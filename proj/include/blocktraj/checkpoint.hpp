#pragma once

// Checkpoint file: one-line JSON header listing {name, shape, dtype,
// byte_offset} per array plus caller-supplied metadata (config, hashes,
// vocab size), followed by raw little-endian float64 payloads. Offsets
// are relative to the first byte after the header newline.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "blocktraj/optim.hpp"

namespace blocktraj {

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& meta);

// Loads arrays into a fresh ParamStore and returns the header metadata.
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& params);

}  // namespace blocktraj
