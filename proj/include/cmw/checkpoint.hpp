#pragma once

#include "cmw/flownet.hpp"

#include <filesystem>
#include <utility>

namespace cmw {

inline constexpr char kCheckpointMagic[8] = {'C', 'M', 'W', 'C', 'K', 'P', 'T', '1'};

/// Writes config and parameters; values are stored as little-endian float32.
void save_checkpoint(const ModelParams<float>& params, const ModelConfig& config, const std::filesystem::path& path);

std::pair<ModelParams<float>, ModelConfig> load_checkpoint(const std::filesystem::path& path);

} // namespace cmw
