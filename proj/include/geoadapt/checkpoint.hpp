#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "geoadapt/model.hpp"
#include "geoadapt/trainer.hpp"

namespace geoadapt::checkpoint {

/// File layout (all integers little-endian):
///
///   offset 0   8 bytes   magic "GEOACKPT"
///   offset 8   uint64    header length H in bytes
///   offset 16  H bytes   UTF-8 JSON header
///   offset 16+H          payload: float64 values, little-endian, row-major
///
/// The header holds format_version, seed, config_hash, the model spec, the
/// full training config and an `arrays` list of {name, shape, offset,
/// count}; offsets are byte offsets from the start of the payload.
inline constexpr char kMagic[8] = {'G', 'E', 'O', 'A', 'C', 'K', 'P', 'T'};
inline constexpr int kFormatVersion = 1;

struct Checkpoint {
  ModelParams params;
  train::TrainConfig config;
  std::string config_hash;
};

void save(const std::filesystem::path& path, const ModelParams& params, const train::TrainConfig& config);

/// Throws IoError for unreadable, truncated or inconsistent files.
Checkpoint load(const std::filesystem::path& path);

}  // namespace geoadapt::checkpoint
