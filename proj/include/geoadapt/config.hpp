#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoadapt/trainer.hpp"

namespace geoadapt::config {

/// Names accepted by `--ablate` and the `ablate` config object.
inline constexpr const char* kAblationNames[] = {"disentangle", "adaptive", "contrastive", "off_manifold",
                                                 "on_manifold"};

/// Strict parse: unknown keys, wrong types and missing required keys
/// ("seed", "epochs", "protocol") are all collected, then semantic checks
/// from TrainConfig::problems() are appended. Throws ValidationError listing
/// every problem at once.
train::TrainConfig from_json(const nlohmann::json& doc);

/// Reads and parses a config file. Unreadable file -> IoError; malformed
/// JSON or schema problems -> ValidationError.
train::TrainConfig load(const std::filesystem::path& path);

/// Every field, including defaults. Parsing the result yields an equal config.
nlohmann::json to_json(const train::TrainConfig& config);

/// FNV-1a 64 over the compact dump of to_json(config), as 16 hex digits.
std::string config_hash(const train::TrainConfig& config);

/// FNV-1a 64 over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Switches one mechanism off by its `--ablate` name. Throws
/// ValidationError for an unknown name.
void apply_ablation(train::TrainConfig& config, const std::string& name);

}  // namespace geoadapt::config
