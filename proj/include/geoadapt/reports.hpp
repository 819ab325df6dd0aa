#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoadapt/diagnostics.hpp"
#include "geoadapt/synthdata.hpp"
#include "geoadapt/trainer.hpp"

namespace geoadapt::reports {

/// `epoch,cls,rec,orth,on,off,con,total`, one row per epoch.
std::string loss_series_csv(std::span<const train::EpochRecord> epochs);

/// `epoch,class,K_c,G_c,alpha_c,beta_c,n_source,n_target,K_fallback,G_fallback`.
std::string geometry_csv(std::span<const train::GeometryRow> rows);

/// Per-class probe table: the geometry columns (without epoch) followed by
/// `C_c,gamma_c`. Empty cells where a value is undefined.
std::string probe_csv(std::span<const train::ClassGeometry> geometry, const diagnostics::MetricsReport& metrics);

nlohmann::json metrics_json(const diagnostics::MetricsReport& metrics);

nlohmann::json dataset_meta_json(const data::DatasetMeta& meta);
/// Inverse of dataset_meta_json; throws ValidationError on a bad document.
data::DatasetMeta dataset_meta_from(const nlohmann::json& doc);

struct ManifestInputs {
  std::string command;
  std::string data_path;
  std::string data_hash;  // FNV-1a 64 of the dataset file bytes
  const data::DatasetSplit* split = nullptr;
  const train::TrainConfig* config = nullptr;
  std::vector<std::string> artifacts;
};

/// Config echo, dataset metadata and counts, config hash, seed and artifact
/// names. Contains nothing time- or host-dependent.
nlohmann::json manifest_json(const ManifestInputs& in);

/// Pretty JSON with a trailing newline.
std::string dump(const nlohmann::json& doc);

/// Whole-file helpers raising IoError.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace geoadapt::reports
