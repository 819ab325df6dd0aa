#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "geoadapt/model.hpp"
#include "geoadapt/synthdata.hpp"
#include "geoadapt/tensor.hpp"

namespace geoadapt::diagnostics {

/// Fraction of rows whose argmax prediction matches the label.
double accuracy(const ModelParams& params, const Tensor& features, std::span<const int> labels);

/// Accuracy under an L∞ PGD attack on the inputs.
///
/// Each of `steps` iterations moves along the sign of the cross-entropy
/// gradient and clips back into the budget ball around the clean input. The
/// step size is `budget` for a single step (FGSM) and budget/4 otherwise. A
/// sample counts as robust only if every iterate, including the clean input,
/// is classified correctly.
double robust_accuracy(const ModelParams& params, const Tensor& features, std::span<const int> labels,
                       double budget, std::size_t steps);

struct NuisanceSensitivity {
  /// Mean |∂ℓ_cls/∂z_n|. Zero for every model here since h reads z_y only.
  double cls_only = 0.0;
  /// Mean |∂(ℓ_cls + λ_rec ℓ_rec)/∂z_n|, per-sample losses.
  double cls_rec = 0.0;
};

NuisanceSensitivity nuisance_sensitivity(const ModelParams& params, const Tensor& features,
                                         std::span<const int> labels, double lambda_rec);

struct ConsistencyReport {
  /// C_c per class id; nullopt where either domain had no samples.
  std::vector<std::optional<double>> per_class;
  /// Mean of the reported C_c values.
  double div_sem_bound = 0.0;
  std::size_t classes_reported = 0;
};

/// C_c = mean over all cross-domain same-class pairs of 1 - cos.
ConsistencyReport contrastive_consistency(std::span<const Eigen::MatrixXd> source_by_class,
                                          std::span<const Eigen::MatrixXd> target_by_class);

/// Probe estimate of the local robustness margin: for each row of
/// `class_semantic`, the smallest softmax change |f(z) - f(z + β u)| over
/// the loss-gradient direction and `probes` random unit directions u, then
/// averaged over rows. Probe directions are drawn per row from `seed`, so a
/// larger `probes` value evaluates a superset of directions.
double robustness_margin(const ModelParams& params, const Eigen::MatrixXd& class_semantic, double beta,
                         std::size_t probes, std::uint64_t seed);

/// Writes `domain,label_or_pseudo,z0..z{d_y-1},pca_x,pca_y`. Target rows
/// carry `target_labels` (pseudo-labels, kNoLabel when unassigned).
void export_embeddings(const ModelParams& params, const data::DatasetSplit& split,
                       std::span<const int> target_labels, const std::filesystem::path& path);

/// Rows of `points` projected on the top two principal axes (centred).
Eigen::MatrixXd pca_project(const Eigen::MatrixXd& points, std::size_t components = 2);

Eigen::MatrixXd to_matrix(const Tensor& t);

struct EvalSettings {
  double pgd_budget = 0.1;
  std::size_t pgd_steps = 10;
  std::size_t margin_probes = 64;
  double lambda_rec = 1.0;
  std::uint64_t seed = 0;
};

struct ClassDiagnostics {
  int label = 0;
  std::optional<double> consistency;       // C_c
  std::optional<double> robustness_margin;  // γ_c estimate
  double beta = 0.0;
};

struct MetricsReport {
  double source_accuracy = 0.0;
  /// Absent when the target labels are not stored.
  std::optional<double> target_accuracy;
  std::optional<double> target_robust_accuracy;
  double pgd_budget = 0.0;
  std::size_t pgd_steps = 0;
  NuisanceSensitivity nuisance;
  std::vector<ClassDiagnostics> classes;
  double div_sem_bound = 0.0;
};

/// Full evaluation of a parameter set. `betas` holds β_c per class id (used
/// as the γ_c probe radius). Class diagnostics use true labels where stored,
/// else the supplied target labels.
MetricsReport evaluate(const ModelParams& params, const data::DatasetSplit& split, std::span<const double> betas,
                       std::span<const int> fallback_target_labels, const EvalSettings& settings);

}  // namespace geoadapt::diagnostics
