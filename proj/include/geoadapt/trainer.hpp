#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geoadapt/diagnostics.hpp"
#include "geoadapt/geometry.hpp"
#include "geoadapt/losses.hpp"
#include "geoadapt/model.hpp"
#include "geoadapt/synthdata.hpp"

namespace geoadapt::train {

/// Mechanisms that can be switched off for ablation runs. Switching one off
/// replaces it with its neutral element.
struct AblationFlags {
  bool disentangle = true;   // off: monolithic latent (z_y = z), λ_orth = 0
  bool adaptive = true;      // off: α_c = base_alpha, β_c = base_beta for every class
  bool contrastive = true;   // off: λ_con = 0
  bool off_manifold = true;  // off: L_off dropped
  bool on_manifold = true;   // off: L_on dropped

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct GeometryConfig {
  std::size_t neighbors = 16;
  std::size_t tangent_dim = 2;
  /// When > 0, the tangent dimension is chosen per frame as the smallest
  /// one reaching this explained-variance ratio.
  double variance_threshold = 0.0;
  double epsilon = geometry::kDefaultEpsilon;
  double eigen_floor = geometry::kDefaultEigenFloor;
  double direction_floor = geometry::kDefaultDirectionFloor;
  geometry::ResidualMode residual = geometry::ResidualMode::kCentroid;
};

struct TrainConfig {
  losses::LossWeights weights;
  double temperature = 0.07;
  double base_alpha = 0.5;
  double base_beta = 0.5;
  double learning_rate = 0.05;
  std::size_t epochs = 60;
  std::size_t batch_size = 48;
  std::uint64_t seed = 0;
  data::Protocol protocol;
  double pseudo_label_threshold = 0.8;
  std::size_t warmup_epochs = 3;
  AblationFlags ablate;
  GeometryConfig geometry;
  losses::Divergence on_form = losses::Divergence::kKl;
  losses::Divergence off_form = losses::Divergence::kSquaredL2;

  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> decoder_hidden{64, 64};
  std::size_t latent_dim = 16;
  std::size_t semantic_dim = 8;

  diagnostics::EvalSettings eval;

  /// All problems at once, empty when valid.
  std::vector<std::string> problems() const;
  /// Throws ValidationError listing every problem.
  void validate() const;

  /// Model layout for a dataset; a monolithic latent when disentangle is off.
  ModelSpec model_spec(std::size_t input_dim, std::size_t num_classes) const;
  /// Loss weights in force for an epoch, after ablations and warm-up.
  losses::LossWeights effective_weights(std::size_t epoch) const;
  bool in_warmup(std::size_t epoch) const noexcept { return epoch < warmup_epochs; }
};

struct PseudoLabels {
  std::vector<int> label;          // kNoLabel where unassigned
  std::vector<double> confidence;  // max softmax probability, every sample
  std::size_t assigned = 0;

  double coverage() const noexcept {
    return label.empty() ? 0.0 : static_cast<double>(assigned) / static_cast<double>(label.size());
  }
};

/// Argmax of the classifier softmax where the max probability reaches
/// `threshold`.
PseudoLabels assign_pseudo_labels(const ModelParams& params, const Tensor& target_features, double threshold);

struct ClassGeometry {
  int label = 0;
  double curvature = 1.0;  // K_c
  double residual = 0.0;   // G_c
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  bool curvature_fallback = false;
  bool residual_fallback = false;
};

/// Embeddings and labels used to compute class geometry for one epoch.
struct EmbeddingSnapshot {
  Eigen::MatrixXd source;          // z_y rows
  Eigen::MatrixXd target;          // z_y rows
  std::vector<int> source_labels;
  std::vector<int> target_labels;  // training-visible labels (pseudo or revealed)
  /// Source rows the classifier confidently assigns to their own label.
  std::vector<bool> source_confident;
};

EmbeddingSnapshot take_snapshot(const ModelParams& params, const data::DatasetSplit& split,
                                std::span<const int> target_labels, double threshold);

/// Per-class K_c, G_c, α_c, β_c for every class present in the snapshot.
///
/// K_c pools source and labelled-target z_y of the class. G_c compares the
/// centroid of confidently-classified source samples with the centroid of
/// labelled target samples. Classes with fewer than d_T + 2 pooled samples
/// fall back to all-class curvature; classes missing either side of G_c
/// fall back to the all-sample centroid distance.
std::vector<ClassGeometry> refresh_geometry(const EmbeddingSnapshot& snapshot, std::size_t num_classes,
                                            const TrainConfig& config);

/// Convenience overload that takes the snapshot itself.
std::vector<ClassGeometry> refresh_geometry(const ModelParams& params, const data::DatasetSplit& split,
                                            std::span<const int> target_labels, const TrainConfig& config);

struct EpochState {
  std::size_t epoch = 0;
  std::vector<ClassGeometry> geometry;
  PseudoLabels pseudo;
  /// Training-visible target labels: FSDA shots, else confident pseudo-labels.
  std::vector<int> target_labels;
  /// Tangent neighbourhood pool: z_y of source plus labelled target, by class.
  std::vector<Eigen::MatrixXd> class_points;
  Eigen::MatrixXd all_points;

  /// Magnitudes for class c (zero when the class has no geometry entry).
  geometry::ClassMagnitude magnitude(int label) const;
};

EpochState refresh_epoch(const ModelParams& params, const data::DatasetSplit& split,
                         const data::TargetLabelView& view, const TrainConfig& config, std::size_t epoch);

struct Batch {
  Tensor features;
  /// Source: true labels. Target: training-visible labels or kNoLabel.
  std::vector<int> labels;
  /// Target rows whose label is a revealed FSDA shot (used by L_cls).
  std::vector<bool> revealed;
};

struct StepResult {
  ModelParams params;
  losses::LossBreakdown breakdown;
  std::size_t perturbed = 0;
  std::size_t contrastive_anchors = 0;
};

/// One SGD step on the total objective.
StepResult train_step(const ModelParams& params, const Batch& source, const Batch& target, const EpochState& state,
                      const TrainConfig& config);

struct GeometryRow {
  std::size_t epoch = 0;
  ClassGeometry geometry;
};

struct EpochRecord {
  std::size_t epoch = 0;
  losses::LossBreakdown mean_loss;
  double pseudo_coverage = 0.0;
};

struct RunResult {
  ModelParams params;
  std::vector<EpochRecord> epochs;
  std::vector<GeometryRow> geometry_report;
  /// Geometry refreshed on the final parameters.
  std::vector<ClassGeometry> final_geometry;
  std::vector<int> final_target_labels;
  /// Mean per-sample |z_y · z_n| over both domains; entry 0 is at
  /// initialisation, entry e after epoch e.
  std::vector<double> orthogonality_trace;
  diagnostics::MetricsReport metrics;
};

/// Called after every epoch with the record and the parameters at that point.
using EpochObserver = std::function<void(const EpochRecord&, const ModelParams&)>;

RunResult run(const TrainConfig& config, const data::DatasetSplit& split, const EpochObserver& observer = {});

/// Mean |z_y · z_n| over the rows of `features` (0 with no nuisance part).
double mean_abs_orthogonality(const ModelParams& params, const Tensor& features);

/// Metrics for a parameter set, with geometry refreshed on those parameters.
diagnostics::MetricsReport evaluate_params(const ModelParams& params, const data::DatasetSplit& split,
                                           const TrainConfig& config, std::vector<ClassGeometry>* geometry_out = nullptr,
                                           std::vector<int>* target_labels_out = nullptr);

}  // namespace geoadapt::train
