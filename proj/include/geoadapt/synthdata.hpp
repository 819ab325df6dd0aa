#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoadapt/tensor.hpp"
#include "geoadapt/types.hpp"

namespace geoadapt::data {

struct DomainData {
  Tensor features;          // [n, dim]
  std::vector<int> labels;  // kNoLabel where unknown

  std::size_t size() const noexcept { return labels.size(); }
};

struct DatasetMeta {
  std::string generator;
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  /// Generator parameters in a fixed order, echoed into run manifests.
  std::map<std::string, std::string> params;
};

/// Labelled source plus target domain. Target labels are kept in storage for
/// evaluation; training code reads them only through TargetLabelView.
struct DatasetSplit {
  DomainData source;
  DomainData target;
  DatasetMeta meta;

  std::size_t dim() const noexcept { return source.features.cols(); }
};

struct TwoMoonsParams {
  std::size_t n = 512;  // per domain, even
  double rotation_deg = 40.0;
  double noise_std = 0.1;
  std::size_t nuisance_dims = 2;
  std::uint64_t seed = 0;
};

/// Two interleaved half circles centred on the origin (class 0 upper, class 1
/// lower). The target reuses the source draws with the clean moon coordinates
/// rotated about the origin before noise is added; appended nuisance
/// coordinates are standard normal and shared across domains.
DatasetSplit gen_two_moons_shift(const TwoMoonsParams& params);

struct GaussianShiftParams {
  std::size_t classes = 2;
  std::size_t dims = 2;
  std::size_t n_per_class = 256;  // per domain
  /// Distance between neighbouring class means along the first axis.
  double class_separation = 4.0;
  /// Per class: ratio between the variance along the last axis and the
  /// others. Empty means 1 for every class.
  std::vector<double> anisotropy;
  /// Per class: target mean translation along the second axis (first axis
  /// when dims == 1). Empty means 0.
  std::vector<double> mean_shift;
  /// Per class: target covariance scale. Empty means 1.
  std::vector<double> cov_scale;
  std::uint64_t seed = 0;
};

/// Per-class anisotropic Gaussians; target draws reuse the source draws with
/// shifted means and rescaled covariances.
DatasetSplit gen_gaussian_shift(const GaussianShiftParams& params);

/// CSV with header `domain,label,f0,...,f{dim-1}`. Target labels may be empty.
DatasetSplit load_csv(const std::filesystem::path& path);
void save_csv(const DatasetSplit& split, const std::filesystem::path& path);

/// Per-class row counts; index kNoLabel rows under key -1.
std::map<int, std::size_t> class_histogram(const DomainData& domain);

enum class ProtocolKind { kUda, kFsda };

struct Protocol {
  ProtocolKind kind = ProtocolKind::kUda;
  std::size_t shots = 0;  // labelled target samples per class under FSDA

  static Protocol uda() { return {ProtocolKind::kUda, 0}; }
  static Protocol fsda(std::size_t k) { return {ProtocolKind::kFsda, k}; }
  std::string name() const;
  static Protocol parse(const std::string& text);
};

/// Training-side access to target labels. Under UDA every read throws;
/// under FSDA only the k revealed samples per class are readable. The
/// revealed set is fixed at construction from the seed.
class TargetLabelView {
 public:
  TargetLabelView(const DatasetSplit& split, Protocol protocol, std::uint64_t seed);

  const Protocol& protocol() const noexcept { return protocol_; }
  /// Label of target sample i if revealed, nullopt if hidden. Throws
  /// ProtocolError under UDA.
  std::optional<int> label(std::size_t i) const;
  bool revealed(std::size_t i) const noexcept;
  const std::vector<std::size_t>& revealed_indices() const noexcept { return revealed_; }

 private:
  Protocol protocol_;
  std::vector<std::size_t> revealed_;
  std::vector<int> revealed_label_;  // kNoLabel where hidden
};

struct BatchPair {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

/// Seeded epoch-wise shuffling. Each epoch has
/// max(ceil(n_s / b), ceil(n_t / b)) steps; each domain's permutation is cut
/// into that many near-equal contiguous chunks, so every index appears
/// exactly once per epoch.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n_source, std::size_t n_target, std::size_t batch_size, std::uint64_t seed);

  std::size_t steps_per_epoch() const noexcept { return steps_; }
  std::vector<BatchPair> epoch(std::size_t index) const;

 private:
  std::size_t n_source_;
  std::size_t n_target_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t steps_;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace geoadapt::data
