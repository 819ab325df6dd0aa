#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <vector>

namespace geoadapt::geometry {

/// Defaults for the numerical floors used throughout the geometry code.
inline constexpr double kDefaultEpsilon = 1e-6;
inline constexpr double kDefaultEigenFloor = 1e-8;
inline constexpr double kDefaultDirectionFloor = 1e-12;

/// Orthonormal basis of an estimated tangent space (columns of `basis`).
struct TangentFrame {
  Eigen::VectorXd anchor;
  Eigen::MatrixXd basis;  // [d_y, d_T]
  std::size_t neighbor_count = 0;
  double explained_variance_ratio = 0.0;

  std::size_t ambient_dim() const noexcept { return static_cast<std::size_t>(basis.rows()); }
  std::size_t tangent_dim() const noexcept { return static_cast<std::size_t>(basis.cols()); }
};

/// Local PCA: the top `tangent_dim` eigenvectors of the neighbours' centred
/// covariance. Neighbours are rows of `neighbors`.
TangentFrame estimate_tangent(const Eigen::MatrixXd& neighbors, const Eigen::VectorXd& anchor,
                              std::size_t tangent_dim);

/// Local PCA keeping the smallest number of directions whose explained
/// variance reaches `variance_threshold`, capped at d_y - 1.
TangentFrame estimate_tangent_by_variance(const Eigen::MatrixXd& neighbors, const Eigen::VectorXd& anchor,
                                          double variance_threshold);

struct GradientSplit {
  Eigen::VectorXd on_manifold;
  Eigen::VectorXd off_manifold;
};

/// on = B Bᵀ g, off = g - on.
GradientSplit decompose_gradient(const TangentFrame& frame, const Eigen::VectorXd& gradient);

/// Condition number of the centred covariance of `points` (rows), with the
/// smallest eigenvalue floored at `eigen_floor`.
double class_curvature(const Eigen::MatrixXd& points, double eigen_floor = kDefaultEigenFloor);

enum class ResidualMode { kCentroid, kMeanPairwise };

/// Source/target distance for one class: centroid-to-centroid by default, or
/// the mean over all cross-domain pairs.
double class_alignment_residual(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target,
                                ResidualMode mode = ResidualMode::kCentroid);

struct ClassMagnitude {
  double alpha = 0.0;
  double beta = 0.0;
};

/// alpha_c ∝ 1/(K_c + eps) and beta_c ∝ G_c, each normalised so that the
/// mean over classes equals the base magnitude. When every G_c is zero all
/// beta_c are zero.
std::vector<ClassMagnitude> magnitudes(std::span<const double> curvature, std::span<const double> residual,
                                       double base_alpha, double base_beta,
                                       double epsilon = kDefaultEpsilon);

/// semantic + magnitude * delta / |delta|, or semantic unchanged when
/// |delta| <= direction_floor.
Eigen::VectorXd perturb(const Eigen::VectorXd& semantic, const Eigen::VectorXd& delta, double magnitude,
                        double direction_floor = kDefaultDirectionFloor);

/// Indices of the k rows of `points` closest to `query` (Euclidean), nearest
/// first; ties break on the lower index.
std::vector<std::size_t> nearest_neighbors(const Eigen::MatrixXd& points, const Eigen::VectorXd& query,
                                           std::size_t k);

/// Centred sample covariance (divides by n).
Eigen::MatrixXd covariance(const Eigen::MatrixXd& points);

}  // namespace geoadapt::geometry
