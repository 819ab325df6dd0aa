#include "geoadapt/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "geoadapt/errors.hpp"

namespace geoadapt::geometry {
namespace {

struct Spectrum {
  Eigen::VectorXd values;   // descending, clamped at zero
  Eigen::MatrixXd vectors;  // matching columns
};

Spectrum descending_spectrum(const Eigen::MatrixXd& cov) {
  if (!cov.allFinite()) throw NumericError("covariance overflowed (embedding magnitudes out of range)");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  Spectrum s;
  s.values = solver.eigenvalues().reverse().cwiseMax(0.0);
  s.vectors = solver.eigenvectors().rowwise().reverse();
  return s;
}

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite input");
}

TangentFrame frame_from(const Eigen::MatrixXd& neighbors, const Eigen::VectorXd& anchor,
                        const Spectrum& spectrum, std::size_t tangent_dim) {
  const double total = spectrum.values.sum();
  TangentFrame frame;
  frame.anchor = anchor;
  frame.basis = spectrum.vectors.leftCols(static_cast<Eigen::Index>(tangent_dim));
  frame.neighbor_count = static_cast<std::size_t>(neighbors.rows());
  frame.explained_variance_ratio =
      std::clamp(spectrum.values.head(static_cast<Eigen::Index>(tangent_dim)).sum() / total, 0.0, 1.0);
  return frame;
}

Spectrum neighborhood_spectrum(const Eigen::MatrixXd& neighbors, const Eigen::VectorXd& anchor) {
  require_finite(neighbors, "estimate_tangent");
  if (!anchor.allFinite()) throw NumericError("estimate_tangent: non-finite anchor");
  if (anchor.size() != neighbors.cols()) {
    throw ShapeError("estimate_tangent: anchor length " + std::to_string(anchor.size()) +
                     " != neighbour width " + std::to_string(neighbors.cols()));
  }
  Spectrum spectrum = descending_spectrum(covariance(neighbors));
  if (!(spectrum.values.sum() > 0.0)) {
    throw DegenerateFrameError("estimate_tangent: neighbourhood has zero covariance");
  }
  return spectrum;
}

}  // namespace

Eigen::MatrixXd covariance(const Eigen::MatrixXd& points) {
  if (points.rows() == 0) throw ValidationError("covariance of an empty point set");
  const Eigen::RowVectorXd mean = points.colwise().mean();
  const Eigen::MatrixXd centered = points.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(points.rows());
}

TangentFrame estimate_tangent(const Eigen::MatrixXd& neighbors, const Eigen::VectorXd& anchor,
                              std::size_t tangent_dim) {
  const auto d = static_cast<std::size_t>(neighbors.cols());
  if (tangent_dim < 1 || tangent_dim >= d) {
    throw ValidationError("estimate_tangent: tangent dimension " + std::to_string(tangent_dim) +
                          " must lie in [1, " + std::to_string(d) + ")");
  }
  if (static_cast<std::size_t>(neighbors.rows()) < tangent_dim + 1) {
    throw ValidationError("estimate_tangent: need at least " + std::to_string(tangent_dim + 1) +
                          " neighbours, got " + std::to_string(neighbors.rows()));
  }
  return frame_from(neighbors, anchor, neighborhood_spectrum(neighbors, anchor), tangent_dim);
}

TangentFrame estimate_tangent_by_variance(const Eigen::MatrixXd& neighbors, const Eigen::VectorXd& anchor,
                                          double variance_threshold) {
  if (!(variance_threshold > 0.0 && variance_threshold <= 1.0)) {
    throw ValidationError("estimate_tangent: variance threshold must lie in (0, 1]");
  }
  const auto d = static_cast<std::size_t>(neighbors.cols());
  if (d < 2) throw ValidationError("estimate_tangent: ambient dimension must be at least 2");
  if (neighbors.rows() < 2) throw ValidationError("estimate_tangent: need at least 2 neighbours");
  const Spectrum spectrum = neighborhood_spectrum(neighbors, anchor);
  const double total = spectrum.values.sum();
  const std::size_t cap = std::min(d - 1, static_cast<std::size_t>(neighbors.rows()) - 1);
  std::size_t keep = 1;
  double acc = spectrum.values(0);
  while (keep < cap && acc / total < variance_threshold) {
    acc += spectrum.values(static_cast<Eigen::Index>(keep));
    ++keep;
  }
  return frame_from(neighbors, anchor, spectrum, keep);
}

GradientSplit decompose_gradient(const TangentFrame& frame, const Eigen::VectorXd& gradient) {
  if (static_cast<std::size_t>(gradient.size()) != frame.ambient_dim()) {
    throw ShapeError("decompose_gradient: gradient length " + std::to_string(gradient.size()) +
                     " != frame dimension " + std::to_string(frame.ambient_dim()));
  }
  GradientSplit split;
  split.on_manifold = frame.basis * (frame.basis.transpose() * gradient);
  split.off_manifold = gradient - split.on_manifold;
  return split;
}

double class_curvature(const Eigen::MatrixXd& points, double eigen_floor) {
  if (points.rows() < 2) {
    throw ValidationError("class_curvature: need at least 2 points, got " + std::to_string(points.rows()));
  }
  if (!(eigen_floor > 0.0)) throw ValidationError("class_curvature: eigen_floor must be positive");
  require_finite(points, "class_curvature");
  const Spectrum s = descending_spectrum(covariance(points));
  const double largest = std::max(s.values(0), eigen_floor);
  const double smallest = std::max(s.values(s.values.size() - 1), eigen_floor);
  return largest / smallest;
}

double class_alignment_residual(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target,
                                ResidualMode mode) {
  if (source.rows() == 0 || target.rows() == 0) {
    throw ValidationError("class_alignment_residual: both domains need at least one sample");
  }
  if (source.cols() != target.cols()) throw ShapeError("class_alignment_residual: width mismatch");
  if (mode == ResidualMode::kCentroid) {
    const Eigen::RowVectorXd gap = source.colwise().mean() - target.colwise().mean();
    return gap.norm();
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < source.rows(); ++i) {
    for (Eigen::Index j = 0; j < target.rows(); ++j) total += (source.row(i) - target.row(j)).norm();
  }
  return total / static_cast<double>(source.rows() * target.rows());
}

std::vector<ClassMagnitude> magnitudes(std::span<const double> curvature, std::span<const double> residual,
                                       double base_alpha, double base_beta, double epsilon) {
  if (curvature.size() != residual.size()) throw ShapeError("magnitudes: per-class lists differ in length");
  if (curvature.empty()) throw ValidationError("magnitudes: no classes");
  if (base_alpha < 0.0 || base_beta < 0.0) throw ValidationError("magnitudes: negative base magnitude");
  if (!(epsilon > 0.0)) throw ValidationError("magnitudes: epsilon must be positive");
  for (std::size_t c = 0; c < curvature.size(); ++c) {
    if (!(curvature[c] >= 0.0) || !(residual[c] >= 0.0)) {
      throw ValidationError("magnitudes: negative or non-finite statistic for class " + std::to_string(c));
    }
  }

  const auto n = static_cast<double>(curvature.size());
  std::vector<double> inverse(curvature.size());
  for (std::size_t c = 0; c < curvature.size(); ++c) inverse[c] = 1.0 / (curvature[c] + epsilon);
  const double inverse_mean = std::accumulate(inverse.begin(), inverse.end(), 0.0) / n;
  const double residual_mean = std::accumulate(residual.begin(), residual.end(), 0.0) / n;

  std::vector<ClassMagnitude> out(curvature.size());
  for (std::size_t c = 0; c < curvature.size(); ++c) {
    out[c].alpha = base_alpha * (inverse[c] / inverse_mean);
    out[c].beta = residual_mean > 0.0 ? base_beta * (residual[c] / residual_mean) : 0.0;
  }
  return out;
}

Eigen::VectorXd perturb(const Eigen::VectorXd& semantic, const Eigen::VectorXd& delta, double magnitude,
                        double direction_floor) {
  if (magnitude < 0.0) throw ValidationError("perturb: magnitude must be non-negative");
  if (semantic.size() != delta.size()) throw ShapeError("perturb: direction length mismatch");
  const double norm = delta.norm();
  if (!(norm > direction_floor)) return semantic;
  return semantic + (magnitude / norm) * delta;
}

std::vector<std::size_t> nearest_neighbors(const Eigen::MatrixXd& points, const Eigen::VectorXd& query,
                                           std::size_t k) {
  if (points.cols() != query.size()) throw ShapeError("nearest_neighbors: width mismatch");
  const auto n = static_cast<std::size_t>(points.rows());
  k = std::min(k, n);
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i] = {(points.row(static_cast<Eigen::Index>(i)).transpose() - query).squaredNorm(), i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

}  // namespace geoadapt::geometry
