#include "geoadapt/diagnostics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "geoadapt/errors.hpp"
#include "geoadapt/losses.hpp"

namespace geoadapt::diagnostics {
namespace {

std::vector<int> argmax_rows(const Tensor& scores) {
  std::vector<int> out(scores.rows());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    auto row = scores.row_span(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

void require_labels(const Tensor& features, std::span<const int> labels, const char* what) {
  if (features.rows() == 0) throw ValidationError(std::string(what) + ": empty evaluation set");
  if (labels.size() != features.rows()) throw ShapeError(std::string(what) + ": label count mismatch");
  for (int l : labels) {
    if (l < 0) throw ProtocolError(std::string(what) + ": evaluation needs labels for every sample");
  }
}

/// Gradient of the summed cross-entropy with respect to the inputs.
Tensor input_gradient(const ModelParams& params, const Tensor& x, std::span<const int> labels) {
  diff::Tape tape;
  const BoundModel model = bind(tape, params);
  const diff::Var input = tape.input("x", x);
  const LatentVars z = split_latent(params.spec, encode(model, input));
  const diff::Var loss = static_cast<double>(x.rows()) * losses::cls_loss(classify(model, z.semantic), labels);
  return tape.gradient(loss, {"x"}).at("x");
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

std::mt19937_64 probe_rng(std::uint64_t seed, std::size_t row) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x9e37u,
                    static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(row >> 32)};
  return std::mt19937_64(seq);
}

std::vector<Eigen::MatrixXd> group_rows(const Eigen::MatrixXd& points, std::span<const int> labels,
                                        std::size_t classes) {
  std::vector<std::vector<Eigen::Index>> idx(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < classes) {
      idx[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
    }
  }
  std::vector<Eigen::MatrixXd> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    out[c] = Eigen::MatrixXd(static_cast<Eigen::Index>(idx[c].size()), points.cols());
    for (std::size_t k = 0; k < idx[c].size(); ++k) out[c].row(static_cast<Eigen::Index>(k)) = points.row(idx[c][k]);
  }
  return out;
}

}  // namespace

Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.at(r, c);
  }
  return m;
}

double accuracy(const ModelParams& params, const Tensor& features, std::span<const int> labels) {
  require_labels(features, labels, "accuracy");
  const auto predicted = argmax_rows(predict_proba(params, features));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double robust_accuracy(const ModelParams& params, const Tensor& features, std::span<const int> labels,
                       double budget, std::size_t steps) {
  require_labels(features, labels, "robust_accuracy");
  if (!(budget >= 0.0)) throw ValidationError("robust_accuracy: budget must be >= 0");
  if (steps < 1) throw ValidationError("robust_accuracy: steps must be >= 1");
  const double step_size = steps == 1 ? budget : budget / 4.0;

  std::vector<bool> robust(labels.size());
  {
    const auto predicted = argmax_rows(predict_proba(params, features));
    for (std::size_t i = 0; i < labels.size(); ++i) robust[i] = predicted[i] == labels[i];
  }
  Tensor adv = features;
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor grad = input_gradient(params, adv, labels);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double dir = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
      adv[i] = std::clamp(adv[i] + step_size * dir, features[i] - budget, features[i] + budget);
    }
    const auto predicted = argmax_rows(predict_proba(params, adv));
    for (std::size_t i = 0; i < labels.size(); ++i) robust[i] = robust[i] && predicted[i] == labels[i];
  }
  const auto kept = static_cast<std::size_t>(std::count(robust.begin(), robust.end(), true));
  return static_cast<double>(kept) / static_cast<double>(labels.size());
}

NuisanceSensitivity nuisance_sensitivity(const ModelParams& params, const Tensor& features,
                                         std::span<const int> labels, double lambda_rec) {
  require_labels(features, labels, "nuisance_sensitivity");
  NuisanceSensitivity out;
  const std::size_t d_y = params.spec.semantic_dim;
  const std::size_t d = params.spec.latent_dim;
  if (d == d_y) return out;

  const Tensor z_values = encode(params, features).full();
  const double n = static_cast<double>(features.rows());
  diff::Tape tape;
  const BoundModel model = bind(tape, params);
  const diff::Var z = tape.input("z", z_values);
  const LatentVars parts = split_latent(params.spec, z);
  const diff::Var cls = n * losses::cls_loss(classify(model, parts.semantic), labels);
  const diff::Var x = tape.constant(features);
  // Per-sample reconstruction error is the row mean of squared residuals.
  const diff::Var rec = (1.0 / static_cast<double>(features.cols())) * diff::sum(diff::square(x - decode(model, z)));
  const diff::Var both = cls + lambda_rec * rec;

  auto mean_nuisance_norm = [&](diff::Var loss) {
    const Tensor g = tape.gradient(loss, {"z"}).at("z");
    double total = 0.0;
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double sq = 0.0;
      for (std::size_t c = d_y; c < d; ++c) sq += g.at(r, c) * g.at(r, c);
      total += std::sqrt(sq);
    }
    return total / n;
  };
  out.cls_only = mean_nuisance_norm(cls);
  out.cls_rec = mean_nuisance_norm(both);
  return out;
}

ConsistencyReport contrastive_consistency(std::span<const Eigen::MatrixXd> source_by_class,
                                          std::span<const Eigen::MatrixXd> target_by_class) {
  if (source_by_class.size() != target_by_class.size()) {
    throw ShapeError("contrastive_consistency: class counts differ between domains");
  }
  ConsistencyReport report;
  report.per_class.resize(source_by_class.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < source_by_class.size(); ++c) {
    const Eigen::MatrixXd& s = source_by_class[c];
    const Eigen::MatrixXd& t = target_by_class[c];
    if (s.rows() == 0 || t.rows() == 0) continue;
    if (s.cols() != t.cols()) throw ShapeError("contrastive_consistency: embedding width mismatch");
    const Eigen::VectorXd sn = s.rowwise().norm();
    const Eigen::VectorXd tn = t.rowwise().norm();
    if (!(sn.minCoeff() > 0.0) || !(tn.minCoeff() > 0.0)) {
      throw NumericError("contrastive_consistency: zero-norm embedding in class " + std::to_string(c));
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.rows(); ++j) {
        const double cosine = std::clamp(s.row(i).dot(t.row(j)) / (sn(i) * tn(j)), -1.0, 1.0);
        acc += 1.0 - cosine;
      }
    }
    const double value = acc / static_cast<double>(s.rows() * t.rows());
    report.per_class[c] = value;
    sum += value;
    ++report.classes_reported;
  }
  report.div_sem_bound = report.classes_reported > 0 ? sum / static_cast<double>(report.classes_reported) : 0.0;
  return report;
}

double robustness_margin(const ModelParams& params, const Eigen::MatrixXd& class_semantic, double beta,
                         std::size_t probes, std::uint64_t seed) {
  if (probes < 1) throw ValidationError("robustness_margin: probes must be >= 1");
  if (!(beta >= 0.0)) throw ValidationError("robustness_margin: beta must be >= 0");
  const auto n = static_cast<std::size_t>(class_semantic.rows());
  const auto d = static_cast<std::size_t>(class_semantic.cols());
  if (d != params.spec.semantic_dim) throw ShapeError("robustness_margin: embedding width mismatch");
  if (n == 0) throw ValidationError("robustness_margin: no samples");

  Tensor z = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) z.at(i, k) = class_semantic(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  }
  // Clean probabilities and the adversarial (loss-ascent) direction.
  Tensor clean;
  Tensor gradient;
  {
    diff::Tape tape;
    const BoundModel model = bind(tape, params);
    const diff::Var zin = tape.input("z", z);
    const diff::Var logits = classify(model, zin);
    clean = diff::softmax_rows(logits).value();
    const auto predicted = argmax_rows(logits.value());
    const diff::Var loss = static_cast<double>(n) * losses::cls_loss(logits, predicted);
    gradient = tape.gradient(loss, {"z"}).at("z");
  }

  // Candidate displaced points: blocks of (1 + probes) rows per sample, the
  // gradient direction first. A zero gradient leaves only the random probes.
  const std::size_t per = probes + 1;
  Tensor moved = Tensor::zeros({n * per, d});
  std::vector<bool> usable(n * per, true);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng = probe_rng(seed, i);
    for (std::size_t p = 0; p < per; ++p) {
      std::vector<double> dir(d);
      if (p == 0) {
        for (std::size_t k = 0; k < d; ++k) dir[k] = gradient.at(i, k);
      } else {
        for (double& v : dir) v = unit(rng);
      }
      double norm = 0.0;
      for (double v : dir) norm += v * v;
      norm = std::sqrt(norm);
      if (!(norm > 0.0)) usable[i * per + p] = false;
      for (std::size_t k = 0; k < d; ++k) {
        moved.at(i * per + p, k) = z.at(i, k) + (norm > 0.0 ? beta * (dir[k] / norm) : 0.0);
      }
    }
  }
  Tensor shifted;
  {
    diff::Tape tape;
    const BoundModel model = bind(tape, params);
    shifted = diff::softmax_rows(classify(model, tape.constant(moved))).value();
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < per; ++p) {
      if (!usable[i * per + p]) continue;
      best = std::min(best, l2_distance(clean.row_span(i), shifted.row_span(i * per + p)));
    }
    total += std::isfinite(best) ? best : 0.0;
  }
  return total / static_cast<double>(n);
}

Eigen::MatrixXd pca_project(const Eigen::MatrixXd& points, std::size_t components) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(components));
  if (n == 0) return out;
  const Eigen::RowVectorXd mean = points.colwise().mean();
  const Eigen::MatrixXd centered = points.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca_project: eigendecomposition failed");
  const Eigen::Index keep = std::min<Eigen::Index>(static_cast<Eigen::Index>(components), points.cols());
  const Eigen::MatrixXd axes = solver.eigenvectors().rowwise().reverse().leftCols(keep);
  out.leftCols(keep) = centered * axes;
  return out;
}

void export_embeddings(const ModelParams& params, const data::DatasetSplit& split,
                       std::span<const int> target_labels, const std::filesystem::path& path) {
  if (target_labels.size() != split.target.size()) throw ShapeError("export_embeddings: target label count mismatch");
  const Eigen::MatrixXd src = to_matrix(encode(params, split.source.features).semantic);
  const Eigen::MatrixXd tgt = to_matrix(encode(params, split.target.features).semantic);
  Eigen::MatrixXd all(src.rows() + tgt.rows(), src.cols());
  all << src, tgt;
  const Eigen::MatrixXd proj = pca_project(all);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "domain,label_or_pseudo";
  for (Eigen::Index k = 0; k < all.cols(); ++k) out << ",z" << k;
  out << ",pca_x,pca_y\n";
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    const bool is_source = i < src.rows();
    const auto local = static_cast<std::size_t>(is_source ? i : i - src.rows());
    out << (is_source ? "source" : "target") << ','
        << (is_source ? split.source.labels[local] : target_labels[local]);
    for (Eigen::Index k = 0; k < all.cols(); ++k) out << ',' << data::format_double(all(i, k));
    out << ',' << data::format_double(proj(i, 0)) << ',' << data::format_double(proj(i, 1)) << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

MetricsReport evaluate(const ModelParams& params, const data::DatasetSplit& split, std::span<const double> betas,
                       std::span<const int> fallback_target_labels, const EvalSettings& settings) {
  const std::size_t classes = params.spec.num_classes;
  if (betas.size() != classes) throw ShapeError("evaluate: need one beta per class");
  MetricsReport report;
  report.pgd_budget = settings.pgd_budget;
  report.pgd_steps = settings.pgd_steps;
  report.source_accuracy = accuracy(params, split.source.features, split.source.labels);

  const bool target_labelled =
      split.target.size() > 0 &&
      std::none_of(split.target.labels.begin(), split.target.labels.end(), [](int l) { return l == kNoLabel; });
  if (target_labelled) {
    report.target_accuracy = accuracy(params, split.target.features, split.target.labels);
    report.target_robust_accuracy =
        robust_accuracy(params, split.target.features, split.target.labels, settings.pgd_budget, settings.pgd_steps);
    report.nuisance = nuisance_sensitivity(params, split.target.features, split.target.labels, settings.lambda_rec);
  } else {
    report.nuisance = nuisance_sensitivity(params, split.source.features, split.source.labels, settings.lambda_rec);
  }

  std::span<const int> target_labels = target_labelled ? std::span<const int>(split.target.labels) : fallback_target_labels;
  const Eigen::MatrixXd src = to_matrix(encode(params, split.source.features).semantic);
  const Eigen::MatrixXd tgt = to_matrix(encode(params, split.target.features).semantic);
  const auto src_groups = group_rows(src, split.source.labels, classes);
  const auto tgt_groups = group_rows(tgt, target_labels, classes);
  const ConsistencyReport consistency = contrastive_consistency(src_groups, tgt_groups);
  report.div_sem_bound = consistency.div_sem_bound;

  for (std::size_t c = 0; c < classes; ++c) {
    ClassDiagnostics row;
    row.label = static_cast<int>(c);
    row.consistency = consistency.per_class[c];
    row.beta = betas[c];
    Eigen::MatrixXd pooled(src_groups[c].rows() + tgt_groups[c].rows(), src.cols());
    pooled << src_groups[c], tgt_groups[c];
    if (pooled.rows() > 0) {
      row.robustness_margin = robustness_margin(params, pooled, betas[c], settings.margin_probes, settings.seed + c);
    }
    report.classes.push_back(row);
  }
  return report;
}

}  // namespace geoadapt::diagnostics
