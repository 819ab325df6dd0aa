#include "geoadapt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "geoadapt/errors.hpp"

namespace geoadapt::train {
namespace {

using diagnostics::to_matrix;

Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), std::max(a.cols(), b.cols()));
  if (a.rows() > 0) out.topRows(a.rows()) = a;
  if (b.rows() > 0) out.bottomRows(b.rows()) = b;
  return out;
}

Eigen::MatrixXd rows_with_label(const Eigen::MatrixXd& points, std::span<const int> labels, int label,
                                const std::vector<bool>* keep = nullptr) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label && (keep == nullptr || (*keep)[i])) idx.push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), points.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = points.row(idx[k]);
  return out;
}

Eigen::MatrixXd labelled_rows(const Eigen::MatrixXd& points, std::span<const int> labels) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kNoLabel) idx.push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), points.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = points.row(idx[k]);
  return out;
}

/// Per-row gradient of the cross-entropy with respect to the classifier input.
Tensor semantic_loss_gradient(const ModelParams& params, const Tensor& semantic, std::span<const int> labels) {
  diff::Tape tape;
  const BoundModel model = bind(tape, params);
  const diff::Var z = tape.input("z", semantic);
  const diff::Var loss = static_cast<double>(semantic.rows()) * losses::cls_loss(classify(model, z), labels);
  return tape.gradient(loss, {"z"}).at("z");
}

std::optional<geometry::TangentFrame> frame_from_pool(const Eigen::MatrixXd& pool, const Eigen::VectorXd& anchor,
                                                      const GeometryConfig& cfg) {
  const std::size_t needed = cfg.variance_threshold > 0.0 ? 2 : cfg.tangent_dim + 1;
  const std::size_t k = std::min<std::size_t>(cfg.neighbors, static_cast<std::size_t>(pool.rows()));
  if (k < needed) return std::nullopt;
  const auto idx = geometry::nearest_neighbors(pool, anchor, k);
  Eigen::MatrixXd neighbors(static_cast<Eigen::Index>(k), pool.cols());
  for (std::size_t i = 0; i < k; ++i) neighbors.row(static_cast<Eigen::Index>(i)) = pool.row(static_cast<Eigen::Index>(idx[i]));
  try {
    if (cfg.variance_threshold > 0.0) return geometry::estimate_tangent_by_variance(neighbors, anchor, cfg.variance_threshold);
    return geometry::estimate_tangent(neighbors, anchor, cfg.tangent_dim);
  } catch (const DegenerateFrameError&) {
    return std::nullopt;
  }
}

std::optional<geometry::TangentFrame> local_frame(const EpochState& state, const Eigen::VectorXd& anchor, int label,
                                                  const GeometryConfig& cfg) {
  if (label >= 0 && static_cast<std::size_t>(label) < state.class_points.size()) {
    if (auto frame = frame_from_pool(state.class_points[static_cast<std::size_t>(label)], anchor, cfg)) return frame;
  }
  return frame_from_pool(state.all_points, anchor, cfg);
}

Eigen::VectorXd row_vector(const Tensor& t, std::size_t r) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(t.cols()));
  for (std::size_t c = 0; c < t.cols(); ++c) v(static_cast<Eigen::Index>(c)) = t.at(r, c);
  return v;
}

void accumulate(losses::LossComponents& acc, const losses::LossComponents& t) {
  acc.cls += t.cls;
  acc.rec += t.rec;
  acc.orth += t.orth;
  acc.on += t.on;
  acc.off += t.off;
  acc.con += t.con;
}

/// Runs `build`, renaming any numeric failure after the loss term it produced.
template <typename F>
auto guarded(const char* term, F&& build) -> decltype(build()) {
  try {
    return build();
  } catch (const NumericError& e) {
    throw NumericError(std::string("training aborted: term '") + term + "' is non-finite (" + e.what() + ")");
  }
}

std::size_t infer_classes(const data::DatasetSplit& split) {
  int max_label = -1;
  for (int l : split.source.labels) max_label = std::max(max_label, l);
  return std::max<std::size_t>(split.meta.num_classes, static_cast<std::size_t>(max_label + 1));
}

}  // namespace

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  auto nonneg = [&](double v, const std::string& name) {
    if (!(v >= 0.0) || !std::isfinite(v)) out.push_back(name + " must be a finite value >= 0");
  };
  nonneg(weights.rec, "lambda_rec");
  nonneg(weights.orth, "lambda_orth");
  nonneg(weights.adv, "lambda_adv");
  nonneg(weights.con, "lambda_con");
  nonneg(base_alpha, "base_alpha");
  nonneg(base_beta, "base_beta");
  nonneg(learning_rate, "learning_rate");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) out.push_back("temperature must be > 0");
  if (!(pseudo_label_threshold > 0.0 && pseudo_label_threshold <= 1.0)) {
    out.push_back("pseudo_label_threshold must lie in (0, 1]");
  }
  if (batch_size < 2) out.push_back("batch_size must be at least 2");
  if (latent_dim == 0) out.push_back("latent_dim must be positive");
  if (semantic_dim == 0) out.push_back("semantic_dim must be positive");
  if (semantic_dim * 2 != latent_dim) out.push_back("semantic_dim must be half of latent_dim");
  for (std::size_t h : encoder_hidden) {
    if (h == 0) out.push_back("encoder_hidden sizes must be positive");
  }
  for (std::size_t h : decoder_hidden) {
    if (h == 0) out.push_back("decoder_hidden sizes must be positive");
  }
  const std::size_t ambient = ablate.disentangle ? semantic_dim : latent_dim;
  if (geometry.tangent_dim < 1 || geometry.tangent_dim >= ambient) {
    out.push_back("geometry.tangent_dim must lie in [1, " + std::to_string(ambient) + ")");
  }
  if (geometry.neighbors < 2) out.push_back("geometry.neighbors must be at least 2");
  if (!(geometry.variance_threshold >= 0.0 && geometry.variance_threshold <= 1.0)) {
    out.push_back("geometry.variance_threshold must lie in [0, 1]");
  }
  if (!(geometry.epsilon > 0.0)) out.push_back("geometry.epsilon must be > 0");
  if (!(geometry.eigen_floor > 0.0)) out.push_back("geometry.eigen_floor must be > 0");
  if (!(geometry.direction_floor >= 0.0)) out.push_back("geometry.direction_floor must be >= 0");
  if (protocol.kind == data::ProtocolKind::kFsda && protocol.shots == 0) out.push_back("FSDA needs shots >= 1");
  if (!(eval.pgd_budget >= 0.0)) out.push_back("eval.pgd_budget must be >= 0");
  if (eval.pgd_steps < 1) out.push_back("eval.pgd_steps must be >= 1");
  if (eval.margin_probes < 1) out.push_back("eval.margin_probes must be >= 1");
  return out;
}

void TrainConfig::validate() const {
  const auto list = problems();
  if (list.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& p : list) msg += "\n  - " + p;
  throw ValidationError(msg);
}

ModelSpec TrainConfig::model_spec(std::size_t input_dim, std::size_t num_classes) const {
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.encoder_hidden = encoder_hidden;
  spec.decoder_hidden = decoder_hidden;
  spec.latent_dim = latent_dim;
  spec.semantic_dim = ablate.disentangle ? semantic_dim : latent_dim;
  spec.num_classes = num_classes;
  return spec;
}

losses::LossWeights TrainConfig::effective_weights(std::size_t epoch) const {
  losses::LossWeights w = weights;
  if (!ablate.disentangle) w.orth = 0.0;
  if (!ablate.contrastive) w.con = 0.0;
  if (!ablate.off_manifold) w.use_off = false;
  if (!ablate.on_manifold) w.use_on = false;
  if (in_warmup(epoch)) {
    w.adv = 0.0;
    w.con = 0.0;
  }
  return w;
}

PseudoLabels assign_pseudo_labels(const ModelParams& params, const Tensor& target_features, double threshold) {
  PseudoLabels out;
  const std::size_t n = target_features.rows();
  out.label.assign(n, kNoLabel);
  out.confidence.assign(n, 0.0);
  if (n == 0) return out;
  const Tensor probs = predict_proba(params, target_features);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = probs.row_span(i);
    const auto best = std::max_element(row.begin(), row.end());
    out.confidence[i] = *best;
    if (*best >= threshold) {
      out.label[i] = static_cast<int>(best - row.begin());
      ++out.assigned;
    }
  }
  return out;
}

EmbeddingSnapshot take_snapshot(const ModelParams& params, const data::DatasetSplit& split,
                                std::span<const int> target_labels, double threshold) {
  if (target_labels.size() != split.target.size()) throw ShapeError("take_snapshot: target label count mismatch");
  EmbeddingSnapshot snap;
  snap.source = to_matrix(encode(params, split.source.features).semantic);
  snap.target = split.target.size() > 0 ? to_matrix(encode(params, split.target.features).semantic)
                                         : Eigen::MatrixXd(0, static_cast<Eigen::Index>(params.spec.semantic_dim));
  snap.source_labels = split.source.labels;
  snap.target_labels.assign(target_labels.begin(), target_labels.end());
  const Tensor probs = predict_proba(params, split.source.features);
  snap.source_confident.resize(split.source.size());
  for (std::size_t i = 0; i < split.source.size(); ++i) {
    auto row = probs.row_span(i);
    const auto best = std::max_element(row.begin(), row.end());
    snap.source_confident[i] = static_cast<int>(best - row.begin()) == split.source.labels[i] && *best >= threshold;
  }
  return snap;
}

std::vector<ClassGeometry> refresh_geometry(const EmbeddingSnapshot& snap, std::size_t num_classes,
                                            const TrainConfig& config) {
  const GeometryConfig& g = config.geometry;
  const Eigen::MatrixXd labelled_target = labelled_rows(snap.target, snap.target_labels);
  const Eigen::MatrixXd pooled_all = stack_rows(snap.source, labelled_target);
  const double global_curvature =
      pooled_all.rows() >= 2 ? geometry::class_curvature(pooled_all, g.eigen_floor) : 1.0;
  const double global_residual = snap.source.rows() > 0 && snap.target.rows() > 0
                                     ? geometry::class_alignment_residual(snap.source, snap.target)
                                     : 0.0;

  std::vector<ClassGeometry> table;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const int label = static_cast<int>(c);
    const Eigen::MatrixXd src = rows_with_label(snap.source, snap.source_labels, label);
    const Eigen::MatrixXd tgt = rows_with_label(snap.target, snap.target_labels, label);
    if (src.rows() + tgt.rows() == 0) continue;

    ClassGeometry row;
    row.label = label;
    row.n_source = static_cast<std::size_t>(src.rows());
    row.n_target = static_cast<std::size_t>(tgt.rows());
    const Eigen::MatrixXd pooled = stack_rows(src, tgt);
    if (static_cast<std::size_t>(pooled.rows()) >= g.tangent_dim + 2) {
      row.curvature = geometry::class_curvature(pooled, g.eigen_floor);
    } else {
      row.curvature = global_curvature;
      row.curvature_fallback = true;
    }
    const Eigen::MatrixXd confident = rows_with_label(snap.source, snap.source_labels, label, &snap.source_confident);
    if (confident.rows() > 0 && tgt.rows() > 0) {
      row.residual = geometry::class_alignment_residual(confident, tgt, g.residual);
    } else {
      row.residual = global_residual;
      row.residual_fallback = true;
    }
    table.push_back(row);
  }
  if (table.empty()) return table;

  if (config.ablate.adaptive) {
    std::vector<double> k(table.size()), r(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
      k[i] = table[i].curvature;
      r[i] = table[i].residual;
    }
    const auto mags = geometry::magnitudes(k, r, config.base_alpha, config.base_beta, g.epsilon);
    for (std::size_t i = 0; i < table.size(); ++i) {
      table[i].alpha = mags[i].alpha;
      table[i].beta = mags[i].beta;
    }
  } else {
    for (auto& row : table) {
      row.alpha = config.base_alpha;
      row.beta = config.base_beta;
    }
  }
  return table;
}

std::vector<ClassGeometry> refresh_geometry(const ModelParams& params, const data::DatasetSplit& split,
                                            std::span<const int> target_labels, const TrainConfig& config) {
  const EmbeddingSnapshot snap = take_snapshot(params, split, target_labels, config.pseudo_label_threshold);
  return refresh_geometry(snap, params.spec.num_classes, config);
}

geometry::ClassMagnitude EpochState::magnitude(int label) const {
  for (const auto& row : geometry) {
    if (row.label == label) return {row.alpha, row.beta};
  }
  return {};
}

EpochState refresh_epoch(const ModelParams& params, const data::DatasetSplit& split, const data::TargetLabelView& view,
                         const TrainConfig& config, std::size_t epoch) {
  EpochState state;
  state.epoch = epoch;
  state.pseudo = assign_pseudo_labels(params, split.target.features, config.pseudo_label_threshold);
  state.target_labels = state.pseudo.label;
  for (std::size_t i : view.revealed_indices()) state.target_labels[i] = *view.label(i);

  const EmbeddingSnapshot snap = take_snapshot(params, split, state.target_labels, config.pseudo_label_threshold);
  state.geometry = refresh_geometry(snap, params.spec.num_classes, config);
  state.class_points.resize(params.spec.num_classes);
  for (std::size_t c = 0; c < params.spec.num_classes; ++c) {
    const int label = static_cast<int>(c);
    state.class_points[c] = stack_rows(rows_with_label(snap.source, snap.source_labels, label),
                                       rows_with_label(snap.target, snap.target_labels, label));
  }
  state.all_points = stack_rows(snap.source, labelled_rows(snap.target, snap.target_labels));
  return state;
}

StepResult train_step(const ModelParams& params, const Batch& source, const Batch& target, const EpochState& state,
                      const TrainConfig& config) {
  const std::size_t ns = source.features.rows();
  const std::size_t nt = target.labels.size();
  if (ns == 0) throw ValidationError("train_step: empty source batch");
  if (source.labels.size() != ns) throw ShapeError("train_step: source label count mismatch");
  if (nt > 0 && (target.features.rows() != nt || target.revealed.size() != nt)) {
    throw ShapeError("train_step: target batch fields disagree in length");
  }
  const losses::LossWeights weights = config.effective_weights(state.epoch);
  const bool warm = config.in_warmup(state.epoch);

  diff::Tape tape;
  const BoundModel model = bind(tape, params);
  diff::Var x = tape.constant(source.features);
  if (nt > 0) x = diff::concat_rows(x, tape.constant(target.features));
  const LatentVars parts = guarded("encoder", [&] { return split_latent(params.spec, encode(model, x)); });

  std::vector<int> labels(source.labels);
  std::vector<DomainTag> domains(ns, DomainTag::kSource);
  labels.insert(labels.end(), target.labels.begin(), target.labels.end());
  domains.resize(ns + nt, DomainTag::kTarget);

  losses::LossVars vars;
  {
    std::vector<std::size_t> rows;
    std::vector<int> cls_labels;
    for (std::size_t i = 0; i < ns + nt; ++i) {
      if (i < ns || target.revealed[i - ns]) {
        if (labels[i] == kNoLabel) throw ValidationError("train_step: labelled row without a label");
        rows.push_back(i);
        cls_labels.push_back(labels[i]);
      }
    }
    vars.cls = guarded("cls", [&] {
      return losses::cls_loss(classify(model, diff::gather_rows(parts.semantic, rows)), cls_labels);
    });
  }
  vars.rec = guarded("rec", [&] { return losses::rec_loss(x, decode(model, parts.z)); });
  if (parts.nuisance.valid()) {
    vars.orth = guarded("orth", [&] { return losses::orth_loss(parts.semantic, parts.nuisance); });
  }

  std::vector<std::size_t> labelled;
  std::vector<int> labelled_labels;
  for (std::size_t i = 0; i < ns + nt; ++i) {
    if (labels[i] != kNoLabel) {
      labelled.push_back(i);
      labelled_labels.push_back(labels[i]);
    }
  }

  StepResult result;
  if (!warm && weights.adv > 0.0 && (weights.use_on || weights.use_off) && !labelled.empty()) {
    const Tensor anchors = parts.semantic.value().select_rows(labelled);
    const Tensor grads = guarded("on/off direction", [&] { return semantic_loss_gradient(params, anchors, labelled_labels); });
    const std::size_t d = anchors.cols();
    Tensor shift_on = Tensor::zeros({labelled.size(), d});
    Tensor shift_off = Tensor::zeros({labelled.size(), d});
    const Eigen::VectorXd origin = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < labelled.size(); ++r) {
      const Eigen::VectorXd anchor = row_vector(anchors, r);
      const auto frame = local_frame(state, anchor, labelled_labels[r], config.geometry);
      if (!frame) continue;
      const auto split = geometry::decompose_gradient(*frame, row_vector(grads, r));
      const auto mag = state.magnitude(labelled_labels[r]);
      const Eigen::VectorXd on = geometry::perturb(origin, split.on_manifold, mag.alpha, config.geometry.direction_floor);
      const Eigen::VectorXd off =
          geometry::perturb(origin, split.off_manifold, mag.beta, config.geometry.direction_floor);
      for (std::size_t k = 0; k < d; ++k) {
        shift_on.at(r, k) = on(static_cast<Eigen::Index>(k));
        shift_off.at(r, k) = off(static_cast<Eigen::Index>(k));
      }
      ++result.perturbed;
    }
    const diff::Var semantic = diff::gather_rows(parts.semantic, labelled);
    const diff::Var p_clean = diff::softmax_rows(classify(model, semantic));
    if (weights.use_on) {
      vars.on = guarded("on", [&] {
        const diff::Var p_on = diff::softmax_rows(classify(model, semantic + tape.constant(std::move(shift_on))));
        return losses::on_consistency_loss(p_clean, p_on, config.on_form);
      });
    }
    if (weights.use_off) {
      vars.off = guarded("off", [&] {
        const diff::Var p_off = diff::softmax_rows(classify(model, semantic + tape.constant(std::move(shift_off))));
        return losses::off_smoothness_loss(p_clean, p_off, config.off_form);
      });
    }
  }

  if (!warm && weights.con > 0.0 && labelled.size() >= 2) {
    std::vector<losses::ContrastiveItem> items;
    items.reserve(labelled.size());
    for (std::size_t i : labelled) items.push_back({labels[i], domains[i]});
    const auto con = guarded("con", [&] {
      return losses::contrastive_loss(diff::gather_rows(parts.semantic, labelled), items, config.temperature);
    });
    vars.con = con.loss;
    result.contrastive_anchors = con.anchors_used;
  }

  const diff::Var total = guarded("total", [&] { return losses::total_loss(vars, weights); });
  const auto names = params.names();
  const auto grads = guarded("total (backward)", [&] { return tape.gradient(total, names); });
  result.params = params;
  for (const auto& name : names) {
    Tensor& p = result.params.get(name);
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= config.learning_rate * g[i];
    if (!p.all_finite()) throw NumericError("training aborted: parameter '" + name + "' is non-finite after the update");
  }
  result.breakdown = losses::total_loss(losses::values_of(vars), weights);
  return result;
}

double mean_abs_orthogonality(const ModelParams& params, const Tensor& features) {
  const LatentBatch z = encode(params, features);
  if (z.nuisance.cols() == 0 || z.nuisance.cols() != z.semantic.cols() || features.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < features.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < z.semantic.cols(); ++c) dot += z.semantic.at(r, c) * z.nuisance.at(r, c);
    total += std::fabs(dot);
  }
  return total / static_cast<double>(features.rows());
}

diagnostics::MetricsReport evaluate_params(const ModelParams& params, const data::DatasetSplit& split,
                                           const TrainConfig& config, std::vector<ClassGeometry>* geometry_out,
                                           std::vector<int>* target_labels_out) {
  const PseudoLabels pseudo = assign_pseudo_labels(params, split.target.features, config.pseudo_label_threshold);
  const auto table = refresh_geometry(params, split, pseudo.label, config);
  std::vector<double> betas(params.spec.num_classes, 0.0);
  for (const auto& row : table) betas[static_cast<std::size_t>(row.label)] = row.beta;
  diagnostics::EvalSettings settings = config.eval;
  settings.lambda_rec = config.weights.rec;
  settings.seed = config.seed;
  auto metrics = diagnostics::evaluate(params, split, betas, pseudo.label, settings);
  if (geometry_out != nullptr) *geometry_out = table;
  if (target_labels_out != nullptr) *target_labels_out = pseudo.label;
  return metrics;
}

RunResult run(const TrainConfig& config, const data::DatasetSplit& split, const EpochObserver& observer) {
  config.validate();
  if (split.source.size() == 0) throw ValidationError("run: source domain is empty");
  if (split.target.size() == 0) throw ProtocolError("run: target domain is empty");
  for (int l : split.source.labels) {
    if (l == kNoLabel) throw ValidationError("run: every source sample needs a label");
  }
  const std::size_t classes = infer_classes(split);
  RunResult result;
  result.params = init_params(config.model_spec(split.dim(), classes), config.seed);

  const data::TargetLabelView view(split, config.protocol, config.seed);
  const data::BatchSchedule schedule(split.source.size(), split.target.size(), config.batch_size, config.seed);

  Tensor everything = split.source.features;
  {
    std::vector<double> vals(split.source.features.values().begin(), split.source.features.values().end());
    vals.insert(vals.end(), split.target.features.values().begin(), split.target.features.values().end());
    everything = Tensor::matrix(split.source.size() + split.target.size(), split.dim(), std::move(vals));
  }
  result.orthogonality_trace.push_back(mean_abs_orthogonality(result.params, everything));

  for (std::size_t e = 0; e < config.epochs; ++e) {
    const EpochState state = [&] {
      try {
        return refresh_epoch(result.params, split, view, config, e);
      } catch (const NumericError& err) {
        throw NumericError("training aborted: geometry refresh at epoch " + std::to_string(e) + " failed (" +
                           err.what() + ")");
      }
    }();
    for (const auto& row : state.geometry) result.geometry_report.push_back({e, row});

    losses::LossComponents sums;
    double total_sum = 0.0;
    const auto batches = schedule.epoch(e);
    for (const auto& pair : batches) {
      Batch src{split.source.features.select_rows(pair.source), {}, {}};
      for (std::size_t i : pair.source) src.labels.push_back(split.source.labels[i]);
      Batch tgt{split.target.features.select_rows(pair.target), {}, {}};
      for (std::size_t i : pair.target) {
        tgt.labels.push_back(state.target_labels[i]);
        tgt.revealed.push_back(view.revealed(i));
      }
      StepResult step = train_step(result.params, src, tgt, state, config);
      result.params = std::move(step.params);
      accumulate(sums, step.breakdown.terms);
      total_sum += step.breakdown.total;
    }
    const double n = static_cast<double>(batches.size());
    EpochRecord record;
    record.epoch = e;
    record.pseudo_coverage = state.pseudo.coverage();
    record.mean_loss.weights = config.effective_weights(e);
    record.mean_loss.terms = {sums.cls / n, sums.rec / n, sums.orth / n, sums.on / n, sums.off / n, sums.con / n};
    record.mean_loss.total = total_sum / n;
    result.epochs.push_back(record);
    if (observer) observer(record, result.params);
    result.orthogonality_trace.push_back(mean_abs_orthogonality(result.params, everything));
  }

  result.metrics = evaluate_params(result.params, split, config, &result.final_geometry, &result.final_target_labels);
  return result;
}

}  // namespace geoadapt::train
