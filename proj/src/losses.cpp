#include "geoadapt/losses.hpp"

#include <cmath>
#include <vector>

#include "geoadapt/errors.hpp"

namespace geoadapt::losses {
namespace {

using diff::Var;

void require_probability_rows(const Tensor& p, const char* what) {
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double total = 0.0;
    for (double v : p.row_span(r)) {
      if (v < 0.0) {
        throw ValidationError(std::string(what) + ": row " + std::to_string(r) + " has a negative probability");
      }
      total += v;
    }
    if (std::fabs(total - 1.0) > 1e-8) {
      throw ValidationError(std::string(what) + ": row " + std::to_string(r) + " sums to " +
                            std::to_string(total) + ", not 1");
    }
  }
}

}  // namespace

Var cls_loss(Var logits, std::span<const int> labels) {
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != n) {
    throw ShapeError("cls_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  if (n == 0) throw ShapeError("cls_loss: empty batch");
  std::vector<std::size_t> flat(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValidationError("cls_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
    flat[i] = i * classes + static_cast<std::size_t>(labels[i]);
  }
  return -diff::mean(diff::pick(diff::log_softmax_rows(logits), std::move(flat)));
}

Var rec_loss(Var x, Var reconstruction) {
  if (x.shape() != reconstruction.shape()) {
    throw ShapeError("rec_loss: shape " + to_string(x.shape()) + " vs " + to_string(reconstruction.shape()));
  }
  return diff::mean(diff::square(x - reconstruction));
}

Var orth_loss(Var semantic, Var nuisance) {
  if (semantic.shape() != nuisance.shape()) {
    throw ShapeError("orth_loss: z_y shape " + to_string(semantic.shape()) + " vs z_n shape " +
                     to_string(nuisance.shape()));
  }
  return diff::mean(diff::square(diff::dot_rows(semantic, nuisance)));
}

Var consistency(Divergence form, Var p_clean, Var p_perturbed) {
  if (p_clean.shape() != p_perturbed.shape()) {
    throw ShapeError("consistency: probability shapes " + to_string(p_clean.shape()) + " vs " +
                     to_string(p_perturbed.shape()));
  }
  require_probability_rows(p_clean.value(), "consistency (clean)");
  require_probability_rows(p_perturbed.value(), "consistency (perturbed)");
  const Var clean = diff::stop_gradient(p_clean);
  if (form == Divergence::kKl) {
    const Var log_ratio = diff::log_floor(clean, kProbabilityFloor) - diff::log_floor(p_perturbed, kProbabilityFloor);
    return diff::mean(diff::sum_rows(clean * log_ratio));
  }
  return diff::mean(diff::sum_rows(diff::square(clean - p_perturbed)));
}

Var on_consistency_loss(Var p_clean, Var p_on, Divergence form) { return consistency(form, p_clean, p_on); }

Var off_smoothness_loss(Var p_clean, Var p_off, Divergence form) { return consistency(form, p_clean, p_off); }

ContrastiveResult contrastive_loss(Var embeddings, std::span<const ContrastiveItem> items, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("contrastive_loss: temperature must be positive");
  const std::size_t n = embeddings.rows();
  if (items.size() != n) {
    throw ShapeError("contrastive_loss: " + std::to_string(items.size()) + " items for " + std::to_string(n) +
                     " embeddings");
  }
  diff::Tape& tape = embeddings.tape();
  ContrastiveResult result;

  std::vector<std::size_t> anchors;
  std::vector<std::size_t> pair_anchor;  // index into `anchors`
  std::vector<std::size_t> pair_flat;    // a * n + p in the similarity matrix
  std::vector<double> pair_weight_raw;
  std::vector<double> negative_mask_rows;
  for (std::size_t a = 0; a < n; ++a) {
    if (items[a].label == kNoLabel) continue;
    std::vector<std::size_t> positives;
    std::vector<double> mask(n, 0.0);
    bool any_negative = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a || items[j].label == kNoLabel) continue;
      if (items[j].label == items[a].label) {
        if (items[j].domain != items[a].domain) positives.push_back(j);
      } else {
        mask[j] = 1.0;
        any_negative = true;
      }
    }
    if (positives.empty() || !any_negative) {
      ++result.anchors_skipped;
      continue;
    }
    const std::size_t slot = anchors.size();
    anchors.push_back(a);
    negative_mask_rows.insert(negative_mask_rows.end(), mask.begin(), mask.end());
    for (std::size_t p : positives) {
      pair_anchor.push_back(slot);
      pair_flat.push_back(a * n + p);
      pair_weight_raw.push_back(1.0 / static_cast<double>(positives.size()));
    }
  }
  result.anchors_used = anchors.size();
  result.positive_pairs = pair_flat.size();
  if (anchors.empty()) {
    result.loss = tape.constant(Tensor::scalar(0.0));
    return result;
  }

  const Tensor& e = embeddings.value();
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (double v : e.row_span(r)) sq += v * v;
    if (!(sq > 0.0)) throw NumericError("contrastive_loss: embedding row " + std::to_string(r) + " has zero norm");
  }

  const Var unit = embeddings / diff::row_norm(embeddings);
  const Var logits = (1.0 / temperature) * diff::matmul(unit, diff::transpose(unit));
  const Var negative_lse = diff::masked_logsumexp_rows(
      diff::gather_rows(logits, anchors), Tensor::matrix(anchors.size(), n, std::move(negative_mask_rows)));
  const Var positive = diff::pick(logits, std::move(pair_flat));
  const Var denominator =
      diff::logsumexp_rows(diff::concat_cols(positive, diff::gather_rows(negative_lse, std::move(pair_anchor))));

  for (double& w : pair_weight_raw) w /= static_cast<double>(anchors.size());
  const Var weights = tape.constant(Tensor::column(std::move(pair_weight_raw)));
  result.loss = diff::sum((denominator - positive) * weights);
  return result;
}

void LossWeights::validate() const {
  auto check = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string("lambda_") + name + " must be >= 0");
  };
  check(rec, "rec");
  check(orth, "orth");
  check(adv, "adv");
  check(con, "con");
}

LossBreakdown total_loss(const LossComponents& terms, const LossWeights& weights) {
  weights.validate();
  const std::pair<const char*, double> named[] = {{"cls", terms.cls}, {"rec", terms.rec}, {"orth", terms.orth},
                                                  {"on", terms.on},   {"off", terms.off}, {"con", terms.con}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) throw NumericError(std::string("loss term '") + name + "' is non-finite");
  }
  LossBreakdown out;
  out.terms = terms;
  out.weights = weights;
  if (!weights.use_on) out.terms.on = 0.0;
  if (!weights.use_off) out.terms.off = 0.0;
  const LossComponents& t = out.terms;
  out.total = t.cls + weights.rec * t.rec + weights.orth * t.orth + weights.adv * (t.on + t.off) + weights.con * t.con;
  return out;
}

Var total_loss(const LossVars& terms, const LossWeights& weights) {
  weights.validate();
  if (!terms.cls.valid()) throw ValidationError("total_loss: the classification term is required");
  const LossComponents values = values_of(terms);
  total_loss(values, weights);  // validates finiteness with term names

  diff::Tape& tape = terms.cls.tape();
  auto term = [&](Var v) { return v.valid() ? v : tape.constant(Tensor::scalar(0.0)); };
  const Var on = weights.use_on ? term(terms.on) : tape.constant(Tensor::scalar(0.0));
  const Var off = weights.use_off ? term(terms.off) : tape.constant(Tensor::scalar(0.0));

  Var total = terms.cls + weights.rec * term(terms.rec);
  total = total + weights.orth * term(terms.orth);
  total = total + weights.adv * (on + off);
  total = total + weights.con * term(terms.con);
  return total;
}

LossComponents values_of(const LossVars& terms) {
  auto read = [](const Var& v) { return v.valid() ? v.value().item() : 0.0; };
  return {read(terms.cls), read(terms.rec), read(terms.orth), read(terms.on), read(terms.off), read(terms.con)};
}

}  // namespace geoadapt::losses
