#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "geoadapt/tape.hpp"
#include "geoadapt/types.hpp"

namespace geoadapt::losses {

/// Floor applied to probabilities inside logarithms.
inline constexpr double kProbabilityFloor = 1e-12;

/// Functional form of the perturbation consistency terms.
enum class Divergence { kKl, kSquaredL2 };

/// Mean cross-entropy of raw logits against integer labels in [0, C).
diff::Var cls_loss(diff::Var logits, std::span<const int> labels);

/// Mean squared error over every entry.
diff::Var rec_loss(diff::Var x, diff::Var reconstruction);

/// Mean over the batch of (z_y · z_n)^2.
diff::Var orth_loss(diff::Var semantic, diff::Var nuisance);

/// Divergence between clean and perturbed probability rows, averaged over
/// rows. The clean rows are treated as constants.
///   kKl:        KL(clean || perturbed) with probabilities floored at 1e-12
///   kSquaredL2: |clean - perturbed|^2
diff::Var consistency(Divergence form, diff::Var p_clean, diff::Var p_perturbed);

/// Semantic-direction consistency; KL by default.
diff::Var on_consistency_loss(diff::Var p_clean, diff::Var p_on, Divergence form = Divergence::kKl);
/// Off-manifold smoothness; squared L2 by default.
diff::Var off_smoothness_loss(diff::Var p_clean, diff::Var p_off, Divergence form = Divergence::kSquaredL2);

/// One row of a contrastive batch. Rows labelled kNoLabel take no part.
struct ContrastiveItem {
  int label = kNoLabel;
  DomainTag domain = DomainTag::kSource;
};

struct ContrastiveResult {
  diff::Var loss;
  std::size_t anchors_used = 0;
  /// Labelled rows with no cross-domain positive or no negative.
  std::size_t anchors_skipped = 0;
  std::size_t positive_pairs = 0;
};

/// Class-conditional cross-domain InfoNCE over cosine similarities.
///
/// Positives of an anchor are rows from the other domain with the same
/// label; negatives are rows (either domain) with a different label. An
/// anchor with several positives contributes the mean of its per-positive
/// losses; the result is the mean over anchors, or a constant 0 when no row
/// qualifies as an anchor.
ContrastiveResult contrastive_loss(diff::Var embeddings, std::span<const ContrastiveItem> items,
                                   double temperature);

struct LossWeights {
  double rec = 1.0;
  double orth = 0.1;
  double adv = 1.0;
  double con = 0.5;
  bool use_on = true;
  bool use_off = true;

  void validate() const;
};

struct LossComponents {
  double cls = 0.0;
  double rec = 0.0;
  double orth = 0.0;
  double on = 0.0;
  double off = 0.0;
  double con = 0.0;
};

struct LossBreakdown {
  LossComponents terms;
  LossWeights weights;
  double total = 0.0;
};

/// total = cls + λ_rec·rec + λ_orth·orth + λ_adv·(on + off) + λ_con·con.
/// A disabled on/off branch contributes 0. Throws NumericError naming the
/// first non-finite term.
LossBreakdown total_loss(const LossComponents& terms, const LossWeights& weights);

/// Loss terms on a tape; an invalid Var stands for an absent (zero) term.
struct LossVars {
  diff::Var cls;
  diff::Var rec;
  diff::Var orth;
  diff::Var on;
  diff::Var off;
  diff::Var con;
};

/// Same composition as total_loss, on the tape, so values agree bit-for-bit.
diff::Var total_loss(const LossVars& terms, const LossWeights& weights);

/// Reads the current values of a LossVars set (absent terms read as 0).
LossComponents values_of(const LossVars& terms);

}  // namespace geoadapt::losses
