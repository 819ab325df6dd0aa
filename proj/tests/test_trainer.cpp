#include <doctest.h>

#include <cmath>
#include <string>

#include "geoadapt/errors.hpp"
#include "geoadapt/trainer.hpp"
#include "helpers.hpp"

using namespace geoadapt;
using namespace geoadapt::train;

namespace {

data::DatasetSplit small_moons(std::size_t n = 64, double rotation = 40.0, std::uint64_t seed = 0) {
  data::TwoMoonsParams p;
  p.n = n;
  p.rotation_deg = rotation;
  p.seed = seed;
  return data::gen_two_moons_shift(p);
}

TrainConfig small_config(std::size_t epochs = 4) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.encoder_hidden = {16};
  c.decoder_hidden = {16};
  c.latent_dim = 8;
  c.semantic_dim = 4;
  c.warmup_epochs = 1;
  c.eval.margin_probes = 4;
  c.eval.pgd_steps = 3;
  return c;
}

Batch batch_of(const data::DomainData& d, std::vector<std::size_t> rows, bool with_labels) {
  Batch b{d.features.select_rows(rows), {}, {}};
  for (std::size_t i : rows) {
    b.labels.push_back(with_labels ? d.labels[i] : kNoLabel);
    b.revealed.push_back(false);
  }
  return b;
}

double batch_cls(const ModelParams& p, const Batch& b) {
  const Tensor probs = predict_proba(p, b.features);
  double total = 0.0;
  for (std::size_t i = 0; i < b.labels.size(); ++i) total -= std::log(probs.at(i, static_cast<std::size_t>(b.labels[i])));
  return total / static_cast<double>(b.labels.size());
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("config validation lists every problem") {
    TrainConfig c;
    c.temperature = 0.0;
    c.batch_size = 1;
    c.semantic_dim = 5;
    c.weights.orth = -1.0;
    c.pseudo_label_threshold = 1.5;
    const auto problems = c.problems();
    CHECK(problems.size() >= 5);
    try {
      c.validate();
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      const std::string what = e.what();
      CHECK(what.find("temperature") != std::string::npos);
      CHECK(what.find("batch_size") != std::string::npos);
      CHECK(what.find("threshold") != std::string::npos);
    }
    CHECK(TrainConfig{}.problems().empty());
  }

  TEST_CASE("effective weights follow ablations and warm-up") {
    TrainConfig c;
    CHECK(c.effective_weights(0).adv == 0.0);
    CHECK(c.effective_weights(0).con == 0.0);
    CHECK(c.effective_weights(0).orth == 0.1);
    CHECK(c.effective_weights(5).adv == 1.0);
    CHECK(c.effective_weights(5).con == 0.5);
    c.ablate.disentangle = false;
    c.ablate.contrastive = false;
    c.ablate.off_manifold = false;
    const auto w = c.effective_weights(5);
    CHECK(w.orth == 0.0);
    CHECK(w.con == 0.0);
    CHECK_FALSE(w.use_off);
    CHECK(w.use_on);
    const ModelSpec spec = c.model_spec(3, 2);
    CHECK(spec.semantic_dim == spec.latent_dim);
    CHECK(spec.nuisance_dim() == 0);
  }

  TEST_CASE("pseudo-labels match a brute-force argmax and threshold filter") {
    const auto split = small_moons();
    const ModelParams p = init_params(small_config().model_spec(split.dim(), 2), 2);
    const Tensor probs = predict_proba(p, split.target.features);
    for (double threshold : {0.0, 0.55, 0.7, 1.0}) {
      const PseudoLabels pl = assign_pseudo_labels(p, split.target.features, threshold);
      std::size_t assigned = 0;
      for (std::size_t i = 0; i < split.target.size(); ++i) {
        const int arg = probs.at(i, 1) > probs.at(i, 0) ? 1 : 0;
        const double conf = std::max(probs.at(i, 0), probs.at(i, 1));
        CHECK(pl.confidence[i] == conf);
        const int expected = conf >= threshold ? arg : kNoLabel;
        CHECK(pl.label[i] == expected);
        if (expected != kNoLabel) ++assigned;
      }
      CHECK(pl.assigned == assigned);
      if (threshold == 0.0) CHECK(pl.coverage() == 1.0);
      if (threshold == 1.0) CHECK(pl.assigned == 0);
    }
  }

  TEST_CASE("aligned embeddings give zero residual and zero beta") {
    EmbeddingSnapshot snap;
    std::mt19937_64 rng(1);
    snap.source = testing::to_eigen(oracle::random_matrix(20, 3, rng));
    snap.target = snap.source;
    for (int i = 0; i < 20; ++i) {
      snap.source_labels.push_back(i % 2);
      snap.target_labels.push_back(i % 2);
      snap.source_confident.push_back(true);
    }
    TrainConfig c;
    c.geometry.tangent_dim = 1;
    const auto table = refresh_geometry(snap, 2, c);
    REQUIRE(table.size() == 2);
    for (const auto& g : table) {
      CHECK(g.residual == 0.0);
      CHECK(g.beta == 0.0);
      CHECK_FALSE(g.residual_fallback);
    }
    CHECK(table[0].alpha + table[1].alpha == doctest::Approx(2.0 * c.base_alpha));
  }

  TEST_CASE("a single class keeps the base alpha exactly") {
    EmbeddingSnapshot snap;
    std::mt19937_64 rng(2);
    snap.source = testing::to_eigen(oracle::random_matrix(12, 3, rng, 2.0));
    snap.target = testing::to_eigen(oracle::random_matrix(12, 3, rng));
    snap.source_labels.assign(12, 0);
    snap.target_labels.assign(12, 0);
    snap.source_confident.assign(12, true);
    TrainConfig c;
    c.base_alpha = 0.37;
    c.geometry.tangent_dim = 1;
    const auto table = refresh_geometry(snap, 2, c);
    REQUIRE(table.size() == 1);
    CHECK(table[0].alpha == 0.37);
    CHECK(table[0].beta == c.base_beta);
  }

  TEST_CASE("small classes fall back to the global curvature") {
    EmbeddingSnapshot snap;
    std::mt19937_64 rng(3);
    snap.source = testing::to_eigen(oracle::random_matrix(12, 3, rng));
    snap.target = testing::to_eigen(oracle::random_matrix(12, 3, rng));
    snap.source_labels.assign(12, 0);
    snap.source_labels[0] = 1;
    snap.target_labels.assign(12, kNoLabel);
    snap.source_confident.assign(12, false);
    TrainConfig c;
    c.geometry.tangent_dim = 1;
    const auto table = refresh_geometry(snap, 2, c);
    REQUIRE(table.size() == 2);
    CHECK(table[1].curvature_fallback);
    CHECK_FALSE(table[0].curvature_fallback);
    CHECK(table[0].residual_fallback);
    CHECK(table[1].n_source == 1);
  }

  TEST_CASE("zero learning rate and zero lambdas leave parameters unchanged") {
    const auto split = small_moons();
    TrainConfig c = small_config();
    c.learning_rate = 0.0;
    c.weights = {0.0, 0.0, 0.0, 0.0};
    const ModelParams p = init_params(c.model_spec(split.dim(), 2), 1);
    const data::TargetLabelView view(split, c.protocol, c.seed);
    const EpochState state = refresh_epoch(p, split, view, c, 2);
    const Batch src = batch_of(split.source, {0, 1, 2, 3, 4, 5}, true);
    const Batch tgt = batch_of(split.target, {0, 1, 2, 3, 4, 5}, false);
    const StepResult r = train_step(p, src, tgt, state, c);
    CHECK(r.params == p);
    CHECK(r.breakdown.total == r.breakdown.terms.cls);
    CHECK(r.breakdown.terms.cls == doctest::Approx(batch_cls(p, src)).epsilon(1e-12));
  }

  TEST_CASE("a small step decreases the classification loss on a separable batch") {
    data::GaussianShiftParams g;
    g.n_per_class = 16;
    g.class_separation = 6.0;
    const auto split = data::gen_gaussian_shift(g);
    TrainConfig c = small_config();
    c.learning_rate = 1e-3;
    const ModelParams p = init_params(c.model_spec(split.dim(), 2), 4);
    const data::TargetLabelView view(split, c.protocol, c.seed);
    const EpochState state = refresh_epoch(p, split, view, c, 0);
    const Batch src = batch_of(split.source, {0, 1, 2, 3, 4, 5, 6, 7}, true);
    const Batch tgt = batch_of(split.target, {0, 1, 2, 3}, false);
    const StepResult r = train_step(p, src, tgt, state, c);
    CHECK(batch_cls(r.params, src) < batch_cls(p, src));
  }

  TEST_CASE("steps are bit-reproducible") {
    const auto split = small_moons();
    const TrainConfig c = small_config();
    auto trajectory = [&] {
      ModelParams p = init_params(c.model_spec(split.dim(), 2), 9);
      const data::TargetLabelView view(split, c.protocol, c.seed);
      const EpochState state = refresh_epoch(p, split, view, c, 3);
      std::vector<double> totals;
      for (std::size_t s = 0; s < 5; ++s) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < 12; ++i) rows.push_back((s * 12 + i) % split.source.size());
        Batch tgt = batch_of(split.target, rows, false);
        for (std::size_t k = 0; k < rows.size(); ++k) tgt.labels[k] = state.target_labels[rows[k]];
        StepResult r = train_step(p, batch_of(split.source, rows, true), tgt, state, c);
        p = std::move(r.params);
        totals.push_back(r.breakdown.total);
      }
      return std::make_pair(p, totals);
    };
    const auto a = trajectory(), b = trajectory();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }

  TEST_CASE("every loss term is active after warm-up") {
    const auto split = small_moons(64, 40.0, 1);
    TrainConfig c = small_config();
    c.pseudo_label_threshold = 0.5;
    const ModelParams p = init_params(c.model_spec(split.dim(), 2), 3);
    const data::TargetLabelView view(split, c.protocol, c.seed);
    const EpochState state = refresh_epoch(p, split, view, c, 2);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 16; ++i) rows.push_back(i);
    Batch tgt = batch_of(split.target, rows, false);
    for (std::size_t k = 0; k < rows.size(); ++k) tgt.labels[k] = state.target_labels[rows[k]];
    const StepResult r = train_step(p, batch_of(split.source, rows, true), tgt, state, c);
    const auto& t = r.breakdown.terms;
    CHECK(t.rec > 0.0);
    CHECK(t.orth > 0.0);
    CHECK(t.on >= 0.0);
    CHECK(t.off > 0.0);
    CHECK(t.con > 0.0);
    CHECK(r.perturbed > 0);
    CHECK(r.contrastive_anchors > 0);
  }

  TEST_CASE("zero epochs reports metrics of the initial parameters") {
    const auto split = small_moons();
    TrainConfig c = small_config(0);
    const RunResult r = run(c, split);
    CHECK(r.epochs.empty());
    CHECK(r.params == init_params(c.model_spec(split.dim(), 2), c.seed));
    const auto m = evaluate_params(r.params, split, c);
    CHECK(r.metrics.source_accuracy == m.source_accuracy);
    CHECK(r.metrics.target_accuracy == m.target_accuracy);
    CHECK(r.orthogonality_trace.size() == 1);
  }

  TEST_CASE("disentangle off trains a monolithic latent with no orthogonality weight") {
    const auto split = small_moons();
    TrainConfig c = small_config(2);
    c.ablate.disentangle = false;
    const RunResult r = run(c, split);
    CHECK(r.params.spec.semantic_dim == r.params.spec.latent_dim);
    for (const auto& e : r.epochs) {
      CHECK(e.mean_loss.weights.orth == 0.0);
      CHECK(e.mean_loss.terms.orth == 0.0);
    }
  }

  TEST_CASE("toggle neutrality") {
    const auto split = small_moons();
    const TrainConfig base = small_config(3);

    TrainConfig no_con = base;
    no_con.ablate.contrastive = false;
    TrainConfig zero_con = base;
    zero_con.weights.con = 0.0;
    const RunResult a = run(no_con, split), b = run(zero_con, split);
    CHECK(a.params == b.params);
    for (std::size_t e = 0; e < a.epochs.size(); ++e) CHECK(a.epochs[e].mean_loss.total == b.epochs[e].mean_loss.total);

    TrainConfig fixed = base;
    fixed.ablate.adaptive = false;
    const RunResult f = run(fixed, split);
    for (const auto& row : f.geometry_report) {
      CHECK(row.geometry.alpha == base.base_alpha);
      CHECK(row.geometry.beta == base.base_beta);
    }
  }

  TEST_CASE("UDA training never reads target labels") {
    const auto split = small_moons();
    auto hidden = split;
    for (int& l : hidden.target.labels) l = kNoLabel;
    const TrainConfig c = small_config(3);
    const RunResult a = run(c, split), b = run(c, hidden);
    CHECK(a.params == b.params);
    for (std::size_t e = 0; e < a.epochs.size(); ++e) CHECK(a.epochs[e].mean_loss.total == b.epochs[e].mean_loss.total);
    CHECK(a.metrics.target_accuracy.has_value());
    CHECK_FALSE(b.metrics.target_accuracy.has_value());
  }

  TEST_CASE("FSDA runs reveal shots to the classifier") {
    const auto split = small_moons();
    TrainConfig c = small_config(2);
    c.protocol = data::Protocol::fsda(2);
    const RunResult r = run(c, split);
    CHECK(r.epochs.size() == 2);
    auto hidden = split;
    for (int& l : hidden.target.labels) l = kNoLabel;
    CHECK_THROWS_AS(run(c, hidden), ProtocolError);
  }

  TEST_CASE("empty target is a protocol error at training time") {
    auto split = small_moons();
    split.target = {Tensor::matrix(0, split.dim(), {}), {}};
    CHECK_THROWS_AS(run(small_config(1), split), ProtocolError);
  }

  TEST_CASE("round-trip reconstruction on 2-D blobs") {
    data::GaussianShiftParams g;
    g.n_per_class = 128;
    const auto split = data::gen_gaussian_shift(g);
    TrainConfig c;
    c.epochs = 30;
    const RunResult r = run(c, split);
    const Tensor& x = split.source.features;
    const Tensor xr = decode(r.params, encode(r.params, x));
    double mse = 0.0, var = 0.0;
    for (std::size_t k = 0; k < x.cols(); ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) mean += x.at(i, k) / static_cast<double>(x.rows());
      for (std::size_t i = 0; i < x.rows(); ++i) {
        var += (x.at(i, k) - mean) * (x.at(i, k) - mean) / static_cast<double>(x.size());
        mse += (x.at(i, k) - xr.at(i, k)) * (x.at(i, k) - xr.at(i, k)) / static_cast<double>(x.size());
      }
    }
    CHECK(mse < 0.1 * var);
  }

  TEST_CASE("orthogonality trace matches a direct computation") {
    const auto split = small_moons();
    const ModelParams p = init_params(small_config().model_spec(split.dim(), 2), 0);
    const LatentBatch z = encode(p, split.source.features);
    double expected = 0.0;
    for (std::size_t r = 0; r < z.semantic.rows(); ++r) {
      double d = 0.0;
      for (std::size_t c = 0; c < z.semantic.cols(); ++c) d += z.semantic.at(r, c) * z.nuisance.at(r, c);
      expected += std::fabs(d) / static_cast<double>(z.semantic.rows());
    }
    CHECK(mean_abs_orthogonality(p, split.source.features) == doctest::Approx(expected).epsilon(1e-13));
  }
}
