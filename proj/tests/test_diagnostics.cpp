#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "geoadapt/diagnostics.hpp"
#include "geoadapt/errors.hpp"
#include "geoadapt/losses.hpp"
#include "helpers.hpp"

using namespace geoadapt;
using namespace geoadapt::diagnostics;

namespace {

ModelParams trained_like(std::size_t input_dim, std::uint64_t seed) {
  return init_params(testing::small_spec(input_dim, 2), seed);
}

Tensor random_features(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return testing::to_tensor(oracle::random_matrix(n, d, rng));
}

std::vector<int> predicted_labels(const ModelParams& p, const Tensor& x) {
  const Tensor probs = predict_proba(p, x);
  std::vector<int> out;
  for (std::size_t i = 0; i < probs.rows(); ++i) out.push_back(probs.at(i, 1) > probs.at(i, 0) ? 1 : 0);
  return out;
}

ModelParams with_zero_classifier(ModelParams p) {
  for (auto& layer : p.classifier) {
    for (double& v : layer.weight.values()) v = 0.0;
    for (double& v : layer.bias.values()) v = 0.0;
  }
  return p;
}

}  // namespace

TEST_SUITE("diagnostics") {
  TEST_CASE("accuracy of predicted labels is one and order does not matter") {
    const ModelParams p = trained_like(3, 1);
    const Tensor x = random_features(50, 3, 2);
    auto labels = predicted_labels(p, x);
    CHECK(accuracy(p, x, labels) == 1.0);
    labels[0] = 1 - labels[0];
    const double a = accuracy(p, x, labels);
    CHECK(a == doctest::Approx(0.98));
    std::vector<std::size_t> perm(50);
    for (std::size_t i = 0; i < 50; ++i) perm[i] = (i * 7) % 50;
    std::vector<int> permuted;
    for (std::size_t i : perm) permuted.push_back(labels[i]);
    CHECK(accuracy(p, x.select_rows(perm), permuted) == a);
  }

  TEST_CASE("random labels give chance accuracy") {
    const ModelParams p = trained_like(3, 4);
    const Tensor x = random_features(10000, 3, 5);
    std::mt19937_64 rng(6);
    std::bernoulli_distribution coin(0.5);
    std::vector<int> labels(10000);
    for (int& l : labels) l = coin(rng) ? 1 : 0;
    CHECK(std::fabs(accuracy(p, x, labels) - 0.5) < 0.02);
  }

  TEST_CASE("accuracy needs labels") {
    const ModelParams p = trained_like(3, 1);
    const std::vector<int> hidden{0, kNoLabel};
    CHECK_THROWS_AS(accuracy(p, random_features(2, 3, 1), hidden), ProtocolError);
  }

  TEST_CASE("zero budget robust accuracy equals clean accuracy exactly") {
    const ModelParams p = trained_like(3, 7);
    const Tensor x = random_features(200, 3, 8);
    std::vector<int> labels(200);
    for (std::size_t i = 0; i < 200; ++i) labels[i] = x.at(i, 0) > 0 ? 1 : 0;
    for (std::size_t steps : {1, 3, 10}) CHECK(robust_accuracy(p, x, labels, 0.0, steps) == accuracy(p, x, labels));
  }

  TEST_CASE("robust accuracy is non-increasing in PGD steps") {
    const ModelParams p = trained_like(3, 7);
    const Tensor x = random_features(200, 3, 8);
    const auto labels = predicted_labels(p, x);
    double previous = 1.0;
    for (std::size_t steps = 2; steps <= 10; ++steps) {
      const double r = robust_accuracy(p, x, labels, 0.3, steps);
      CHECK(r <= previous);
      previous = r;
    }
    CHECK(previous < 1.0);
  }

  TEST_CASE("one PGD step is FGSM with step equal to the budget") {
    const ModelParams p = trained_like(3, 9);
    const Tensor x = random_features(100, 3, 10);
    const auto labels = predicted_labels(p, x);
    const double budget = 0.25;

    diff::Tape tape;
    const BoundModel m = bind(tape, p);
    const diff::Var in = tape.input("x", x);
    const diff::Var loss = losses::cls_loss(classify(m, split_latent(p.spec, encode(m, in)).semantic), labels);
    const Tensor g = tape.gradient(loss, {"x"}).at("x");
    Tensor adv = x;
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += budget * (g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0));
    const auto after = predicted_labels(p, adv);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < 100; ++i) kept += after[i] == labels[i] ? 1 : 0;
    CHECK(robust_accuracy(p, x, labels, budget, 1) == static_cast<double>(kept) / 100.0);
  }

  TEST_CASE("classification never depends on z_n") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const ModelParams p = trained_like(3, seed);
      const Tensor x = random_features(20, 3, seed + 10);
      CHECK(nuisance_sensitivity(p, x, predicted_labels(p, x), 1.0).cls_only == 0.0);
    }
  }

  TEST_CASE("decoder blind to z_n gives zero reconstruction sensitivity") {
    ModelParams p = trained_like(3, 2);
    Tensor& w = p.decoder[0].weight;  // [latent, hidden]
    for (std::size_t r = p.spec.semantic_dim; r < p.spec.latent_dim; ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) w.at(r, c) = 0.0;
    const Tensor x = random_features(15, 3, 3);
    CHECK(nuisance_sensitivity(p, x, predicted_labels(p, x), 1.0).cls_rec == 0.0);
  }

  TEST_CASE("nuisance sensitivity matches finite differences over z_n") {
    const ModelParams p = trained_like(3, 5);
    const Tensor x = random_features(8, 3, 6);
    const auto labels = predicted_labels(p, x);
    const double lambda = 0.7;
    const Tensor z = encode(p, x).full();
    const std::size_t dy = p.spec.semantic_dim, d = p.spec.latent_dim;

    double expected = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto per_sample = [&](const oracle::Vec& zn) {
        oracle::Vec zrow(z.row_span(r).begin(), z.row_span(r).end());
        for (std::size_t k = 0; k < zn.size(); ++k) zrow[dy + k] = zn[k];
        const oracle::Mat zy{oracle::Vec(zrow.begin(), zrow.begin() + static_cast<std::ptrdiff_t>(dy))};
        const double ce = oracle::mean_cross_entropy(oracle::mlp_forward(testing::layers_of(p.classifier), zy),
                                                     {labels[r]});
        const oracle::Mat xr = oracle::mlp_forward(testing::layers_of(p.decoder), {zrow});
        double rec = 0.0;
        for (std::size_t k = 0; k < x.cols(); ++k) rec += std::pow(x.at(r, k) - xr[0][k], 2) / static_cast<double>(x.cols());
        return ce + lambda * rec;
      };
      oracle::Vec zn(z.row_span(r).begin() + static_cast<std::ptrdiff_t>(dy), z.row_span(r).begin() + static_cast<std::ptrdiff_t>(d));
      expected += oracle::norm(oracle::central_difference(per_sample, zn, 1e-6)) / static_cast<double>(x.rows());
    }
    const double got = nuisance_sensitivity(p, x, labels, lambda).cls_rec;
    CHECK(std::fabs(got - expected) <= 1e-4 * std::max(1.0, expected));
  }

  TEST_CASE("consistency closed forms and double-loop oracle") {
    Eigen::MatrixXd a(2, 2);
    a << 1, 0, 0, 2;
    const std::vector<Eigen::MatrixXd> same{a};
    CHECK(contrastive_consistency(same, same).per_class[0].value() == doctest::Approx(0.5));  // cross pairs include orthogonal ones

    Eigen::MatrixXd s(1, 2), t(1, 2), anti(1, 2);
    s << 1, 0;
    t << 0, 3;
    anti << -2, 0;
    const std::vector<Eigen::MatrixXd> src{s, s}, tgt{t, anti};
    const auto r = contrastive_consistency(src, tgt);
    CHECK(r.per_class[0].value() == 1.0);
    CHECK(r.per_class[1].value() == 2.0);
    CHECK(r.div_sem_bound == 1.5);

    Eigen::MatrixXd one(1, 3);
    one << 0.3, -1.0, 2.0;
    const std::vector<Eigen::MatrixXd> single{one};
    CHECK(std::fabs(contrastive_consistency(single, single).per_class[0].value()) < 1e-15);

    std::mt19937_64 rng(4);
    const oracle::Mat ms = oracle::random_matrix(9, 4, rng), mt = oracle::random_matrix(7, 4, rng);
    double expected = 0.0;
    for (const auto& x : ms)
      for (const auto& y : mt) expected += (1.0 - oracle::dot(x, y) / (oracle::norm(x) * oracle::norm(y))) / 63.0;
    const std::vector<Eigen::MatrixXd> rs{testing::to_eigen(ms)}, rt{testing::to_eigen(mt)};
    CHECK(std::fabs(contrastive_consistency(rs, rt).per_class[0].value() - expected) < 1e-10);
  }

  TEST_CASE("classes missing a domain are skipped in the bound") {
    Eigen::MatrixXd s(1, 2), t(1, 2);
    s << 1, 0;
    t << 0, 1;
    const std::vector<Eigen::MatrixXd> src{s, s}, tgt{t, Eigen::MatrixXd(0, 2)};
    const auto r = contrastive_consistency(src, tgt);
    CHECK_FALSE(r.per_class[1].has_value());
    CHECK(r.classes_reported == 1);
    CHECK(r.div_sem_bound == 1.0);
  }

  TEST_CASE("robustness margin edge cases and nested probes") {
    const ModelParams p = trained_like(3, 3);
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd z = testing::to_eigen(oracle::random_matrix(10, 2, rng));
    CHECK(robustness_margin(p, z, 0.0, 8, 1) == 0.0);
    CHECK(robustness_margin(with_zero_classifier(p), z, 0.5, 8, 1) == 0.0);
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t probes : {1, 2, 4, 8, 16, 64}) {
      const double g = robustness_margin(p, z, 0.5, probes, 3);
      CHECK(g <= previous);
      CHECK(g > 0.0);
      previous = g;
    }
  }

  TEST_CASE("embedding export has one row per sample and centred PCA columns") {
    const auto dir = testing::scratch_dir("export");
    data::TwoMoonsParams tp;
    tp.n = 40;
    const auto split = data::gen_two_moons_shift(tp);
    const ModelParams p = init_params(testing::small_spec(4, 2), 1);
    std::vector<int> pseudo(split.target.size(), kNoLabel);
    pseudo[0] = 1;
    export_embeddings(p, split, pseudo, dir / "e.csv");

    std::ifstream in(dir / "e.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "domain,label_or_pseudo,z0,z1,pca_x,pca_y");
    oracle::Mat z, proj;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      REQUIRE(cells.size() == 6);
      if (rows == 40) CHECK(cells[1] == "1");
      if (rows == 41) CHECK(cells[1] == "-1");
      z.push_back({std::stod(cells[2]), std::stod(cells[3])});
      proj.push_back({std::stod(cells[4]), std::stod(cells[5])});
      ++rows;
    }
    CHECK(rows == 80);
    const oracle::Vec mean = oracle::centroid(proj);
    CHECK(std::fabs(mean[0]) < 1e-10);
    CHECK(std::fabs(mean[1]) < 1e-10);
    const auto [values, vectors] = oracle::jacobi_eigen(oracle::covariance(z));
    const oracle::Mat pc = oracle::covariance(proj);
    CHECK(pc[0][0] == doctest::Approx(values[0]).epsilon(1e-9));
    CHECK(pc[1][1] == doctest::Approx(values[1]).epsilon(1e-9));
  }

  TEST_CASE("full evaluation: bound is the mean of C_c and budget zero matches clean") {
    data::TwoMoonsParams tp;
    tp.n = 60;
    const auto split = data::gen_two_moons_shift(tp);
    const ModelParams p = init_params(testing::small_spec(4, 2), 2);
    EvalSettings s;
    s.pgd_budget = 0.0;
    s.margin_probes = 4;
    const std::vector<double> betas{0.4, 0.6};
    const std::vector<int> none(split.target.size(), kNoLabel);
    const MetricsReport m = evaluate(p, split, betas, none, s);
    CHECK(m.target_robust_accuracy.value() == m.target_accuracy.value());
    double sum = 0.0;
    for (const auto& c : m.classes) sum += c.consistency.value();
    CHECK(m.div_sem_bound == sum / 2.0);
    CHECK(m.nuisance.cls_only == 0.0);
    CHECK(m.classes[1].beta == 0.6);
  }
}
