#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "geoadapt/cli.hpp"
#include "geoadapt/reports.hpp"
#include "geoadapt/synthdata.hpp"
#include "helpers.hpp"

using namespace geoadapt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome call(std::vector<std::string> args) {
  args.insert(args.begin(), "geoadapt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json tiny_config() {
  return {{"seed", 1},
          {"epochs", 2},
          {"protocol", "uda"},
          {"batch_size", 16},
          {"warmup_epochs", 1},
          {"model", {{"encoder_hidden", {8}}, {"decoder_hidden", {8}}, {"latent_dim", 8}, {"semantic_dim", 4}}},
          {"eval", {{"pgd_steps", 2}, {"margin_probes", 4}}}};
}

fs::path write_json(const fs::path& path, const json& doc) {
  std::ofstream(path) << doc.dump();
  return path;
}

/// A two-moons dataset plus a tiny config in `dir`.
struct Fixture {
  fs::path dir, data, config;

  explicit Fixture(const std::string& name) : dir(testing::scratch_dir(name)) {
    data = dir / "moons.csv";
    REQUIRE(call({"gen", "two-moons", "--n", "64", "--seed", "2", "--out", data.string()}).code == 0);
    config = write_json(dir / "config.json", tiny_config());
  }

  Outcome train(const fs::path& out, std::vector<std::string> extra = {}) const {
    std::vector<std::string> args{"train", "--config", config.string(), "--data", data.string(), "--out", out.string(),
                                  "--quiet"};
    args.insert(args.end(), extra.begin(), extra.end());
    return call(args);
  }
};

std::vector<std::vector<std::string>> csv_rows(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help exits 0 and unknown flags do not") {
    const Outcome help = call({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("train") != std::string::npos);
    CHECK(help.out.find(cli::kOutDirEnv) != std::string::npos);
    CHECK(call({"train", "--help"}).code == 0);
    CHECK(call({"gen", "two-moons", "--bogus"}).code != 0);
    CHECK(call({}).code != 0);
    CHECK(call({"gen", "spirals"}).code == cli::kExitValidation);
    CHECK(call({"gen", "two-moons", "--classes", "3"}).code == cli::kExitValidation);
  }

  TEST_CASE("gen is deterministic and its histogram survives a reload") {
    const auto dir = testing::scratch_dir("cli-gen");
    for (const char* name : {"a.csv", "b.csv"}) {
      REQUIRE(call({"gen", "gaussian", "--classes", "3", "--n-per-class", "20", "--mean-shift", "0,1,2", "--seed", "7",
                    "--out", (dir / name).string()})
                  .code == 0);
    }
    CHECK(reports::read_text(dir / "a.csv") == reports::read_text(dir / "b.csv"));
    CHECK(reports::read_text(dir / "a.csv.meta.json") == reports::read_text(dir / "b.csv.meta.json"));
    const auto split = data::load_csv(dir / "a.csv");
    const auto h = data::class_histogram(split.source);
    REQUIRE(h.size() == 3);
    for (const auto& [label, count] : h) CHECK(count == 20);
  }

  TEST_CASE("config problems exit 2 and name the key") {
    const Fixture fx("cli-config");
    json doc = tiny_config();
    doc.erase("seed");
    doc["lr"] = 0.1;
    const auto cfg = write_json(fx.dir / "bad.json", doc);
    const Outcome r = call({"train", "--config", cfg.string(), "--data", fx.data.string(), "--out",
                            (fx.dir / "run").string(), "--quiet"});
    CHECK(r.code == cli::kExitValidation);
    CHECK(r.err.find("seed: missing required key") != std::string::npos);
    CHECK(r.err.find("lr: unknown key") != std::string::npos);
    CHECK(fx.train(fx.dir / "run", {"--ablate", "magic"}).code == cli::kExitValidation);
  }

  TEST_CASE("missing files exit 4") {
    const Fixture fx("cli-io");
    CHECK(call({"train", "--config", (fx.dir / "nope.json").string(), "--data", fx.data.string(), "--quiet"}).code ==
          cli::kExitIo);
    CHECK(call({"eval", "--checkpoint", (fx.dir / "nope.ckpt").string(), "--data", fx.data.string()}).code ==
          cli::kExitIo);
  }

  TEST_CASE("train artifacts, eval agreement and the zero budget") {
    const Fixture fx("cli-train");
    const fs::path run = fx.dir / "run";
    REQUIRE(fx.train(run).code == 0);
    for (const char* f : {"metrics.json", "losses.csv", "geometry.csv", "model.ckpt", "manifest.json"})
      CHECK(fs::exists(run / f));

    const auto losses = csv_rows(run / "losses.csv");
    CHECK(losses.size() == 3);
    CHECK(losses[0] == std::vector<std::string>{"epoch", "cls", "rec", "orth", "on", "off", "con", "total"});

    const Outcome ev = call({"eval", "--checkpoint", (run / "model.ckpt").string(), "--data", fx.data.string()});
    REQUIRE(ev.code == 0);
    CHECK(ev.out == reports::read_text(run / "metrics.json"));

    const Outcome zero = call(
        {"eval", "--checkpoint", (run / "model.ckpt").string(), "--data", fx.data.string(), "--budget", "0"});
    REQUIRE(zero.code == 0);
    const json m = json::parse(zero.out);
    CHECK(m.at("target_robust_accuracy") == m.at("target_accuracy"));
    CHECK(m.at("pgd_budget") == 0.0);

    CHECK(call({"eval", "--checkpoint", (run / "model.ckpt").string(), "--data", fx.data.string(), "--budget", "-1"})
              .code == cli::kExitValidation);
  }

  TEST_CASE("the adaptive ablation flattens alpha and beta") {
    const Fixture fx("cli-ablate");
    REQUIRE(fx.train(fx.dir / "run", {"--ablate", "adaptive"}).code == 0);
    const auto rows = csv_rows(fx.dir / "run" / "geometry.csv");
    REQUIRE(rows.size() > 1);
    CHECK(rows[0][4] == "alpha_c");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      CHECK(std::stod(rows[i][4]) == 0.5);
      CHECK(std::stod(rows[i][5]) == 0.5);
    }
  }

  TEST_CASE("repeated training is byte-identical") {
    const Fixture fx("cli-repeat");
    REQUIRE(fx.train(fx.dir / "a").code == 0);
    REQUIRE(fx.train(fx.dir / "b").code == 0);
    for (const char* f : {"metrics.json", "losses.csv", "geometry.csv", "model.ckpt", "manifest.json"})
      CHECK(reports::read_text(fx.dir / "a" / f) == reports::read_text(fx.dir / "b" / f));
    const json manifest = json::parse(reports::read_text(fx.dir / "a" / "manifest.json"));
    CHECK(manifest.at("seed") == 1);
    CHECK(manifest.at("dataset").at("generator") == "two-moons");
  }

  TEST_CASE("probe and export schemas") {
    const Fixture fx("cli-probe");
    REQUIRE(fx.train(fx.dir / "run").code == 0);
    const std::string ckpt = (fx.dir / "run" / "model.ckpt").string();
    REQUIRE(call({"probe", "--checkpoint", ckpt, "--data", fx.data.string(), "--out", (fx.dir / "probe").string()})
                .code == 0);
    const auto rows = csv_rows(fx.dir / "probe" / "probe.csv");
    CHECK(rows[0] == std::vector<std::string>{"class", "K_c", "G_c", "alpha_c", "beta_c", "n_source", "n_target",
                                              "K_fallback", "G_fallback", "C_c", "gamma_c"});
    CHECK(rows.size() == 3);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      CHECK(std::stod(rows[i][1]) >= 1.0);
      const double c = std::stod(rows[i][9]);
      CHECK(c >= 0.0);
      CHECK(c <= 2.0);
    }
    CHECK(fs::exists(fx.dir / "probe" / "diagnostics.json"));

    REQUIRE(call({"export", "--checkpoint", ckpt, "--data", fx.data.string(), "--out", (fx.dir / "emb.csv").string()})
                .code == 0);
    const auto emb = csv_rows(fx.dir / "emb.csv");
    CHECK(emb.size() == 129);
    CHECK(emb[0].front() == "domain");
    CHECK(emb[0].back() == "pca_y");
  }

  TEST_CASE("a dataset that does not fit the checkpoint is rejected") {
    const Fixture fx("cli-mismatch");
    REQUIRE(fx.train(fx.dir / "run").code == 0);
    const fs::path other = fx.dir / "g.csv";
    REQUIRE(call({"gen", "gaussian", "--dims", "3", "--n-per-class", "8", "--out", other.string()}).code == 0);
    CHECK(call({"eval", "--checkpoint", (fx.dir / "run" / "model.ckpt").string(), "--data", other.string()}).code ==
          cli::kExitValidation);
  }

  TEST_CASE("the environment variable sets the default output directory") {
    const auto dir = testing::scratch_dir("cli-env");
    ::setenv(cli::kOutDirEnv, dir.string().c_str(), 1);
    CHECK(cli::default_out_dir() == dir);
    const Outcome r = call({"gen", "two-moons", "--n", "16"});
    ::unsetenv(cli::kOutDirEnv);
    CHECK(r.code == 0);
    CHECK(fs::exists(dir / "two-moons.csv"));
    CHECK(cli::default_out_dir() == fs::path("geoadapt-out"));
  }
}
