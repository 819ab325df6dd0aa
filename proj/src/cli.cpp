#include "geoadapt/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geoadapt/checkpoint.hpp"
#include "geoadapt/config.hpp"
#include "geoadapt/diagnostics.hpp"
#include "geoadapt/errors.hpp"
#include "geoadapt/reports.hpp"
#include "geoadapt/synthdata.hpp"
#include "geoadapt/trainer.hpp"

namespace geoadapt::cli {
namespace fs = std::filesystem;

std::filesystem::path default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return (env != nullptr && *env != '\0') ? fs::path(env) : fs::path("geoadapt-out");
}

namespace {

void ensure_parent(const fs::path& file) {
  const fs::path parent = file.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

fs::path meta_path(const fs::path& csv) { return fs::path(csv.string() + ".meta.json"); }

/// Loads a dataset CSV plus its sidecar metadata when present.
data::DatasetSplit load_dataset(const fs::path& path) {
  data::DatasetSplit split = data::load_csv(path);
  const fs::path meta = meta_path(path);
  if (fs::exists(meta)) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(reports::read_text(meta));
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(meta.string() + ": malformed JSON (" + e.what() + ")");
    }
    data::DatasetMeta parsed = reports::dataset_meta_from(doc);
    if (parsed.dim != split.dim()) throw ValidationError(meta.string() + ": dim disagrees with the CSV");
    if (parsed.num_classes < split.meta.num_classes) {
      throw ValidationError(meta.string() + ": num_classes is smaller than the labels in the CSV");
    }
    split.meta = std::move(parsed);
  }
  return split;
}

struct GenOptions {
  std::string generator;
  std::string out;
  std::uint64_t seed = 0;
  data::TwoMoonsParams moons;
  data::GaussianShiftParams gauss;
};

struct TrainOptions {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> ablate;
  bool quiet = false;
};

struct CheckpointOptions {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::optional<double> budget;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> probes;
};

void reject_options(const CLI::App& app, const std::vector<std::string>& names, const std::string& generator) {
  for (const auto& name : names) {
    if (app.count(name) > 0) throw ValidationError("option " + name + " does not apply to generator " + generator);
  }
}

int cmd_gen(const GenOptions& o, const CLI::App& app, std::ostream& out) {
  static const std::vector<std::string> moons_only{"--rotation", "--noise", "--nuisance-dims", "--n"};
  static const std::vector<std::string> gauss_only{"--classes",    "--dims",      "--n-per-class", "--separation",
                                                   "--anisotropy", "--mean-shift", "--cov-scale"};
  data::DatasetSplit split;
  if (o.generator == "two-moons") {
    reject_options(app, gauss_only, o.generator);
    data::TwoMoonsParams p = o.moons;
    p.seed = o.seed;
    split = data::gen_two_moons_shift(p);
  } else if (o.generator == "gaussian") {
    reject_options(app, moons_only, o.generator);
    data::GaussianShiftParams p = o.gauss;
    p.seed = o.seed;
    split = data::gen_gaussian_shift(p);
  } else {
    throw ValidationError("unknown generator '" + o.generator + "' (expected two-moons or gaussian)");
  }
  const fs::path path = o.out.empty() ? default_out_dir() / (o.generator + ".csv") : fs::path(o.out);
  ensure_parent(path);
  data::save_csv(split, path);
  reports::write_text(meta_path(path), reports::dump(reports::dataset_meta_json(split.meta)));
  out << "wrote " << path.string() << "\n";
  return kExitOk;
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  train::TrainConfig cfg = config::load(o.config);
  for (const auto& name : o.ablate) config::apply_ablation(cfg, name);
  cfg.validate();
  const data::DatasetSplit split = load_dataset(o.data);
  const fs::path dir = o.out.empty() ? default_out_dir() / "run" : fs::path(o.out);
  ensure_dir(dir);

  const train::RunResult result =
      train::run(cfg, split, [&](const train::EpochRecord& e, const ModelParams&) {
        if (o.quiet) return;
        err << "epoch " << e.epoch << " total " << data::format_double(e.mean_loss.total) << " pseudo_coverage "
            << data::format_double(e.pseudo_coverage) << "\n";
      });

  reports::ManifestInputs manifest;
  manifest.command = "train";
  manifest.data_path = o.data;
  manifest.data_hash = config::hex64(config::fnv1a64(reports::read_text(o.data)));
  manifest.split = &split;
  manifest.config = &cfg;
  manifest.artifacts = {"manifest.json", "metrics.json", "losses.csv", "geometry.csv", "model.ckpt"};

  reports::write_text(dir / "metrics.json", reports::dump(reports::metrics_json(result.metrics)));
  reports::write_text(dir / "losses.csv", reports::loss_series_csv(result.epochs));
  reports::write_text(dir / "geometry.csv", reports::geometry_csv(result.geometry_report));
  checkpoint::save(dir / "model.ckpt", result.params, cfg);
  reports::write_text(dir / "manifest.json", reports::dump(reports::manifest_json(manifest)));
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

/// Checkpoint config with any command-line evaluation overrides applied.
train::TrainConfig eval_config(const checkpoint::Checkpoint& ck, const CheckpointOptions& o) {
  train::TrainConfig cfg = ck.config;
  if (o.budget) cfg.eval.pgd_budget = *o.budget;
  if (o.steps) cfg.eval.pgd_steps = *o.steps;
  if (o.probes) cfg.eval.margin_probes = *o.probes;
  cfg.validate();
  return cfg;
}

void check_compatible(const ModelParams& params, const data::DatasetSplit& split) {
  if (params.spec.input_dim != split.dim()) {
    throw ValidationError("dataset has " + std::to_string(split.dim()) + " features but the checkpoint expects " +
                          std::to_string(params.spec.input_dim));
  }
  for (const auto* domain : {&split.source, &split.target}) {
    for (int l : domain->labels) {
      if (l >= static_cast<int>(params.spec.num_classes)) {
        throw ValidationError("dataset label " + std::to_string(l) + " exceeds the checkpoint's class count");
      }
    }
  }
}

int cmd_eval(const CheckpointOptions& o, std::ostream& out) {
  const checkpoint::Checkpoint ck = checkpoint::load(o.checkpoint);
  const train::TrainConfig cfg = eval_config(ck, o);
  const data::DatasetSplit split = load_dataset(o.data);
  check_compatible(ck.params, split);
  const std::string text = reports::dump(reports::metrics_json(train::evaluate_params(ck.params, split, cfg)));
  if (o.out.empty()) {
    out << text;
  } else {
    ensure_parent(o.out);
    reports::write_text(o.out, text);
  }
  return kExitOk;
}

int cmd_probe(const CheckpointOptions& o, std::ostream& out) {
  const checkpoint::Checkpoint ck = checkpoint::load(o.checkpoint);
  const train::TrainConfig cfg = eval_config(ck, o);
  const data::DatasetSplit split = load_dataset(o.data);
  check_compatible(ck.params, split);
  std::vector<train::ClassGeometry> geometry;
  const auto metrics = train::evaluate_params(ck.params, split, cfg, &geometry);
  const fs::path dir = o.out.empty() ? default_out_dir() / "probe" : fs::path(o.out);
  ensure_dir(dir);
  reports::write_text(dir / "probe.csv", reports::probe_csv(geometry, metrics));
  reports::write_text(dir / "diagnostics.json", reports::dump(reports::metrics_json(metrics)));
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

int cmd_export(const CheckpointOptions& o, std::ostream& out) {
  const checkpoint::Checkpoint ck = checkpoint::load(o.checkpoint);
  const data::DatasetSplit split = load_dataset(o.data);
  check_compatible(ck.params, split);
  const auto pseudo =
      train::assign_pseudo_labels(ck.params, split.target.features, ck.config.pseudo_label_threshold);
  const fs::path path = o.out.empty() ? default_out_dir() / "embeddings.csv" : fs::path(o.out);
  ensure_parent(path);
  diagnostics::export_embeddings(ck.params, split, pseudo.label, path);
  out << "wrote " << path.string() << "\n";
  return kExitOk;
}

void add_checkpoint_options(CLI::App& sub, CheckpointOptions& o, bool eval_overrides) {
  sub.add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")->required();
  sub.add_option("--data", o.data, "Dataset CSV")->required();
  if (eval_overrides) {
    sub.add_option("--budget", o.budget, "PGD L-infinity budget (default: from the checkpoint config)");
    sub.add_option("--steps", o.steps, "PGD iterations (default: from the checkpoint config)");
    sub.add_option("--probes", o.probes, "Random probe directions for gamma_c (default: from the checkpoint config)");
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Geometry-aware domain adaptation on synthetic shifts", "geoadapt"};
  app.require_subcommand(1);
  app.footer(std::string("Environment: ") + kOutDirEnv +
             " sets the default output directory (default: geoadapt-out).\n"
             "Exit codes: 0 success, 2 validation error, 3 runtime or numeric error, 4 I/O error.");

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic source/target dataset CSV");
  gen_cmd->add_option("generator", gen.generator, "two-moons or gaussian")->required();
  gen_cmd->add_option("--out", gen.out, "Output CSV path (default: $GEOADAPT_OUT_DIR/<generator>.csv)");
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--n", gen.moons.n, "two-moons: samples per domain (even)")->capture_default_str();
  gen_cmd->add_option("--rotation", gen.moons.rotation_deg, "two-moons: target rotation in degrees")
      ->capture_default_str();
  gen_cmd->add_option("--noise", gen.moons.noise_std, "two-moons: Gaussian noise std")->capture_default_str();
  gen_cmd->add_option("--nuisance-dims", gen.moons.nuisance_dims, "two-moons: appended N(0,1) coordinates")
      ->capture_default_str();
  gen_cmd->add_option("--classes", gen.gauss.classes, "gaussian: number of classes")->capture_default_str();
  gen_cmd->add_option("--dims", gen.gauss.dims, "gaussian: feature dimension")->capture_default_str();
  gen_cmd->add_option("--n-per-class", gen.gauss.n_per_class, "gaussian: samples per class and domain")
      ->capture_default_str();
  gen_cmd->add_option("--separation", gen.gauss.class_separation, "gaussian: spacing of class means")
      ->capture_default_str();
  gen_cmd->add_option("--anisotropy", gen.gauss.anisotropy,
                      "gaussian: per-class variance ratio along the last axis, comma-separated")
      ->delimiter(',');
  gen_cmd->add_option("--mean-shift", gen.gauss.mean_shift,
                      "gaussian: per-class target mean shift, comma-separated")
      ->delimiter(',');
  gen_cmd->add_option("--cov-scale", gen.gauss.cov_scale,
                      "gaussian: per-class target covariance scale, comma-separated")
      ->delimiter(',');

  TrainOptions tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write run artifacts");
  train_cmd->add_option("--config", tr.config, "JSON config file")->required();
  train_cmd->add_option("--data", tr.data, "Dataset CSV")->required();
  train_cmd->add_option("--out", tr.out, "Output directory (default: $GEOADAPT_OUT_DIR/run)");
  train_cmd->add_option("--ablate", tr.ablate,
                        "Switch a mechanism off; repeatable: disentangle, adaptive, contrastive, off_manifold, "
                        "on_manifold");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  CheckpointOptions ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and print metrics JSON");
  add_checkpoint_options(*eval_cmd, ev, true);
  eval_cmd->add_option("--out", ev.out, "Write metrics JSON here instead of stdout");

  CheckpointOptions pr;
  CLI::App* probe_cmd = app.add_subcommand("probe", "Write per-class geometry and diagnostics for a checkpoint");
  add_checkpoint_options(*probe_cmd, pr, true);
  probe_cmd->add_option("--out", pr.out, "Output directory (default: $GEOADAPT_OUT_DIR/probe)");

  CheckpointOptions ex;
  CLI::App* export_cmd = app.add_subcommand("export", "Export semantic embeddings with a 2-D PCA projection");
  add_checkpoint_options(*export_cmd, ex, false);
  export_cmd->add_option("--out", ex.out, "Output CSV (default: $GEOADAPT_OUT_DIR/embeddings.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen, *gen_cmd, out);
    if (*train_cmd) return cmd_train(tr, out, err);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*probe_cmd) return cmd_probe(pr, out);
    if (*export_cmd) return cmd_export(ex, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ProtocolError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace geoadapt::cli
