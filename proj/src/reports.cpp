#include "geoadapt/reports.hpp"

#include <fstream>
#include <iterator>

#include "geoadapt/config.hpp"
#include "geoadapt/errors.hpp"

namespace geoadapt::reports {
namespace {

using nlohmann::json;
using data::format_double;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string geometry_cells(const train::ClassGeometry& g) {
  return std::to_string(g.label) + "," + format_double(g.curvature) + "," + format_double(g.residual) + "," +
         format_double(g.alpha) + "," + format_double(g.beta) + "," + std::to_string(g.n_source) + "," +
         std::to_string(g.n_target) + "," + (g.curvature_fallback ? "1" : "0") + "," +
         (g.residual_fallback ? "1" : "0");
}

}  // namespace

std::string loss_series_csv(std::span<const train::EpochRecord> epochs) {
  std::string out = "epoch,cls,rec,orth,on,off,con,total\n";
  for (const auto& e : epochs) {
    const auto& t = e.mean_loss.terms;
    out += std::to_string(e.epoch);
    for (double v : {t.cls, t.rec, t.orth, t.on, t.off, t.con, e.mean_loss.total}) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

std::string geometry_csv(std::span<const train::GeometryRow> rows) {
  std::string out = "epoch,class,K_c,G_c,alpha_c,beta_c,n_source,n_target,K_fallback,G_fallback\n";
  for (const auto& r : rows) out += std::to_string(r.epoch) + "," + geometry_cells(r.geometry) + "\n";
  return out;
}

std::string probe_csv(std::span<const train::ClassGeometry> geometry, const diagnostics::MetricsReport& metrics) {
  std::string out = "class,K_c,G_c,alpha_c,beta_c,n_source,n_target,K_fallback,G_fallback,C_c,gamma_c\n";
  for (const auto& g : geometry) {
    out += geometry_cells(g);
    const diagnostics::ClassDiagnostics* d = nullptr;
    for (const auto& c : metrics.classes) {
      if (c.label == g.label) d = &c;
    }
    out += ",";
    if (d != nullptr && d->consistency) out += format_double(*d->consistency);
    out += ",";
    if (d != nullptr && d->robustness_margin) out += format_double(*d->robustness_margin);
    out += "\n";
  }
  return out;
}

json metrics_json(const diagnostics::MetricsReport& m) {
  json classes = json::array();
  for (const auto& c : m.classes) {
    classes.push_back({{"class", c.label},
                       {"C_c", optional_number(c.consistency)},
                       {"gamma_c", optional_number(c.robustness_margin)},
                       {"beta_c", c.beta}});
  }
  return {{"source_accuracy", m.source_accuracy},
          {"target_accuracy", optional_number(m.target_accuracy)},
          {"target_robust_accuracy", optional_number(m.target_robust_accuracy)},
          {"pgd_budget", m.pgd_budget},
          {"pgd_steps", m.pgd_steps},
          {"nuisance_sensitivity", {{"cls_only", m.nuisance.cls_only}, {"cls_rec", m.nuisance.cls_rec}}},
          {"div_sem_bound", m.div_sem_bound},
          {"classes", classes}};
}

json dataset_meta_json(const data::DatasetMeta& meta) {
  return {{"generator", meta.generator},
          {"seed", meta.seed},
          {"num_classes", meta.num_classes},
          {"dim", meta.dim},
          {"params", meta.params}};
}

data::DatasetMeta dataset_meta_from(const json& doc) {
  try {
    data::DatasetMeta meta;
    meta.generator = doc.at("generator").get<std::string>();
    meta.seed = doc.at("seed").get<std::uint64_t>();
    meta.num_classes = doc.at("num_classes").get<std::size_t>();
    meta.dim = doc.at("dim").get<std::size_t>();
    meta.params = doc.at("params").get<std::map<std::string, std::string>>();
    return meta;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("dataset metadata: ") + e.what());
  }
}

json manifest_json(const ManifestInputs& in) {
  json doc = {{"tool", "geoadapt"}, {"format_version", 1}, {"command", in.command}};
  if (in.config != nullptr) {
    doc["seed"] = in.config->seed;
    doc["config"] = config::to_json(*in.config);
    doc["config_hash"] = config::config_hash(*in.config);
  }
  if (in.split != nullptr) {
    json ds = dataset_meta_json(in.split->meta);
    ds["path"] = in.data_path;
    ds["content_hash"] = in.data_hash;
    ds["n_source"] = in.split->source.size();
    ds["n_target"] = in.split->target.size();
    doc["dataset"] = ds;
  }
  doc["artifacts"] = in.artifacts;
  return doc;
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace geoadapt::reports
