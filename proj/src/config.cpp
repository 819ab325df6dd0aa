#include "geoadapt/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "geoadapt/errors.hpp"

namespace geoadapt::config {
namespace {

using nlohmann::json;

/// Walks one JSON object, recording every schema problem instead of
/// stopping at the first.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  bool is_object() const { return obj_.is_object(); }

  template <typename T>
  void number(const std::string& key, T& out, bool required = false) {
    const json* v = find(key, required);
    if (v == nullptr) return;
    if constexpr (std::is_integral_v<T>) {
      // Literals built in code arrive as signed integers even when non-negative.
      const bool ok = v->is_number_integer() && (!std::is_unsigned_v<T> || v->is_number_unsigned() ||
                                                  v->get<std::int64_t>() >= 0);
      if (!ok) {
        errors_.push_back(where(key) + ": expected a non-negative integer");
        return;
      }
      out = v->get<T>();
    } else {
      if (!v->is_number()) {
        errors_.push_back(where(key) + ": expected a number");
        return;
      }
      out = v->get<T>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    const json* v = find(key, false);
    if (v == nullptr) return;
    if (!v->is_boolean()) {
      errors_.push_back(where(key) + ": expected true or false");
      return;
    }
    out = v->get<bool>();
  }

  const json* string(const std::string& key, bool required = false) {
    const json* v = find(key, required);
    if (v == nullptr) return nullptr;
    if (!v->is_string()) {
      errors_.push_back(where(key) + ": expected a string");
      return nullptr;
    }
    return v;
  }

  void sizes(const std::string& key, std::vector<std::size_t>& out) {
    const json* v = find(key, false);
    if (v == nullptr) return;
    if (!v->is_array()) {
      errors_.push_back(where(key) + ": expected an array of positive integers");
      return;
    }
    std::vector<std::size_t> parsed;
    for (const auto& item : *v) {
      if (!item.is_number_unsigned()) {
        errors_.push_back(where(key) + ": expected an array of positive integers");
        return;
      }
      parsed.push_back(item.get<std::size_t>());
    }
    out = std::move(parsed);
  }

  std::optional<ObjectReader> object(const std::string& key) {
    const json* v = find(key, false);
    if (v == nullptr) return std::nullopt;
    if (!v->is_object()) {
      errors_.push_back(where(key) + ": expected an object");
      return std::nullopt;
    }
    return ObjectReader(*v, where(key), errors_);
  }

  /// Reports keys never looked at.
  void finish() {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) errors_.push_back(where(key) + ": unknown key");
    }
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::vector<std::string>& errors() { return errors_; }

 private:
  const json* find(const std::string& key, bool required) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) {
      if (required) errors_.push_back(where(key) + ": missing required key");
      return nullptr;
    }
    return &*it;
  }

  const json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

std::optional<losses::Divergence> parse_divergence(const std::string& s) {
  if (s == "kl") return losses::Divergence::kKl;
  if (s == "l2") return losses::Divergence::kSquaredL2;
  return std::nullopt;
}

const char* divergence_name(losses::Divergence d) { return d == losses::Divergence::kKl ? "kl" : "l2"; }

const char* residual_name(geometry::ResidualMode m) {
  return m == geometry::ResidualMode::kCentroid ? "centroid" : "mean_pairwise";
}

bool* ablation_flag(train::AblationFlags& flags, const std::string& name) {
  if (name == "disentangle") return &flags.disentangle;
  if (name == "adaptive") return &flags.adaptive;
  if (name == "contrastive") return &flags.contrastive;
  if (name == "off_manifold") return &flags.off_manifold;
  if (name == "on_manifold") return &flags.on_manifold;
  return nullptr;
}

}  // namespace

train::TrainConfig from_json(const json& doc) {
  train::TrainConfig cfg;
  std::vector<std::string> errors;
  if (!doc.is_object()) throw ValidationError("invalid configuration:\n  - top level must be a JSON object");
  ObjectReader top(doc, "", errors);

  top.number("seed", cfg.seed, true);
  top.number("epochs", cfg.epochs, true);
  if (const json* p = top.string("protocol", true)) {
    try {
      cfg.protocol = data::Protocol::parse(p->get<std::string>());
    } catch (const ValidationError& e) {
      errors.push_back(std::string("protocol: ") + e.what());
    }
  }
  top.number("learning_rate", cfg.learning_rate);
  top.number("batch_size", cfg.batch_size);
  top.number("temperature", cfg.temperature);
  top.number("base_alpha", cfg.base_alpha);
  top.number("base_beta", cfg.base_beta);
  top.number("pseudo_label_threshold", cfg.pseudo_label_threshold);
  top.number("warmup_epochs", cfg.warmup_epochs);
  for (const char* key : {"on_form", "off_form"}) {
    if (const json* v = top.string(key)) {
      const auto d = parse_divergence(v->get<std::string>());
      if (!d) {
        errors.push_back(std::string(key) + ": expected \"kl\" or \"l2\"");
      } else {
        (std::string(key) == "on_form" ? cfg.on_form : cfg.off_form) = *d;
      }
    }
  }

  if (auto w = top.object("weights")) {
    w->number("rec", cfg.weights.rec);
    w->number("orth", cfg.weights.orth);
    w->number("adv", cfg.weights.adv);
    w->number("con", cfg.weights.con);
    w->finish();
  }
  if (auto a = top.object("ablate")) {
    for (const char* name : kAblationNames) a->boolean(name, *ablation_flag(cfg.ablate, name));
    a->finish();
  }
  if (auto g = top.object("geometry")) {
    g->number("neighbors", cfg.geometry.neighbors);
    g->number("tangent_dim", cfg.geometry.tangent_dim);
    g->number("variance_threshold", cfg.geometry.variance_threshold);
    g->number("epsilon", cfg.geometry.epsilon);
    g->number("eigen_floor", cfg.geometry.eigen_floor);
    g->number("direction_floor", cfg.geometry.direction_floor);
    if (const json* r = g->string("residual")) {
      const std::string s = r->get<std::string>();
      if (s == "centroid") {
        cfg.geometry.residual = geometry::ResidualMode::kCentroid;
      } else if (s == "mean_pairwise") {
        cfg.geometry.residual = geometry::ResidualMode::kMeanPairwise;
      } else {
        errors.push_back("geometry.residual: expected \"centroid\" or \"mean_pairwise\"");
      }
    }
    g->finish();
  }
  if (auto m = top.object("model")) {
    m->sizes("encoder_hidden", cfg.encoder_hidden);
    m->sizes("decoder_hidden", cfg.decoder_hidden);
    m->number("latent_dim", cfg.latent_dim);
    m->number("semantic_dim", cfg.semantic_dim);
    m->finish();
  }
  if (auto e = top.object("eval")) {
    e->number("pgd_budget", cfg.eval.pgd_budget);
    e->number("pgd_steps", cfg.eval.pgd_steps);
    e->number("margin_probes", cfg.eval.margin_probes);
    e->finish();
  }
  top.finish();

  for (auto& p : cfg.problems()) errors.push_back(std::move(p));
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  return cfg;
}

train::TrainConfig load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ValidationError("invalid configuration:\n  - " + path.string() + ": malformed JSON (" + e.what() + ")");
  }
  return from_json(doc);
}

json to_json(const train::TrainConfig& c) {
  json ablate = json::object();
  train::AblationFlags flags = c.ablate;
  for (const char* name : kAblationNames) ablate[name] = *ablation_flag(flags, name);
  return json{
      {"seed", c.seed},
      {"epochs", c.epochs},
      {"protocol", c.protocol.name()},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"temperature", c.temperature},
      {"base_alpha", c.base_alpha},
      {"base_beta", c.base_beta},
      {"pseudo_label_threshold", c.pseudo_label_threshold},
      {"warmup_epochs", c.warmup_epochs},
      {"on_form", divergence_name(c.on_form)},
      {"off_form", divergence_name(c.off_form)},
      {"weights", {{"rec", c.weights.rec}, {"orth", c.weights.orth}, {"adv", c.weights.adv}, {"con", c.weights.con}}},
      {"ablate", ablate},
      {"geometry",
       {{"neighbors", c.geometry.neighbors},
        {"tangent_dim", c.geometry.tangent_dim},
        {"variance_threshold", c.geometry.variance_threshold},
        {"epsilon", c.geometry.epsilon},
        {"eigen_floor", c.geometry.eigen_floor},
        {"direction_floor", c.geometry.direction_floor},
        {"residual", residual_name(c.geometry.residual)}}},
      {"model",
       {{"encoder_hidden", c.encoder_hidden},
        {"decoder_hidden", c.decoder_hidden},
        {"latent_dim", c.latent_dim},
        {"semantic_dim", c.semantic_dim}}},
      {"eval",
       {{"pgd_budget", c.eval.pgd_budget}, {"pgd_steps", c.eval.pgd_steps}, {"margin_probes", c.eval.margin_probes}}},
  };
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string config_hash(const train::TrainConfig& config) { return hex64(fnv1a64(to_json(config).dump())); }

void apply_ablation(train::TrainConfig& config, const std::string& name) {
  bool* flag = ablation_flag(config.ablate, name);
  if (flag == nullptr) {
    std::string known;
    for (const char* n : kAblationNames) known += std::string(known.empty() ? "" : ", ") + n;
    throw ValidationError("unknown ablation '" + name + "' (expected one of: " + known + ")");
  }
  *flag = false;
}

}  // namespace geoadapt::config
