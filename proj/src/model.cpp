#include "geoadapt/model.hpp"

#include <cmath>
#include <random>

#include "geoadapt/errors.hpp"

namespace geoadapt {
namespace {

std::vector<DenseLayer> make_stack(const std::vector<std::size_t>& sizes, std::mt19937_64& rng) {
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::size_t fan_in = sizes[i];
    const std::size_t fan_out = sizes[i + 1];
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = dist(rng);
    layers.push_back({Tensor::matrix(fan_in, fan_out, std::move(w)), Tensor::zeros({1, fan_out})});
  }
  return layers;
}

std::vector<std::size_t> chain(std::size_t first, const std::vector<std::size_t>& hidden, std::size_t last) {
  std::vector<std::size_t> sizes{first};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(last);
  return sizes;
}

diff::Var run_stack(const std::vector<std::pair<diff::Var, diff::Var>>& layers, diff::Var h,
                    std::size_t expected_width, const char* what) {
  if (h.cols() != expected_width) {
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(expected_width) +
                     ", got " + std::to_string(h.cols()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = matmul(h, layers[i].first) + layers[i].second;
    if (i + 1 < layers.size()) h = diff::tanh(h);
  }
  return h;
}

std::vector<std::pair<diff::Var, diff::Var>> bind_stack(diff::Tape& tape, const std::string& prefix,
                                                        const std::vector<DenseLayer>& layers) {
  std::vector<std::pair<diff::Var, diff::Var>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    out.emplace_back(tape.input(base + ".weight", layers[i].weight), tape.input(base + ".bias", layers[i].bias));
  }
  return out;
}

}  // namespace

void ModelSpec::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ValidationError(std::string("model: ") + what + " must be positive");
  };
  positive(input_dim, "input_dim");
  positive(latent_dim, "latent_dim");
  positive(semantic_dim, "semantic_dim");
  for (std::size_t h : encoder_hidden) positive(h, "encoder hidden size");
  for (std::size_t h : decoder_hidden) positive(h, "decoder hidden size");
  if (semantic_dim > latent_dim) {
    throw ValidationError("model: semantic_dim " + std::to_string(semantic_dim) + " exceeds latent_dim " +
                          std::to_string(latent_dim));
  }
  if (num_classes < 2) throw ValidationError("model: num_classes must be at least 2");
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  auto add = [&](const std::string& prefix, const std::vector<DenseLayer>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.push_back(prefix + "." + std::to_string(i) + ".weight");
      out.push_back(prefix + "." + std::to_string(i) + ".bias");
    }
  };
  add("encoder", encoder);
  add("decoder", decoder);
  add("classifier", classifier);
  return out;
}

Tensor& ModelParams::get(const std::string& name) {
  const auto first = name.find('.');
  const auto second = name.find('.', first + 1);
  if (first == std::string::npos || second == std::string::npos) {
    throw ValidationError("bad parameter name '" + name + "'");
  }
  const std::string group = name.substr(0, first);
  const std::size_t index = std::stoul(name.substr(first + 1, second - first - 1));
  const std::string part = name.substr(second + 1);
  std::vector<DenseLayer>* layers = group == "encoder"    ? &encoder
                                    : group == "decoder"  ? &decoder
                                    : group == "classifier" ? &classifier
                                                          : nullptr;
  if (layers == nullptr || index >= layers->size() || (part != "weight" && part != "bias")) {
    throw ValidationError("unknown parameter '" + name + "'");
  }
  return part == "weight" ? (*layers)[index].weight : (*layers)[index].bias;
}

const Tensor& ModelParams::get(const std::string& name) const {
  return const_cast<ModelParams*>(this)->get(name);
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams params;
  params.spec = spec;
  params.seed = seed;
  std::mt19937_64 rng(seed);
  params.encoder = make_stack(chain(spec.input_dim, spec.encoder_hidden, spec.latent_dim), rng);
  params.decoder = make_stack(chain(spec.latent_dim, spec.decoder_hidden, spec.input_dim), rng);
  params.classifier = make_stack({spec.semantic_dim, spec.num_classes}, rng);
  return params;
}

BoundModel bind(diff::Tape& tape, const ModelParams& params) {
  BoundModel model;
  model.spec = &params.spec;
  model.encoder = bind_stack(tape, "encoder", params.encoder);
  model.decoder = bind_stack(tape, "decoder", params.decoder);
  model.classifier = bind_stack(tape, "classifier", params.classifier);
  return model;
}

LatentVars split_latent(const ModelSpec& spec, diff::Var z) {
  if (z.cols() != spec.latent_dim) {
    throw ShapeError("latent width " + std::to_string(z.cols()) + " != " + std::to_string(spec.latent_dim));
  }
  LatentVars out;
  out.z = z;
  out.semantic = spec.nuisance_dim() == 0 ? z : diff::slice_cols(z, 0, spec.semantic_dim);
  if (spec.nuisance_dim() > 0) out.nuisance = diff::slice_cols(z, spec.semantic_dim, spec.latent_dim);
  return out;
}

diff::Var encode(const BoundModel& model, diff::Var x) {
  return run_stack(model.encoder, x, model.spec->input_dim, "encode");
}

diff::Var decode(const BoundModel& model, diff::Var z) {
  return run_stack(model.decoder, z, model.spec->latent_dim, "decode");
}

diff::Var classify(const BoundModel& model, diff::Var semantic) {
  return run_stack(model.classifier, semantic, model.spec->semantic_dim, "classify");
}

Tensor LatentBatch::full() const {
  if (nuisance.size() == 0) return semantic;
  Tensor out = Tensor::zeros({semantic.rows(), semantic.cols() + nuisance.cols()});
  for (std::size_t r = 0; r < semantic.rows(); ++r) {
    for (std::size_t c = 0; c < semantic.cols(); ++c) out.at(r, c) = semantic.at(r, c);
    for (std::size_t c = 0; c < nuisance.cols(); ++c) out.at(r, semantic.cols() + c) = nuisance.at(r, c);
  }
  return out;
}

LatentBatch encode(const ModelParams& params, const Tensor& x) {
  diff::Tape tape;
  const BoundModel model = bind(tape, params);
  const LatentVars z = split_latent(params.spec, encode(model, tape.constant(x)));
  LatentBatch out;
  out.semantic = z.semantic.value();
  out.nuisance = z.nuisance.valid() ? z.nuisance.value() : Tensor::zeros({x.rows(), 0});
  return out;
}

Tensor decode(const ModelParams& params, const LatentBatch& z) {
  diff::Tape tape;
  const BoundModel model = bind(tape, params);
  return decode(model, tape.constant(z.full())).value();
}

Tensor classify(const ModelParams& params, const Tensor& semantic) {
  diff::Tape tape;
  const BoundModel model = bind(tape, params);
  return classify(model, tape.constant(semantic)).value();
}

Tensor predict_proba(const ModelParams& params, const Tensor& x) {
  diff::Tape tape;
  const BoundModel model = bind(tape, params);
  const LatentVars z = split_latent(params.spec, encode(model, tape.constant(x)));
  return diff::softmax_rows(classify(model, z.semantic)).value();
}

}  // namespace geoadapt
