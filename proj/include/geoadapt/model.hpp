#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "geoadapt/tape.hpp"
#include "geoadapt/tensor.hpp"

namespace geoadapt {

/// Layer layout of the encoder / decoder / classifier triple.
///
/// The latent code z has `latent_dim` coordinates; the first `semantic_dim`
/// form z_y and the remainder z_n. The classifier reads z_y only; the
/// decoder reads all of z.
struct ModelSpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::size_t latent_dim = 16;
  std::size_t semantic_dim = 8;
  std::vector<std::size_t> decoder_hidden{64, 64};
  std::size_t num_classes = 2;

  std::size_t nuisance_dim() const noexcept { return latent_dim - semantic_dim; }
  /// Throws ValidationError on inconsistent sizes.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct DenseLayer {
  Tensor weight;  // [fan_in, fan_out]
  Tensor bias;    // [1, fan_out]

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelParams {
  ModelSpec spec;
  std::uint64_t seed = 0;
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;
  std::vector<DenseLayer> classifier;

  /// Stable parameter names ("encoder.0.weight", ...) in a fixed order.
  std::vector<std::string> names() const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Weights drawn from N(0, 1/fan_in), biases zero; a pure function of
/// (spec, seed).
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

/// Model parameters registered as named tape inputs.
struct BoundModel {
  const ModelSpec* spec = nullptr;
  std::vector<std::pair<diff::Var, diff::Var>> encoder;
  std::vector<std::pair<diff::Var, diff::Var>> decoder;
  std::vector<std::pair<diff::Var, diff::Var>> classifier;
};

BoundModel bind(diff::Tape& tape, const ModelParams& params);

/// Latent batch on a tape, split positionally into semantic and nuisance parts.
struct LatentVars {
  diff::Var z;
  diff::Var semantic;
  diff::Var nuisance;  // invalid when the nuisance part is empty
};

LatentVars split_latent(const ModelSpec& spec, diff::Var z);

diff::Var encode(const BoundModel& model, diff::Var x);
diff::Var decode(const BoundModel& model, diff::Var z);
/// Raw logits from z_y.
diff::Var classify(const BoundModel& model, diff::Var semantic);

/// Value-level latent batch.
struct LatentBatch {
  Tensor semantic;  // [batch, d_y]
  Tensor nuisance;  // [batch, d_n]
  Tensor full() const;
};

LatentBatch encode(const ModelParams& params, const Tensor& x);
Tensor decode(const ModelParams& params, const LatentBatch& z);
Tensor classify(const ModelParams& params, const Tensor& semantic);
Tensor predict_proba(const ModelParams& params, const Tensor& x);

}  // namespace geoadapt
