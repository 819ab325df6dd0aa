#include "geoadapt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "geoadapt/config.hpp"
#include "geoadapt/errors.hpp"

namespace geoadapt::checkpoint {
namespace {

using nlohmann::json;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

json spec_json(const ModelSpec& s) {
  return {{"input_dim", s.input_dim},       {"encoder_hidden", s.encoder_hidden}, {"latent_dim", s.latent_dim},
          {"semantic_dim", s.semantic_dim}, {"decoder_hidden", s.decoder_hidden}, {"num_classes", s.num_classes}};
}

ModelSpec spec_from(const json& j) {
  ModelSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
  s.latent_dim = j.at("latent_dim").get<std::size_t>();
  s.semantic_dim = j.at("semantic_dim").get<std::size_t>();
  s.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  return s;
}

}  // namespace

void save(const std::filesystem::path& path, const ModelParams& params, const train::TrainConfig& config) {
  json arrays = json::array();
  std::string payload;
  for (const auto& name : params.names()) {
    const Tensor& t = params.get(name);
    arrays.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}, {"count", t.size()}});
    for (double v : t.values()) put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }
  const json header = {{"format_version", kFormatVersion},
                       {"seed", params.seed},
                       {"config_hash", config::config_hash(config)},
                       {"model", spec_json(params.spec)},
                       {"config", config::to_json(config)},
                       {"arrays", arrays},
                       {"payload_bytes", payload.size()}};
  const std::string text = header.dump();

  std::string bytes(kMagic, sizeof kMagic);
  put_u64(bytes, text.size());
  bytes += text;
  bytes += payload;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string() + ": ";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IoError(where + "not a geoadapt checkpoint");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw IoError(where + "truncated header");

  Checkpoint ck;
  try {
    const json header = json::parse(bytes.substr(16, header_len));
    if (header.at("format_version").get<int>() != kFormatVersion) throw IoError(where + "unsupported format version");
    const std::size_t payload_start = 16 + header_len;
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (bytes.size() != payload_start + payload_bytes) throw IoError(where + "payload size mismatch");

    ck.config = config::from_json(header.at("config"));
    ck.config_hash = header.at("config_hash").get<std::string>();
    if (ck.config_hash != config::config_hash(ck.config)) throw IoError(where + "config hash mismatch");

    const ModelSpec spec = spec_from(header.at("model"));
    spec.validate();
    ck.params = init_params(spec, header.at("seed").get<std::uint64_t>());
    const auto names = ck.params.names();
    const auto& arrays = header.at("arrays");
    if (arrays.size() != names.size()) throw IoError(where + "array count does not match the model spec");
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto& a = arrays[k];
      Tensor& t = ck.params.get(names[k]);
      if (a.at("name").get<std::string>() != names[k] || a.at("shape").get<Shape>() != t.shape() ||
          a.at("count").get<std::size_t>() != t.size()) {
        throw IoError(where + "array '" + a.at("name").get<std::string>() + "' does not match the model spec");
      }
      const std::size_t offset = a.at("offset").get<std::size_t>();
      if (offset + 8 * t.size() > payload_bytes) throw IoError(where + "array '" + names[k] + "' out of bounds");
      for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = std::bit_cast<double>(get_u64(bytes.data() + payload_start + offset + 8 * i));
      }
    }
  } catch (const json::exception& e) {
    throw IoError(where + "malformed header (" + e.what() + ")");
  } catch (const ValidationError& e) {
    throw IoError(where + "invalid header (" + e.what() + ")");
  }
  return ck;
}

}  // namespace geoadapt::checkpoint
