#include "geoadapt/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "geoadapt/errors.hpp"

namespace geoadapt::data {
namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<double> per_class(const std::vector<double>& values, std::size_t classes, double fallback,
                              const char* what) {
  if (values.empty()) return std::vector<double>(classes, fallback);
  if (values.size() != classes) {
    throw ValidationError(std::string("gen_gaussian_shift: ") + what + " needs " + std::to_string(classes) +
                          " entries, got " + std::to_string(values.size()));
  }
  return values;
}

std::string join(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ";";
    out += format_double(values[i]);
  }
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ValidationError("cannot format number");
  return std::string(buf, end);
}

DatasetSplit gen_two_moons_shift(const TwoMoonsParams& p) {
  if (p.n < 4) throw ValidationError("gen_two_moons_shift: n must be at least 4");
  if (p.n % 2 != 0) throw ValidationError("gen_two_moons_shift: n must be even for exact class balance");
  if (!(p.noise_std >= 0.0) || !std::isfinite(p.noise_std)) {
    throw ValidationError("gen_two_moons_shift: noise_std must be >= 0");
  }
  if (!std::isfinite(p.rotation_deg)) throw ValidationError("gen_two_moons_shift: rotation must be finite");

  const std::size_t dim = 2 + p.nuisance_dims;
  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  // Midpoint of the standard moon pair, so both moons sit around the origin.
  const double cx = 0.5;
  const double cy = 0.25;

  std::mt19937_64 rng = seeded(p.seed, 1);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> unit(0.0, 1.0);

  std::vector<double> src(p.n * dim);
  std::vector<double> tgt(p.n * dim);
  std::vector<int> labels(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = angle(rng);
    const double bx = label == 0 ? std::cos(t) - cx : 1.0 - std::cos(t) - cx;
    const double by = label == 0 ? std::sin(t) - cy : 0.5 - std::sin(t) - cy;
    const double nx = p.noise_std * unit(rng);
    const double ny = p.noise_std * unit(rng);
    double* s = &src[i * dim];
    double* g = &tgt[i * dim];
    s[0] = bx + nx;
    s[1] = by + ny;
    g[0] = cs * bx - sn * by + nx;
    g[1] = sn * bx + cs * by + ny;
    for (std::size_t k = 0; k < p.nuisance_dims; ++k) {
      const double v = unit(rng);
      s[2 + k] = v;
      g[2 + k] = v;
    }
    labels[i] = label;
  }

  DatasetSplit split;
  split.source = {Tensor::matrix(p.n, dim, std::move(src)), labels};
  split.target = {Tensor::matrix(p.n, dim, std::move(tgt)), labels};
  split.meta.generator = "two-moons";
  split.meta.seed = p.seed;
  split.meta.num_classes = 2;
  split.meta.dim = dim;
  split.meta.params = {{"n", std::to_string(p.n)},
                       {"rotation_deg", format_double(p.rotation_deg)},
                       {"noise_std", format_double(p.noise_std)},
                       {"nuisance_dims", std::to_string(p.nuisance_dims)}};
  return split;
}

DatasetSplit gen_gaussian_shift(const GaussianShiftParams& p) {
  if (p.classes < 2) throw ValidationError("gen_gaussian_shift: need at least 2 classes");
  if (p.dims < 1) throw ValidationError("gen_gaussian_shift: dims must be positive");
  if (p.n_per_class < 1) throw ValidationError("gen_gaussian_shift: n_per_class must be positive");
  const auto anisotropy = per_class(p.anisotropy, p.classes, 1.0, "anisotropy");
  const auto shift = per_class(p.mean_shift, p.classes, 0.0, "mean_shift");
  const auto scale = per_class(p.cov_scale, p.classes, 1.0, "cov_scale");
  for (std::size_t c = 0; c < p.classes; ++c) {
    if (!(anisotropy[c] > 0.0) || !(scale[c] > 0.0) || !std::isfinite(anisotropy[c]) || !std::isfinite(scale[c])) {
      throw ValidationError("gen_gaussian_shift: covariance for class " + std::to_string(c) +
                            " is not positive definite");
    }
    if (!std::isfinite(shift[c])) throw ValidationError("gen_gaussian_shift: mean_shift must be finite");
  }

  const std::size_t dim = p.dims;
  const std::size_t n = p.classes * p.n_per_class;
  const std::size_t long_axis = dim - 1;
  const std::size_t shift_axis = dim >= 2 ? 1 : 0;

  std::mt19937_64 rng = seeded(p.seed, 2);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> src(n * dim);
  std::vector<double> tgt(n * dim);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % p.classes;
    const double centre = (static_cast<double>(c) - 0.5 * static_cast<double>(p.classes - 1)) * p.class_separation;
    for (std::size_t k = 0; k < dim; ++k) {
      const double sd = k == long_axis ? std::sqrt(anisotropy[c]) : 1.0;
      const double noise = sd * unit(rng);
      const double mean = k == 0 ? centre : 0.0;
      src[i * dim + k] = mean + noise;
      tgt[i * dim + k] = mean + (k == shift_axis ? shift[c] : 0.0) + std::sqrt(scale[c]) * noise;
    }
    labels[i] = static_cast<int>(c);
  }

  DatasetSplit split;
  split.source = {Tensor::matrix(n, dim, std::move(src)), labels};
  split.target = {Tensor::matrix(n, dim, std::move(tgt)), labels};
  split.meta.generator = "gaussian";
  split.meta.seed = p.seed;
  split.meta.num_classes = p.classes;
  split.meta.dim = dim;
  split.meta.params = {{"classes", std::to_string(p.classes)},
                       {"dims", std::to_string(p.dims)},
                       {"n_per_class", std::to_string(p.n_per_class)},
                       {"class_separation", format_double(p.class_separation)},
                       {"anisotropy", join(anisotropy)},
                       {"mean_shift", join(shift)},
                       {"cov_scale", join(scale)}};
  return split;
}

void save_csv(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::size_t dim = split.dim();
  out << "domain,label";
  for (std::size_t k = 0; k < dim; ++k) out << ",f" << k;
  out << '\n';
  auto write = [&](const DomainData& d, DomainTag tag) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      out << domain_name(tag) << ',';
      if (d.labels[i] != kNoLabel) out << d.labels[i];
      for (std::size_t k = 0; k < dim; ++k) out << ',' << format_double(d.features.at(i, k));
      out << '\n';
    }
  };
  write(split.source, DomainTag::kSource);
  write(split.target, DomainTag::kTarget);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

DatasetSplit load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  const auto header = split_fields(trim(line));
  if (header.size() < 3 || trim(header[0]) != "domain" || trim(header[1]) != "label") {
    throw ValidationError(path.string() + ":1: header must start with domain,label,f0");
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t k = 0; k < dim; ++k) {
    if (trim(header[2 + k]) != "f" + std::to_string(k)) {
      throw ValidationError(path.string() + ":1: expected column f" + std::to_string(k) + ", got '" + header[2 + k] +
                            "'");
    }
  }

  std::vector<double> src, tgt;
  std::vector<int> src_labels, tgt_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) -> ValidationError {
      return ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    const auto fields = split_fields(line);
    if (fields.size() != dim + 2) {
      throw fail("expected " + std::to_string(dim + 2) + " fields, got " + std::to_string(fields.size()));
    }
    const std::string domain = trim(fields[0]);
    if (domain != "source" && domain != "target") throw fail("unknown domain tag '" + domain + "'");
    const bool is_source = domain == "source";

    int label = kNoLabel;
    const std::string label_text = trim(fields[1]);
    if (label_text.empty()) {
      if (is_source) throw fail("source rows need a label");
    } else {
      auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
      if (ec != std::errc() || ptr != label_text.data() + label_text.size() || label < 0) {
        throw fail("bad label '" + label_text + "'");
      }
    }

    auto& values = is_source ? src : tgt;
    for (std::size_t k = 0; k < dim; ++k) {
      const std::string text = trim(fields[2 + k]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
        throw fail("bad number '" + text + "' in column f" + std::to_string(k));
      }
      values.push_back(v);
    }
    (is_source ? src_labels : tgt_labels).push_back(label);
  }

  DatasetSplit split;
  split.source = {Tensor::matrix(src_labels.size(), dim, std::move(src)), std::move(src_labels)};
  split.target = {Tensor::matrix(tgt_labels.size(), dim, std::move(tgt)), std::move(tgt_labels)};
  int max_label = -1;
  for (int l : split.source.labels) max_label = std::max(max_label, l);
  for (int l : split.target.labels) max_label = std::max(max_label, l);
  split.meta.generator = "csv";
  split.meta.num_classes = static_cast<std::size_t>(max_label + 1);
  split.meta.dim = dim;
  split.meta.params = {{"file", path.filename().string()}};
  return split;
}

std::map<int, std::size_t> class_histogram(const DomainData& domain) {
  std::map<int, std::size_t> out;
  for (int l : domain.labels) ++out[l];
  return out;
}

std::string Protocol::name() const {
  return kind == ProtocolKind::kUda ? "uda" : "fsda" + std::to_string(shots);
}

Protocol Protocol::parse(const std::string& text) {
  if (text == "uda") return uda();
  if (text.rfind("fsda", 0) == 0) {
    std::string rest = text.substr(4);
    if (!rest.empty() && (rest[0] == ':' || rest[0] == '-')) rest = rest.substr(1);
    std::size_t k = 0;
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), k);
    if (ec == std::errc() && ptr == rest.data() + rest.size() && k > 0) return fsda(k);
  }
  throw ValidationError("unknown protocol '" + text + "' (expected uda or fsda<k>)");
}

TargetLabelView::TargetLabelView(const DatasetSplit& split, Protocol protocol, std::uint64_t seed)
    : protocol_(protocol), revealed_label_(split.target.size(), kNoLabel) {
  if (protocol_.kind == ProtocolKind::kUda) return;
  if (protocol_.shots == 0) throw ValidationError("FSDA protocol needs at least one shot per class");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < split.target.size(); ++i) {
    const int l = split.target.labels[i];
    if (l == kNoLabel) throw ProtocolError("FSDA needs target labels to reveal, but target sample " + std::to_string(i) + " has none");
    by_class[l].push_back(i);
  }
  std::mt19937_64 rng = seeded(seed, 3);
  for (auto& [label, indices] : by_class) {
    if (indices.size() < protocol_.shots) {
      throw ProtocolError("FSDA: class " + std::to_string(label) + " has only " + std::to_string(indices.size()) +
                          " target samples");
    }
    std::shuffle(indices.begin(), indices.end(), rng);
    for (std::size_t k = 0; k < protocol_.shots; ++k) {
      revealed_.push_back(indices[k]);
      revealed_label_[indices[k]] = label;
    }
  }
  std::sort(revealed_.begin(), revealed_.end());
}

std::optional<int> TargetLabelView::label(std::size_t i) const {
  if (protocol_.kind == ProtocolKind::kUda) {
    throw ProtocolError("target labels are hidden under the UDA protocol");
  }
  if (i >= revealed_label_.size()) throw ValidationError("target index out of range");
  if (revealed_label_[i] == kNoLabel) return std::nullopt;
  return revealed_label_[i];
}

bool TargetLabelView::revealed(std::size_t i) const noexcept {
  return i < revealed_label_.size() && revealed_label_[i] != kNoLabel;
}

BatchSchedule::BatchSchedule(std::size_t n_source, std::size_t n_target, std::size_t batch_size,
                             std::uint64_t seed)
    : n_source_(n_source), n_target_(n_target), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2");
  if (batch_size > std::min(n_source, n_target)) {
    throw ValidationError("batch_size " + std::to_string(batch_size) + " exceeds the smaller domain (" +
                          std::to_string(std::min(n_source, n_target)) + " samples)");
  }
  steps_ = std::max((n_source + batch_size - 1) / batch_size, (n_target + batch_size - 1) / batch_size);
}

std::vector<BatchPair> BatchSchedule::epoch(std::size_t index) const {
  auto permutation = [&](std::size_t n, std::uint64_t stream) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng = seeded(seed_, stream, index);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  };
  const auto src = permutation(n_source_, 10);
  const auto tgt = permutation(n_target_, 11);
  auto chunk = [&](const std::vector<std::size_t>& order, std::size_t step) {
    const std::size_t n = order.size();
    const std::size_t begin = step * n / steps_;
    const std::size_t end = (step + 1) * n / steps_;
    return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
  };
  std::vector<BatchPair> out(steps_);
  for (std::size_t s = 0; s < steps_; ++s) out[s] = {chunk(src, s), chunk(tgt, s)};
  return out;
}

}  // namespace geoadapt::data
