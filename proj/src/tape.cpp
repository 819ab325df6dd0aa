#include "geoadapt/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "geoadapt/errors.hpp"

namespace geoadapt::diff {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

enum class Broadcast { kSame, kRow, kColumn, kScalar, kInvalid };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows() && a.rank() == 2) return Broadcast::kColumn;
  return Broadcast::kInvalid;
}

std::size_t broadcast_index(Broadcast kind, std::size_t r, std::size_t c, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame:
      return r * cols + c;
    case Broadcast::kRow:
      return c;
    case Broadcast::kColumn:
      return r;
    default:
      return 0;
  }
}

/// Folds a gradient with a's shape back onto b's broadcast shape.
Tensor reduce_to(const Tensor& g, const Tensor& b, Broadcast kind) {
  if (kind == Broadcast::kSame) return g;
  Tensor out = Tensor::zeros(b.shape());
  const std::size_t rows = g.rows();
  const std::size_t cols = g.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[broadcast_index(kind, r, c, cols)] += g[r * cols + c];
    }
  }
  return out;
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

double row_max(std::span<const double> row, std::span<const double> mask = {}) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!mask.empty() && mask[i] == 0.0) continue;
    m = std::max(m, row[i]);
  }
  return m;
}

/// Softmax of a row restricted to mask-active entries; inactive entries are 0.
void row_softmax(std::span<const double> row, std::span<const double> mask, std::span<double> out) {
  const double m = row_max(row, mask);
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const bool active = mask.empty() || mask[i] != 0.0;
    out[i] = active ? std::exp(row[i] - m) : 0.0;
    z += out[i];
  }
  for (double& v : out) v /= z;
}

double row_logsumexp(std::span<const double> row, std::span<const double> mask) {
  const double m = row_max(row, mask);
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!mask.empty() && mask[i] == 0.0) continue;
    z += std::exp(row[i] - m);
  }
  return m + std::log(z);
}

}  // namespace

std::string_view op_name(Op op) noexcept {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kLogFloor: return "log_floor";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kAbs: return "abs";
    case Op::kSquare: return "square";
    case Op::kSqrt: return "sqrt";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSumRows: return "sum_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kConcatCols: return "concat_cols";
    case Op::kConcatRows: return "concat_rows";
    case Op::kTranspose: return "transpose";
    case Op::kGatherRows: return "gather_rows";
    case Op::kPick: return "pick";
    case Op::kLogSumExpRows: return "logsumexp_rows";
    case Op::kMaskedLogSumExpRows: return "masked_logsumexp_rows";
    case Op::kLogSoftmaxRows: return "log_softmax_rows";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kRowNorm: return "row_norm";
    case Op::kStopGradient: return "stop_gradient";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  try {
    compute(id);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Var(this, id);
}

Var Tape::own(Var v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    throw ValidationError("variable does not belong to this tape");
  }
  return v;
}

void Tape::fail_shape(const Node& node, const std::string& what) const {
  throw ShapeError("node " + std::to_string(nodes_.size() - 1) + " (" +
                   std::string(op_name(node.op)) + "): " + what);
}

Var Tape::input(std::string name, Tensor value) {
  if (inputs_.contains(name)) throw ValidationError("duplicate tape input '" + name + "'");
  Node node;
  node.op = Op::kInput;
  node.name = name;
  node.value = std::move(value);
  Var v = push(std::move(node));
  inputs_.emplace(std::move(name), v.id());
  return v;
}

Var Tape::constant(Tensor value) {
  Node node;
  node.op = Op::kConstant;
  node.value = std::move(value);
  return push(std::move(node));
}

void Tape::mark_output(std::string name, Var v) { outputs_[std::move(name)] = own(v).id(); }

std::vector<std::string> Tape::input_names() const {
  std::vector<std::string> names;
  names.reserve(inputs_.size());
  for (const auto& [name, id] : inputs_) names.push_back(name);
  return names;
}

Var Tape::input_var(const std::string& name) {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw ValidationError("no tape input named '" + name + "'");
  return Var(this, it->second);
}

Var Tape::matmul(Var a, Var b) {
  Node node;
  node.op = Op::kMatMul;
  node.inputs = {own(a).id(), own(b).id()};
  return push(std::move(node));
}

Var Tape::binary(Op op, Var a, Var b) {
  Node node;
  node.op = op;
  node.inputs = {own(a).id(), own(b).id()};
  return push(std::move(node));
}

Var Tape::unary(Op op, Var a, double param) {
  Node node;
  node.op = op;
  node.inputs = {own(a).id()};
  node.param = param;
  return push(std::move(node));
}

Var Tape::reduce(Op op, Var a) { return unary(op, a); }

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
  Node node;
  node.op = Op::kSliceCols;
  node.inputs = {own(a).id()};
  node.indices = {begin, end};
  return push(std::move(node));
}

Var Tape::concat(Op op, Var a, Var b) {
  Node node;
  node.op = op;
  node.inputs = {own(a).id(), own(b).id()};
  return push(std::move(node));
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> rows) {
  Node node;
  node.op = Op::kGatherRows;
  node.inputs = {own(a).id()};
  node.indices = std::move(rows);
  return push(std::move(node));
}

Var Tape::pick(Var a, std::vector<std::size_t> flat_indices) {
  Node node;
  node.op = Op::kPick;
  node.inputs = {own(a).id()};
  node.indices = std::move(flat_indices);
  return push(std::move(node));
}

Var Tape::masked_logsumexp_rows(Var a, Tensor mask) {
  Node node;
  node.op = Op::kMaskedLogSumExpRows;
  node.inputs = {own(a).id()};
  node.aux = std::move(mask);
  return push(std::move(node));
}

void Tape::compute(std::size_t id) {
  Node& node = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };

  switch (node.op) {
    case Op::kInput:
    case Op::kConstant:
      break;

    case Op::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.cols() != b.rows()) {
        fail_shape(node, "cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
      }
      Tensor out = Tensor::zeros(matrix_shape(a.rows(), b.cols()));
      MutMap(out.values().data(), a.rows(), b.cols()).noalias() =
          ConstMap(a.values().data(), a.rows(), a.cols()) *
          ConstMap(b.values().data(), b.rows(), b.cols());
      node.value = std::move(out);
      break;
    }

    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Broadcast kind = broadcast_kind(a, b);
      if (kind == Broadcast::kInvalid) {
        fail_shape(node, "cannot broadcast " + to_string(b.shape()) + " onto " + to_string(a.shape()));
      }
      Tensor out = Tensor::zeros(a.shape());
      const std::size_t rows = a.rows();
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const double x = a[i];
          const double y = b[broadcast_index(kind, r, c, cols)];
          switch (node.op) {
            case Op::kAdd: out[i] = x + y; break;
            case Op::kSub: out[i] = x - y; break;
            case Op::kMul: out[i] = x * y; break;
            default: out[i] = x / y; break;
          }
        }
      }
      node.value = std::move(out);
      break;
    }

    case Op::kNeg:
    case Op::kScale:
    case Op::kAddScalar:
    case Op::kExp:
    case Op::kLog:
    case Op::kLogFloor:
    case Op::kTanh:
    case Op::kRelu:
    case Op::kAbs:
    case Op::kSquare:
    case Op::kSqrt:
    case Op::kStopGradient: {
      const Tensor& a = in(0);
      Tensor out = a;
      for (double& v : out.values()) {
        switch (node.op) {
          case Op::kNeg: v = -v; break;
          case Op::kScale: v = node.param * v; break;
          case Op::kAddScalar: v = v + node.param; break;
          case Op::kExp: v = std::exp(v); break;
          case Op::kLog: v = std::log(v); break;
          case Op::kLogFloor: v = std::log(std::max(v, node.param)); break;
          case Op::kTanh: v = std::tanh(v); break;
          case Op::kRelu: v = v > 0.0 ? v : 0.0; break;
          case Op::kAbs: v = std::fabs(v); break;
          case Op::kSquare: v = v * v; break;
          case Op::kSqrt: v = std::sqrt(v); break;
          default: break;
        }
      }
      node.value = std::move(out);
      break;
    }

    case Op::kSum:
    case Op::kMean: {
      const Tensor& a = in(0);
      double total = 0.0;
      for (double v : a.values()) total += v;
      if (node.op == Op::kMean) {
        if (a.size() == 0) fail_shape(node, "mean of empty tensor");
        total /= static_cast<double>(a.size());
      }
      node.value = Tensor::scalar(total);
      break;
    }

    case Op::kSumRows:
    case Op::kRowNorm: {
      const Tensor& a = in(0);
      Tensor out = Tensor::zeros(matrix_shape(a.rows(), 1));
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double acc = 0.0;
        for (double v : a.row_span(r)) acc += node.op == Op::kSumRows ? v : v * v;
        out[r] = node.op == Op::kSumRows ? acc : std::sqrt(acc);
      }
      node.value = std::move(out);
      break;
    }

    case Op::kSliceCols: {
      const Tensor& a = in(0);
      if (node.indices[0] > node.indices[1] || node.indices[1] > a.cols()) {
        fail_shape(node, "column slice out of range for " + to_string(a.shape()));
      }
      node.value = a.slice_cols(node.indices[0], node.indices[1]);
      break;
    }

    case Op::kConcatCols: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rows() != b.rows()) {
        fail_shape(node, "row count mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
      }
      Tensor out = Tensor::zeros(matrix_shape(a.rows(), a.cols() + b.cols()));
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.values().subspan(r * out.cols(), out.cols());
        std::copy(a.row_span(r).begin(), a.row_span(r).end(), dst.begin());
        std::copy(b.row_span(r).begin(), b.row_span(r).end(),
                  dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
      }
      node.value = std::move(out);
      break;
    }

    case Op::kConcatRows: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.cols() != b.cols()) {
        fail_shape(node, "column count mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
      }
      std::vector<double> vals(a.values().begin(), a.values().end());
      vals.insert(vals.end(), b.values().begin(), b.values().end());
      node.value = Tensor(matrix_shape(a.rows() + b.rows(), a.cols()), std::move(vals));
      break;
    }

    case Op::kTranspose: {
      const Tensor& a = in(0);
      Tensor out = Tensor::zeros(matrix_shape(a.cols(), a.rows()));
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
      }
      node.value = std::move(out);
      break;
    }

    case Op::kGatherRows: {
      const Tensor& a = in(0);
      for (std::size_t r : node.indices) {
        if (r >= a.rows()) fail_shape(node, "row index " + std::to_string(r) + " out of range");
      }
      node.value = a.select_rows(node.indices);
      break;
    }

    case Op::kPick: {
      const Tensor& a = in(0);
      Tensor out = Tensor::zeros(matrix_shape(node.indices.size(), 1));
      for (std::size_t k = 0; k < node.indices.size(); ++k) {
        if (node.indices[k] >= a.size()) fail_shape(node, "flat index out of range");
        out[k] = a[node.indices[k]];
      }
      node.value = std::move(out);
      break;
    }

    case Op::kLogSumExpRows:
    case Op::kMaskedLogSumExpRows: {
      const Tensor& a = in(0);
      const bool masked = node.op == Op::kMaskedLogSumExpRows;
      if (masked && !node.aux.same_shape(a)) {
        fail_shape(node, "mask shape " + to_string(node.aux.shape()) + " vs " + to_string(a.shape()));
      }
      Tensor out = Tensor::zeros(matrix_shape(a.rows(), 1));
      for (std::size_t r = 0; r < a.rows(); ++r) {
        std::span<const double> mask = masked ? node.aux.row_span(r) : std::span<const double>{};
        if (masked && std::none_of(mask.begin(), mask.end(), [](double m) { return m != 0.0; })) {
          fail_shape(node, "row " + std::to_string(r) + " has no active mask entry");
        }
        out[r] = row_logsumexp(a.row_span(r), mask);
      }
      node.value = std::move(out);
      break;
    }

    case Op::kLogSoftmaxRows:
    case Op::kSoftmaxRows: {
      const Tensor& a = in(0);
      Tensor out = Tensor::zeros(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.values().subspan(r * a.cols(), a.cols());
        if (node.op == Op::kSoftmaxRows) {
          row_softmax(a.row_span(r), {}, dst);
        } else {
          const double lse = row_logsumexp(a.row_span(r), {});
          for (std::size_t c = 0; c < a.cols(); ++c) dst[c] = a.at(r, c) - lse;
        }
      }
      node.value = std::move(out);
      break;
    }
  }

  if (!node.value.all_finite()) {
    throw NumericError("node " + std::to_string(id) + " (" + std::string(op_name(node.op)) +
                       "): non-finite value");
  }
}

std::map<std::string, Tensor> Tape::evaluate(const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, tensor] : inputs) {
    auto it = inputs_.find(name);
    if (it == inputs_.end()) throw ValidationError("no tape input named '" + name + "'");
    Node& node = nodes_[it->second];
    if (!node.value.same_shape(tensor)) {
      throw ShapeError("node " + std::to_string(it->second) + " (input '" + name + "'): expected " +
                       to_string(node.value.shape()) + ", got " + to_string(tensor.shape()));
    }
    if (!tensor.all_finite()) {
      throw NumericError("node " + std::to_string(it->second) + " (input '" + name +
                         "'): non-finite value");
    }
    node.value = tensor;
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) compute(id);

  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : outputs_) out.emplace(name, nodes_[id].value);
  return out;
}

void Tape::backprop(std::size_t id, const Tensor& g, std::vector<Tensor>& grads) const {
  const Node& node = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  auto accumulate = [&](std::size_t k, const Tensor& contribution) {
    Tensor& slot = grads[node.inputs[k]];
    if (slot.size() == 0 && contribution.size() != 0) {
      slot = contribution;
    } else {
      add_into(slot, contribution);
    }
  };
  const Tensor& out = node.value;

  switch (node.op) {
    case Op::kInput:
    case Op::kConstant:
    case Op::kStopGradient:
      return;

    case Op::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      ConstMap gm(g.values().data(), g.rows(), g.cols());
      Tensor da = Tensor::zeros(a.shape());
      Tensor db = Tensor::zeros(b.shape());
      MutMap(da.values().data(), a.rows(), a.cols()).noalias() =
          gm * ConstMap(b.values().data(), b.rows(), b.cols()).transpose();
      MutMap(db.values().data(), b.rows(), b.cols()).noalias() =
          ConstMap(a.values().data(), a.rows(), a.cols()).transpose() * gm;
      accumulate(0, da);
      accumulate(1, db);
      return;
    }

    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Broadcast kind = broadcast_kind(a, b);
      const std::size_t rows = a.rows();
      const std::size_t cols = a.cols();
      Tensor da = Tensor::zeros(a.shape());
      Tensor db_full = Tensor::zeros(a.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const double y = b[broadcast_index(kind, r, c, cols)];
          switch (node.op) {
            case Op::kAdd: da[i] = g[i]; db_full[i] = g[i]; break;
            case Op::kSub: da[i] = g[i]; db_full[i] = -g[i]; break;
            case Op::kMul: da[i] = g[i] * y; db_full[i] = g[i] * a[i]; break;
            default: da[i] = g[i] / y; db_full[i] = -g[i] * a[i] / (y * y); break;
          }
        }
      }
      accumulate(0, da);
      accumulate(1, reduce_to(db_full, b, kind));
      return;
    }

    case Op::kNeg:
    case Op::kScale:
    case Op::kAddScalar:
    case Op::kExp:
    case Op::kLog:
    case Op::kLogFloor:
    case Op::kTanh:
    case Op::kRelu:
    case Op::kAbs:
    case Op::kSquare:
    case Op::kSqrt: {
      const Tensor& a = in(0);
      Tensor da = Tensor::zeros(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        double d = 0.0;
        switch (node.op) {
          case Op::kNeg: d = -1.0; break;
          case Op::kScale: d = node.param; break;
          case Op::kAddScalar: d = 1.0; break;
          case Op::kExp: d = out[i]; break;
          case Op::kLog: d = 1.0 / x; break;
          case Op::kLogFloor: d = x > node.param ? 1.0 / x : 0.0; break;
          case Op::kTanh: d = 1.0 - out[i] * out[i]; break;
          case Op::kRelu: d = x > 0.0 ? 1.0 : 0.0; break;
          case Op::kAbs: d = x >= 0.0 ? 1.0 : -1.0; break;
          case Op::kSquare: d = 2.0 * x; break;
          default: d = 0.5 / out[i]; break;
        }
        da[i] = g[i] * d;
      }
      accumulate(0, da);
      return;
    }

    case Op::kSum:
    case Op::kMean: {
      const Tensor& a = in(0);
      const double scale = node.op == Op::kMean ? 1.0 / static_cast<double>(a.size()) : 1.0;
      accumulate(0, Tensor::filled(a.shape(), g[0] * scale));
      return;
    }

    case Op::kSumRows:
    case Op::kRowNorm: {
      const Tensor& a = in(0);
      Tensor da = Tensor::zeros(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
          if (node.op == Op::kSumRows) {
            da.at(r, c) = g[r];
          } else {
            da.at(r, c) = out[r] > 0.0 ? g[r] * a.at(r, c) / out[r] : 0.0;
          }
        }
      }
      accumulate(0, da);
      return;
    }

    case Op::kSliceCols: {
      const Tensor& a = in(0);
      Tensor da = Tensor::zeros(a.shape());
      const std::size_t begin = node.indices[0];
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) da.at(r, begin + c) = g.at(r, c);
      }
      accumulate(0, da);
      return;
    }

    case Op::kConcatCols: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      accumulate(0, g.slice_cols(0, a.cols()));
      accumulate(1, g.slice_cols(a.cols(), a.cols() + b.cols()));
      return;
    }

    case Op::kConcatRows: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      auto vals = g.values();
      accumulate(0, Tensor(a.shape(), std::vector<double>(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(a.size()))));
      accumulate(1, Tensor(b.shape(), std::vector<double>(vals.begin() + static_cast<std::ptrdiff_t>(a.size()), vals.end())));
      return;
    }

    case Op::kTranspose: {
      const Tensor& a = in(0);
      Tensor da = Tensor::zeros(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) da.at(r, c) = g.at(c, r);
      }
      accumulate(0, da);
      return;
    }

    case Op::kGatherRows: {
      const Tensor& a = in(0);
      Tensor da = Tensor::zeros(a.shape());
      for (std::size_t k = 0; k < node.indices.size(); ++k) {
        for (std::size_t c = 0; c < a.cols(); ++c) da.at(node.indices[k], c) += g.at(k, c);
      }
      accumulate(0, da);
      return;
    }

    case Op::kPick: {
      const Tensor& a = in(0);
      Tensor da = Tensor::zeros(a.shape());
      for (std::size_t k = 0; k < node.indices.size(); ++k) da[node.indices[k]] += g[k];
      accumulate(0, da);
      return;
    }

    case Op::kLogSumExpRows:
    case Op::kMaskedLogSumExpRows: {
      const Tensor& a = in(0);
      const bool masked = node.op == Op::kMaskedLogSumExpRows;
      Tensor da = Tensor::zeros(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = da.values().subspan(r * a.cols(), a.cols());
        row_softmax(a.row_span(r), masked ? node.aux.row_span(r) : std::span<const double>{}, dst);
        for (double& v : dst) v *= g[r];
      }
      accumulate(0, da);
      return;
    }

    case Op::kLogSoftmaxRows: {
      const Tensor& a = in(0);
      Tensor da = Tensor::zeros(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double gsum = 0.0;
        for (double v : g.row_span(r)) gsum += v;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          da.at(r, c) = g.at(r, c) - std::exp(out.at(r, c)) * gsum;
        }
      }
      accumulate(0, da);
      return;
    }

    case Op::kSoftmaxRows: {
      const Tensor& a = in(0);
      Tensor da = Tensor::zeros(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double inner = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) inner += g.at(r, c) * out.at(r, c);
        for (std::size_t c = 0; c < a.cols(); ++c) {
          da.at(r, c) = out.at(r, c) * (g.at(r, c) - inner);
        }
      }
      accumulate(0, da);
      return;
    }
  }
}

std::map<std::string, Tensor> Tape::gradient(Var output, const std::vector<std::string>& wrt) const {
  own(output);
  if (output.value().size() != 1) {
    throw ShapeError("gradient requires a single-element output, got shape " +
                     to_string(output.value().shape()));
  }
  for (const auto& name : wrt) {
    if (!inputs_.contains(name)) throw ValidationError("no tape input named '" + name + "'");
  }

  std::vector<Tensor> grads(nodes_.size(), Tensor({0}, {}));
  grads[output.id()] = Tensor::filled(output.value().shape(), 1.0);
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    if (grads[id].size() == 0) continue;
    backprop(id, grads[id], grads);
  }

  std::map<std::string, Tensor> out;
  for (const auto& name : wrt) {
    const std::size_t id = inputs_.at(name);
    Tensor g = grads[id].size() == 0 ? Tensor::zeros(nodes_[id].value.shape()) : grads[id];
    if (!g.all_finite()) {
      throw NumericError("gradient for input '" + name + "' is non-finite");
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

Var matmul(Var a, Var b) { return a.tape().matmul(a, b); }
Var operator+(Var a, Var b) { return a.tape().binary(Op::kAdd, a, b); }
Var operator-(Var a, Var b) { return a.tape().binary(Op::kSub, a, b); }
Var operator*(Var a, Var b) { return a.tape().binary(Op::kMul, a, b); }
Var operator/(Var a, Var b) { return a.tape().binary(Op::kDiv, a, b); }
Var operator-(Var a) { return a.tape().unary(Op::kNeg, a); }
Var operator*(double s, Var a) { return a.tape().unary(Op::kScale, a, s); }
Var operator*(Var a, double s) { return a.tape().unary(Op::kScale, a, s); }
Var operator+(Var a, double s) { return a.tape().unary(Op::kAddScalar, a, s); }
Var operator-(double s, Var a) { return a.tape().unary(Op::kAddScalar, -a, s); }

Var exp(Var a) { return a.tape().unary(Op::kExp, a); }
Var log(Var a) { return a.tape().unary(Op::kLog, a); }
Var log_floor(Var a, double floor) { return a.tape().unary(Op::kLogFloor, a, floor); }
Var tanh(Var a) { return a.tape().unary(Op::kTanh, a); }
Var relu(Var a) { return a.tape().unary(Op::kRelu, a); }
Var abs(Var a) { return a.tape().unary(Op::kAbs, a); }
Var square(Var a) { return a.tape().unary(Op::kSquare, a); }
Var sqrt(Var a) { return a.tape().unary(Op::kSqrt, a); }

Var sum(Var a) { return a.tape().reduce(Op::kSum, a); }
Var mean(Var a) { return a.tape().reduce(Op::kMean, a); }
Var sum_rows(Var a) { return a.tape().reduce(Op::kSumRows, a); }
Var row_norm(Var a) { return a.tape().reduce(Op::kRowNorm, a); }
Var dot_rows(Var a, Var b) { return sum_rows(a * b); }

Var slice_cols(Var a, std::size_t begin, std::size_t end) { return a.tape().slice_cols(a, begin, end); }
Var concat_cols(Var a, Var b) { return a.tape().concat(Op::kConcatCols, a, b); }
Var concat_rows(Var a, Var b) { return a.tape().concat(Op::kConcatRows, a, b); }
Var transpose(Var a) { return a.tape().reduce(Op::kTranspose, a); }
Var gather_rows(Var a, std::vector<std::size_t> rows) { return a.tape().gather_rows(a, std::move(rows)); }
Var pick(Var a, std::vector<std::size_t> flat_indices) { return a.tape().pick(a, std::move(flat_indices)); }

Var logsumexp_rows(Var a) { return a.tape().reduce(Op::kLogSumExpRows, a); }
Var masked_logsumexp_rows(Var a, Tensor mask) { return a.tape().masked_logsumexp_rows(a, std::move(mask)); }
Var log_softmax_rows(Var a) { return a.tape().reduce(Op::kLogSoftmaxRows, a); }
Var softmax_rows(Var a) { return a.tape().reduce(Op::kSoftmaxRows, a); }
Var stop_gradient(Var a) { return a.tape().unary(Op::kStopGradient, a); }

GradCheckReport finite_diff_check(Tape& tape, Var output, const std::vector<std::string>& wrt,
                                  double step, double tol) {
  if (!(step > 0.0)) throw ValidationError("finite_diff_check: step must be positive");
  if (!(tol > 0.0)) throw ValidationError("finite_diff_check: tol must be positive");

  const auto analytic = tape.gradient(output, wrt);
  GradCheckReport report;
  for (const auto& name : wrt) {
    const Tensor original = tape.input_var(name).value();
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < original.size(); ++i) {
      Tensor probe = original;
      probe[i] = original[i] + step;
      tape.evaluate({{name, probe}});
      const double plus = output.value().item();
      probe[i] = original[i] - step;
      tape.evaluate({{name, probe}});
      const double minus = output.value().item();

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = grad[i];
      const double rel = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      ++report.coordinates_checked;
      if (rel > report.max_relative_error || report.coordinates_checked == 1) {
        report.max_relative_error = rel;
        report.worst_input = name;
        report.worst_coordinate = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
    tape.evaluate({{name, original}});
  }
  report.passed = report.max_relative_error <= tol;
  return report;
}

}  // namespace geoadapt::diff
