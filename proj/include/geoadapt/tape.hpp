#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "geoadapt/tensor.hpp"

namespace geoadapt::diff {

/// Primitive operations recorded on a tape.
enum class Op : std::uint8_t {
  kInput,
  kConstant,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kScale,
  kAddScalar,
  kExp,
  kLog,
  kLogFloor,
  kTanh,
  kRelu,
  kAbs,
  kSquare,
  kSqrt,
  kSum,
  kMean,
  kSumRows,
  kSliceCols,
  kConcatCols,
  kConcatRows,
  kTranspose,
  kGatherRows,
  kPick,
  kLogSumExpRows,
  kMaskedLogSumExpRows,
  kLogSoftmaxRows,
  kSoftmaxRows,
  kRowNorm,
  kStopGradient,
};

std::string_view op_name(Op op) noexcept;

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape.
///
/// Operations execute eagerly and are recorded in topological order. The
/// recording can be replayed on new input values with evaluate(); replaying
/// on identical inputs reproduces every node bit-for-bit. Any NaN or Inf
/// produced by a node raises NumericError naming that node.
///
/// Binary elementwise ops broadcast their second operand when it is a
/// [1, n] row, an [m, 1] column or a single element.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(std::string name, Tensor value);
  Var constant(Tensor value);
  void mark_output(std::string name, Var v);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  Op op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& node_inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::vector<std::string> input_names() const;
  bool has_input(const std::string& name) const { return inputs_.contains(name); }
  Var input_var(const std::string& name);

  /// Replays the recording with the given named inputs substituted and
  /// returns every marked output. Inputs not named keep their current value.
  std::map<std::string, Tensor> evaluate(const std::map<std::string, Tensor>& inputs);

  /// Gradients of a single-element node with respect to named inputs.
  /// Inputs the output does not depend on (or only through stop_gradient)
  /// get a zero gradient.
  std::map<std::string, Tensor> gradient(Var output, const std::vector<std::string>& wrt) const;

  // Primitive constructors; the free functions below forward here.
  Var matmul(Var a, Var b);
  Var binary(Op op, Var a, Var b);
  Var unary(Op op, Var a, double param = 0.0);
  Var reduce(Op op, Var a);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var concat(Op op, Var a, Var b);
  Var gather_rows(Var a, std::vector<std::size_t> rows);
  Var pick(Var a, std::vector<std::size_t> flat_indices);
  Var masked_logsumexp_rows(Var a, Tensor mask);

 private:
  struct Node {
    Op op = Op::kConstant;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::string name;
    double param = 0.0;
    std::vector<std::size_t> indices;
    Tensor aux;
  };

  Var push(Node node);
  void compute(std::size_t id);
  void backprop(std::size_t id, const Tensor& upstream, std::vector<Tensor>& grads) const;
  Var own(Var v) const;
  [[noreturn]] void fail_shape(const Node& node, const std::string& what) const;

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> inputs_;
  std::map<std::string, std::size_t> outputs_;
};

Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator*(Var a, double s);
Var operator+(Var a, double s);
Var operator-(double s, Var a);

Var exp(Var a);
Var log(Var a);
/// log(max(a, floor)); the gradient is zero where the floor is active.
Var log_floor(Var a, double floor);
Var tanh(Var a);
Var relu(Var a);
/// |a| with derivative +1 at zero (right derivative).
Var abs(Var a);
Var square(Var a);
Var sqrt(Var a);

/// Sum of all elements, shape [1].
Var sum(Var a);
Var mean(Var a);
/// [m, n] -> [m, 1]
Var sum_rows(Var a);
/// Euclidean norm of every row, [m, n] -> [m, 1].
Var row_norm(Var a);
Var dot_rows(Var a, Var b);

Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var transpose(Var a);
Var gather_rows(Var a, std::vector<std::size_t> rows);
/// Elements at flat row-major indices, shape [k, 1].
Var pick(Var a, std::vector<std::size_t> flat_indices);

Var logsumexp_rows(Var a);
/// Row-wise logsumexp over entries whose mask value is nonzero. Every row
/// needs at least one active entry.
Var masked_logsumexp_rows(Var a, Tensor mask);
Var log_softmax_rows(Var a);
Var softmax_rows(Var a);
Var stop_gradient(Var a);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_input;
  std::size_t worst_coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates_checked = 0;
  bool passed = true;
};

/// Compares reverse-mode gradients with central differences on every
/// coordinate of the named inputs. Relative error is
/// |a - b| / max(1, |a|, |b|). The tape is restored to its original inputs.
GradCheckReport finite_diff_check(Tape& tape, Var output, const std::vector<std::string>& wrt,
                                  double step, double tol);

}  // namespace geoadapt::diff
