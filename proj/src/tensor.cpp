#include "geoadapt/tensor.hpp"

#include <cmath>
#include <numeric>

#include "geoadapt/errors.hpp"

namespace geoadapt {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_product(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.empty() || shape_.size() > 2) {
    throw ShapeError("tensor rank must be 1 or 2, got shape " + to_string(shape_));
  }
  if (shape_product(shape_) != values_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n, 1}, std::move(values));
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape_));
  }
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::select_rows(std::span<const std::size_t> rows) const {
  const std::size_t c = cols();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    if (r >= this->rows()) throw ShapeError("row index out of range");
    auto src = row_span(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor({rows.size(), c}, std::move(out));
}

Tensor Tensor::slice_cols(std::size_t begin, std::size_t end) const {
  if (begin > end || end > cols()) throw ShapeError("column slice out of range");
  const std::size_t r = rows();
  std::vector<double> out;
  out.reserve(r * (end - begin));
  for (std::size_t i = 0; i < r; ++i) {
    auto src = row_span(i);
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(begin),
               src.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return Tensor({r, end - begin}, std::move(out));
}

}  // namespace geoadapt
