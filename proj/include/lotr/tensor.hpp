#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lotr {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that cannot be combined.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File format or filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape;

/// Dense row-major array of doubles.
///
/// Copies share the underlying buffer; mutable_data() detaches before writing,
/// so a Tensor behaves as a value. A Tensor may additionally be linked to a
/// node on a Tape, in which case operations on it are recorded for reverse-mode
/// differentiation. The tape is not owned and must outlive the link.
class Tensor {
 public:
  /// Rank-0 scalar holding 0.
  Tensor() : buf_(std::make_shared<std::vector<double>>(1, 0.0)) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_dims();
    buf_ = std::make_shared<std::vector<double>>(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    check_dims();
    if (values.size() != shape_size(shape_))
      throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                       lotr::to_string(shape_));
    buf_ = std::make_shared<std::vector<double>>(std::move(values));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  /// Row-major matrix from nested rows.
  static Tensor matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) throw ShapeError("matrix needs at least one element");
    std::vector<double> v;
    for (const auto& r : rows) {
      if (r.size() != rows.front().size()) throw ShapeError("ragged matrix rows");
      v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), rows.front().size()}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return buf_->size(); }
  /// Size of the last axis (1 for scalars).
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
  /// Product of all axes but the last.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : size() / shape_.back(); }

  std::span<const double> data() const noexcept { return {buf_->data(), buf_->size()}; }

  std::span<double> mutable_data() {
    if (buf_.use_count() > 1) buf_ = std::make_shared<std::vector<double>>(*buf_);
    return {buf_->data(), buf_->size()};
  }

  double operator[](std::size_t i) const { return (*buf_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*buf_)[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + lotr::to_string(shape_));
    return (*buf_)[0];
  }

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

  /// Same values, no tape link.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  /// Metadata-only reshape of an untracked tensor (differentiable reshape lives in ops).
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + lotr::to_string(shape_) + " to " + lotr::to_string(shape));
    Tensor t = detached();
    t.shape_ = std::move(shape);
    t.check_dims();
    return t;
  }

  bool same_values(const Tensor& other) const {
    return shape_ == other.shape_ && *buf_ == *other.buf_;
  }

 private:
  friend class Tape;

  void check_dims() const {
    for (auto d : shape_)
      if (d == 0) throw ShapeError("zero-sized dimension in shape " + lotr::to_string(shape_));
  }

  Shape shape_;
  std::shared_ptr<std::vector<double>> buf_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

inline void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + to_string(expected) + ", got " +
                     to_string(t.shape()));
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace lotr
