#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lotr/tensor.hpp"

namespace lotr {

/// Collects the parent adjoint contributions of one node during the reverse pass.
class GradSink {
 public:
  GradSink(std::vector<std::optional<Tensor>>& adjoints, const std::vector<std::size_t>& parents,
           const std::vector<Shape>& shapes)
      : adjoints_(adjoints), parents_(parents), shapes_(shapes) {}

  /// True when input `i` is on the tape and needs a gradient.
  bool wants(std::size_t i) const { return parents_.at(i) != kNone; }

  void add(std::size_t i, const Tensor& g) {
    if (!wants(i)) return;
    const std::size_t p = parents_[i];
    if (g.size() != shape_size(shapes_[p]))
      throw ShapeError("adjoint of size " + std::to_string(g.size()) + " for node of shape " +
                       to_string(shapes_[p]));
    auto& slot = adjoints_[p];
    if (!slot) {
      slot = g.detached().reshaped(shapes_[p]);
      return;
    }
    auto dst = slot->mutable_data();
    const auto src = g.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

 private:
  std::vector<std::optional<Tensor>>& adjoints_;
  const std::vector<std::size_t>& parents_;
  const std::vector<Shape>& shapes_;
};

/// Result of a reverse pass.
class Gradients {
 public:
  Gradients(std::vector<std::optional<Tensor>> adj, std::vector<Shape> shapes,
            std::map<std::string, std::size_t> names)
      : adj_(std::move(adj)), shapes_(std::move(shapes)), names_(std::move(names)) {}

  /// Adjoint of a tracked tensor; zeros when it does not influence the root.
  Tensor of(const Tensor& t) const {
    if (!t.tracked()) throw Error("gradient requested for an untracked tensor");
    return at_node(t.node());
  }

  Tensor named(const std::string& name) const {
    auto it = names_.find(name);
    if (it == names_.end()) throw Error("no watched leaf named '" + name + "'");
    return at_node(it->second);
  }

  /// Every named leaf with its adjoint, in name order.
  std::map<std::string, Tensor> all_named() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, node] : names_) out.emplace(name, at_node(node));
    return out;
  }

 private:
  Tensor at_node(std::size_t n) const {
    if (adj_.at(n)) return *adj_[n];
    return Tensor(shapes_.at(n), 0.0);
  }

  std::vector<std::optional<Tensor>> adj_;
  std::vector<Shape> shapes_;
  std::map<std::string, std::size_t> names_;
};

/// Linear record of differentiable operations.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// topological order for the backward sweep. One tape per forward/backward;
/// not thread-safe.
class Tape {
 public:
  using Backward = std::function<void(const Tensor& grad_out, GradSink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf. Named leaves are reported by Gradients::named.
  Tensor watch(const Tensor& value, const std::string& name = {}) {
    if (!name.empty() && names_.count(name)) throw Error("leaf '" + name + "' watched twice");
    const std::size_t id = push(value.shape(), {}, nullptr);
    if (!name.empty()) names_.emplace(name, id);
    return link(value, id);
  }

  template <class Range>
  Tensor record(const Tensor& value, const Range& inputs, Backward fn) {
    std::vector<std::size_t> parents;
    for (const Tensor& in : inputs) {
      if (in.tracked() && in.tape() != this) throw Error("operation mixes tensors from two tapes");
      parents.push_back(in.tracked() ? in.node() : GradSink::kNone);
    }
    return link(value, push(value.shape(), std::move(parents), std::move(fn)));
  }

  std::size_t size() const noexcept { return shapes_.size(); }

  /// Reverse sweep from a scalar root.
  Gradients backward(const Tensor& root, double seed = 1.0) const {
    if (root.tape() != this) throw Error("backward: root is not recorded on this tape");
    if (root.size() != 1)
      throw ShapeError("backward: root must be a scalar, got shape " + to_string(root.shape()));
    std::vector<std::optional<Tensor>> adj(shapes_.size());
    adj[root.node()] = Tensor(root.shape(), seed);
    for (std::size_t i = root.node() + 1; i-- > 0;) {
      if (!adj[i] || !backward_[i]) continue;
      GradSink sink(adj, parents_[i], shapes_);
      const Tensor g = *adj[i];
      backward_[i](g, sink);
    }
    return Gradients(std::move(adj), shapes_, names_);
  }

 private:
  std::size_t push(Shape shape, std::vector<std::size_t> parents, Backward fn) {
    shapes_.push_back(std::move(shape));
    parents_.push_back(std::move(parents));
    backward_.push_back(std::move(fn));
    return shapes_.size() - 1;
  }

  Tensor link(const Tensor& value, std::size_t id) {
    Tensor t = value.detached();
    t.tape_ = this;
    t.node_ = id;
    return t;
  }

  std::vector<Shape> shapes_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<Backward> backward_;
  std::map<std::string, std::size_t> names_;
};

/// Links `value` to the tape of the first tracked input, or returns it untracked
/// when no input is tracked (inference path, no recording cost).
template <class Fn>
Tensor make_result(Tensor value, std::initializer_list<std::reference_wrapper<const Tensor>> inputs,
                   Fn&& backward) {
  Tape* tape = nullptr;
  for (const Tensor& in : inputs)
    if (in.tracked()) {
      tape = in.tape();
      break;
    }
  if (!tape) return value;
  return tape->record(value, inputs, Tape::Backward(std::forward<Fn>(backward)));
}

/// make_result for a runtime-sized list of inputs.
template <class Fn>
Tensor make_result(Tensor value, const std::vector<Tensor>& inputs, Fn&& backward) {
  Tape* tape = nullptr;
  for (const Tensor& in : inputs)
    if (in.tracked()) {
      tape = in.tape();
      break;
    }
  if (!tape) return value;
  return tape->record(value, inputs, Tape::Backward(std::forward<Fn>(backward)));
}

/// Central differences of a scalar function at every coordinate of x.
inline Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                 double step) {
  Tensor grad(x.shape(), 0.0);
  auto g = grad.mutable_data();
  Tensor probe = x.detached();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    const double hi = orig + step, lo = orig - step;
    probe.mutable_data()[i] = hi;
    const double fp = f(probe);
    probe.mutable_data()[i] = lo;
    const double fm = f(probe);
    probe.mutable_data()[i] = orig;
    g[i] = (fp - fm) / (hi - lo);
  }
  return grad;
}

/// max_i |analytic_i - numeric_i| / max(1e-12, |numeric_i|).
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(1e-12, std::abs(numeric[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

/// Compares the tape gradient of f at x against central differences.
/// f maps a (possibly tracked) tensor to a scalar tensor.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                double step = 1e-6) {
  Tape tape;
  const Tensor xt = tape.watch(x, "x");
  const Tensor y = f(xt);
  const Tensor analytic = tape.backward(y).named("x");
  const Tensor numeric =
      central_difference([&](const Tensor& p) { return f(p).item(); }, x.detached(), step);
  return max_relative_error(analytic, numeric);
}

}  // namespace lotr
