#pragma once

#include <cmath>
#include <string>

#include "lotr/autodiff.hpp"
#include "lotr/tensor.hpp"

namespace lotr {

enum class LossKind { kL1, kL2, kSmoothL1, kWing, kSmoothWing };

inline std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kL1: return "l1";
    case LossKind::kL2: return "l2";
    case LossKind::kSmoothL1: return "smooth-l1";
    case LossKind::kWing: return "wing";
    case LossKind::kSmoothWing: return "smooth-wing";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& name) {
  if (name == "l1") return LossKind::kL1;
  if (name == "l2") return LossKind::kL2;
  if (name == "smooth-l1") return LossKind::kSmoothL1;
  if (name == "wing") return LossKind::kWing;
  if (name == "smooth-wing") return LossKind::kSmoothWing;
  throw ConfigError("unknown loss kind '" + name + "' (expected l1, l2, smooth-l1, wing, smooth-wing)");
}

/// Loss kind and its parameters. The Wing offsets are derived once on
/// construction:
///   wing:        c  = w - w ln(1 + w/eps)
///   smooth-wing: s  = (w + eps) / (2t(eps + t)),  c1 = w - (w + eps) ln(1 + w/eps),  c2 = s t^2
class LossSpec {
 public:
  LossSpec() : LossSpec(LossKind::kSmoothWing) {}

  explicit LossSpec(LossKind kind, double w = 10.0, double epsilon = 2.0, double t = 0.01)
      : kind_(kind), w_(w), eps_(epsilon), t_(t) {
    if (!(w > 0.0)) throw ConfigError("loss parameter w must be > 0");
    if (!(epsilon > 0.0)) throw ConfigError("loss parameter epsilon must be > 0");
    if (kind == LossKind::kSmoothWing && !(t > 0.0 && t < w))
      throw ConfigError("smooth-wing threshold t must satisfy 0 < t < w");
    c_ = w_ - w_ * std::log1p(w_ / eps_);
    if (kind == LossKind::kSmoothWing) {
      s_ = (w_ + eps_) / (2.0 * t_ * (eps_ + t_));
      c1_ = w_ - (w_ + eps_) * std::log1p(w_ / eps_);
      c2_ = s_ * t_ * t_;
    }
  }

  LossKind kind() const { return kind_; }
  double w() const { return w_; }
  double epsilon() const { return eps_; }
  double t() const { return t_; }
  double c() const { return c_; }
  double s() const { return s_; }
  double c1() const { return c1_; }
  double c2() const { return c2_; }

 private:
  LossKind kind_;
  double w_, eps_, t_;
  double c_ = 0.0, s_ = 0.0, c1_ = 0.0, c2_ = 0.0;
};

struct LossValue {
  double value;
  double gradient;
};

/// Piecewise loss of a single residual. Values follow the literal branch
/// conditions (strict inequalities select the inner pieces); at an exact branch
/// boundary the gradient is the inner branch's derivative.
inline LossValue elementwise_loss(double x, const LossSpec& spec) {
  const double a = std::abs(x);
  const double sgn = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  switch (spec.kind()) {
    case LossKind::kL1:
      return {a, sgn};
    case LossKind::kL2:
      return {0.5 * x * x, x};
    case LossKind::kSmoothL1: {
      const double grad = a <= 1.0 ? x : sgn;
      return {a < 1.0 ? 0.5 * x * x : a - 0.5, grad};
    }
    case LossKind::kWing: {
      const double w = spec.w(), eps = spec.epsilon();
      const double grad = a <= w ? sgn * w / (eps + a) : sgn;
      return {a < w ? w * std::log1p(a / eps) : a - spec.c(), grad};
    }
    case LossKind::kSmoothWing: {
      const double w = spec.w(), eps = spec.epsilon(), t = spec.t();
      double value;
      if (a < t)
        value = spec.s() * x * x;
      else if (a > w)
        value = a - spec.c1() - spec.c2();
      else
        value = (w + eps) * std::log1p(a / eps) - spec.c2();
      double grad;
      if (a <= t)
        grad = 2.0 * spec.s() * x;
      else if (a <= w)
        grad = sgn * (w + eps) / (eps + a);
      else
        grad = sgn;
      return {value, grad};
    }
  }
  throw ConfigError("invalid loss kind");
}

/// Sum over landmarks and both coordinates of g(z - zhat). Differentiable in
/// both arguments.
inline Tensor total_loss(const Tensor& target, const Tensor& predicted, const LossSpec& spec) {
  if (target.shape() != predicted.shape())
    throw ShapeError("total_loss: target " + to_string(target.shape()) + " vs prediction " +
                     to_string(predicted.shape()));
  double total = 0.0;
  Tensor dres(target.shape());
  auto d = dres.mutable_data();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto lv = elementwise_loss(target[i] - predicted[i], spec);
    total += lv.value;
    d[i] = lv.gradient;
  }
  return make_result(Tensor::scalar(total), {target, predicted}, [dres](const Tensor& g, GradSink& sink) {
    const double s = g.item();
    Tensor gt = dres.detached();
    for (auto& v : gt.mutable_data()) v *= s;
    sink.add(0, gt);
    if (sink.wants(1)) {
      Tensor gp = gt.detached();
      for (auto& v : gp.mutable_data()) v = -v;
      sink.add(1, gp);
    }
  });
}

}  // namespace lotr
