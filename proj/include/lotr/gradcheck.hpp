#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lotr/autodiff.hpp"
#include "lotr/losses.hpp"
#include "lotr/model.hpp"
#include "lotr/nn.hpp"
#include "lotr/ops.hpp"
#include "lotr/rng.hpp"

namespace lotr {

struct GradcheckOptions {
  double tolerance = 1e-4;
  std::size_t points = 10;  // random evaluation points per component
  std::uint64_t seed = 0;
  double step = 1e-6;  // central-difference base step
  std::string corrupt;  // component whose analytic gradient is perturbed (harness self-test)
};

struct GradcheckResult {
  std::string component;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  bool passed = false;
};

/// A differentiable function of several tensors plus a sampler of inputs.
struct GradcheckComponent {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> sample;
  std::function<Tensor(const std::vector<Tensor>&)> apply;
};

namespace detail {

inline Tensor normal_tensor(const Shape& shape, Rng& rng, double sd = 1.0) {
  Tensor t(shape);
  for (auto& v : t.mutable_data()) v = rng.normal(0.0, sd);
  return t;
}

inline double relative_error(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

/// Packs MHA weights as wq..., wk..., wv..., wo.
inline void push_mha(std::vector<Tensor>& out, std::size_t d, std::size_t heads, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (int kind = 0; kind < 3; ++kind)
    for (std::size_t h = 0; h < heads; ++h) out.push_back(normal_tensor({d, d / heads}, rng, sd));
  out.push_back(normal_tensor({d, d}, rng, sd));
}

inline MhaWeights take_mha(const std::vector<Tensor>& in, std::size_t& at, std::size_t heads) {
  MhaWeights w;
  for (std::size_t h = 0; h < heads; ++h) w.wq.push_back(in[at + h]);
  for (std::size_t h = 0; h < heads; ++h) w.wk.push_back(in[at + heads + h]);
  for (std::size_t h = 0; h < heads; ++h) w.wv.push_back(in[at + 2 * heads + h]);
  w.wo = in[at + 3 * heads];
  at += 3 * heads + 1;
  return w;
}

inline void push_ln(std::vector<Tensor>& out, std::size_t d, Rng& rng) {
  Tensor g = normal_tensor({d}, rng, 0.1);
  for (auto& v : g.mutable_data()) v += 1.0;
  out.push_back(g);
  out.push_back(normal_tensor({d}, rng, 0.1));
}

inline LayerNormWeights take_ln(const std::vector<Tensor>& in, std::size_t& at) {
  at += 2;
  return {in[at - 2], in[at - 1]};
}

inline LinearWeights take_linear(const std::vector<Tensor>& in, std::size_t& at) {
  at += 2;
  return {in[at - 2], in[at - 1]};
}

/// Residuals kept at least `margin` away from every loss breakpoint.
inline Tensor residuals_away_from_kinks(const Shape& shape, const LossSpec& spec, Rng& rng, double margin = 1e-3) {
  const double breaks[] = {0.0, spec.t(), spec.w(), 1.0};
  Tensor r(shape);
  for (auto& v : r.mutable_data()) {
    for (;;) {
      const double mag = [&] {
        switch (rng.below(3)) {
          case 0: return rng.uniform(0.0, spec.t());
          case 1: return rng.uniform(spec.t(), spec.w());
          default: return rng.uniform(spec.w(), 3.0 * spec.w());
        }
      }();
      bool ok = true;
      for (double b : breaks) ok = ok && std::abs(mag - b) > margin;
      if (!ok) continue;
      v = rng.uniform() < 0.5 ? -mag : mag;
      break;
    }
  }
  return r;
}

}  // namespace detail

/// Worst relative error between the analytic and central-difference
/// directional derivative of sum(R * f(inputs)), one random direction per
/// input tensor, over `points` random draws. Each probe keeps the best of the
/// steps 10h, h and h/10, so neither a ReLU kink inside one step nor rounding
/// on a small derivative counts as a mismatch.
inline GradcheckResult check_component(const GradcheckComponent& c, const GradcheckOptions& opt) {
  GradcheckResult r{c.name, 0.0, 0, false};
  Rng rng(derive_seed(opt.seed, std::hash<std::string>{}(c.name)));
  const double corrupt = opt.corrupt == c.name ? 1.01 : 1.0;
  for (std::size_t p = 0; p < opt.points; ++p) {
    const std::vector<Tensor> x = c.sample(rng);
    const Tensor probe = detail::normal_tensor(c.apply(x).shape(), rng);
    auto phi = [&](const std::vector<Tensor>& in) { return sum(mul(c.apply(in), probe)).item(); };
    Tape tape;
    std::vector<Tensor> watched;
    for (std::size_t i = 0; i < x.size(); ++i) watched.push_back(tape.watch(x[i], "in" + std::to_string(i)));
    const Gradients g = tape.backward(sum(mul(c.apply(watched), probe)));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Tensor dir = detail::normal_tensor(x[i].shape(), rng);
      const Tensor gi = g.named("in" + std::to_string(i));
      double analytic = 0.0;
      for (std::size_t k = 0; k < dir.size(); ++k) analytic += gi[k] * dir[k];
      analytic *= corrupt;
      double e = INFINITY;
      for (double h : {10.0 * opt.step, opt.step, opt.step / 10.0}) {
        std::vector<Tensor> lo = x, hi = x;
        auto ld = lo[i].mutable_data();
        auto hd = hi[i].mutable_data();
        for (std::size_t k = 0; k < dir.size(); ++k) {
          ld[k] -= h * dir[k];
          hd[k] += h * dir[k];
        }
        const double numeric = (phi(hi) - phi(lo)) / (2.0 * h);
        if (std::isfinite(analytic) && std::isfinite(numeric))
          e = std::min(e, detail::relative_error(analytic, numeric));
      }
      r.max_rel_error = std::max(r.max_rel_error, e);
      ++r.probes;
    }
  }
  r.passed = r.max_rel_error <= opt.tolerance;
  return r;
}

/// Every layer, every loss kind and the end-to-end model under `model`.
inline std::vector<GradcheckComponent> gradcheck_components(const ModelConfig& model) {
  using detail::normal_tensor;
  std::vector<GradcheckComponent> out;
  constexpr std::size_t d = 8, heads = 2;

  out.push_back({"mha",
                 [](Rng& rng) {
                   std::vector<Tensor> in{normal_tensor({5, d}, rng), normal_tensor({7, d}, rng),
                                          normal_tensor({7, d}, rng)};
                   detail::push_mha(in, d, heads, rng);
                   return in;
                 },
                 [](const std::vector<Tensor>& in) {
                   std::size_t at = 3;
                   return multi_head_attention(in[0], in[1], in[2], detail::take_mha(in, at, heads));
                 }});

  out.push_back({"layer_norm",
                 [](Rng& rng) {
                   std::vector<Tensor> in{normal_tensor({4, 6}, rng)};
                   detail::push_ln(in, 6, rng);
                   return in;
                 },
                 [](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2]); }});

  out.push_back({"conv",
                 [](Rng& rng) {
                   return std::vector<Tensor>{normal_tensor({3, 7, 7}, rng), normal_tensor({4, 3, 3, 3}, rng, 0.3),
                                              normal_tensor({4}, rng)};
                 },
                 [](const std::vector<Tensor>& in) { return conv2d(in[0], {in[1], in[2], 2, 1}); }});

  out.push_back({"deconv",
                 [](Rng& rng) {
                   return std::vector<Tensor>{normal_tensor({3, 4, 4}, rng), normal_tensor({3, 2, 4, 4}, rng, 0.3),
                                              normal_tensor({2}, rng)};
                 },
                 [](const std::vector<Tensor>& in) { return deconv2d(in[0], {in[1], in[2], 2, 1}); }});

  out.push_back({"encoder_layer",
                 [](Rng& rng) {
                   std::vector<Tensor> in{normal_tensor({6, d}, rng), normal_tensor({6, d}, rng)};
                   detail::push_mha(in, d, heads, rng);
                   detail::push_ln(in, d, rng);
                   in.push_back(normal_tensor({d, d}, rng, 0.5));
                   in.push_back(normal_tensor({d}, rng, 0.5));
                   detail::push_ln(in, d, rng);
                   return in;
                 },
                 [](const std::vector<Tensor>& in) {
                   std::size_t at = 2;
                   EncoderLayerWeights w;
                   w.attn = detail::take_mha(in, at, heads);
                   w.ln1 = detail::take_ln(in, at);
                   w.ffn = detail::take_linear(in, at);
                   w.ln2 = detail::take_ln(in, at);
                   return encoder_layer(in[0], in[1], w);
                 }});

  out.push_back({"decoder_layer",
                 [](Rng& rng) {
                   std::vector<Tensor> in{normal_tensor({4, d}, rng), normal_tensor({4, d}, rng),
                                          normal_tensor({6, d}, rng), normal_tensor({6, d}, rng)};
                   detail::push_mha(in, d, heads, rng);
                   detail::push_ln(in, d, rng);
                   detail::push_mha(in, d, heads, rng);
                   detail::push_ln(in, d, rng);
                   in.push_back(normal_tensor({d, d}, rng, 0.5));
                   in.push_back(normal_tensor({d}, rng, 0.5));
                   detail::push_ln(in, d, rng);
                   return in;
                 },
                 [](const std::vector<Tensor>& in) {
                   std::size_t at = 4;
                   DecoderLayerWeights w;
                   w.self_attn = detail::take_mha(in, at, heads);
                   w.ln1 = detail::take_ln(in, at);
                   w.cross_attn = detail::take_mha(in, at, heads);
                   w.ln2 = detail::take_ln(in, at);
                   w.ffn = detail::take_linear(in, at);
                   w.ln3 = detail::take_ln(in, at);
                   return decoder_layer(in[0], in[1], in[2], in[3], w);
                 }});

  out.push_back({"head",
                 [](Rng& rng) {
                   return std::vector<Tensor>{normal_tensor({5, d}, rng), normal_tensor({d, 6}, rng, 0.5),
                                              normal_tensor({6}, rng, 0.5), normal_tensor({6, 2}, rng, 0.5),
                                              normal_tensor({2}, rng, 0.5)};
                 },
                 [](const std::vector<Tensor>& in) {
                   return prediction_head(in[0], {{in[1], in[2]}, {in[3], in[4]}});
                 }});

  for (LossKind kind : {LossKind::kL1, LossKind::kL2, LossKind::kSmoothL1, LossKind::kWing, LossKind::kSmoothWing}) {
    const LossSpec spec(kind);
    out.push_back({"loss:" + to_string(kind),
                   [spec](Rng& rng) {
                     const Tensor target = normal_tensor({6, 2}, rng, 20.0);
                     const Tensor resid = detail::residuals_away_from_kinks({6, 2}, spec, rng);
                     Tensor pred(target.shape());
                     auto p = pred.mutable_data();
                     for (std::size_t i = 0; i < p.size(); ++i) p[i] = target[i] - resid[i];
                     return std::vector<Tensor>{target, pred};
                   },
                   [spec](const std::vector<Tensor>& in) { return total_loss(in[0], in[1], spec); }});
  }

  out.push_back({"model",
                 [model](Rng& rng) {
                   std::vector<Tensor> in{detail::normal_tensor({3, model.image_height, model.image_width}, rng, 0.5),
                                          detail::normal_tensor({model.landmarks, 2}, rng, 20.0)};
                   const ModelParams shapes = ModelParams::zeros(model);
                   shapes.for_each([&](const std::string& name, const Tensor& t) {
                     const bool gain = name.find(".gain") != std::string::npos;
                     double fan = 1.0;
                     for (std::size_t k = 1; k < t.rank(); ++k) fan *= static_cast<double>(t.dim(k));
                     if (t.rank() == 2) fan = static_cast<double>(t.dim(0));
                     Tensor v = normal_tensor(t.shape(), rng, t.rank() <= 1 ? 0.1 : std::sqrt(2.0 / fan));
                     if (gain)
                       for (auto& g : v.mutable_data()) g += 1.0;
                     in.push_back(v);
                   });
                   return in;
                 },
                 [model](const std::vector<Tensor>& in) {
                   ModelParams p = ModelParams::zeros(model);
                   std::size_t at = 2;
                   p.for_each([&](const std::string&, Tensor& t) { t = in[at++]; });
                   return total_loss(in[1], forward_raw(in[0], p, model), LossSpec());
                 }});
  return out;
}

inline std::vector<GradcheckResult> run_gradcheck(const ModelConfig& model, const GradcheckOptions& opt) {
  if (opt.tolerance < 0.0) throw ConfigError("tolerance must be >= 0");
  if (opt.points == 0) throw ConfigError("gradcheck needs at least one point");
  if (!(opt.step > 0.0)) throw ConfigError("finite-difference step must be > 0");
  const auto components = gradcheck_components(model);
  if (!opt.corrupt.empty() &&
      std::none_of(components.begin(), components.end(), [&](const auto& c) { return c.name == opt.corrupt; }))
    throw ConfigError("unknown gradcheck component '" + opt.corrupt + "'");
  std::vector<GradcheckResult> out;
  for (const auto& c : components) out.push_back(check_component(c, opt));
  return out;
}

}  // namespace lotr
