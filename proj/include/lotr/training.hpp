#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lotr/container.hpp"
#include "lotr/data.hpp"
#include "lotr/losses.hpp"
#include "lotr/metrics.hpp"
#include "lotr/model.hpp"
#include "lotr/rng.hpp"

namespace lotr {

/// He-normal weights (std sqrt(2 / fan_in)), zero biases, unit layer-norm
/// gains, positional encoding ~ N(0, 1), landmark queries ~ N(0, 1e-4^2).
/// Transposed-convolution fan-in counts the taps that reach one output pixel,
/// in * kh * kw / stride^2.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  Rng rng(derive_seed(seed, 0x1417));
  auto he = [&](Tensor& t, std::size_t fan_in) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.mutable_data()) v = rng.normal(0.0, sd);
  };
  for (auto& b : p.backbone) he(b.kernel, b.kernel.dim(1) * 9);
  he(p.reduction.kernel, p.reduction.kernel.dim(1));
  for (auto& u : p.upsample) he(u.kernel, u.kernel.dim(0) * 16 / (u.stride * u.stride));
  if (!p.encoder.empty()) {
    for (auto& v : p.pos_encoding.mutable_data()) v = rng.normal();
    for (auto& v : p.queries.mutable_data()) v = rng.normal(0.0, 1e-4);
  }
  auto mha = [&](MhaWeights& m) {
    const std::size_t d = m.wo.dim(0);
    for (std::size_t h = 0; h < m.heads(); ++h) {
      he(m.wq[h], d);
      he(m.wk[h], d);
      he(m.wv[h], d);
    }
    he(m.wo, d);
  };
  for (auto& e : p.encoder) {
    mha(e.attn);
    he(e.ffn.weight, e.ffn.in_features());
  }
  for (auto& d : p.decoder) {
    mha(d.self_attn);
    mha(d.cross_attn);
    he(d.ffn.weight, d.ffn.in_features());
  }
  for (auto& h : p.head) he(h.weight, h.in_features());
  return p;
}

struct LambConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.0;
  double max_trust = 10.0;
};

/// Adam moments per parameter name plus the step counter.
struct OptimizerState {
  std::map<std::string, Tensor> m, v;
  std::uint64_t step = 0;

  void save_to(TensorContainer& c) const {
    for (const auto& [name, t] : m) c.add("opt.m." + name, t);
    for (const auto& [name, t] : v) c.add("opt.v." + name, t);
    c.add("opt.step", Tensor::scalar(static_cast<double>(step)));
  }

  static OptimizerState load_from(const TensorContainer& c, const ModelParams& shapes) {
    OptimizerState s;
    shapes.for_each([&](const std::string& name, const Tensor& t) {
      if (!c.contains("opt.m." + name)) return;  // parameter never updated yet
      s.m[name] = c.get("opt.m." + name);
      s.v[name] = c.get("opt.v." + name);
      if (s.m[name].shape() != t.shape() || s.v[name].shape() != t.shape())
        throw IoError("optimizer moments for '" + name + "' do not match the parameter shape");
    });
    s.step = static_cast<std::uint64_t>(c.get("opt.step").item());
    return s;
  }
};

/// Gradient lookup by parameter name.
using GradientFn = std::function<Tensor(const std::string& name)>;

/// One LAMB update. Per tensor: u = mhat / (sqrt(vhat) + eps) + wd * p,
/// trust = ||p|| / ||u|| clamped to [0, max_trust] (1 if either norm is 0),
/// p <- p - lr * trust * u.
inline void lamb_step(ModelParams& params, const GradientFn& grad, OptimizerState& state, double lr,
                      const LambConfig& cfg = {}) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  params.for_each([&](const std::string& name, Tensor& p) {
    const Tensor g = grad(name);
    if (g.shape() != p.shape())
      throw ShapeError("gradient for '" + name + "' has shape " + to_string(g.shape()) + ", parameter " +
                       to_string(p.shape()));
    if (!all_finite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
    auto [mit, fresh] = state.m.try_emplace(name, p.shape(), 0.0);
    if (fresh) state.v.emplace(name, Tensor(p.shape(), 0.0));
    auto m = mit->second.mutable_data();
    auto v = state.v.at(name).mutable_data();
    const auto gd = g.data();
    const auto pd = p.data();
    std::vector<double> u(p.size());
    double pn = 0.0, un = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      u[i] = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps) + cfg.weight_decay * pd[i];
      pn += pd[i] * pd[i];
      un += u[i] * u[i];
    }
    pn = std::sqrt(pn);
    un = std::sqrt(un);
    if (un == 0.0) return;
    const double trust = pn == 0.0 ? 1.0 : std::clamp(pn / un, 0.0, cfg.max_trust);
    auto out = p.mutable_data();
    for (std::size_t i = 0; i < u.size(); ++i) out[i] -= lr * trust * u[i];
  });
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double base_lr = 1e-3;
  std::vector<std::size_t> lr_drop_epochs{50, 75};
  double lr_drop_factor = 0.1;
  LossSpec loss;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // steps; 0 disables
  std::size_t max_steps = 0;         // 0 = run all epochs
  double clip_norm = 0.0;            // global gradient-norm clip; 0 disables
  bool flip_augment = false;
  std::size_t val_every = 1;  // epochs; 0 disables
  NormMode norm = NormMode::kImage;
  LambConfig lamb;

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("base learning rate must be positive");
    for (std::size_t i = 1; i < lr_drop_epochs.size(); ++i)
      if (lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) throw ConfigError("LR drop epochs must be strictly increasing");
    if (!(lr_drop_factor > 0.0)) throw ConfigError("LR drop factor must be positive");
    if (clip_norm < 0.0) throw ConfigError("clip norm must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const LossSpec& s) {
  j = {{"kind", to_string(s.kind())}, {"w", s.w()}, {"epsilon", s.epsilon()}, {"t", s.t()}};
}

inline LossSpec loss_from_json(const nlohmann::json& j, const LossSpec& base = {}) {
  const LossKind kind = j.contains("kind") ? parse_loss_kind(j.at("kind").get<std::string>()) : base.kind();
  return LossSpec(kind, j.value("w", base.w()), j.value("epsilon", base.epsilon()), j.value("t", base.t()));
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"base_lr", c.base_lr},
       {"lr_drop_epochs", c.lr_drop_epochs},
       {"lr_drop_factor", c.lr_drop_factor},
       {"loss", c.loss},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"max_steps", c.max_steps},
       {"clip_norm", c.clip_norm},
       {"flip_augment", c.flip_augment},
       {"val_every", c.val_every},
       {"norm", to_string(c.norm)},
       {"lamb",
        {{"beta1", c.lamb.beta1},
         {"beta2", c.lamb.beta2},
         {"eps", c.lamb.eps},
         {"weight_decay", c.lamb.weight_decay},
         {"max_trust", c.lamb.max_trust}}}};
}

/// Overrides fields of `c` present in `j`.
inline void merge_json(const nlohmann::json& j, TrainConfig& c) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  try {
    take("epochs", c.epochs);
    take("batch_size", c.batch_size);
    take("base_lr", c.base_lr);
    take("lr_drop_epochs", c.lr_drop_epochs);
    take("lr_drop_factor", c.lr_drop_factor);
    take("seed", c.seed);
    take("checkpoint_every", c.checkpoint_every);
    take("max_steps", c.max_steps);
    take("clip_norm", c.clip_norm);
    take("flip_augment", c.flip_augment);
    take("val_every", c.val_every);
    if (j.contains("norm")) c.norm = parse_norm_mode(j.at("norm").get<std::string>());
    if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"), c.loss);
    if (j.contains("lamb")) {
      const auto& l = j.at("lamb");
      c.lamb.beta1 = l.value("beta1", c.lamb.beta1);
      c.lamb.beta2 = l.value("beta2", c.lamb.beta2);
      c.lamb.eps = l.value("eps", c.lamb.eps);
      c.lamb.weight_decay = l.value("weight_decay", c.lamb.weight_decay);
      c.lamb.max_trust = l.value("max_trust", c.lamb.max_trust);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid training config: ") + e.what());
  }
}

/// Piecewise-constant schedule: base LR times factor^(number of drop epochs <= epoch).
inline double lr_at(std::size_t epoch, const TrainConfig& c) {
  double lr = c.base_lr;
  for (auto e : c.lr_drop_epochs)
    if (epoch >= e) lr *= c.lr_drop_factor;
  return lr;
}

struct LogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;  // mean training loss over the epoch's batches
  double lr = 0.0;
  std::optional<double> val_nme;
};

inline nlohmann::json to_json(const LogRow& r) {
  nlohmann::json j{{"epoch", r.epoch}, {"step", r.step}, {"loss", r.loss}, {"lr", r.lr}};
  j["val_nme"] = r.val_nme ? nlohmann::json(*r.val_nme) : nlohmann::json(nullptr);
  return j;
}

/// Mean NME of eval-mode predictions over `samples`.
inline double mean_nme(const std::vector<Sample>& samples, const ModelParams& p, const ModelConfig& c,
                       NormMode norm, bool flip = false, const SwapMap* swap = nullptr) {
  if (samples.empty()) throw ConfigError("cannot compute NME of an empty sample list");
  double total = 0.0;
  for (const auto& s : samples) {
    const LandmarkSet pred = flip ? flip_averaged_inference(s.image, p, c, *swap) : predict(s.image, p, c);
    total += nme(s.landmarks, pred, norm_factor(s.landmarks, norm, kLeftEye, kRightEye));
  }
  return total / static_cast<double>(samples.size());
}

/// Parameters, optimizer state and step of a run in progress.
struct TrainState {
  ModelParams params;
  OptimizerState optimizer;
};

inline std::string checkpoint_name(std::size_t step) { return "ckpt-" + std::to_string(step) + ".lotr"; }

inline TensorContainer checkpoint_container(const TrainState& s) {
  TensorContainer c;
  s.params.for_each([&](const std::string& name, const Tensor& t) { c.add("param." + name, t); });
  s.optimizer.save_to(c);
  return c;
}

inline TrainState load_checkpoint(const std::string& path, const ModelConfig& config) {
  const TensorContainer c = TensorContainer::load(path);
  TrainState s;
  s.params = ModelParams::from_container(c, config, "param.");
  if (c.contains("opt.step")) s.optimizer = OptimizerState::load_from(c, s.params);
  return s;
}

struct TrainOptions {
  std::string out_dir;                 // checkpoints go here when non-empty
  std::ostream* log = nullptr;         // JSON lines
  const std::vector<Sample>* validation = nullptr;  // defaults to the training set
  std::optional<TrainState> resume;    // continue from this state
};

struct TrainResult {
  TrainState state;
  std::vector<LogRow> log;
  std::vector<double> step_losses;
  double final_loss = 0.0;
  std::optional<double> final_val_nme;
};

namespace detail {

inline double global_norm(const Gradients& g, const ModelParams& p) {
  double s = 0.0;
  p.for_each([&](const std::string& name, const Tensor& t) {
    (void)t;
    for (double v : g.named(name).data()) s += v * v;
  });
  return std::sqrt(s);
}

}  // namespace detail

/// Mini-batch training: seeded shuffle per epoch, batch-mean of the per-sample
/// total loss, one LAMB step per batch. Deterministic for a fixed seed.
inline TrainResult train(const std::vector<Sample>& data, const ModelConfig& mc, const TrainConfig& tc,
                         const TrainOptions& opt = {}) {
  mc.validate();
  tc.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  for (const auto& s : data) {
    require_shape(s.image, {3, mc.image_height, mc.image_width}, "training image");
    if (s.landmarks.count() != mc.landmarks)
      throw ConfigError("sample has " + std::to_string(s.landmarks.count()) + " landmarks, model expects " +
                        std::to_string(mc.landmarks));
  }
  const SwapMap swap = tc.flip_augment ? face_swap_map(mc.landmarks) : SwapMap{};
  TrainResult r;
  r.state = opt.resume ? *opt.resume : TrainState{init_params(mc, tc.seed), {}};
  const std::size_t n = data.size();
  const std::size_t batch = std::min(tc.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  std::size_t step = r.state.optimizer.step;
  const std::size_t total_steps = tc.max_steps ? std::min(tc.max_steps, tc.epochs * steps_per_epoch)
                                               : tc.epochs * steps_per_epoch;
  const auto& val = opt.validation ? *opt.validation : data;

  while (step < total_steps) {
    const std::size_t epoch = step / steps_per_epoch;
    Rng shuffle_rng(derive_seed(tc.seed, 0x5EED0000ULL + epoch));
    const auto order = shuffled_indices(n, shuffle_rng);
    const double lr = lr_at(epoch, tc);
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t b = step % steps_per_epoch; b < steps_per_epoch && step < total_steps; ++b) {
      const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
      Tape tape;
      const ModelParams watched = r.state.params.watched(tape);
      Tensor loss;
      for (std::size_t k = lo; k < hi; ++k) {
        Rng sample_rng(derive_seed(derive_seed(tc.seed, step), k - lo));
        const Sample* s = &data[order[k]];
        Sample flipped;
        if (tc.flip_augment && sample_rng.uniform() < 0.5) {
          flipped = horizontal_flip(*s, swap);
          s = &flipped;
        }
        const Tensor pred = forward_raw(s->image, watched, mc, ForwardContext::train(mc, sample_rng));
        const Tensor l = total_loss(to_model_units(s->landmarks.coords, mc), pred, tc.loss);
        loss = k == lo ? l : add(loss, l);
      }
      loss = scale(loss, 1.0 / static_cast<double>(hi - lo));
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           " (step " + std::to_string(step) + ")");
      const Gradients grads = tape.backward(loss);
      double clip = 1.0;
      if (tc.clip_norm > 0.0) {
        const double norm = detail::global_norm(grads, r.state.params);
        if (norm > tc.clip_norm) clip = tc.clip_norm / norm;
      }
      lamb_step(
          r.state.params,
          [&](const std::string& name) {
            Tensor g = grads.named(name);
            if (clip != 1.0)
              for (auto& v : g.mutable_data()) v *= clip;
            return g;
          },
          r.state.optimizer, lr, tc.lamb);
      ++step;
      r.step_losses.push_back(value);
      epoch_loss += value;
      ++epoch_batches;
      if (tc.checkpoint_every && step % tc.checkpoint_every == 0 && !opt.out_dir.empty())
        checkpoint_container(r.state).save((std::filesystem::path(opt.out_dir) / checkpoint_name(step)).string());
    }
    const bool epoch_done = step % steps_per_epoch == 0 || step == total_steps;
    if (!epoch_done || epoch_batches == 0) continue;
    LogRow row{epoch, step, epoch_loss / static_cast<double>(epoch_batches), lr, std::nullopt};
    if (tc.val_every && ((epoch + 1) % tc.val_every == 0 || step == total_steps))
      row.val_nme = mean_nme(val, r.state.params, mc, tc.norm);
    if (opt.log) *opt.log << to_json(row).dump() << '\n' << std::flush;
    r.log.push_back(row);
  }
  if (!r.step_losses.empty()) r.final_loss = r.step_losses.back();
  for (auto it = r.log.rbegin(); it != r.log.rend(); ++it)
    if (it->val_nme) {
      r.final_val_nme = it->val_nme;
      break;
    }
  return r;
}

}  // namespace lotr
