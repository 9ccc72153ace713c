#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lotr/autodiff.hpp"
#include "lotr/container.hpp"
#include "lotr/landmarks.hpp"
#include "lotr/nn.hpp"
#include "lotr/ops.hpp"
#include "lotr/rng.hpp"
#include "lotr/tensor.hpp"

namespace lotr {

enum class HeadKind { kTransformer, kFfn };
enum class DropoutPlacement { kOutput, kSublayer };

/// Architecture hyperparameters.
///
/// The backbone is a stack of 3x3 stride-2 convolutions with ReLU, one per
/// entry of `backbone_channels`. When `upsample_filters` is empty the 1x1
/// reduction maps straight to the token dim; otherwise the reduction is
/// followed by 4x4 stride-2 deconvolutions (ReLU) whose last filter count is
/// the token dim.
struct ModelConfig {
  std::string name = "custom";
  std::size_t image_height = 96;
  std::size_t image_width = 96;
  std::vector<std::size_t> backbone_channels{8, 16, 32, 32, 64};
  std::size_t reduction_channels = 16;
  std::vector<std::size_t> upsample_filters;
  std::size_t token_dim = 16;
  std::size_t layers = 2;  // encoder and decoder depth
  std::size_t heads = 4;
  std::size_t landmarks = 10;
  std::vector<std::size_t> head_hidden{64, 64};
  HeadKind head = HeadKind::kTransformer;
  double dropout = 0.1;
  DropoutPlacement dropout_placement = DropoutPlacement::kOutput;
  bool normalized_coords = false;  // regress image-centred unit coordinates instead of pixels

  static std::size_t halve(std::size_t n) { return (n + 1) / 2; }  // 3x3, stride 2, padding 1

  std::size_t backbone_height() const {
    std::size_t h = image_height;
    for (std::size_t i = 0; i < backbone_channels.size(); ++i) h = halve(h);
    return h;
  }
  std::size_t backbone_width() const {
    std::size_t w = image_width;
    for (std::size_t i = 0; i < backbone_channels.size(); ++i) w = halve(w);
    return w;
  }
  std::size_t backbone_out_channels() const {
    return backbone_channels.empty() ? 3 : backbone_channels.back();
  }
  std::size_t grid_height() const { return backbone_height() << upsample_filters.size(); }
  std::size_t grid_width() const { return backbone_width() << upsample_filters.size(); }
  std::size_t tokens() const { return grid_height() * grid_width(); }

  void validate() const {
    if (image_height == 0 || image_width == 0) throw ConfigError("image size must be positive");
    if (landmarks == 0) throw ConfigError("landmark count must be >= 1");
    if (token_dim == 0 || reduction_channels == 0) throw ConfigError("channel counts must be positive");
    for (auto c : backbone_channels)
      if (c == 0) throw ConfigError("backbone channel counts must be positive");
    for (auto c : upsample_filters)
      if (c == 0) throw ConfigError("upsampling filter counts must be positive");
    if (upsample_filters.empty() && reduction_channels != token_dim)
      throw ConfigError("without upsampling the 1x1 reduction must output the token dim (" +
                        std::to_string(reduction_channels) + " != " + std::to_string(token_dim) + ")");
    if (!upsample_filters.empty() && upsample_filters.back() != token_dim)
      throw ConfigError("last upsampling filter count must equal the token dim");
    if (head == HeadKind::kTransformer) {
      if (layers == 0) throw ConfigError("transformer needs at least one layer");
      if (heads == 0 || token_dim % heads != 0)
        throw ConfigError("token dim " + std::to_string(token_dim) + " not divisible by head count " +
                          std::to_string(heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"image_height", c.image_height},
                     {"image_width", c.image_width},
                     {"backbone_channels", c.backbone_channels},
                     {"reduction_channels", c.reduction_channels},
                     {"upsample_filters", c.upsample_filters},
                     {"token_dim", c.token_dim},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"landmarks", c.landmarks},
                     {"head_hidden", c.head_hidden},
                     {"head", c.head == HeadKind::kTransformer ? "transformer" : "ffn"},
                     {"dropout", c.dropout},
                     {"dropout_placement", c.dropout_placement == DropoutPlacement::kOutput ? "output" : "sublayer"},
                     {"normalized_coords", c.normalized_coords}};
}

/// Reads keys present in `j` on top of the existing values of `c`.
inline void merge_json(const nlohmann::json& j, ModelConfig& c) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("name", c.name);
  take("image_height", c.image_height);
  take("image_width", c.image_width);
  take("backbone_channels", c.backbone_channels);
  take("reduction_channels", c.reduction_channels);
  take("upsample_filters", c.upsample_filters);
  take("token_dim", c.token_dim);
  take("layers", c.layers);
  take("heads", c.heads);
  take("landmarks", c.landmarks);
  take("head_hidden", c.head_hidden);
  take("dropout", c.dropout);
  take("normalized_coords", c.normalized_coords);
  if (j.contains("head")) {
    const auto h = j.at("head").get<std::string>();
    if (h != "transformer" && h != "ffn") throw ConfigError("head must be 'transformer' or 'ffn'");
    c.head = h == "ffn" ? HeadKind::kFfn : HeadKind::kTransformer;
  }
  if (j.contains("dropout_placement")) {
    const auto p = j.at("dropout_placement").get<std::string>();
    if (p != "output" && p != "sublayer") throw ConfigError("dropout_placement must be 'output' or 'sublayer'");
    c.dropout_placement = p == "output" ? DropoutPlacement::kOutput : DropoutPlacement::kSublayer;
  }
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  merge_json(j, c);
}

/// Named architecture presets. The full-size ones keep the channel and
/// resolution contracts of their pre-trained counterparts with a toy backbone.
inline ModelConfig preset(const std::string& name) {
  ModelConfig c;
  c.name = name;
  if (name == "micro") {
    c.head_hidden = {32};
    c.dropout = 0.0;
    c.normalized_coords = true;
    return c;
  }
  if (name == "tiny") {  // gradient-check scale
    c.image_height = c.image_width = 16;
    c.backbone_channels = {4, 8};
    c.reduction_channels = c.token_dim = 8;
    c.heads = 2;
    c.landmarks = 5;
    c.head_hidden = {8};
    return c;
  }
  c.image_height = c.image_width = 192;
  c.landmarks = 106;
  c.token_dim = 64;
  c.heads = 8;
  c.layers = 2;
  c.head_hidden = {512, 512};
  if (name == "lotr-m") {
    c.backbone_channels = {32, 64, 128, 256, 1280};
    c.reduction_channels = 64;
    return c;
  }
  if (name == "lotr-m+") {
    c.backbone_channels = {32, 64, 128, 256, 1280};
    c.reduction_channels = 256;
    c.upsample_filters = {128, 64};
    return c;
  }
  if (name == "lotr-r+") {
    c.backbone_channels = {64, 256, 512, 1024, 2048};
    c.reduction_channels = 256;
    c.upsample_filters = {128, 64};
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected micro, tiny, lotr-m, lotr-m+, lotr-r+)");
}

struct LayerNormWeights {
  Tensor gain;
  Tensor bias;
};

struct EncoderLayerWeights {
  MhaWeights attn;
  LayerNormWeights ln1;
  LinearWeights ffn;
  LayerNormWeights ln2;
};

struct DecoderLayerWeights {
  MhaWeights self_attn;
  LayerNormWeights ln1;
  MhaWeights cross_attn;
  LayerNormWeights ln2;
  LinearWeights ffn;
  LayerNormWeights ln3;
};

/// All learnable parameters, each reachable under a unique dotted name.
struct ModelParams {
  std::vector<ConvWeights> backbone;
  ConvWeights reduction;
  std::vector<ConvWeights> upsample;
  Tensor pos_encoding;  // WH x D
  Tensor queries;       // N x D
  std::vector<EncoderLayerWeights> encoder;
  std::vector<DecoderLayerWeights> decoder;
  std::vector<LinearWeights> head;

  /// Zero-filled parameters with the shapes implied by the config.
  static ModelParams zeros(const ModelConfig& c) {
    c.validate();
    ModelParams p;
    std::size_t in = 3;
    for (auto ch : c.backbone_channels) {
      p.backbone.push_back({Tensor({ch, in, 3, 3}), Tensor({ch}), 2, 1});
      in = ch;
    }
    p.reduction = {Tensor({c.reduction_channels, in, 1, 1}), Tensor({c.reduction_channels}), 1, 0};
    in = c.reduction_channels;
    for (auto f : c.upsample_filters) {
      p.upsample.push_back({Tensor({in, f, 4, 4}), Tensor({f}), 2, 1});
      in = f;
    }
    const std::size_t d = c.token_dim;
    auto linear_zeros = [](std::size_t i, std::size_t o) { return LinearWeights{Tensor({i, o}), Tensor({o})}; };
    if (c.head == HeadKind::kTransformer) {
      p.pos_encoding = Tensor({c.tokens(), d});
      p.queries = Tensor({c.landmarks, d});
      auto mha = [&] {
        MhaWeights m;
        for (std::size_t h = 0; h < c.heads; ++h) {
          m.wq.emplace_back(Shape{d, d / c.heads});
          m.wk.emplace_back(Shape{d, d / c.heads});
          m.wv.emplace_back(Shape{d, d / c.heads});
        }
        m.wo = Tensor({d, d});
        return m;
      };
      auto ln = [&] { return LayerNormWeights{Tensor({d}, 1.0), Tensor({d})}; };
      for (std::size_t l = 0; l < c.layers; ++l) {
        p.encoder.push_back({mha(), ln(), linear_zeros(d, d), ln()});
        p.decoder.push_back({mha(), ln(), mha(), ln(), linear_zeros(d, d), ln()});
      }
      in = d;
    } else {
      in = c.tokens() * d;
    }
    for (auto h : c.head_hidden) {
      p.head.push_back(linear_zeros(in, h));
      in = h;
    }
    p.head.push_back(linear_zeros(in, c.head == HeadKind::kTransformer ? 2 : 2 * c.landmarks));
    return p;
  }

  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  /// Copy whose tensors are watched leaves of `tape`, named as in for_each.
  ModelParams watched(Tape& tape) const {
    ModelParams p = *this;
    p.for_each([&](const std::string& name, Tensor& t) { t = tape.watch(t, name); });
    return p;
  }

  TensorContainer to_container() const {
    TensorContainer c;
    for_each([&](const std::string& name, const Tensor& t) { c.add(name, t); });
    return c;
  }

  /// Loads every parameter of `config` from `c`; missing or mis-shaped entries are errors.
  static ModelParams from_container(const TensorContainer& c, const ModelConfig& config,
                                    const std::string& prefix = {}) {
    ModelParams p = zeros(config);
    p.for_each([&](const std::string& name, Tensor& t) {
      const Tensor& v = c.get(prefix + name);
      if (v.shape() != t.shape())
        throw IoError("parameter '" + name + "' has shape " + to_string(v.shape()) + ", config expects " +
                      to_string(t.shape()));
      t = v;
    });
    return p;
  }

 private:
  template <class Self, class F>
  static void visit(Self& s, F& f) {
    auto conv = [&](const std::string& n, auto& w) {
      f(n + ".kernel", w.kernel);
      f(n + ".bias", w.bias);
    };
    auto lin = [&](const std::string& n, auto& w) {
      f(n + ".weight", w.weight);
      f(n + ".bias", w.bias);
    };
    auto ln = [&](const std::string& n, auto& w) {
      f(n + ".gain", w.gain);
      f(n + ".bias", w.bias);
    };
    auto mha = [&](const std::string& n, auto& m) {
      for (std::size_t h = 0; h < m.wq.size(); ++h) {
        const std::string hs = std::to_string(h);
        f(n + ".wq." + hs, m.wq[h]);
        f(n + ".wk." + hs, m.wk[h]);
        f(n + ".wv." + hs, m.wv[h]);
      }
      f(n + ".wo", m.wo);
    };
    for (std::size_t i = 0; i < s.backbone.size(); ++i) conv("backbone." + std::to_string(i), s.backbone[i]);
    conv("reduction", s.reduction);
    for (std::size_t i = 0; i < s.upsample.size(); ++i) conv("upsample." + std::to_string(i), s.upsample[i]);
    if (!s.encoder.empty()) {
      f(std::string("pos_encoding"), s.pos_encoding);
      f(std::string("queries"), s.queries);
    }
    for (std::size_t l = 0; l < s.encoder.size(); ++l) {
      const std::string n = "encoder." + std::to_string(l);
      mha(n + ".attn", s.encoder[l].attn);
      ln(n + ".ln1", s.encoder[l].ln1);
      lin(n + ".ffn", s.encoder[l].ffn);
      ln(n + ".ln2", s.encoder[l].ln2);
    }
    for (std::size_t l = 0; l < s.decoder.size(); ++l) {
      const std::string n = "decoder." + std::to_string(l);
      mha(n + ".self_attn", s.decoder[l].self_attn);
      ln(n + ".ln1", s.decoder[l].ln1);
      mha(n + ".cross_attn", s.decoder[l].cross_attn);
      ln(n + ".ln2", s.decoder[l].ln2);
      lin(n + ".ffn", s.decoder[l].ffn);
      ln(n + ".ln3", s.decoder[l].ln3);
    }
    for (std::size_t j = 0; j < s.head.size(); ++j) lin("head." + std::to_string(j), s.head[j]);
  }
};

/// Train mode enables dropout and needs a generator.
struct ForwardContext {
  Mode mode = Mode::kEval;
  double dropout = 0.0;
  DropoutPlacement placement = DropoutPlacement::kOutput;
  Rng* rng = nullptr;

  Tensor maybe_dropout(const Tensor& x, DropoutPlacement where) const {
    if (mode != Mode::kTrain || dropout == 0.0 || where != placement) return x;
    if (!rng) throw ConfigError("train-mode dropout needs a generator");
    return lotr::dropout(x, dropout, mode, *rng);
  }

  static ForwardContext eval() { return {}; }
  static ForwardContext train(const ModelConfig& c, Rng& rng) {
    return {Mode::kTrain, c.dropout, c.dropout_placement, &rng};
  }
};

/// Backbone: 3x3 stride-2 convolutions with ReLU.
inline Tensor backbone_forward(const Tensor& image, const ModelParams& p) {
  Tensor f = image;
  for (const auto& block : p.backbone) f = relu(conv2d(f, block));
  return f;
}

/// X0 = reshape(conv1x1(F)): token i is pixel (i / W, i % W), row-major.
inline Tensor featmap_to_tokens(const Tensor& feature, const ConvWeights& reduction) {
  if (reduction.kernel.rank() != 4 || reduction.kernel.dim(2) != 1 || reduction.kernel.dim(3) != 1)
    throw ConfigError("token conversion needs a 1x1 reduction kernel");
  const Tensor reduced = conv2d(feature, reduction);
  const std::size_t d = reduced.dim(0), pixels = reduced.dim(1) * reduced.dim(2);
  return transpose(reshape(reduced, {d, pixels}));
}

/// Backbone output to tokens, including the optional upsampling path.
inline Tensor feature_tokens(const Tensor& feature, const ModelParams& p) {
  if (p.upsample.empty()) return featmap_to_tokens(feature, p.reduction);
  Tensor f = conv2d(feature, p.reduction);
  for (const auto& up : p.upsample) f = relu(deconv2d(f, up));
  const std::size_t d = f.dim(0), pixels = f.dim(1) * f.dim(2);
  return transpose(reshape(f, {d, pixels}));
}

/// Single linear + ReLU position-wise feed-forward.
inline Tensor pffn(const Tensor& x, const LinearWeights& w) { return relu(linear(x, w)); }

inline Tensor layer_norm(const Tensor& x, const LayerNormWeights& w) { return layer_norm(x, w.gain, w.bias); }

/// enc1 = LN(MHA(X + P, X + P, X) + X); out = LN(PFFN(enc1) + enc1).
inline Tensor encoder_layer(const Tensor& x, const Tensor& pos, const EncoderLayerWeights& w,
                            const ForwardContext& ctx = {}) {
  require_shape(pos, x.shape(), "encoder positional encoding");
  const Tensor qk = add(x, pos);
  const Tensor attn = ctx.maybe_dropout(multi_head_attention(qk, qk, x, w.attn), DropoutPlacement::kSublayer);
  const Tensor enc1 = layer_norm(add(attn, x), w.ln1);
  const Tensor ff = ctx.maybe_dropout(pffn(enc1, w.ffn), DropoutPlacement::kSublayer);
  return layer_norm(add(ff, enc1), w.ln2);
}

/// dec1 = LN(MHA(Y + Y0, Y + Y0, Y) + Y)
/// dec2 = LN(MHA(dec1 + Y0, XL + P, XL) + dec1)
/// out  = LN(PFFN(dec2) + dec2)
inline Tensor decoder_layer(const Tensor& y, const Tensor& queries, const Tensor& memory, const Tensor& pos,
                            const DecoderLayerWeights& w, const ForwardContext& ctx = {}) {
  require_shape(queries, y.shape(), "decoder landmark queries");
  require_shape(pos, memory.shape(), "decoder positional encoding");
  const Tensor q1 = add(y, queries);
  const Tensor sa = ctx.maybe_dropout(multi_head_attention(q1, q1, y, w.self_attn), DropoutPlacement::kSublayer);
  const Tensor dec1 = layer_norm(add(sa, y), w.ln1);
  const Tensor ca = ctx.maybe_dropout(
      multi_head_attention(add(dec1, queries), add(memory, pos), memory, w.cross_attn), DropoutPlacement::kSublayer);
  const Tensor dec2 = layer_norm(add(ca, dec1), w.ln2);
  const Tensor ff = ctx.maybe_dropout(pffn(dec2, w.ffn), DropoutPlacement::kSublayer);
  return layer_norm(add(ff, dec2), w.ln3);
}

/// Hidden layers with ReLU, then a linear output layer without activation.
inline Tensor prediction_head(const Tensor& x, const std::vector<LinearWeights>& layers) {
  if (layers.empty()) throw ConfigError("prediction head has no layers");
  Tensor h = x;
  for (std::size_t j = 0; j + 1 < layers.size(); ++j) h = relu(linear(h, layers[j]));
  return linear(h, layers.back());
}

namespace detail {
inline void check_image(const Tensor& image, const ModelConfig& c) {
  require_shape(image, {3, c.image_height, c.image_width}, "input image");
}
}  // namespace detail

/// Transformer model output N x 2 in model units (pixels, or image-centred unit
/// coordinates when config.normalized_coords).
inline Tensor lotr_forward_raw(const Tensor& image, const ModelParams& p, const ModelConfig& c,
                               const ForwardContext& ctx = {}) {
  detail::check_image(image, c);
  if (p.encoder.size() != c.layers || p.decoder.size() != c.layers)
    throw ConfigError("parameters do not match the configured layer count");
  const Tensor feature = backbone_forward(image, p);
  Tensor x = feature_tokens(feature, p);
  require_shape(p.pos_encoding, x.shape(), "positional encoding");
  for (const auto& layer : p.encoder) {
    x = encoder_layer(x, p.pos_encoding, layer, ctx);
    require_shape(x, p.pos_encoding.shape(), "encoder layer output");
  }
  Tensor y = p.queries;
  for (const auto& layer : p.decoder) y = decoder_layer(y, p.queries, x, p.pos_encoding, layer, ctx);
  y = ctx.maybe_dropout(y, DropoutPlacement::kOutput);
  return prediction_head(y, p.head);
}

/// Ablation baseline: flattened reduced feature map through feed-forward layers.
inline Tensor ffn_head_forward_raw(const Tensor& image, const ModelParams& p, const ModelConfig& c,
                                   const ForwardContext& ctx = {}) {
  detail::check_image(image, c);
  const Tensor tokens = feature_tokens(backbone_forward(image, p), p);
  Tensor flat = reshape(tokens, {1, tokens.size()});
  flat = ctx.maybe_dropout(flat, DropoutPlacement::kOutput);
  return reshape(prediction_head(flat, p.head), {c.landmarks, 2});
}

inline Tensor forward_raw(const Tensor& image, const ModelParams& p, const ModelConfig& c,
                          const ForwardContext& ctx = {}) {
  return c.head == HeadKind::kTransformer ? lotr_forward_raw(image, p, c, ctx) : ffn_head_forward_raw(image, p, c, ctx);
}

/// Model units to pixels: identity, or with normalized_coords the unit square
/// centred on the image, pixel = (size - 1) / 2 + u * size.
inline LandmarkSet to_pixels(const Tensor& raw, const ModelConfig& c) {
  if (!c.normalized_coords) return {raw, c.image_width, c.image_height};
  require_shape(raw, {raw.dim(0), 2}, "landmark output");
  const double w = static_cast<double>(c.image_width), h = static_cast<double>(c.image_height);
  Tensor px(raw.shape());
  auto out = px.mutable_data();
  for (std::size_t i = 0; i < raw.dim(0); ++i) {
    out[2 * i] = 0.5 * (w - 1.0) + raw[2 * i] * w;
    out[2 * i + 1] = 0.5 * (h - 1.0) + raw[2 * i + 1] * h;
  }
  return {px, c.image_width, c.image_height};
}

/// Pixel landmarks in model units (inverse of to_pixels).
inline Tensor to_model_units(const Tensor& pixels, const ModelConfig& c) {
  if (!c.normalized_coords) return pixels;
  require_shape(pixels, {pixels.dim(0), 2}, "landmarks");
  const double w = static_cast<double>(c.image_width), h = static_cast<double>(c.image_height);
  Tensor u(pixels.shape());
  auto out = u.mutable_data();
  for (std::size_t i = 0; i < pixels.dim(0); ++i) {
    out[2 * i] = (pixels[2 * i] - 0.5 * (w - 1.0)) / w;
    out[2 * i + 1] = (pixels[2 * i + 1] - 0.5 * (h - 1.0)) / h;
  }
  return u;
}

inline LandmarkSet lotr_forward(const Tensor& image, const ModelParams& p, const ModelConfig& c,
                                const ForwardContext& ctx = {}) {
  return to_pixels(lotr_forward_raw(image, p, c, ctx), c);
}

inline LandmarkSet ffn_head_forward(const Tensor& image, const ModelParams& p, const ModelConfig& c,
                                    const ForwardContext& ctx = {}) {
  return to_pixels(ffn_head_forward_raw(image, p, c, ctx), c);
}

/// Eval-mode prediction in pixels, dispatching on the head kind.
inline LandmarkSet predict(const Tensor& image, const ModelParams& p, const ModelConfig& c) {
  return to_pixels(forward_raw(image, p, c), c);
}

using Predictor = std::function<LandmarkSet(const Tensor& image)>;

/// Mean of the prediction on the image and the un-flipped prediction on its mirror.
inline LandmarkSet flip_averaged_inference(const Tensor& image, const Predictor& model, const SwapMap& swap) {
  const LandmarkSet direct = model(image);
  LandmarkSet mirrored = model(flip_image_horizontal(image));
  mirrored.width = direct.width;
  mirrored.height = direct.height;
  const LandmarkSet back = flip_landmarks(mirrored, swap);
  Tensor avg(direct.coords.shape());
  auto a = avg.mutable_data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.5 * (direct.coords[i] + back.coords[i]);
  return {avg, direct.width, direct.height};
}

inline LandmarkSet flip_averaged_inference(const Tensor& image, const ModelParams& p, const ModelConfig& c,
                                           const SwapMap& swap) {
  return flip_averaged_inference(image, [&](const Tensor& im) { return predict(im, p, c); }, swap);
}

/// Multiply-accumulate counts per component for one image.
struct OpCounts {
  std::uint64_t backbone = 0;
  std::uint64_t reduction = 0;
  std::uint64_t upsample = 0;
  std::uint64_t encoder_self_attn_scores = 0;   // QK^T and AV over all heads and layers
  std::uint64_t encoder_projections = 0;        // Q, K, V, O projections
  std::uint64_t encoder_ffn = 0;
  std::uint64_t decoder_self_attn_scores = 0;
  std::uint64_t decoder_cross_attn_scores = 0;
  std::uint64_t decoder_projections = 0;
  std::uint64_t decoder_ffn = 0;
  std::uint64_t head = 0;

  std::uint64_t encoder() const { return encoder_self_attn_scores + encoder_projections + encoder_ffn; }
  std::uint64_t decoder() const {
    return decoder_self_attn_scores + decoder_cross_attn_scores + decoder_projections + decoder_ffn;
  }
  std::uint64_t total() const { return backbone + reduction + upsample + encoder() + decoder() + head; }
};

inline OpCounts count_macs(const ModelConfig& c) {
  c.validate();
  OpCounts n;
  std::uint64_t h = c.image_height, w = c.image_width, in = 3;
  for (auto ch : c.backbone_channels) {
    h = ModelConfig::halve(h);
    w = ModelConfig::halve(w);
    n.backbone += h * w * ch * in * 9;
    in = ch;
  }
  n.reduction = h * w * c.reduction_channels * in;
  in = c.reduction_channels;
  for (auto f : c.upsample_filters) {
    n.upsample += h * w * in * f * 16;  // each input pixel scatters a 4x4 patch
    h *= 2;
    w *= 2;
    in = f;
  }
  const std::uint64_t t = c.tokens(), d = c.token_dim, lm = c.landmarks, L = c.layers;
  std::uint64_t head_in = d, head_rows = lm;
  if (c.head == HeadKind::kTransformer) {
    n.encoder_self_attn_scores = L * 2 * t * t * d;
    n.encoder_projections = L * 4 * t * d * d;
    n.encoder_ffn = L * t * d * d;
    n.decoder_self_attn_scores = L * 2 * lm * lm * d;
    n.decoder_cross_attn_scores = L * 2 * lm * t * d;
    // self: Q,K,V,O on N tokens; cross: Q,O on N and K,V on WH tokens
    n.decoder_projections = L * (4 * lm * d * d + 2 * lm * d * d + 2 * t * d * d);
    n.decoder_ffn = L * lm * d * d;
  } else {
    head_in = t * d;
    head_rows = 1;
  }
  for (auto hid : c.head_hidden) {
    n.head += head_rows * head_in * hid;
    head_in = hid;
  }
  n.head += head_rows * head_in * (c.head == HeadKind::kTransformer ? 2 : 2 * lm);
  return n;
}

/// Attention score-matrix entries per head and layer.
struct AttentionEntries {
  std::uint64_t encoder_self;
  std::uint64_t decoder_self;
  std::uint64_t decoder_cross;
};

inline AttentionEntries attention_score_entries(const ModelConfig& c) {
  const std::uint64_t t = c.tokens(), lm = c.landmarks;
  return {t * t, lm * lm, lm * t};
}

}  // namespace lotr
