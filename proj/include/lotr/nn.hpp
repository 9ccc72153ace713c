#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lotr/ops.hpp"
#include "lotr/rng.hpp"
#include "lotr/tensor.hpp"

namespace lotr {

/// Fully connected layer, X[n x in] * weight[in x out] + bias[out].
struct LinearWeights {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

inline Tensor linear(const Tensor& x, const LinearWeights& w) {
  return add_bias(matmul(x, w.weight), w.bias);
}

/// Convolution parameters. For conv2d the kernel is [out x in x kh x kw]; for
/// deconv2d it is [in x out x kh x kw], the layout of the adjoint convolution.
struct ConvWeights {
  Tensor kernel;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

namespace detail {

struct ConvGeometry {
  std::size_t channels, height, width;  // input of the forward convolution
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                                  std::size_t kw, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError("convolution stride must be >= 1");
  if (kh > h + 2 * pad || kw > w + 2 * pad)
    throw ShapeError("convolution kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than padded input " + std::to_string(h + 2 * pad) + "x" +
                     std::to_string(w + 2 * pad));
  return {c, h, w, kh, kw, stride, pad, (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1};
}

// cols[patch x pixels] from image[C x H x W]
inline void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const std::size_t P = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.height) &&
                                x < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] =
                inside ? img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] : 0.0;
          }
        }
      }
}

// image[C x H x W] += adjoint of im2col applied to cols
inline void col2im(const double* cols, const ConvGeometry& g, double* img) {
  const std::size_t P = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
            img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] += row[oy * g.out_w + ox];
          }
        }
      }
}

inline void check_conv_weights(const ConvWeights& w, const char* what) {
  if (w.kernel.rank() != 4) throw ShapeError(std::string(what) + ": kernel must be rank 4");
  if (w.stride == 0) throw ConfigError(std::string(what) + ": stride must be >= 1");
}

}  // namespace detail

/// Cross-correlation of input[C x H x W] (no kernel flip).
inline Tensor conv2d(const Tensor& input, const ConvWeights& w) {
  detail::check_conv_weights(w, "conv2d");
  if (input.rank() != 3) throw ShapeError("conv2d: input must be C x H x W, got " + to_string(input.shape()));
  const std::size_t out_c = w.kernel.dim(0);
  if (w.kernel.dim(1) != input.dim(0))
    throw ShapeError("conv2d: kernel expects " + std::to_string(w.kernel.dim(1)) + " channels, input has " +
                     std::to_string(input.dim(0)));
  require_shape(w.bias, {out_c}, "conv2d bias");
  const auto g = detail::conv_geometry(input.dim(0), input.dim(1), input.dim(2), w.kernel.dim(2),
                                       w.kernel.dim(3), w.stride, w.padding);
  const std::size_t K = g.patch(), P = g.pixels();
  Tensor cols({K, P});
  detail::im2col(input.data().data(), g, cols.mutable_data().data());

  Tensor out({out_c, g.out_h, g.out_w}, 0.0);
  auto o = out.mutable_data();
  detail::gemm_nn(w.kernel.data().data(), cols.data().data(), o.data(), out_c, K, P);
  for (std::size_t c = 0; c < out_c; ++c)
    for (std::size_t p = 0; p < P; ++p) o[c * P + p] += w.bias[c];

  const Tensor kernel = w.kernel;
  return make_result(out, {input, w.kernel, w.bias},
                     [cols, kernel, g, out_c, K, P](const Tensor& grad, GradSink& sink) {
    if (sink.wants(0)) {
      Tensor gcols({K, P}, 0.0);
      detail::gemm_tn(kernel.data().data(), grad.data().data(), gcols.mutable_data().data(), K, out_c, P);
      Tensor gx({g.channels, g.height, g.width}, 0.0);
      detail::col2im(gcols.data().data(), g, gx.mutable_data().data());
      sink.add(0, gx);
    }
    if (sink.wants(1)) {
      Tensor gk(kernel.shape(), 0.0);
      detail::gemm_nt(grad.data().data(), cols.data().data(), gk.mutable_data().data(), out_c, P, K);
      sink.add(1, gk);
    }
    if (sink.wants(2)) {
      Tensor gb({out_c}, 0.0);
      auto d = gb.mutable_data();
      for (std::size_t c = 0; c < out_c; ++c)
        for (std::size_t p = 0; p < P; ++p) d[c] += grad[c * P + p];
      sink.add(2, gb);
    }
  });
}

/// Spatial output size of a transposed convolution; rejects configurations with
/// no positive output.
inline std::size_t deconv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t pad) {
  if (stride == 0) throw ConfigError("deconv2d: stride must be >= 1");
  const std::size_t full = (in - 1) * stride + kernel;
  if (full <= 2 * pad)
    throw ConfigError("deconv2d: kernel " + std::to_string(kernel) + ", stride " + std::to_string(stride) +
                      ", padding " + std::to_string(pad) + " give no output for input size " +
                      std::to_string(in));
  return full - 2 * pad;
}

/// Transposed convolution of input[Cin x H x W] with kernel [Cin x Cout x kh x kw].
/// Equal to the input-adjoint of conv2d with the same kernel, stride and padding.
inline Tensor deconv2d(const Tensor& input, const ConvWeights& w) {
  detail::check_conv_weights(w, "deconv2d");
  if (input.rank() != 3) throw ShapeError("deconv2d: input must be C x H x W, got " + to_string(input.shape()));
  const std::size_t in_c = input.dim(0), out_c = w.kernel.dim(1);
  if (w.kernel.dim(0) != in_c)
    throw ShapeError("deconv2d: kernel expects " + std::to_string(w.kernel.dim(0)) + " channels, input has " +
                     std::to_string(in_c));
  require_shape(w.bias, {out_c}, "deconv2d bias");
  const std::size_t kh = w.kernel.dim(2), kw = w.kernel.dim(3);
  const std::size_t oh = deconv_output_size(input.dim(1), kh, w.stride, w.padding);
  const std::size_t ow = deconv_output_size(input.dim(2), kw, w.stride, w.padding);
  // Geometry of the forward convolution that this operator is the adjoint of.
  const auto g = detail::conv_geometry(out_c, oh, ow, kh, kw, w.stride, w.padding);
  if (g.out_h != input.dim(1) || g.out_w != input.dim(2))
    throw ConfigError("deconv2d: configuration does not invert to the input size");
  const std::size_t K = g.patch(), P = g.pixels();

  Tensor cols({K, P}, 0.0);
  detail::gemm_tn(w.kernel.data().data(), input.data().data(), cols.mutable_data().data(), K, in_c, P);
  Tensor out({out_c, oh, ow}, 0.0);
  auto o = out.mutable_data();
  detail::col2im(cols.data().data(), g, o.data());
  const std::size_t opix = oh * ow;
  for (std::size_t c = 0; c < out_c; ++c)
    for (std::size_t p = 0; p < opix; ++p) o[c * opix + p] += w.bias[c];

  const Tensor kernel = w.kernel;
  return make_result(out, {input, w.kernel, w.bias},
                     [input, kernel, g, in_c, out_c, K, P, opix](const Tensor& grad, GradSink& sink) {
    Tensor gcols({K, P});
    detail::im2col(grad.data().data(), g, gcols.mutable_data().data());
    if (sink.wants(0)) {
      Tensor gx(input.shape(), 0.0);
      detail::gemm_nn(kernel.data().data(), gcols.data().data(), gx.mutable_data().data(), in_c, K, P);
      sink.add(0, gx);
    }
    if (sink.wants(1)) {
      Tensor gk(kernel.shape(), 0.0);
      detail::gemm_nt(input.data().data(), gcols.data().data(), gk.mutable_data().data(), in_c, P, K);
      sink.add(1, gk);
    }
    if (sink.wants(2)) {
      Tensor gb({out_c}, 0.0);
      auto d = gb.mutable_data();
      for (std::size_t c = 0; c < out_c; ++c)
        for (std::size_t p = 0; p < opix; ++p) d[c] += grad[c * opix + p];
      sink.add(2, gb);
    }
  });
}

enum class Mode { kTrain, kEval };

/// Inverted dropout. Survivors are scaled by 1 / (1 - rate); eval mode is the identity.
inline Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::kEval || rate == 0.0) return x;
  Tensor mask(x.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask.mutable_data()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mul(x, mask);
}

/// Per-head projections (no biases) and the shared output projection.
struct MhaWeights {
  std::vector<Tensor> wq, wk, wv;  // each D x D/M
  Tensor wo;                       // D x D

  std::size_t heads() const { return wq.size(); }
  std::size_t dim() const { return wo.dim(0); }

  void validate() const {
    const std::size_t m = heads();
    if (m == 0) throw ConfigError("attention needs at least one head");
    if (wk.size() != m || wv.size() != m) throw ConfigError("attention head count differs across projections");
    if (wo.rank() != 2 || wo.dim(0) != wo.dim(1)) throw ShapeError("attention output projection must be D x D");
    const std::size_t d = wo.dim(0);
    if (d % m != 0) throw ConfigError("token dim " + std::to_string(d) + " not divisible by " + std::to_string(m) + " heads");
    const Shape head_shape{d, d / m};
    for (std::size_t i = 0; i < m; ++i) {
      require_shape(wq[i], head_shape, "attention query projection");
      require_shape(wk[i], head_shape, "attention key projection");
      require_shape(wv[i], head_shape, "attention value projection");
    }
  }
};

/// concat_i(softmax((Q Wq_i)(K Wk_i)^T / sqrt(D')) V Wv_i) Wo.
/// When `attention` is non-null it receives the per-head weight matrices [Nq x Nkv].
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MhaWeights& w,
                                   std::vector<Tensor>* attention = nullptr) {
  w.validate();
  const std::size_t d = w.dim();
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ShapeError("attention inputs must be matrices");
  if (q.dim(1) != d || k.dim(1) != d || v.dim(1) != d)
    throw ShapeError("attention: token dim mismatch, weights expect " + std::to_string(d));
  if (k.dim(0) != v.dim(0)) throw ShapeError("attention: key and value lengths differ");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d / w.heads()));
  std::vector<Tensor> heads;
  heads.reserve(w.heads());
  if (attention) attention->clear();
  for (std::size_t i = 0; i < w.heads(); ++i) {
    const Tensor qh = matmul(q, w.wq[i]);
    const Tensor kh = matmul(k, w.wk[i]);
    const Tensor vh = matmul(v, w.wv[i]);
    const Tensor a = softmax(scale(matmul_transposed(qh, kh), inv_sqrt));
    if (attention) attention->push_back(a.detached());
    heads.push_back(matmul(a, vh));
  }
  return matmul(concat_columns(heads), w.wo);
}

}  // namespace lotr
