#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "lotr/autodiff.hpp"
#include "lotr/tensor.hpp"

namespace lotr {

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(what) + ": expected a matrix, got shape " + to_string(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
}

}  // namespace detail

/// Matrix product A[m x k] * B[k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
  return make_result(out, {a, b}, [a, b, m, k, n](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) {
      Tensor ga({m, k}, 0.0);
      detail::gemm_nt(g.data().data(), b.data().data(), ga.mutable_data().data(), m, n, k);
      sink.add(0, ga);
    }
    if (sink.wants(1)) {
      Tensor gb({k, n}, 0.0);
      detail::gemm_tn(a.data().data(), g.data().data(), gb.mutable_data().data(), k, m, n);
      sink.add(1, gb);
    }
  });
}

/// A[m x k] * B[n x k]^T without materializing the transpose.
inline Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_transposed");
  detail::require_matrix(b, "matmul_transposed");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("matmul_transposed: inner dimensions differ for " + to_string(a.shape()) +
                     " and " + to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n}, 0.0);
  detail::gemm_nt(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
  return make_result(out, {a, b}, [a, b, m, k, n](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) {
      Tensor ga({m, k}, 0.0);
      detail::gemm_nn(g.data().data(), b.data().data(), ga.mutable_data().data(), m, n, k);
      sink.add(0, ga);
    }
    if (sink.wants(1)) {
      Tensor gb({n, k}, 0.0);
      detail::gemm_tn(g.data().data(), a.data().data(), gb.mutable_data().data(), n, m, k);
      sink.add(1, gb);
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j * r + i] = a[i * c + j];
  return make_result(out, {a}, [](const Tensor& g, GradSink& sink) { sink.add(0, transpose(g)); });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  Tensor out = a.detached();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i];
  return make_result(out, {a, b}, [](const Tensor& g, GradSink& sink) {
    sink.add(0, g);
    sink.add(1, g);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "sub");
  Tensor out = a.detached();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= b[i];
  return make_result(out, {a, b}, [](const Tensor& g, GradSink& sink) {
    sink.add(0, g);
    if (sink.wants(1)) {
      Tensor n = g.detached();
      for (auto& v : n.mutable_data()) v = -v;
      sink.add(1, n);
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a.detached();
  for (auto& v : out.mutable_data()) v *= s;
  return make_result(out, {a}, [s](const Tensor& g, GradSink& sink) { sink.add(0, scale(g, s)); });
}

/// Element-wise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  Tensor out = a.detached();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= b[i];
  return make_result(out, {a, b}, [a, b](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) sink.add(0, mul(g.detached(), b.detached()));
    if (sink.wants(1)) sink.add(1, mul(g.detached(), a.detached()));
  });
}

/// X[... x n] + bias[n], the bias repeated over every row.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || bias.dim(0) != x.cols())
    throw ShapeError("add_bias: bias shape " + to_string(bias.shape()) + " does not match last axis of " +
                     to_string(x.shape()));
  const std::size_t rows = x.rows(), n = x.cols();
  Tensor out = x.detached();
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] += bias[j];
  return make_result(out, {x, bias}, [rows, n](const Tensor& g, GradSink& sink) {
    sink.add(0, g);
    if (sink.wants(1)) {
      Tensor gb({n}, 0.0);
      auto d = gb.mutable_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) d[j] += g[r * n + j];
      sink.add(1, gb);
    }
  });
}

/// Each column j multiplied by the constant factors[j].
inline Tensor scale_columns(const Tensor& x, const std::vector<double>& factors) {
  if (factors.size() != x.cols()) throw ShapeError("scale_columns: factor count mismatch");
  const std::size_t n = x.cols();
  Tensor out = x.detached();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= factors[i % n];
  return make_result(out, {x}, [factors](const Tensor& g, GradSink& sink) {
    sink.add(0, scale_columns(g.detached(), factors));
  });
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x.detached();
  for (auto& v : out.mutable_data()) v = v > 0.0 ? v : 0.0;
  return make_result(out, {x}, [x](const Tensor& g, GradSink& sink) {
    Tensor gx = g.detached();
    auto d = gx.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(x[i] > 0.0)) d[i] = 0.0;
    sink.add(0, gx);
  });
}

/// Sum of all elements.
inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const Shape shape = x.shape();
  return make_result(Tensor::scalar(s), {x}, [shape](const Tensor& g, GradSink& sink) {
    sink.add(0, Tensor(shape, g.item()));
  });
}

/// Differentiable reshape; values are shared, only the shape changes.
inline Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  return make_result(out, {x}, [](const Tensor& g, GradSink& sink) { sink.add(0, g); });
}

/// Softmax along the last axis with max subtraction.
inline Tensor softmax(const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double* orow = o.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (orow[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
  }
  return make_result(out, {x}, [out, rows, n](const Tensor& g, GradSink& sink) {
    Tensor gx(out.shape());
    auto d = gx.mutable_data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * out[r * n + j];
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] = out[r * n + j] * (g[r * n + j] - dot);
    }
    sink.add(0, gx);
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row normalization over the last axis with biased variance, then gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = kLayerNormEps) {
  const std::size_t rows = x.rows(), n = x.cols();
  require_shape(gain, {n}, "layer_norm gain");
  require_shape(bias, {n}, "layer_norm bias");
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  auto xh = xhat.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xh[r * n + j] = (xr[j] - mean) * inv_std[r];
  }
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = xh[r * n + j] * gain[j] + bias[j];

  return make_result(out, {x, gain, bias},
                     [xhat, inv_std, gain, rows, n](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) {
      Tensor gx(xhat.shape());
      auto d = gx.mutable_data();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double gh = g[r * n + j] * gain[j];
          s1 += gh;
          s2 += gh * xhat[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double gh = g[r * n + j] * gain[j];
          d[r * n + j] = inv_std[r] * (gh - inv_n * s1 - xhat[r * n + j] * inv_n * s2);
        }
      }
      sink.add(0, gx);
    }
    if (sink.wants(1) || sink.wants(2)) {
      Tensor gg({n}, 0.0), gb({n}, 0.0);
      auto dg = gg.mutable_data();
      auto db = gb.mutable_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) {
          dg[j] += g[r * n + j] * xhat[r * n + j];
          db[j] += g[r * n + j];
        }
      sink.add(1, gg);
      sink.add(2, gb);
    }
  });
}

/// Column-wise concatenation of matrices with equal row counts.
inline Tensor concat_columns(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_columns: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_columns");
    if (p.dim(0) != rows) throw ShapeError("concat_columns: row counts differ");
    offsets.push_back(total);
    total += p.dim(1);
  }
  Tensor out({rows, total});
  auto o = out.mutable_data();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) o[r * total + offsets[k] + j] = parts[k][r * c + j];
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(1));
  return make_result(out, parts, [rows, total, offsets, widths](const Tensor& g, GradSink& sink) {
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (!sink.wants(k)) continue;
      const std::size_t c = widths[k];
      Tensor gp({rows, c});
      auto d = gp.mutable_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) d[r * c + j] = g[r * total + offsets[k] + j];
      sink.add(k, gp);
    }
  });
}

/// Rows [begin, begin + count) of a matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_matrix(x, "slice_rows");
  if (begin + count > x.dim(0) || count == 0) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t n = x.dim(1), rows = x.dim(0);
  std::vector<double> v(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                        x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return make_result(Tensor({count, n}, std::move(v)), {x},
                     [rows, n, begin, count](const Tensor& g, GradSink& sink) {
    Tensor gx({rows, n}, 0.0);
    auto d = gx.mutable_data();
    for (std::size_t i = 0; i < count * n; ++i) d[begin * n + i] = g[i];
    sink.add(0, gx);
  });
}

/// Rows reordered: out[i] = x[perm[i]].
inline Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  detail::require_matrix(x, "permute_rows");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  if (perm.size() != rows) throw ShapeError("permute_rows: permutation length mismatch");
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < rows; ++i) {
    if (perm[i] >= rows) throw ShapeError("permute_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = x[perm[i] * n + j];
  }
  return make_result(out, {x}, [perm, rows, n](const Tensor& g, GradSink& sink) {
    Tensor gx({rows, n}, 0.0);
    auto d = gx.mutable_data();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < n; ++j) d[perm[i] * n + j] += g[i * n + j];
    sink.add(0, gx);
  });
}

}  // namespace lotr
