#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <vector>

#include "lotr/rng.hpp"
#include "lotr/tensor.hpp"

namespace lotr {

inline constexpr double kDefaultHeatmapSigma = 2.0;

struct Heatmap {
  Tensor grid;  // H x W
  double x0 = 0.0, y0 = 0.0;
  double sigma = kDefaultHeatmapSigma;
};

/// G(x, y) = exp(-((x - x0)^2 + (y - y0)^2) / (2 sigma^2)) at integer pixel centers.
inline Heatmap render_heatmap(double x0, double y0, std::size_t height, std::size_t width,
                              double sigma = kDefaultHeatmapSigma) {
  if (!(sigma > 0.0)) throw ConfigError("heatmap sigma must be > 0");
  Tensor grid({height, width});
  auto g = grid.mutable_data();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t y = 0; y < height; ++y) {
    const double dy = static_cast<double>(y) - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) - x0;
      g[y * width + x] = std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return {grid, x0, y0, sigma};
}

struct PixelCoord {
  std::size_t x = 0, y = 0;
  bool operator==(const PixelCoord&) const = default;
};

/// Location of the maximum; ties go to the smallest row-major index.
inline PixelCoord decode_argmax(const Heatmap& h) {
  const auto g = h.grid.data();
  const std::size_t width = h.grid.dim(1);
  std::size_t best = 0;
  for (std::size_t i = 1; i < g.size(); ++i)
    if (g[i] > g[best]) best = i;
  return {best % width, best / width};
}

struct DecodeBenchmark {
  std::size_t height = 0, width = 0, count = 0;
  double mean_decode_ms = 0.0;
  double std_decode_ms = 0.0;
  double mean_abs_error = 0.0;  // per coordinate, pixels
};

/// Renders `count` heatmaps at uniformly random sub-pixel landmarks (3 sigma
/// away from the border) and times decode_argmax on each.
inline DecodeBenchmark benchmark_decode(std::size_t count, std::size_t height, std::size_t width, Rng& rng,
                                        double sigma = kDefaultHeatmapSigma) {
  if (count == 0) throw ConfigError("benchmark needs at least one heatmap");
  const double margin = 3.0 * sigma;
  if (2.0 * margin >= static_cast<double>(std::min(height, width)))
    throw ConfigError("heatmap too small for the 3-sigma border margin");
  DecodeBenchmark r{height, width, count, 0.0, 0.0, 0.0};
  double sum_ms = 0.0, sum_sq = 0.0, err = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double x0 = rng.uniform(margin, static_cast<double>(width - 1) - margin);
    const double y0 = rng.uniform(margin, static_cast<double>(height - 1) - margin);
    const Heatmap h = render_heatmap(x0, y0, height, width, sigma);
    const auto start = std::chrono::steady_clock::now();
    const PixelCoord p = decode_argmax(h);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    sum_ms += ms;
    sum_sq += ms * ms;
    err += std::abs(static_cast<double>(p.x) - x0) + std::abs(static_cast<double>(p.y) - y0);
  }
  const double n = static_cast<double>(count);
  r.mean_decode_ms = sum_ms / n;
  r.std_decode_ms = std::sqrt(std::max(0.0, sum_sq / n - r.mean_decode_ms * r.mean_decode_ms));
  r.mean_abs_error = err / (2.0 * n);
  return r;
}

}  // namespace lotr
