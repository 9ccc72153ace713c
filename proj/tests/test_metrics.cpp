#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lotr/heatmap.hpp"
#include "lotr/metrics.hpp"
#include "lotr/rng.hpp"

using namespace lotr;

namespace {

LandmarkSet points(std::vector<double> xy, std::size_t w = 100, std::size_t h = 100) {
  const std::size_t n = xy.size() / 2;
  return {Tensor({n, 2}, std::move(xy)), w, h};
}

// Trapezoid rule over the empirical CED, x in [0, T], divided by T.
double trapezoid_auc(std::vector<double> e, double t, std::size_t steps) {
  std::sort(e.begin(), e.end());
  const double m = static_cast<double>(e.size()), h = t / static_cast<double>(steps);
  std::size_t below = 0;
  auto ced = [&](double x) {
    while (below < e.size() && e[below] <= x) ++below;
    return static_cast<double>(below) / m;
  };
  double prev = ced(0.0), area = 0.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const double cur = ced(h * static_cast<double>(k));
    area += 0.5 * h * (prev + cur);
    prev = cur;
  }
  return area / t;
}

}  // namespace

TEST(Nme, Examples) {
  const LandmarkSet z = points({0, 0, 10, 10});
  EXPECT_EQ(nme(z, z, 1.0), 0.0);
  EXPECT_NEAR(nme(z, points({0.3, 0, 10, 10.4}), 1.0), 0.35, 1e-15);
}

TEST(Nme, HomogeneousUnderScaling) {
  Rng rng(1);
  std::vector<double> a(20), b(20);
  for (auto& v : a) v = rng.uniform(0, 50);
  for (auto& v : b) v = rng.uniform(0, 50);
  auto scaled = [](std::vector<double> v, double k) {
    for (auto& x : v) x *= k;
    return points(std::move(v));
  };
  const double base = nme(points(a), points(b), 3.0);
  EXPECT_EQ(nme(scaled(a, 8), scaled(b, 8), 24.0), base);  // power of two: exact in binary
  EXPECT_NEAR(nme(scaled(a, 7), scaled(b, 7), 21.0), base, 1e-15 * base * 8);
}

TEST(Nme, Errors) {
  EXPECT_THROW(nme(points({0, 0}), points({0, 0}), 0.0), ConfigError);
  EXPECT_THROW(nme(points({0, 0}), points({0, 0, 1, 1}), 1.0), ShapeError);
}

TEST(NormFactor, Examples) {
  EXPECT_DOUBLE_EQ(norm_factor(points({0, 0, 100, 64, 50, 10}), NormMode::kBoundingBox), 80.0);
  EXPECT_DOUBLE_EQ(norm_factor(points({0, 0, 3, 4}), NormMode::kInterOcular, 0, 1), 5.0);
  EXPECT_THROW(norm_factor(points({5, 5, 5, 5, 5, 5}), NormMode::kBoundingBox), ConfigError);
  EXPECT_THROW(norm_factor(points({1, 1, 1, 1}), NormMode::kInterOcular), ConfigError);
  EXPECT_THROW(norm_factor(points({1, 1, 2, 2}), NormMode::kInterOcular, 0, 0), ConfigError);
  EXPECT_DOUBLE_EQ(norm_factor(points({1, 1}, 96, 96), NormMode::kImage), 96.0);
  EXPECT_EQ(parse_norm_mode("interocular"), NormMode::kInterOcular);
  EXPECT_THROW(parse_norm_mode("face"), ConfigError);
}

TEST(Evaluate, Examples) {
  const auto zeros = evaluate({0, 0, 0}, 0.08);
  EXPECT_EQ(zeros.auc, 1.0);
  EXPECT_EQ(zeros.failure_rate, 0.0);
  const auto bad = evaluate({0.2, 0.3}, 0.08);
  EXPECT_EQ(bad.auc, 0.0);
  EXPECT_EQ(bad.failure_rate, 1.0);
  const auto single = evaluate({0.04}, 0.08);
  EXPECT_EQ(single.auc, 0.5);
  EXPECT_EQ(single.failure_rate, 0.0);
  EXPECT_THROW(evaluate({}, 0.08), ConfigError);
  EXPECT_THROW(evaluate({0.1}, 0.0), ConfigError);
  EXPECT_THROW(evaluate({-0.1}, 0.1), ConfigError);
}

TEST(Evaluate, ThresholdAtBoundaryIsNotFailure) {
  EXPECT_EQ(evaluate({0.08, 0.09}, 0.08).failure_rate, 0.5);
}

TEST(Evaluate, CedSamples) {
  const auto r = evaluate({0.3, 0.1, 0.1, 0.2}, 0.5);
  ASSERT_EQ(r.ced.size(), 3u);
  EXPECT_EQ(r.ced[0].nme, 0.1);
  EXPECT_EQ(r.ced[0].fraction, 0.5);
  EXPECT_EQ(r.ced[2].fraction, 1.0);
}

TEST(Evaluate, MatchesTrapezoidOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> e(1 + rng.below(40));
    for (auto& v : e) v = rng.uniform(0.0, 0.15);
    const double t = trial % 2 ? 0.08 : 0.10;
    const auto r = evaluate(e, t);
    EXPECT_NEAR(r.auc, trapezoid_auc(e, t, 1000000), 1e-6);
    std::size_t fails = 0;
    for (double v : e) fails += v > t;
    EXPECT_EQ(r.failure_rate, static_cast<double>(fails) / static_cast<double>(e.size()));
  }
}

TEST(Evaluate, Monotonicity) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> e(10);
    for (auto& v : e) v = rng.uniform(0.0, 0.2);
    const auto before = evaluate(e, 0.1);
    e[rng.below(10)] *= rng.uniform();
    const auto after = evaluate(e, 0.1);
    EXPECT_GE(after.auc, before.auc);
    EXPECT_LE(after.failure_rate, before.failure_rate);
  }
}

TEST(Evaluate, ThresholdChangesAucPerClosedForm) {
  const std::vector<double> e = {0.01, 0.05, 0.09, 0.2};
  EXPECT_NEAR(evaluate(e, 0.08).auc, (0.07 + 0.03) / (4 * 0.08), 1e-15);
  EXPECT_NEAR(evaluate(e, 0.10).auc, (0.09 + 0.05 + 0.01) / (4 * 0.10), 1e-15);
}

TEST(Heatmap, Values) {
  const Heatmap h = render_heatmap(5, 5, 16, 16, 2.0);
  EXPECT_EQ(h.grid.at(5, 5), 1.0);
  EXPECT_NEAR(h.grid.at(5, 7), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(h.grid.at(5, 7), 0.6065307, 1e-7);
  EXPECT_NEAR(h.grid.at(11, 5), 0.0111090, 1e-7);
  for (double v : h.grid.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(render_heatmap(1, 1, 4, 4, 0.0), ConfigError);
}

TEST(Heatmap, DecodeExamples) {
  EXPECT_EQ(decode_argmax(render_heatmap(7, 3, 16, 16)), (PixelCoord{7, 3}));
  const Heatmap frac = render_heatmap(7.4, 3.0, 16, 16);
  const PixelCoord p = decode_argmax(frac);
  EXPECT_EQ(p, (PixelCoord{7, 3}));
  EXPECT_NEAR(std::abs(static_cast<double>(p.x) - 7.4), 0.4, 1e-15);
  Heatmap flat{Tensor({4, 4}, 0.5)};
  EXPECT_EQ(decode_argmax(flat), (PixelCoord{0, 0}));
}

TEST(Heatmap, TranslationConsistency) {
  const Heatmap a = render_heatmap(6.25, 5.75, 20, 20);
  const Heatmap b = render_heatmap(9.25, 7.75, 20, 20);
  for (std::size_t y = 0; y + 2 < 20; ++y)
    for (std::size_t x = 0; x + 3 < 20; ++x) EXPECT_EQ(a.grid.at(y, x), b.grid.at(y + 2, x + 3));
}

TEST(Heatmap, RoundTripNearestPixel) {
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.uniform(6.0, 25.0), y = rng.uniform(6.0, 25.0);
    const PixelCoord p = decode_argmax(render_heatmap(x, y, 32, 32));
    EXPECT_EQ(p.x, static_cast<std::size_t>(std::lround(x)));
    EXPECT_EQ(p.y, static_cast<std::size_t>(std::lround(y)));
  }
}

TEST(Heatmap, BenchmarkQuantizationError) {
  Rng rng(5);
  const auto r = benchmark_decode(1000, 64, 64, rng);
  EXPECT_TRUE(std::isfinite(r.mean_decode_ms));
  EXPECT_NEAR(r.mean_abs_error, 0.25, 0.025);
  EXPECT_THROW(benchmark_decode(0, 64, 64, rng), ConfigError);
}
