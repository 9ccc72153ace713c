#include <gtest/gtest.h>

#include <numeric>

#include "lotr/nn.hpp"
#include "reference.hpp"
#include "test_helpers.hpp"

using namespace lotr;
using lotr::test::random_tensor;
using lotr::test::weighted_probe;

namespace {

MhaWeights random_mha(std::size_t d, std::size_t m, Rng& rng) {
  MhaWeights w;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t h = 0; h < m; ++h) {
    w.wq.push_back(random_tensor({d, d / m}, rng, sd));
    w.wk.push_back(random_tensor({d, d / m}, rng, sd));
    w.wv.push_back(random_tensor({d, d / m}, rng, sd));
  }
  w.wo = random_tensor({d, d}, rng, sd);
  return w;
}

ConvWeights random_conv(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                        Rng& rng) {
  return {random_tensor({out, in, k, k}, rng), random_tensor({out}, rng), stride, pad};
}

// Transposed convolution weights use the [in x out x k x k] kernel layout.
ConvWeights random_deconv(std::size_t in, std::size_t out, Rng& rng) {
  return {random_tensor({in, out, 4, 4}, rng), random_tensor({out}, rng), 2, 1};
}

}  // namespace

TEST(Linear, MatchesExplicitMatmul) {
  Rng rng(1);
  const LinearWeights w{random_tensor({4, 3}, rng), random_tensor({3}, rng)};
  const Tensor x = random_tensor({5, 4}, rng);
  EXPECT_LE(max_abs_diff(linear(x, w), ref::to_tensor(ref::linear(ref::from(x), w))), 1e-12);
}

TEST(Mha, SingleKeyIgnoresQueries) {
  Rng rng(2);
  const MhaWeights w = random_mha(8, 2, rng);
  const Tensor k = random_tensor({1, 8}, rng), v = random_tensor({1, 8}, rng);
  const Tensor out1 = multi_head_attention(random_tensor({3, 8}, rng), k, v, w);
  const Tensor out2 = multi_head_attention(random_tensor({3, 8}, rng), k, v, w);
  EXPECT_LE(max_abs_diff(out1, out2), 1e-14);
  // Every row is the projected value row.
  Tensor vh_concat = concat_columns({matmul(v, w.wv[0]), matmul(v, w.wv[1])});
  const Tensor expected_row = matmul(vh_concat, w.wo);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out1.at(i, j), expected_row.at(0, j), 1e-14);
}

TEST(Mha, IdenticalKeysAverageValues) {
  Rng rng(3);
  const MhaWeights w = random_mha(8, 2, rng);
  const Tensor key = random_tensor({1, 8}, rng);
  const Tensor k = concat_columns({key, key}).reshaped({2, 8});
  const Tensor v = random_tensor({2, 8}, rng);
  std::vector<Tensor> attn;
  const Tensor out = multi_head_attention(random_tensor({3, 8}, rng), k, v, w, &attn);
  for (const auto& a : attn)
    for (double p : a.data()) EXPECT_NEAR(p, 0.5, 1e-15);
  Tensor mean_v({1, 8});
  for (std::size_t j = 0; j < 8; ++j) mean_v.mutable_data()[j] = 0.5 * (v.at(0, j) + v.at(1, j));
  const Tensor single = multi_head_attention(random_tensor({3, 8}, rng), key, mean_v, w);
  EXPECT_LE(max_abs_diff(out, single), 1e-12);
}

TEST(Mha, MatchesLoopReference) {
  Rng rng(4);
  const MhaWeights w = random_mha(8, 2, rng);
  const Tensor q = random_tensor({3, 8}, rng), k = random_tensor({5, 8}, rng), v = random_tensor({5, 8}, rng);
  const Tensor expected = ref::to_tensor(ref::mha(ref::from(q), ref::from(k), ref::from(v), w));
  EXPECT_LE(max_abs_diff(multi_head_attention(q, k, v, w), expected), 1e-12);
}

TEST(Mha, AttentionRowsAreDistributions) {
  Rng rng(5);
  const MhaWeights w = random_mha(8, 4, rng);
  std::vector<Tensor> attn;
  multi_head_attention(random_tensor({4, 8}, rng, 3.0), random_tensor({6, 8}, rng, 3.0),
                       random_tensor({6, 8}, rng), w, &attn);
  ASSERT_EQ(attn.size(), 4u);
  for (const auto& a : attn)
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c) {
        EXPECT_GE(a.at(r, c), 0.0);
        total += a.at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Mha, KeyValuePermutationEquivariance) {
  Rng rng(6);
  const MhaWeights w = random_mha(8, 2, rng);
  const Tensor q = random_tensor({3, 8}, rng), k = random_tensor({6, 8}, rng), v = random_tensor({6, 8}, rng);
  const std::vector<std::size_t> perm = shuffled_indices(6, rng);
  const Tensor out = multi_head_attention(q, k, v, w);
  const Tensor permuted = multi_head_attention(q, permute_rows(k, perm), permute_rows(v, perm), w);
  EXPECT_LE(max_abs_diff(out, permuted), 1e-12);
}

TEST(Mha, RejectsBadShapes) {
  Rng rng(7);
  MhaWeights w = random_mha(8, 2, rng);
  EXPECT_THROW(multi_head_attention(Tensor({2, 4}), Tensor({2, 8}), Tensor({2, 8}), w), ShapeError);
  EXPECT_THROW(multi_head_attention(Tensor({2, 8}), Tensor({3, 8}), Tensor({2, 8}), w), ShapeError);
  w.wv.pop_back();
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(Mha, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  const MhaWeights w = random_mha(8, 2, rng);
  const Tensor k = random_tensor({5, 8}, rng), v = random_tensor({5, 8}, rng);
  for (std::uint64_t point = 0; point < 10; ++point) {
    auto f = weighted_probe([&](const Tensor& q) { return multi_head_attention(q, k, v, w); }, {3, 8}, 100 + point);
    EXPECT_LE(finite_diff_check(f, random_tensor({3, 8}, 200 + point), 1e-6), 1e-5);
  }
  const Tensor q = random_tensor({3, 8}, rng);
  auto via_kv = weighted_probe([&](const Tensor& x) { return multi_head_attention(q, x, x, w); }, {3, 8}, 300);
  EXPECT_LE(finite_diff_check(via_kv, random_tensor({5, 8}, 301), 1e-6), 1e-5);
  auto via_wq = weighted_probe(
      [&](const Tensor& x) {
        MhaWeights w2 = w;
        w2.wq[1] = x;
        return multi_head_attention(q, k, v, w2);
      },
      {3, 8}, 302);
  EXPECT_LE(finite_diff_check(via_wq, w.wq[1], 1e-6), 1e-5);
}

TEST(Conv2d, IdentityOneByOne) {
  Tensor kernel({3, 3, 1, 1}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) kernel.mutable_data()[c * 3 + c] = 1.0;
  const Tensor x = random_tensor({3, 5, 4}, 1);
  EXPECT_TRUE(conv2d(x, {kernel, Tensor({3}, 0.0)}).same_values(x));
}

TEST(Conv2d, ReductionShape) {
  const Tensor x({1280, 6, 6}, 0.5);
  const Tensor y = conv2d(x, {Tensor({64, 1280, 1, 1}, 0.01), Tensor({64})});
  EXPECT_EQ(y.shape(), (Shape{64, 6, 6}));
}

TEST(Conv2d, MatchesNaiveLoops) {
  Rng rng(2);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
    const ConvWeights w = random_conv(4, 3, 3, stride, pad, rng);
    const Tensor x = random_tensor({3, 7, 6}, rng);
    EXPECT_LE(max_abs_diff(conv2d(x, w), ref::conv2d(x, w)), 1e-12) << "stride " << stride << " pad " << pad;
  }
}

TEST(Conv2d, OneByOneIsPerPixelLinearMap) {
  Rng rng(3);
  const ConvWeights w = random_conv(5, 3, 1, 1, 0, rng);
  const Tensor x = random_tensor({3, 2, 3}, rng);
  const Tensor y = conv2d(x, w);
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t o = 0; o < 5; ++o) {
      double acc = w.bias[o];
      for (std::size_t i = 0; i < 3; ++i) acc += w.kernel[o * 3 + i] * x[i * 6 + p];
      EXPECT_NEAR(y[o * 6 + p], acc, 1e-14);
    }
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(conv2d(Tensor({3, 2, 2}), {Tensor({1, 3, 5, 5}), Tensor({1})}), ShapeError);
  EXPECT_THROW(conv2d(Tensor({2, 4, 4}), {Tensor({1, 3, 3, 3}), Tensor({1})}), ShapeError);
  EXPECT_THROW(conv2d(Tensor({3, 4, 4}), {Tensor({1, 3, 3, 3}), Tensor({1}), 0, 0}), ConfigError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  const ConvWeights w = random_conv(3, 2, 3, 2, 1, rng);
  const Tensor x0 = random_tensor({2, 5, 5}, rng);
  const Shape out = conv2d(x0, w).shape();
  for (std::uint64_t point = 0; point < 10; ++point) {
    auto f = weighted_probe([&](const Tensor& x) { return conv2d(x, w); }, out, 10 + point);
    EXPECT_LE(finite_diff_check(f, random_tensor({2, 5, 5}, 20 + point), 1e-6), 1e-6);
  }
  auto fk = weighted_probe([&](const Tensor& k) { return conv2d(x0, {k, w.bias, 2, 1}); }, out, 30);
  EXPECT_LE(finite_diff_check(fk, w.kernel, 1e-6), 1e-6);
  auto fb = weighted_probe([&](const Tensor& b) { return conv2d(x0, {w.kernel, b, 2, 1}); }, out, 31);
  EXPECT_LE(finite_diff_check(fb, w.bias, 1e-6), 1e-6);
}

TEST(Deconv2d, DoublesResolution) {
  Rng rng(5);
  const ConvWeights w1 = random_deconv(4, 2, rng);
  const ConvWeights w2 = random_deconv(2, 3, rng);
  const Tensor y1 = deconv2d(random_tensor({4, 6, 6}, rng), w1);
  EXPECT_EQ(y1.shape(), (Shape{2, 12, 12}));
  EXPECT_EQ(deconv2d(y1, w2).shape(), (Shape{3, 24, 24}));
}

TEST(Deconv2d, ZeroInputGivesBias) {
  Rng rng(6);
  const ConvWeights w = random_deconv(2, 3, rng);
  const Tensor y = deconv2d(Tensor({2, 3, 3}, 0.0), w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 36; ++p) EXPECT_EQ(y[c * 36 + p], w.bias[c]);
}

TEST(Deconv2d, IsAdjointOfConv) {
  Rng rng(7);
  const Tensor kernel = random_tensor({3, 2, 4, 4}, rng);  // deconv: 3 -> 2, conv: 2 -> 3
  const Tensor x = random_tensor({3, 5, 5}, rng);
  const Tensor y = random_tensor({2, 10, 10}, rng);
  const double lhs = sum(mul(deconv2d(x, {kernel, Tensor({2}, 0.0), 2, 1}), y)).item();
  const double rhs = sum(mul(x, conv2d(y, {kernel, Tensor({3}, 0.0), 2, 1}))).item();
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
}

TEST(Deconv2d, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  const ConvWeights w = random_deconv(2, 3, rng);
  for (std::uint64_t point = 0; point < 10; ++point) {
    auto f = weighted_probe([&](const Tensor& x) { return deconv2d(x, w); }, {3, 6, 6}, 40 + point);
    EXPECT_LE(finite_diff_check(f, random_tensor({2, 3, 3}, 50 + point), 1e-6), 1e-6);
  }
  const Tensor x0 = random_tensor({2, 3, 3}, rng);
  auto fk = weighted_probe([&](const Tensor& k) { return deconv2d(x0, {k, w.bias, 2, 1}); }, {3, 6, 6}, 60);
  for (std::uint64_t dir = 0; dir < 10; ++dir) {
    const Tensor d = random_tensor(w.kernel.shape(), 70 + dir);
    EXPECT_LE(finite_diff_check(lotr::test::along(fk, w.kernel, d), Tensor({1, 1}, 0.0), 1e-6), 1e-6);
  }
}

TEST(Deconv2d, RejectsNonIntegerGeometry) {
  EXPECT_THROW(deconv2d(Tensor({1, 1, 1}), {Tensor({1, 1, 4, 4}), Tensor({1}), 2, 3}), ConfigError);
}

TEST(Dropout, RateZeroAndEvalAreIdentity) {
  Rng rng(9);
  const Tensor x = random_tensor({10, 10}, rng);
  EXPECT_TRUE(dropout(x, 0.0, Mode::kTrain, rng).same_values(x));
  EXPECT_TRUE(dropout(x, 0.1, Mode::kEval, rng).same_values(x));
}

TEST(Dropout, SurvivorStatistics) {
  Rng rng(10);
  const Tensor x({100000}, 1.0);
  const Tensor y = dropout(x, 0.1, Mode::kTrain, rng);
  std::size_t kept = 0;
  double total = 0.0;
  for (double v : y.data()) {
    if (v != 0.0) {
      ++kept;
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.9);
    }
    total += v;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1e5, 0.9, 0.01);
  EXPECT_NEAR(total / 1e5, 1.0, 0.02);
}

TEST(Dropout, DeterministicUnderSeed) {
  const Tensor x = random_tensor({50}, 1);
  Rng a(77), b(77);
  EXPECT_TRUE(dropout(x, 0.3, Mode::kTrain, a).same_values(dropout(x, 0.3, Mode::kTrain, b)));
}

TEST(Dropout, RejectsBadRate) {
  Rng rng(1);
  EXPECT_THROW(dropout(Tensor({2}), 1.0, Mode::kTrain, rng), ConfigError);
  EXPECT_THROW(dropout(Tensor({2}), -0.1, Mode::kEval, rng), ConfigError);
}
