#include <gtest/gtest.h>

#include <cmath>

#include "lotr/losses.hpp"
#include "test_helpers.hpp"

using namespace lotr;
using lotr::test::random_tensor;

namespace {

// Values computed with 50-digit arithmetic from the piecewise definitions.
struct OracleRow {
  double x, smooth_wing, wing;
};
constexpr OracleRow kOracle[] = {
    {0.0, 0.0, 0.0},
    {0.005, 0.00746268656716418, 0.0249688019858720},
    {0.01, 0.0299997518638122, 0.0498754151103907},
    {0.5, 2.64787186950186, 2.23143551314210},
    {1.0, 4.83573055102932, 4.05465108108164},
    {2.0, 8.28791542045069, 6.93147180559945},
    {10.0, 21.4712628844680, 17.9175946922806},
    {20.0, 31.4712628844680, 27.9175946922806},
};

const LossSpec kSmoothWing(LossKind::kSmoothWing);
const LossSpec kWing(LossKind::kWing);

const LossKind kAllKinds[] = {LossKind::kL1, LossKind::kL2, LossKind::kSmoothL1, LossKind::kWing,
                              LossKind::kSmoothWing};

}  // namespace

TEST(LossSpec, DerivedConstants) {
  EXPECT_NEAR(kSmoothWing.s(), 298.507462686567, 1e-9);
  EXPECT_NEAR(kSmoothWing.c1(), -11.5011136307367, 1e-12);
  EXPECT_NEAR(kSmoothWing.c2(), 0.0298507462686567, 1e-14);
  EXPECT_NEAR(kWing.c(), -7.91759469228055, 1e-12);
}

TEST(LossSpec, Validation) {
  EXPECT_THROW(LossSpec(LossKind::kWing, 0.0), ConfigError);
  EXPECT_THROW(LossSpec(LossKind::kWing, 10.0, -1.0), ConfigError);
  EXPECT_THROW(LossSpec(LossKind::kSmoothWing, 10.0, 2.0, 10.0), ConfigError);
  EXPECT_THROW(LossSpec(LossKind::kSmoothWing, 10.0, 2.0, 0.0), ConfigError);
  EXPECT_NO_THROW(LossSpec(LossKind::kWing, 10.0, 2.0, 50.0));
}

TEST(LossSpec, KindNames) {
  for (auto k : kAllKinds) EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  EXPECT_THROW(parse_loss_kind("huber"), ConfigError);
}

TEST(ElementwiseLoss, OracleTable) {
  for (const auto& row : kOracle) {
    EXPECT_NEAR(elementwise_loss(row.x, kSmoothWing).value, row.smooth_wing, 1e-12) << row.x;
    EXPECT_NEAR(elementwise_loss(row.x, kWing).value, row.wing, 1e-12) << row.x;
  }
}

TEST(ElementwiseLoss, SpecExamples) {
  const auto z = elementwise_loss(0.0, kSmoothWing);
  EXPECT_EQ(z.value, 0.0);
  EXPECT_EQ(z.gradient, 0.0);
  EXPECT_NEAR(elementwise_loss(1.0, kSmoothWing).value, 4.8357306, 5e-8);
  EXPECT_NEAR(elementwise_loss(20.0, kSmoothWing).value, 31.4712629, 5e-8);
  EXPECT_NEAR(elementwise_loss(0.005, kSmoothWing).value, 0.0074627, 5e-8);
  EXPECT_NEAR(elementwise_loss(2.0, kWing).value, 10.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(elementwise_loss(20.0, kWing).value, 27.9175947, 5e-8);
  const auto l2 = elementwise_loss(3.0, LossSpec(LossKind::kL2));
  EXPECT_EQ(l2.value, 4.5);
  EXPECT_EQ(l2.gradient, 3.0);
}

TEST(ElementwiseLoss, SmoothL1AndL1) {
  const LossSpec sl1(LossKind::kSmoothL1), l1(LossKind::kL1);
  EXPECT_EQ(elementwise_loss(0.5, sl1).value, 0.125);
  EXPECT_EQ(elementwise_loss(-3.0, sl1).value, 2.5);
  EXPECT_EQ(elementwise_loss(-3.0, sl1).gradient, -1.0);
  EXPECT_EQ(elementwise_loss(1.0, sl1).gradient, 1.0);
  EXPECT_EQ(elementwise_loss(-2.5, l1).value, 2.5);
  EXPECT_EQ(elementwise_loss(-2.5, l1).gradient, -1.0);
}

TEST(ElementwiseLoss, KinkGradientsUseInnerBranch) {
  EXPECT_DOUBLE_EQ(elementwise_loss(0.01, kSmoothWing).gradient, 2.0 * kSmoothWing.s() * 0.01);
  EXPECT_DOUBLE_EQ(elementwise_loss(10.0, kSmoothWing).gradient, 12.0 / 12.0);
  EXPECT_DOUBLE_EQ(elementwise_loss(10.0, kWing).gradient, 10.0 / 12.0);
  EXPECT_DOUBLE_EQ(elementwise_loss(-10.0, kWing).gradient, -10.0 / 12.0);
}

TEST(ElementwiseLoss, SymmetryAndOddGradient) {
  Rng rng(1);
  for (auto kind : kAllKinds) {
    const LossSpec spec(kind);
    for (int i = 0; i < 200; ++i) {
      const double x = rng.uniform(0.0, 30.0);
      const auto p = elementwise_loss(x, spec), n = elementwise_loss(-x, spec);
      EXPECT_EQ(p.value, n.value);
      EXPECT_EQ(p.gradient, -n.gradient);
    }
  }
}

TEST(ElementwiseLoss, MonotoneOnPositiveAxis) {
  for (auto kind : kAllKinds) {
    const LossSpec spec(kind);
    double prev = elementwise_loss(0.0, spec).value;
    for (double x = 1e-4; x < 30.0; x += 1e-3) {
      const double v = elementwise_loss(x, spec).value;
      EXPECT_GE(v, prev) << to_string(kind) << " at " << x;
      prev = v;
    }
  }
}

TEST(ElementwiseLoss, GradientMatchesFiniteDifferencesAwayFromKinks) {
  Rng rng(2);
  for (auto kind : kAllKinds) {
    const LossSpec spec(kind);
    const double kinks[] = {0.0, 1.0, spec.t(), spec.w()};
    int checked = 0;
    while (checked < 50) {
      const double x = rng.uniform(-25.0, 25.0);
      bool near = false;
      for (double k : kinks) near = near || std::abs(std::abs(x) - k) < 1e-3;
      if (near) continue;
      const double h = 1e-6;
      const double num = (elementwise_loss(x + h, spec).value - elementwise_loss(x - h, spec).value) / (2 * h);
      const double ana = elementwise_loss(x, spec).gradient;
      EXPECT_LE(std::abs(ana - num) / std::max(1e-12, std::abs(num)), 1e-6) << to_string(kind) << " at " << x;
      ++checked;
    }
  }
}

TEST(Continuity, WingGradientJumpAtW) {
  const double w = 10.0, d = 1e-9;
  const double jump = elementwise_loss(w + d, kWing).gradient - elementwise_loss(w - d, kWing).gradient;
  EXPECT_NEAR(jump, 1.0 - w / (w + 2.0), 1e-6);
  EXPECT_NEAR(jump, 0.1666667, 1e-6);
}

TEST(Continuity, WingValueContinuousAtW) {
  for (double d : {1e-3, 1e-6, 1e-9}) {
    EXPECT_LE(std::abs(elementwise_loss(10.0 - d, kWing).value - elementwise_loss(10.0 + d, kWing).value), 2.0 * d);
  }
}

// One-sided limit of the gradient at b, by linear extrapolation from b +- d and b +- 2d.
double one_sided_gradient(double b, double d, const LossSpec& spec) {
  return 2.0 * elementwise_loss(b + d, spec).gradient - elementwise_loss(b + 2.0 * d, spec).gradient;
}

TEST(Continuity, SmoothWingGradientContinuous) {
  const double d = 1e-6;
  for (double b : {0.01, 10.0}) {
    const double jump = std::abs(one_sided_gradient(b, d, kSmoothWing) - one_sided_gradient(b, -d, kSmoothWing));
    EXPECT_LE(jump, 1e-5) << "boundary " << b;
  }
  // at t both one-sided gradients equal (w + eps) / (eps + t)
  const double expected = 12.0 / 2.01;
  EXPECT_NEAR(2.0 * kSmoothWing.s() * 0.01, expected, 1e-12);
  EXPECT_NEAR(elementwise_loss(0.01, kSmoothWing).gradient, expected, 1e-12);
}

TEST(Continuity, SmoothWingSymmetricDifferenceIsSlopeDominated) {
  // |g(t - d) - g(t + d)| carries the curvature of both branches, 2s d - (w+eps) d / (eps+t)^2 to first order.
  const double t = 0.01, d = 1e-6;
  const double raw = std::abs(elementwise_loss(t - d, kSmoothWing).gradient - elementwise_loss(t + d, kSmoothWing).gradient);
  const double predicted = 2.0 * kSmoothWing.s() * d - 12.0 * d / ((2.0 + t) * (2.0 + t));
  EXPECT_NEAR(raw, predicted, 1e-9);
  const double at_w = std::abs(elementwise_loss(10.0 - d, kSmoothWing).gradient - elementwise_loss(10.0 + d, kSmoothWing).gradient);
  EXPECT_LE(at_w, 10.0 * d);
}

TEST(Continuity, SmoothWingValueContinuousAtW) {
  const double inner = 12.0 * std::log1p(10.0 / 2.0) - kSmoothWing.c2();
  const double outer = 10.0 - kSmoothWing.c1() - kSmoothWing.c2();
  EXPECT_LE(std::abs(inner - outer), 1e-12);
  EXPECT_LE(std::abs(elementwise_loss(10.0, kSmoothWing).value - elementwise_loss(std::nextafter(10.0, 11.0), kSmoothWing).value), 1e-12);
}

TEST(Continuity, SmoothWingValueJumpAtT) {
  const double t = 0.01, w = 10.0, eps = 2.0;
  const double closed_form = (w + eps) * (std::log1p(t / eps) - t / (eps + t));
  EXPECT_NEAR(closed_form, 1.49005595155450e-4, 1e-15);
  const double below = kSmoothWing.s() * t * t;
  const double above = elementwise_loss(t, kSmoothWing).value;
  EXPECT_NEAR(above - below, closed_form, 1e-9);
  // one-sided limits measured numerically
  const double d = 1e-12;
  const double measured = elementwise_loss(t + d, kSmoothWing).value - elementwise_loss(t - d, kSmoothWing).value;
  EXPECT_NEAR(measured, closed_form, 1e-9);
}

TEST(TotalLoss, ZeroWhenEqual) {
  const Tensor z = random_tensor({5, 2}, 1);
  for (auto kind : kAllKinds) EXPECT_EQ(total_loss(z, z, LossSpec(kind)).item(), 0.0);
}

TEST(TotalLoss, TwoCoordinateExample) {
  const Tensor z({1, 2}, std::vector<double>{1.0, 2.0});
  const Tensor zhat({1, 2}, 0.0);
  EXPECT_NEAR(total_loss(z, zhat, kSmoothWing).item(), 13.1236459714800, 1e-12);
  EXPECT_NEAR(total_loss(z, zhat, kSmoothWing).item(), 4.83573055102932 + 8.28791542045069, 1e-12);
}

TEST(TotalLoss, ShapeMismatch) {
  EXPECT_THROW(total_loss(Tensor({5, 2}), Tensor({4, 2}), kSmoothWing), ShapeError);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (auto kind : kAllKinds) {
    const LossSpec spec(kind);
    for (int point = 0; point < 10; ++point) {
      const Tensor z = random_tensor({5, 2}, rng, 5.0);
      // residuals kept > 1e-3 away from every kink
      Tensor zhat(z.shape());
      auto d = zhat.mutable_data();
      for (std::size_t i = 0; i < z.size(); ++i) {
        double r;
        do {
          r = rng.uniform(-15.0, 15.0);
        } while (std::abs(std::abs(r) - 1.0) < 1e-3 || std::abs(std::abs(r) - 10.0) < 1e-3 ||
                 std::abs(std::abs(r) - 0.01) < 1e-3 || std::abs(r) < 1e-3);
        d[i] = z[i] - r;
      }
      const double err = finite_diff_check([&](const Tensor& p) { return total_loss(z, p, spec); }, zhat, 1e-6);
      EXPECT_LE(err, 1e-7) << to_string(kind);
    }
  }
}
