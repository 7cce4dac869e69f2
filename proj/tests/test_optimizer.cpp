#include "ugttt/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ugttt;

namespace {

PolicyArchitecture scalar_arch() {
  PolicyArchitecture a;
  a.vocab_size = 4;
  a.feature_dim = 2;
  a.tracked_layers = 1;
  a.adapter_rank = 1;
  a.ensemble_size = 1;
  return a;
}

AdapterTensors filled(const PolicyArchitecture& arch, double v) {
  AdapterTensors t = AdapterTensors::zeros(arch);
  for (auto& m : t.a) m.setConstant(v);
  for (auto& m : t.b) m.setConstant(v);
  return t;
}

}  // namespace

TEST(AdamW, ZeroGradZeroDecayLeavesParams) {
  const auto arch = scalar_arch();
  AdapterTensors p = filled(arch, 0.7);
  const AdapterTensors before = p;
  auto st = OptimizerState::zeros(arch);
  AdamWSettings s;
  s.weight_decay = 0.0;
  for (int i = 0; i < 3; ++i) adamw_step(p, AdapterTensors::zeros(arch), st, s);
  EXPECT_EQ(p.a, before.a);
  EXPECT_EQ(p.b, before.b);
  EXPECT_EQ(st.step, 3u);
}

TEST(AdamW, DecayOnlyScales) {
  const auto arch = scalar_arch();
  AdapterTensors p = filled(arch, 2.0);
  auto st = OptimizerState::zeros(arch);
  AdamWSettings s;
  s.lr = 0.1;
  s.weight_decay = 0.5;
  adamw_step(p, AdapterTensors::zeros(arch), st, s);
  EXPECT_DOUBLE_EQ(p.a[0](0, 0), 2.0 * (1.0 - 0.1 * 0.5));
}

// f(x) = (x - 3)^2 at x = 1, two steps, by hand.
TEST(AdamW, ScalarQuadraticHandComputed) {
  const auto arch = scalar_arch();
  AdapterTensors p = filled(arch, 1.0);
  auto st = OptimizerState::zeros(arch);
  AdamWSettings s;
  s.lr = 0.1;
  s.beta1 = 0.9;
  s.beta2 = 0.999;
  s.eps = 1e-8;
  s.weight_decay = 0.01;

  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = 2.0 * (x - 3.0);
    AdapterTensors grad = filled(arch, g);
    adamw_step(p, grad, st, s);

    x *= 1.0 - 0.1 * 0.01;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.a[0](0, 0), x, 1e-12);
  }
  // B received the same gradients.
  EXPECT_NEAR(p.b[0](0, 0), x, 1e-12);
}

TEST(AdamW, ZeroEpsSkipsZeroDenominator) {
  const auto arch = scalar_arch();
  AdapterTensors p = filled(arch, 1.0);
  auto st = OptimizerState::zeros(arch);
  AdamWSettings s;
  s.eps = 0.0;
  s.weight_decay = 0.0;
  AdapterTensors g = AdapterTensors::zeros(arch);
  g.a[0](0, 0) = 5.0;
  adamw_step(p, g, st, s);
  EXPECT_NEAR(p.a[0](0, 0), 1.0 - s.lr, 1e-15);
  EXPECT_EQ(p.a[0](0, 1), 1.0);
  EXPECT_TRUE(p.all_finite());
}

TEST(AdamW, NonFiniteGradientNamesStep) {
  const auto arch = scalar_arch();
  AdapterTensors p = filled(arch, 1.0);
  auto st = OptimizerState::zeros(arch);
  adamw_step(p, AdapterTensors::zeros(arch), st, AdamWSettings{});
  AdapterTensors g = AdapterTensors::zeros(arch);
  g.b[0](1, 0) = NAN;
  try {
    adamw_step(p, g, st, AdamWSettings{});
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos);
  }
}
