#include "ugttt/envs.hpp"
#include "ugttt/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ugttt;

TEST(FiniteDifference, Square) {
  const auto g = oracle::finite_difference_gradient([](const std::vector<double>& x) { return x[0] * x[0]; }, {3.0});
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDifference, NonFiniteNamesCoordinate) {
  try {
    oracle::finite_difference_gradient(
        [](const std::vector<double>& x) { return x[1] > 0.5 ? std::log(-1.0) : x[0]; }, {0.0, 0.5});
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
  }
}

TEST(ExhaustiveArgmax, RefusesHugeSpaces) {
  MotifEnv env(0);
  std::vector<Token> alphabet;
  for (Token t = kFirstContentToken; t < env.vocab_size(); ++t) alphabet.push_back(t);
  EXPECT_THROW(oracle::exhaustive_env_argmax(env, alphabet, 12), std::length_error);
  EXPECT_THROW(oracle::exhaustive_env_argmax(env, std::vector<Token>{}, 2), std::invalid_argument);
}

TEST(ExhaustiveArgmax, KeepsFirstMaximum) {
  MotifEnv env(0);
  const std::vector<Token> alphabet{kFirstContentToken};
  const auto out = oracle::exhaustive_env_argmax(env, alphabet, 0);
  EXPECT_EQ(out.evaluated, 1u);
  EXPECT_TRUE(out.best.empty());
}

TEST(KlOracle, ZeroAndSaturatedTemperature) {
  const std::vector<double> r{0.0, 1.0, 2.0, 3.0};
  EXPECT_NEAR(static_cast<double>(oracle::kl_vs_uniform(r, 0.0)), 0.0, 1e-18);
  EXPECT_NEAR(static_cast<double>(oracle::kl_vs_uniform(r, 500.0)), std::log(4.0), 1e-12);
  double prev = 0.0;
  for (double b = 0.1; b < 10.0; b += 0.1) {
    const double kl = static_cast<double>(oracle::kl_vs_uniform(r, b));
    EXPECT_GT(kl, prev);
    prev = kl;
  }
}

TEST(MiOracle, TwoDisjointMembers) {
  EXPECT_NEAR(static_cast<double>(oracle::mutual_information({{1.0, 0.0}, {0.0, 1.0}})), std::log(2.0), 1e-15);
  EXPECT_NEAR(static_cast<double>(oracle::mutual_information({{0.3, 0.7}, {0.3, 0.7}})), 0.0, 1e-15);
}

TEST(PercentileOracle, Interpolates) {
  EXPECT_DOUBLE_EQ(oracle::percentile({4, 1, 3, 2}, 25.0), 1.75);
  EXPECT_DOUBLE_EQ(oracle::percentile({5}, 25.0), 5.0);
  EXPECT_DOUBLE_EQ(oracle::percentile({1, 2, 3}, 100.0), 3.0);
}

TEST(GateOracle, Conditions) {
  const std::vector<double> h{1, 2, 3, 4, 5};
  EXPECT_TRUE(oracle::gate_truncates(h, 0.5, 3, 3, 10, 4, 25.0));
  EXPECT_FALSE(oracle::gate_truncates(h, 0.5, 2, 3, 10, 4, 25.0));
  EXPECT_FALSE(oracle::gate_truncates(h, 0.5, 3, 3, 3, 4, 25.0));
  EXPECT_FALSE(oracle::gate_truncates({}, 0.5, 3, 3, 10, 4, 25.0));
  EXPECT_FALSE(oracle::gate_truncates(h, 2.0, 3, 3, 10, 4, 25.0));
}

TEST(RankPearsonOracle, Ties) {
  const std::vector<double> x{1, 1, 2, 3}, y{1, 2, 3, 4};
  // Ranks (1.5, 1.5, 3, 4) against (1, 2, 3, 4).
  const double expect = 4.5 / std::sqrt(4.5 * 5.0);
  EXPECT_NEAR(static_cast<double>(oracle::rank_then_pearson(x, y)), expect, 1e-15);
}
