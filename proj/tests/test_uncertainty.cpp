#include "ugttt/oracles.hpp"
#include "ugttt/random.hpp"
#include "ugttt/uncertainty.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ugttt;

namespace {

Distribution random_distribution(std::size_t v, Rng& rng) {
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<double> p(v);
  double s = 0.0;
  for (auto& x : p) s += (x = g(rng) + 1e-300);
  for (auto& x : p) x /= s;
  return Distribution(std::move(p));
}

std::vector<std::vector<double>> as_vectors(const std::vector<Distribution>& ms) {
  std::vector<std::vector<double>> out;
  for (const auto& m : ms) out.emplace_back(m.probs().begin(), m.probs().end());
  return out;
}

}  // namespace

TEST(MiPerToken, TwoSymmetricMembers) {
  const std::vector<Distribution> m{Distribution({0.8, 0.2}), Distribution({0.2, 0.8})};
  EXPECT_NEAR(mi_per_token(m), 0.1927, 1e-4);
  EXPECT_NEAR(mi_per_token(m), static_cast<double>(oracle::mutual_information(as_vectors(m))), 1e-15);
}

TEST(MiPerToken, TiedMembersGiveExactZero) {
  Rng rng(5);
  const auto d = random_distribution(7, rng);
  const std::vector<Distribution> m(5, d);
  EXPECT_EQ(mi_per_token(m), 0.0);
}

TEST(MiPerToken, NonNegativeAndMatchesOracle) {
  Rng rng(17);
  std::uniform_int_distribution<std::size_t> kd(2, 6), vd(2, 12);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Distribution> m;
    const std::size_t k = kd(rng), v = vd(rng);
    for (std::size_t i = 0; i < k; ++i) m.push_back(random_distribution(v, rng));
    const double mi = mi_per_token(m);
    EXPECT_GE(mi, 0.0);
    EXPECT_NEAR(mi, static_cast<double>(oracle::mutual_information(as_vectors(m))), 1e-12);
    EXPECT_LE(mi, std::log(static_cast<double>(k)) + 1e-12);
  }
}

TEST(MiPerToken, RejectsMismatchedAlphabets) {
  const std::vector<Distribution> m{Distribution({0.5, 0.5}), Distribution({0.2, 0.3, 0.5})};
  EXPECT_THROW(mi_per_token(m), std::invalid_argument);
  EXPECT_THROW(mi_per_token(std::vector<Distribution>{}), std::invalid_argument);
}

TEST(RolloutMiSummary, TopSevenPercentOfHundred) {
  std::vector<double> trace(100);
  for (std::size_t i = 0; i < 100; ++i) trace[i] = static_cast<double>(i);
  // ceil(0.07 * 100) = 7 largest: 93..99.
  EXPECT_EQ(top_fraction_count(100, 0.07), 7u);
  EXPECT_DOUBLE_EQ(rollout_mi_summary(trace), 96.0);
}

TEST(RolloutMiSummary, ShortTraceUsesAtLeastOne) {
  EXPECT_EQ(top_fraction_count(3, 0.07), 1u);
  EXPECT_DOUBLE_EQ(rollout_mi_summary(std::vector<double>{0.1, 0.5, 0.2}), 0.5);
  EXPECT_EQ(top_fraction_count(15, 0.07), 2u);
  EXPECT_THROW(rollout_mi_summary(std::vector<double>{}), std::invalid_argument);
}

TEST(RolloutMiSummary, FullFractionIsMean) {
  EXPECT_DOUBLE_EQ(rollout_mi_summary(std::vector<double>{1.0, 2.0, 3.0, 6.0}, 1.0), 3.0);
}

TEST(Percentile, MatchesSelectionOracle) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + trial % 40);
    for (auto& x : v) x = u(rng);
    if (trial % 3 == 0) v.push_back(v.front());
    for (double p : {0.0, 25.0, 50.0, 99.0})
      EXPECT_NEAR(percentile_linear(v, p), oracle::percentile(v, p), 1e-15);
  }
}

TEST(StreamingGate, InactiveDuringWarmup) {
  StreamingSettings s;
  s.enabled = true;
  s.min_tokens_before_check = 4;
  StreamingGateState gate(s);
  for (double x : {0.5, 0.6, 0.7, 0.8}) gate.record(x);
  for (std::size_t e = 0; e < 3; ++e) {
    gate.set_epoch(e);
    EXPECT_EQ(gate.decide(0.0, 100), GateDecision::Inactive);
  }
  gate.set_epoch(3);
  EXPECT_EQ(gate.decide(0.0, 100), GateDecision::Truncate);
  EXPECT_EQ(gate.decide(0.0, 3), GateDecision::Inactive);
  EXPECT_EQ(gate.decide(0.9, 100), GateDecision::Continue);
}

TEST(StreamingGate, EmptyHistoryContinues) {
  StreamingSettings s;
  s.warmup_epochs = 0;
  s.min_tokens_before_check = 0;
  StreamingGateState gate(s);
  EXPECT_EQ(gate.decide(0.0, 10), GateDecision::Continue);
  EXPECT_EQ(gate.update_and_decide(0.0, 10), GateDecision::Continue);
  EXPECT_EQ(gate.history().size(), 1u);
}

TEST(StreamingGate, DecisionsMatchPercentileOracle) {
  Rng rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> tok(0, 20);
  StreamingSettings s;
  s.min_tokens_before_check = 6;
  StreamingGateState gate(s);
  std::vector<double> history;
  for (std::size_t step = 0; step < 3000; ++step) {
    const std::size_t epoch = step / 500;
    gate.set_epoch(epoch);
    const double w = u(rng);
    const std::size_t n = tok(rng);
    const bool expect = oracle::gate_truncates(history, w, epoch, s.warmup_epochs, n, s.min_tokens_before_check, 25.0);
    const GateDecision d = gate.update_and_decide(w, n);
    ASSERT_EQ(d == GateDecision::Truncate, expect) << "step " << step;
    if (d != GateDecision::Inactive) history.push_back(w);
  }
}

TEST(StreamingGate, RejectsBadSettings) {
  StreamingSettings s;
  s.percentile = 0.0;
  EXPECT_THROW(StreamingGateState{s}, std::invalid_argument);
  s.percentile = 25.0;
  s.window = 0;
  EXPECT_THROW(StreamingGateState{s}, std::invalid_argument);
}
