#include "ugttt/metrics.hpp"
#include "ugttt/oracles.hpp"
#include "ugttt/random.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ugttt;

namespace {

RolloutRecord record(std::size_t epoch, double reward, std::string family = "f", std::size_t p1 = 3,
                     std::size_t p2 = 2) {
  RolloutRecord r;
  r.epoch = epoch;
  r.reward = reward;
  r.family = std::move(family);
  r.phase1_tokens = p1;
  r.phase2_tokens = p2;
  r.num_tokens = p1 + p2;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(FamilyEntropy, Examples) {
  const std::vector<std::string> one(5, "a");
  EXPECT_EQ(family_entropy(one).bits, 0.0);
  EXPECT_TRUE(family_entropy(one).defined);
  const std::vector<std::string> four{"a", "b", "c", "d"};
  EXPECT_DOUBLE_EQ(family_entropy(four).bits, 2.0);
  const std::vector<std::string> three_one{"a", "a", "a", "b"};
  EXPECT_NEAR(family_entropy(three_one).bits, 0.8113, 1e-4);
  EXPECT_FALSE(family_entropy(std::vector<std::string>{}).defined);
}

TEST(FamilyEntropy, BoundedByLogOfFamilies) {
  Rng rng(2);
  std::uniform_int_distribution<int> f(0, 6), n(1, 40);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> labels(static_cast<std::size_t>(n(rng)));
    std::set<std::string> present;
    for (auto& l : labels) present.insert(l = std::string(1, static_cast<char>('a' + f(rng))));
    const double h = family_entropy(labels).bits;
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log2(static_cast<double>(present.size())) + 1e-12);
  }
}

TEST(Spearman, MonotoneAndReversed) {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 8, 16, 32}, z{5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(*spearman_rho(x, y), 1.0);
  EXPECT_DOUBLE_EQ(*spearman_rho(x, z), -1.0);
}

TEST(Spearman, ZeroVarianceIsUndefined) {
  EXPECT_FALSE(spearman_rho(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
  EXPECT_THROW(spearman_rho(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
  EXPECT_THROW(spearman_rho(std::vector<double>{1, 2}, std::vector<double>{1}), std::invalid_argument);
}

TEST(Spearman, TiesMatchOracle) {
  Rng rng(31);
  std::uniform_int_distribution<int> v(0, 4), len(2, 60);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto n = static_cast<std::size_t>(len(rng));
    std::vector<double> x(n), y(n);
    for (auto& a : x) a = v(rng);
    for (auto& a : y) a = v(rng) * 0.5;
    const auto rho = spearman_rho(x, y);
    const long double ref = oracle::rank_then_pearson(x, y);
    if (!rho) {
      EXPECT_TRUE(std::isnan(static_cast<double>(ref)));
      continue;
    }
    EXPECT_NEAR(*rho, static_cast<double>(ref), 1e-12);
  }
}

TEST(AverageRanks, Ties) {
  EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 10, 30}), (std::vector<double>{1.5, 3, 1.5, 4}));
}

TEST(Summarize, RMaxAndNewBest) {
  RunLog log{record(0, 0.0), record(0, 1.0, "a"), record(0, 0.5, "b"), record(1, 0.7, "a"), record(1, 2.0, "b"),
             record(2, 0.1, "a")};
  const auto s = summarize(log);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].r_max, 1.0);
  EXPECT_EQ(s[1].r_max, 2.0);
  EXPECT_EQ(s[2].r_max, 2.0);
  EXPECT_EQ(s[0].new_best_events, 1u);
  EXPECT_EQ(s[1].new_best_events, 1u);
  EXPECT_EQ(s[2].new_best_events, 0u);
  EXPECT_EQ(s[0].correct, 2u);
  EXPECT_DOUBLE_EQ(s[0].entropy_bits, 1.0);
  EXPECT_EQ(s[2].entropy_bits, 0.0);
}

TEST(Summarize, NewBestReplayMatchesIncrementalCount) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RunLog log;
  std::size_t incremental = 0;
  double best = 0.0;
  for (std::size_t e = 0; e < 5; ++e)
    for (int i = 0; i < 50; ++i) {
      const double r = u(rng) < 0.3 ? 0.0 : u(rng) * (1.0 + static_cast<double>(e));
      if (r > best) {
        best = r;
        ++incremental;
      }
      log.push_back(record(e, r));
    }
  std::size_t replayed = 0;
  const auto s = summarize(log);
  for (const auto& row : s) replayed += row.new_best_events;
  EXPECT_EQ(replayed, incremental);
  for (std::size_t e = 1; e < s.size(); ++e) EXPECT_GE(s[e].r_max, s[e - 1].r_max);
}

TEST(Summarize, FiringRateCountsIncorrectRollouts) {
  RunLog log{record(0, 0.0), record(0, 1.0)};
  log[0].streaming_mi_stopped = true;
  const auto s = summarize(log);
  EXPECT_DOUBLE_EQ(s[0].firing_rate, 0.5);
  EXPECT_EQ(s[0].families.size(), 1u);
}

TEST(LengthReward, RewardEqualsCodeLength) {
  RunLog log;
  for (std::size_t i = 1; i <= 20; ++i) log.push_back(record(0, static_cast<double>(i), "f", 20 - i % 7, i));
  const auto d = length_reward_diagnostic(log, 0, 0);
  ASSERT_TRUE(d.code.has_value());
  EXPECT_DOUBLE_EQ(*d.code, 1.0);
}

TEST(LengthReward, IndependentRewardIsNearZero) {
  Rng rng(12);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, 50);
  RunLog log;
  for (int i = 0; i < 10000; ++i) log.push_back(record(0, u(rng), "f", len(rng), len(rng)));
  const auto d = length_reward_diagnostic(log, 0, 0);
  EXPECT_LT(std::abs(*d.think), 0.05);
  EXPECT_LT(std::abs(*d.code), 0.05);
  EXPECT_LT(std::abs(*d.total), 0.05);
}

TEST(LengthReward, AllIncorrectIsUndefined) {
  RunLog log{record(0, 0.0), record(1, 0.0)};
  const auto d = length_reward_diagnostic(log, 0, 5);
  EXPECT_FALSE(d.think || d.code || d.total);
  EXPECT_EQ(d.correct, 0u);
}

TEST(DiagnosticTable, TwoWindowsThreeColumnsEach) {
  RunLog log;
  for (std::size_t e = 0; e < 5; ++e)
    for (std::size_t i = 1; i <= 4; ++i) log.push_back(record(e, static_cast<double>(i + e), "f", i + e, i + e));
  const std::string table = format_diagnostic_table({diagnose_runlog("run", log)}, ',');
  std::istringstream is(table);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "run,rho_think[0-2],rho_code[0-2],rho_total[0-2],rho_think[all],rho_code[all],rho_total[all]");
  EXPECT_EQ(row, "run,+1.00,+1.00,+1.00,+1.00,+1.00,+1.00");
}

TEST(DiagnosticTable, EmptyLogIsUndefined) {
  const std::string table = format_diagnostic_table({diagnose_runlog("empty", {})}, ',');
  EXPECT_NE(table.find("empty,undefined,undefined,undefined,undefined,undefined,undefined"), std::string::npos);
}

TEST(RunLog, JsonlRoundTripAndTolerantReader) {
  RunLog log{record(0, 0.5, "motif_ab"), record(1, 0.0, "other")};
  log[0].beta = 3.25;
  log[0].streaming_mi_stopped = true;
  log[0].streaming_mi_stop_step = 8;
  std::stringstream ss;
  write_runlog(log, ss);
  const auto back = read_runlog(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(to_jsonl(back), to_jsonl(log));
  EXPECT_EQ(runlog_digest(back), runlog_digest(log));

  std::istringstream extra(R"({"epoch":2,"reward":1.5,"family":"x","unknown_field":[1,2]})" "\n");
  const auto tolerant = read_runlog(extra);
  ASSERT_EQ(tolerant.size(), 1u);
  EXPECT_EQ(tolerant[0].epoch, 2u);
  EXPECT_EQ(tolerant[0].reward, 1.5);
}

TEST(RunLog, FieldNames) {
  RunLog log{record(0, 0.5)};
  const std::string line = to_jsonl(log);
  for (const char* key : {"epoch", "group", "rollout", "adapter", "reward", "num_tokens", "phase1_tokens",
                          "phase2_tokens", "U_i", "beta", "gamma_eff", "streaming_mi_stopped",
                          "streaming_mi_stop_step", "family"})
    EXPECT_NE(line.find(std::string("\"") + key + "\""), std::string::npos) << key;
}

TEST(Plots, EmbeddedDataRoundTrip) {
  RunLog method{record(0, 1.0, "a"), record(0, 2.0, "b"), record(1, 0.5, "a")};
  RunLog base{record(0, 1.0, "a")};
  const auto dir = std::filesystem::temp_directory_path() / "ugttt_plots_test";
  std::filesystem::remove_all(dir);
  const auto files = emit_plots({{"method_x", false, method}, {"baseline_y", true, base}}, dir);
  ASSERT_EQ(files.size(), 3u);
  const std::string svg = slurp((dir / "dynamics.svg").string());
  const auto data = extract_embedded_data(svg);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data.at("method_x"), summaries_to_csv(summarize(method)));
  EXPECT_EQ(data.at("baseline_y"), summaries_to_csv(summarize(base)));
  EXPECT_NE(svg.find("stroke-dasharray"), std::string::npos);
  const std::string fam = slurp((dir / "families_method_x.svg").string());
  EXPECT_EQ(extract_embedded_data(fam).at("method_x"), summaries_to_csv(summarize(method)));
  std::filesystem::remove_all(dir);
}

TEST(Plots, SingleEpochAndEmptyLogs) {
  const auto dir = std::filesystem::temp_directory_path() / "ugttt_plots_small";
  std::filesystem::remove_all(dir);
  EXPECT_NO_THROW(emit_plots({{"one", false, RunLog{record(0, 1.0)}}}, dir));
  EXPECT_NO_THROW(emit_plots({{"none", false, RunLog{}}}, dir));
  EXPECT_NE(slurp((dir / "dynamics.svg").string()).find("no data"), std::string::npos);
  EXPECT_THROW(emit_plots({}, dir), std::invalid_argument);
  std::filesystem::remove_all(dir);
}
