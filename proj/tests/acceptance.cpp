// Acceptance run: one PASS/FAIL line per criterion.
//
//   ugttt_acceptance [--only N]... [--known-failure N]... [--seeds a,b,c]
//
// Exit status is 0 when every criterion passes or fails only where listed
// with --known-failure.

#include "ugttt/config.hpp"
#include "ugttt/envs.hpp"
#include "ugttt/metrics.hpp"
#include "ugttt/oracles.hpp"
#include "ugttt/propcheck.hpp"
#include "ugttt/random.hpp"
#include "ugttt/trainer.hpp"
#include "ugttt/uncertainty.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

using namespace ugttt;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

Outcome suite(const std::string& name) {
  const auto rep = propcheck::run_suite(name);
  std::ostringstream os;
  for (const auto& c : rep.checks)
    os << (os.tellp() ? "; " : "") << c.name << (c.passed ? " ok" : " VIOLATED") << " (" << c.measured << " vs "
       << c.tolerance << ")";
  return {rep.passed(), os.str()};
}

std::string fmt(double x, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

bool r_max_monotone(const RunLog& log) {
  const auto rows = summarize(log);
  double best = 0.0;
  for (std::size_t e = 0; e < rows.size(); ++e) {
    double direct = best;
    for (const auto& r : log)
      if (r.epoch == rows[e].epoch) direct = std::max(direct, r.reward);
    if (rows[e].r_max != direct || rows[e].r_max < best) return false;
    best = rows[e].r_max;
  }
  return true;
}

// Runs shared by the diversity and bookkeeping criteria.
struct MotifRuns {
  std::map<RunMode, std::vector<RunLog>> logs;
};

MotifRuns& motif_runs(const std::vector<std::uint64_t>& seeds) {
  static MotifRuns runs;
  if (!runs.logs.empty()) return runs;
  const auto env = make_environment("motif");
  for (RunMode mode : {RunMode::Method, RunMode::BaselineK1, RunMode::AblateNoNnm}) {
    for (std::uint64_t seed : seeds) {
      TrainerConfig cfg;
      apply_mode(cfg, mode);
      cfg.arch.vocab_size = env->vocab_size();
      cfg.seed = seed;
      cfg.workers = worker_count();
      runs.logs[mode].push_back(run_training(*env, cfg).log);
    }
  }
  return runs;
}

Outcome diversity(const std::vector<std::uint64_t>& seeds) {
  const auto& runs = motif_runs(seeds);
  auto final_mean = [&](RunMode m, auto field) {
    double sum = 0.0;
    for (const auto& log : runs.logs.at(m)) sum += field(summarize(log).back());
    return sum / static_cast<double>(runs.logs.at(m).size());
  };
  auto entropy = [](const EpochSummary& s) { return s.entropy_defined ? s.entropy_bits : 0.0; };
  auto mi = [](const EpochSummary& s) { return s.mean_mi; };
  const double h_method = final_mean(RunMode::Method, entropy);
  const double h_base = final_mean(RunMode::BaselineK1, entropy);
  const double mi_method = final_mean(RunMode::Method, mi);
  const double mi_ablate = final_mean(RunMode::AblateNoNnm, mi);
  const double gap = h_method - h_base;
  const double ratio = mi_ablate > 0.0 ? mi_method / mi_ablate : (mi_method > 0.0 ? INFINITY : 0.0);
  std::ostringstream os;
  os << seeds.size() << " seeds; H method " << fmt(h_method) << " bits, K=1 " << fmt(h_base) << " bits, gap "
     << fmt(gap) << " (need >= 0.3); MI method " << fmt(mi_method) << ", no-NNM " << fmt(mi_ablate) << ", ratio "
     << fmt(ratio) << " (need >= 10)";
  return {gap >= 0.3 && ratio >= 10.0, os.str()};
}

Outcome bookkeeping(const std::vector<std::uint64_t>& seeds) {
  std::size_t runs = 0;
  for (const auto& [mode, logs] : motif_runs(seeds).logs)
    for (const auto& log : logs) {
      ++runs;
      if (!r_max_monotone(log)) return {false, "R_max decreased in a motif run (" + std::string(to_string(mode)) + ")"};
    }

  const auto env = make_environment("autocorr-tiny");
  std::vector<Token> alphabet;
  for (Token t = kFirstContentToken; t < env->vocab_size(); ++t) alphabet.push_back(t);
  const auto optimum = oracle::exhaustive_env_argmax(*env, alphabet, 4);
  double best_logged = 0.0;
  for (std::uint64_t seed : seeds) {
    TrainerConfig cfg;
    cfg.arch.vocab_size = env->vocab_size();
    cfg.seed = seed;
    cfg.workers = worker_count();
    const auto log = run_training(*env, cfg).log;
    ++runs;
    if (!r_max_monotone(log)) return {false, "R_max decreased in an autocorr-tiny run"};
    for (const auto& r : log) best_logged = std::max(best_logged, r.reward);
  }
  std::ostringstream os;
  os << runs << " runs monotone; autocorr-tiny best logged " << fmt(best_logged, 6) << " <= optimum "
     << fmt(optimum.reward, 6) << " over " << optimum.evaluated << " candidates";
  return {best_logged <= optimum.reward, os.str()};
}

Outcome streaming_gate() {
  // Synthetic streams against the percentile oracle.
  Rng rng(909);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> tokens(0, 16);
  std::size_t decisions = 0, mismatches = 0, warmup_firings = 0, firings = 0;
  for (int stream = 0; stream < 20; ++stream) {
    StreamingSettings s;
    s.enabled = true;
    s.min_tokens_before_check = 4 + static_cast<std::size_t>(stream % 5);
    StreamingGateState gate(s);
    std::vector<double> history;
    for (std::size_t step = 0; step < 600; ++step) {
      const std::size_t epoch = step / 100;
      gate.set_epoch(epoch);
      const double w = u(rng) * (1.0 + static_cast<double>(stream % 3));
      const std::size_t n = tokens(rng);
      const bool expect = oracle::gate_truncates(history, w, epoch, 3, n, s.min_tokens_before_check, 25.0);
      const bool truncated = gate.update_and_decide(w, n) == GateDecision::Truncate;
      ++decisions;
      if (truncated != expect) ++mismatches;
      if (truncated) (epoch < 3 ? warmup_firings : firings) += 1;
      if (epoch >= 3 && n >= s.min_tokens_before_check) history.push_back(w);
    }
  }

  // Live run: warmup silence and log field semantics.
  const auto env = make_environment("motif");
  TrainerConfig cfg;
  cfg.arch.vocab_size = env->vocab_size();
  cfg.streaming.enabled = true;
  cfg.epochs = 6;
  cfg.seed = 5;
  cfg.workers = worker_count();
  const auto log = run_training(*env, cfg).log;
  std::size_t live_warmup = 0, live_firings = 0, bad_fields = 0;
  for (const auto& r : log) {
    if (r.streaming_mi_stopped) {
      ++live_firings;
      if (r.epoch < cfg.streaming.warmup_epochs) ++live_warmup;
      if (!r.streaming_mi_stop_step || *r.streaming_mi_stop_step != cfg.limits.phase1_cap ||
          r.phase1_tokens != cfg.limits.phase1_cap)
        ++bad_fields;
    } else if (r.streaming_mi_stop_step) {
      ++bad_fields;
    }
  }
  std::ostringstream os;
  os << decisions << " synthetic decisions, " << mismatches << " mismatches, " << warmup_firings
     << " warmup firings (" << firings << " later); live run " << live_firings << " firings, " << live_warmup
     << " in warmup, " << bad_fields << " malformed records";
  return {mismatches == 0 && warmup_firings == 0 && firings > 0 && live_warmup == 0 && bad_fields == 0, os.str()};
}

Outcome determinism() {
  const Json manifest_json = Json::parse(R"({"env": "motif", "mode": "method", "seeds": [17], "streaming": true,
                                             "config": {"train.epochs": 4}})");
  auto run_with = [&](std::size_t workers) {
    CliOverrides cli;
    cli.assignments = {"run.workers=" + std::to_string(workers)};
    ResolvedRun r = resolve_run(parse_manifest(manifest_json), cli);
    const auto env = make_environment(r.manifest.env);
    r.config.arch.vocab_size = env->vocab_size();
    return runlog_digest(run_training(*env, r.config).log);
  };
  const std::string a = run_with(1), b = run_with(1), c = run_with(4), d = run_with(worker_count());
  const bool ok = a == b && a == c && a == d;
  return {ok, "digests " + a.substr(0, 16) + (ok ? " identical" : " differ") + " over 2 runs and workers 1/4/" +
                  std::to_string(worker_count())};
}

Outcome spearman_and_schema() {
  Rng rng(77);
  std::uniform_int_distribution<int> v(0, 6), len(2, 80);
  double worst = 0.0;
  std::size_t trials = 0, undefined_mismatch = 0;
  for (int t = 0; t < 5000; ++t) {
    const auto n = static_cast<std::size_t>(len(rng));
    std::vector<double> x(n), y(n);
    for (auto& a : x) a = v(rng);
    for (auto& a : y) a = v(rng) * 1.5 - 2;
    const auto rho = spearman_rho(x, y);
    const double ref = static_cast<double>(oracle::rank_then_pearson(x, y));
    if (!rho) {
      if (!std::isnan(ref)) ++undefined_mismatch;
      continue;
    }
    ++trials;
    worst = std::max(worst, std::abs(*rho - ref));
  }

  // Synthetic logs: code length drives reward in epochs 0-2, noise after.
  RunLog log;
  std::uniform_int_distribution<std::size_t> l(1, 30);
  for (std::size_t e = 0; e < 6; ++e)
    for (int i = 0; i < 40; ++i) {
      RolloutRecord r;
      r.epoch = e;
      r.phase1_tokens = l(rng);
      r.phase2_tokens = l(rng);
      r.num_tokens = r.phase1_tokens + r.phase2_tokens;
      r.reward = e <= 2 ? static_cast<double>(r.phase2_tokens) + 0.5 : static_cast<double>(l(rng) % 3);
      log.push_back(r);
    }
  const auto row = diagnose_runlog("synthetic", log, 2);
  const std::string table = format_diagnostic_table({row, diagnose_runlog("empty", {}, 2)}, ',');
  std::istringstream is(table);
  std::string header, first, second;
  std::getline(is, header);
  std::getline(is, first);
  std::getline(is, second);
  const std::string expected_header =
      "run,rho_think[0-2],rho_code[0-2],rho_total[0-2],rho_think[all],rho_code[all],rho_total[all]";
  const bool schema = header == expected_header && row.early.code && std::abs(*row.early.code - 1.0) < 1e-12 &&
                      second == "empty,undefined,undefined,undefined,undefined,undefined,undefined";
  std::ostringstream os;
  os << trials << " tie-heavy pairs, max |rho - oracle| " << fmt(worst) << " (need <= 1e-12), " << undefined_mismatch
     << " undefined mismatches; schema " << (schema ? "matches" : "differs");
  return {worst <= 1e-12 && undefined_mismatch == 0 && schema, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only, known;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--known-failure", known, "Criteria whose failure does not change the exit status");
  app.add_option("--seeds", seeds, "Seeds for the training comparisons")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "shaped advantage clip inactive and sum preserved", 10, [] { return suite("prop1"); }},
      {2, "nuclear-norm maximum has orthogonal equal-spectrum blocks", 60, [] { return suite("prop2"); }},
      {3, "K=1 and tied K=5 reduce to the single-adapter step", 30, [] { return suite("prop3"); }},
      {4, "beta solver certified or degenerate", 10, [] { return suite("beta"); }},
      {5, "analytic gradients match finite differences", 60, [] { return suite("gradients"); }},
      {6, "mutual information estimator", 30, [] { return suite("mi"); }},
      {7, "diversity: entropy gap vs K=1 and MI ratio vs no-NNM", 1800, [&] { return diversity(seeds); }},
      {8, "R_max bookkeeping and tiny autocorr optimum", 300, [&] { return bookkeeping(seeds); }},
      {9, "streaming gate", 10, [] { return streaming_gate(); }},
      {10, "determinism across runs and workers", 600, [] { return determinism(); }},
      {11, "Spearman diagnostic and table schema", 10, [] { return spearman_and_schema(); }},
  };

  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> tolerated(known.begin(), known.end());
  bool ok = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool passed = out.passed && in_budget;
    std::cout << (passed ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title << " [" << fmt(secs, 3)
              << " s, budget " << c.budget_seconds << " s" << (in_budget ? "" : ", OVER BUDGET") << "] "
              << out.detail;
    if (!passed && tolerated.count(c.id)) std::cout << " (known failure)";
    std::cout << std::endl;
    if (!passed && !tolerated.count(c.id)) ok = false;
  }
  return ok ? 0 : 1;
}
