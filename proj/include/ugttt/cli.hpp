#pragma once

// Command-line front end: train, propcheck, diagnose, plot, print-config.
// Kept in a header so tests can drive it in-process.

#include "ugttt/config.hpp"
#include "ugttt/envs.hpp"
#include "ugttt/metrics.hpp"
#include "ugttt/propcheck.hpp"
#include "ugttt/runlog.hpp"
#include "ugttt/trainer.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace ugttt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitProperty = 4;

inline constexpr const char* kOutputRootVar = "UGTTT_OUTPUT_ROOT";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Relative paths land under $UGTTT_OUTPUT_ROOT when it is set.
inline std::filesystem::path output_path(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootVar); root && *root) return std::filesystem::path(root) / p;
  return p;
}

struct RunFlags {
  std::string manifest_path;
  std::string config_path;
  std::string env;
  std::string mode;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  std::vector<std::string> assignments;
  std::string rules_path;
  std::uint64_t env_seed = 0;
  bool streaming = false;
  bool no_streaming = false;
};

inline void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--manifest", f.manifest_path, "Run manifest (JSON)");
  cmd->add_option("--config", f.config_path, "Config file (JSON); replaces the manifest's config_path");
  cmd->add_option("--env", f.env, "Environment: motif, autocorr, autocorr-tiny");
  cmd->add_option("--mode", f.mode, "method, baseline-K1, ablate-no-NNM or ablate-no-MI");
  cmd->add_option("--seed", f.seeds, "Seed (repeatable)");
  cmd->add_option("--output-dir", f.output_dir, "Output directory");
  cmd->add_option("--set", f.assignments, "Config override key=value (repeatable)");
  cmd->add_option("--rules", f.rules_path, "Family rule file replacing the environment's rules");
  cmd->add_option("--env-seed", f.env_seed, "Environment instance seed");
  cmd->add_flag("--streaming", f.streaming, "Enable the streaming MI gate");
  cmd->add_flag("--no-streaming", f.no_streaming, "Disable the streaming MI gate");
}

struct PreparedRun {
  ResolvedRun run;
  std::unique_ptr<Environment> env;
};

inline PreparedRun prepare_run(const RunFlags& f) {
  RunManifest manifest;
  if (!f.manifest_path.empty()) manifest = parse_manifest(read_json_file(f.manifest_path));
  if (!f.config_path.empty()) manifest.config_path = f.config_path;
  CliOverrides cli;
  if (!f.env.empty()) cli.env = f.env;
  if (!f.mode.empty()) cli.mode = parse_run_mode(f.mode);
  if (f.streaming && f.no_streaming) throw UsageError("--streaming and --no-streaming are exclusive");
  if (f.streaming) cli.streaming = true;
  if (f.no_streaming) cli.streaming = false;
  if (!f.seeds.empty()) cli.seeds = f.seeds;
  if (!f.output_dir.empty()) cli.output_dir = f.output_dir;
  cli.assignments = f.assignments;
  PreparedRun p{resolve_run(std::move(manifest), cli), nullptr};
  if (p.run.manifest.env.empty()) throw UsageError("no environment given (use --env or the manifest's \"env\")");
  p.env = make_environment(p.run.manifest.env, f.env_seed);
  if (!f.rules_path.empty())
    p.env = std::make_unique<RelabeledEnv>(std::move(p.env), load_family_rules(f.rules_path));
  p.run.config.arch.vocab_size = p.env->vocab_size();
  p.run.config.validate();
  return p;
}

inline void write_text(const std::filesystem::path& p, const std::string& body) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << body;
}

inline int cmd_train(const RunFlags& f, std::ostream& out) {
  PreparedRun p = prepare_run(f);
  const RunManifest& m = p.run.manifest;
  const std::string dir = m.output_dir.empty() ? "runs/" + m.env + "_" + to_string(m.mode) : m.output_dir;
  const auto root = output_path(dir);
  for (std::uint64_t seed : m.seeds) {
    TrainerConfig cfg = p.run.config;
    cfg.seed = seed;
    const auto run_dir = root / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(run_dir);
    write_text(run_dir / "config.txt", format_config(cfg, &m));
    RunOptions opts;
    opts.checkpoint_dir = run_dir / "checkpoints";
    const RunResult res = run_training(*p.env, cfg, opts);
    write_runlog(res.log, (run_dir / "runlog.jsonl").string());
    write_text(run_dir / "epochs.csv", summaries_to_csv(summarize(res.log)));
    const std::string digest = runlog_digest(res.log);
    write_text(run_dir / "digest.txt", digest + "\n");
    const auto rows = summarize(res.log);
    out << "seed " << seed << ": " << res.log.size() << " rollouts, R_max "
        << (rows.empty() ? 0.0 : rows.back().r_max) << ", final H "
        << (rows.empty() || !rows.back().entropy_defined ? std::string(kUndefined)
                                                         : format_double(rows.back().entropy_bits))
        << ", digest " << digest << " -> " << run_dir.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_print_config(const RunFlags& f, std::ostream& out) {
  PreparedRun p = prepare_run(f);
  out << format_config(p.run.config, &p.run.manifest);
  return kExitOk;
}

inline int cmd_propcheck(const std::string& suite, std::optional<std::uint64_t> seed, const std::string& json_path,
                         std::ostream& out, std::ostream& err) {
  std::vector<std::string> names;
  if (suite == "all") names = propcheck::suite_names();
  else if (std::find(propcheck::suite_names().begin(), propcheck::suite_names().end(), suite) !=
           propcheck::suite_names().end())
    names = {suite};
  else
    throw UsageError("unknown suite '" + suite + "'");
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  bool ok = true;
  for (const auto& n : names) {
    const auto rep = propcheck::run_suite(n, seed);
    all.push_back(propcheck::to_json(rep));
    if (!rep.passed()) {
      ok = false;
      for (const auto& c : rep.checks)
        if (!c.passed)
          err << "property violation: " << n << "/" << c.name << " measured " << c.measured << " tolerance "
              << c.tolerance << " counterexample seed "
              << (c.counterexample_seed ? std::to_string(*c.counterexample_seed) : std::string("none")) << "\n";
    }
  }
  const auto body = (names.size() == 1 ? all.front() : all).dump(2);
  out << body << "\n";
  if (!json_path.empty()) write_text(output_path(json_path), body + "\n");
  return ok ? kExitOk : kExitProperty;
}

inline int cmd_diagnose(const std::vector<std::string>& logs, std::size_t early_last, bool csv, std::ostream& out) {
  std::vector<DiagnosticRow> rows;
  for (const auto& path : logs) rows.push_back(diagnose_runlog(path, read_runlog(path), early_last));
  out << format_diagnostic_table(rows, csv ? ',' : '\t');
  return kExitOk;
}

inline int cmd_plot(const std::vector<std::string>& method, const std::vector<std::string>& baseline,
                    const std::string& out_dir, std::ostream& out) {
  if (method.empty() && baseline.empty()) throw UsageError("plot needs at least one --method or --baseline log");
  std::vector<PlotSeries> runs;
  auto add = [&](const std::string& path, bool is_baseline) {
    const std::string stem = std::filesystem::path(path).parent_path().filename().string();
    runs.push_back({(is_baseline ? "baseline_" : "method_") + (stem.empty() ? std::to_string(runs.size()) : stem),
                    is_baseline, read_runlog(path)});
  };
  for (const auto& p : method) add(p, false);
  for (const auto& p : baseline) add(p, true);
  for (const auto& w : emit_plots(runs, output_path(out_dir))) out << w << "\n";
  return kExitOk;
}

/// Parses argv and runs one subcommand; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Uncertainty-guided test-time training on toy discovery environments"};
  app.require_subcommand(1);

  RunFlags train_flags, config_flags;
  auto* train = app.add_subcommand("train", "Run training and write the run log, checkpoints and summaries");
  add_run_flags(train, train_flags);
  auto* print_config = app.add_subcommand("print-config", "Show the resolved configuration");
  add_run_flags(print_config, config_flags);

  std::string suite;
  std::optional<std::uint64_t> prop_seed;
  std::string prop_json;
  auto* prop = app.add_subcommand("propcheck", "Run a property suite (prop1 prop2 prop3 gradients beta mi all)");
  prop->add_option("suite", suite, "Suite name")->required();
  prop->add_option("--seed", prop_seed, "Root seed");
  prop->add_option("--json", prop_json, "Also write the report here");

  std::vector<std::string> diag_logs;
  std::size_t early_last = 2;
  bool diag_csv = false;
  auto* diag = app.add_subcommand("diagnose", "Length-reward Spearman table over correct rollouts");
  diag->add_option("runlogs", diag_logs, "Run log files (JSONL)")->required();
  diag->add_option("--early-last", early_last, "Last epoch of the early window");
  diag->add_flag("--csv", diag_csv, "Comma-separated output");

  std::vector<std::string> plot_method, plot_baseline;
  std::string plot_dir = "plots";
  auto* plot = app.add_subcommand("plot", "Entropy / R_max dynamics and family composition charts");
  plot->add_option("--method", plot_method, "Method run log (repeatable)");
  plot->add_option("--baseline", plot_baseline, "Baseline run log (repeatable)");
  plot->add_option("--out", plot_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, out);
    if (*print_config) return cmd_print_config(config_flags, out);
    if (*prop) return cmd_propcheck(suite, prop_seed, prop_json, out, err);
    if (*diag) return cmd_diagnose(diag_logs, early_last, diag_csv, out);
    if (*plot) return cmd_plot(plot_method, plot_baseline, plot_dir, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitUsage;
}

}  // namespace ugttt::cli
