#pragma once

// One group step (generate, score, advantage, shape, update) and the epoch
// loop with a parent buffer, constant-group removal and the streaming gate.

#include "ugttt/advantage.hpp"
#include "ugttt/envs.hpp"
#include "ugttt/optimizer.hpp"
#include "ugttt/policy.hpp"
#include "ugttt/random.hpp"
#include "ugttt/regularizer.hpp"
#include "ugttt/runlog.hpp"
#include "ugttt/uncertainty.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

namespace ugttt {

enum class ParentStrategy { GreedyBest, RewardProportional, Uniform };

inline const char* to_string(ParentStrategy s) {
  switch (s) {
    case ParentStrategy::GreedyBest: return "greedy-best";
    case ParentStrategy::RewardProportional: return "reward-proportional";
    case ParentStrategy::Uniform: return "uniform";
  }
  return "?";
}

inline ParentStrategy parse_parent_strategy(const std::string& s) {
  if (s == "greedy-best") return ParentStrategy::GreedyBest;
  if (s == "reward-proportional") return ParentStrategy::RewardProportional;
  if (s == "uniform") return ParentStrategy::Uniform;
  throw ConfigError("unknown parent strategy '" + s + "' (expected greedy-best, reward-proportional or uniform)");
}

struct TrainerConfig {
  PolicyArchitecture arch{};
  std::size_t group_size = 8;
  std::size_t groups_per_batch = 8;
  std::size_t epochs = 6;
  double eps_clip = 0.2;
  double kl_coef = 0.01;
  double nnm_coef = 0.075;
  AdvantageSettings advantage{};
  double mi_top_fraction = 0.07;
  bool remove_constant_reward_groups = true;
  StreamingSettings streaming{};
  RolloutLimits limits{};
  AdamWSettings optimizer{};
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t chunk_size = 64;
  ParentStrategy parent_strategy = ParentStrategy::RewardProportional;
  std::size_t parent_capacity = 64;
  std::size_t prompt_tokens = 2;

  void validate() const {
    arch.validate();
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    if (eps_clip <= 0.0 || eps_clip >= 1.0) throw ConfigError("eps_clip must lie in (0,1)");
    if (kl_coef < 0.0 || nnm_coef < 0.0 || advantage.mi_coef < 0.0) throw ConfigError("coefficients must be >= 0");
    if (!(advantage.beta_ref > 0.0) || !(advantage.gamma_max > 0.0) || !(advantage.mi_clip > 0.0))
      throw ConfigError("beta_ref, gamma_max and mi_clip must be > 0");
    if (!(mi_top_fraction > 0.0 && mi_top_fraction <= 1.0)) throw ConfigError("mi_top_fraction must lie in (0,1]");
    if (workers < 1 || chunk_size < 1) throw ConfigError("workers and chunk_size must be >= 1");
    if (limits.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (parent_capacity < 1) throw ConfigError("parent_capacity must be >= 1");
    if (optimizer.lr < 0.0 || optimizer.weight_decay < 0.0 || optimizer.eps < 0.0)
      throw ConfigError("optimizer settings must be >= 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
      throw ConfigError("optimizer betas must lie in [0,1)");
    if (streaming.enabled) {
      if (streaming.window < 1) throw ConfigError("streaming.window must be >= 1");
      if (!(streaming.percentile > 0.0 && streaming.percentile < 100.0))
        throw ConfigError("streaming.percentile must lie in (0,100)");
    }
  }
};

// ---------------------------------------------------------------------------
// Parent buffer

struct ParentEntry {
  std::vector<Token> state;
  double best_reward = 0.0;
  std::size_t visit_count = 0;
};

class ParentBuffer {
 public:
  explicit ParentBuffer(std::vector<Token> initial_state = {}, std::size_t capacity = 64) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ParentBuffer: capacity must be >= 1");
    entries_.push_back({std::move(initial_state), 0.0, 0});
  }

  const std::vector<ParentEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const ParentEntry& at(std::size_t i) const { return entries_.at(i); }
  void visit(std::size_t i) { ++entries_.at(i).visit_count; }

  /// Adds a state, or raises its best reward if already present. When over
  /// capacity the lowest-reward entry (earliest on ties) is evicted.
  void offer(std::vector<Token> state, double reward) {
    for (auto& e : entries_)
      if (e.state == state) {
        e.best_reward = std::max(e.best_reward, reward);
        return;
      }
    entries_.push_back({std::move(state), reward, 0});
    if (entries_.size() > capacity_) {
      auto worst = std::min_element(entries_.begin(), entries_.end(),
                                    [](const ParentEntry& a, const ParentEntry& b) { return a.best_reward < b.best_reward; });
      entries_.erase(worst);
    }
  }

 private:
  std::size_t capacity_;
  std::vector<ParentEntry> entries_;
};

/// Index of the chosen entry. Reward-proportional falls back to uniform when
/// every entry has zero reward; greedy takes the first maximum.
inline std::size_t select_parent(const ParentBuffer& buffer, Rng& rng, ParentStrategy strategy) {
  const auto& e = buffer.entries();
  if (e.empty()) throw std::logic_error("select_parent: empty buffer");
  if (e.size() == 1) return 0;
  switch (strategy) {
    case ParentStrategy::GreedyBest: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < e.size(); ++i)
        if (e[i].best_reward > e[best].best_reward) best = i;
      return best;
    }
    case ParentStrategy::RewardProportional: {
      double total = 0.0;
      for (const auto& x : e) total += x.best_reward;
      if (total > 0.0) {
        const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        double acc = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i) {
          acc += e[i].best_reward;
          if (u < acc) return i;
        }
        for (std::size_t i = e.size(); i-- > 0;)
          if (e[i].best_reward > 0.0) return i;
      }
      [[fallthrough]];
    }
    case ParentStrategy::Uniform:
      return std::uniform_int_distribution<std::size_t>(0, e.size() - 1)(rng);
  }
  return 0;
}

/// The trailing `n` tokens of a parent state, used as the rollout prompt.
inline std::vector<Token> prompt_from_state(std::span<const Token> state, std::size_t n) {
  const std::size_t take = std::min(n, state.size());
  return {state.end() - static_cast<std::ptrdiff_t>(take), state.end()};
}

// ---------------------------------------------------------------------------
// Stage 1: generation

inline std::size_t generating_adapter(std::size_t rollout_index, std::size_t k) { return rollout_index % k; }

/// Scores a rollout; a throwing, negative or non-finite verifier result is 0.
inline double safe_reward(const Environment& env, std::span<const Token> generated) {
  try {
    const double r = env.reward(generated);
    return std::isfinite(r) && r > 0.0 ? r : 0.0;
  } catch (...) {
    return 0.0;
  }
}

/// G rollouts with adapter i mod K for rollout i. Each rollout draws from its
/// own stream derived from (seed, epoch, group, i), so results are identical
/// for every worker count.
inline std::vector<Rollout> generate_group(const AdapterEnsemble& ens, std::span<const Token> prompt,
                                           const Environment& env, const TrainerConfig& cfg, const GateHook* gate,
                                           std::size_t epoch, std::size_t group) {
  std::vector<Rollout> out(cfg.group_size);
  auto work = [&](std::size_t i) {
    Rng rng = make_rng(cfg.seed, {0x6E4, epoch, group, i});
    out[i] = sample_rollout(ens, generating_adapter(i, ens.size()), prompt, cfg.limits, gate, rng);
    out[i].reward = safe_reward(env, out[i].generated_tokens);
  };
  const std::size_t workers = std::min(cfg.workers, cfg.group_size);
  if (workers <= 1) {
    for (std::size_t i = 0; i < out.size(); ++i) work(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < out.size();) work(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Stages 2-4: scoring, advantages, shaping

struct GroupAnalysis {
  std::vector<std::vector<double>> mi_traces;
  std::vector<double> mi_summaries;  // U_i
  std::vector<double> mean_mi;
  GroupAdvantages advantages;
  std::vector<std::vector<double>> token_advantages;              // [i][t]
  std::vector<std::vector<std::vector<double>>> old_logprobs;     // [k][i][t]
  bool constant_rewards = false;
};

inline GroupAnalysis analyze_group(const AdapterEnsemble& ens, std::span<const Rollout> rollouts,
                                   const TrainerConfig& cfg) {
  const std::size_t g = rollouts.size();
  const std::size_t k_count = ens.size();
  GroupAnalysis out;
  const auto scores = score_all_adapters(ens, rollouts, cfg.chunk_size);

  out.old_logprobs.assign(k_count, std::vector<std::vector<double>>(g));
  std::vector<double> rewards(g);
  for (std::size_t i = 0; i < g; ++i) {
    if (rollouts[i].size() == 0) throw std::invalid_argument("analyze_group: empty rollout");
    rewards[i] = rollouts[i].reward;
    std::vector<double> trace;
    trace.reserve(rollouts[i].size());
    for (const auto& ps : scores[i]) {
      trace.push_back(mi_per_token(ps.members));
      for (std::size_t k = 0; k < k_count; ++k) out.old_logprobs[k][i].push_back(ps.token_logprob[k]);
    }
    out.mi_summaries.push_back(rollout_mi_summary(trace, cfg.mi_top_fraction));
    double mean = 0.0;
    for (double x : trace) mean += x;
    out.mean_mi.push_back(mean / static_cast<double>(trace.size()));
    out.mi_traces.push_back(std::move(trace));
  }
  out.constant_rewards = std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); });
  out.advantages = compute_group_advantages(rewards, out.mi_summaries, cfg.advantage);

  for (std::size_t i = 0; i < g; ++i) {
    std::vector<double> base(rollouts[i].size());
    for (std::size_t t = 0; t < base.size(); ++t) base[t] = scores[i][t].base_token_logprob;
    out.token_advantages.push_back(kl_token_correction(out.advantages.shaped[i],
                                                       out.old_logprobs[rollouts[i].generator][i], base, cfg.kl_coef));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 5: losses and gradients

struct PgResult {
  double loss = 0.0;
  AdapterTensors grads;
  std::size_t clipped_tokens = 0;
};

/// -sum_i sum_t min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t) for adapter k,
/// rho_t = pi_k / pi_k,old, and its gradient. The clipped branch is flat, so
/// its tokens contribute no gradient.
inline PgResult pg_loss_and_grads(const AdapterEnsemble& ens, std::size_t k, std::span<const Rollout> rollouts,
                                  const std::vector<std::vector<double>>& token_advantages,
                                  const std::vector<std::vector<double>>& old_logprobs, double eps_clip) {
  if (token_advantages.size() != rollouts.size() || old_logprobs.size() != rollouts.size())
    throw std::invalid_argument("pg_loss_and_grads: missing advantages or old logprobs");
  PgResult out{0.0, AdapterTensors::zeros(ens.arch()), 0};
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const Rollout& r = rollouts[i];
    if (token_advantages[i].size() != r.size() || old_logprobs[i].size() != r.size())
      throw std::invalid_argument("pg_loss_and_grads: rollout " + std::to_string(i) +
                                  " has missing advantages or old logprobs");
    const std::vector<double> zeros(r.size(), 0.0);
    const auto current = logprob_and_grads(ens, k, r, zeros).logprobs;
    std::vector<double> coeffs(r.size(), 0.0);
    bool any = false;
    for (std::size_t t = 0; t < r.size(); ++t) {
      const double adv = token_advantages[i][t];
      const double rho = std::exp(current[t] - old_logprobs[i][t]);
      const double unclipped = rho * adv;
      const double clipped = std::clamp(rho, 1.0 - eps_clip, 1.0 + eps_clip) * adv;
      if (unclipped <= clipped) {
        out.loss -= unclipped;
        coeffs[t] = -rho * adv;
        any = any || coeffs[t] != 0.0;
      } else {
        out.loss -= clipped;
        ++out.clipped_tokens;
      }
    }
    if (any) out.grads += logprob_and_grads(ens, k, r, coeffs).grads;
  }
  return out;
}

struct StepGradients {
  std::vector<AdapterTensors> per_adapter;
  std::vector<double> pg_loss;  // unscaled per-adapter losses
  double nnm_loss = 0.0;        // nnm_loss(ens), before the coefficient
  bool nnm_nonunique = false;
  std::size_t clipped_tokens = 0;
};

/// Sequential accumulation: (1/K)·PG gradient of each adapter in turn, then
/// the NNM gradient for all adapters.
inline StepGradients accumulate_gradients(const AdapterEnsemble& ens, std::span<const Rollout> rollouts,
                                          const GroupAnalysis& analysis, const TrainerConfig& cfg) {
  const std::size_t k_count = ens.size();
  StepGradients out;
  out.per_adapter.assign(k_count, AdapterTensors::zeros(ens.arch()));
  const double inv_k = 1.0 / static_cast<double>(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    PgResult pg = pg_loss_and_grads(ens, k, rollouts, analysis.token_advantages, analysis.old_logprobs[k], cfg.eps_clip);
    pg.grads *= inv_k;
    out.per_adapter[k] += pg.grads;
    out.pg_loss.push_back(pg.loss);
    out.clipped_tokens += pg.clipped_tokens;
  }
  out.nnm_loss = nnm_loss(ens);
  if (cfg.nnm_coef > 0.0) {
    const NnmGradients nnm = nnm_gradients(ens, cfg.nnm_coef);
    out.nnm_nonunique = nnm.nonunique;
    for (std::size_t k = 0; k < k_count; ++k) out.per_adapter[k] += nnm.per_adapter[k];
  }
  return out;
}

inline void apply_updates(AdapterEnsemble& ens, const std::vector<AdapterTensors>& grads,
                          std::vector<OptimizerState>& states, const AdamWSettings& settings) {
  if (grads.size() != ens.size() || states.size() != ens.size())
    throw std::invalid_argument("apply_updates: adapter count mismatch");
  for (std::size_t k = 0; k < ens.size(); ++k) adamw_step(ens.adapter(k), grads[k], states[k], settings);
}

inline std::vector<OptimizerState> make_optimizer_states(const AdapterEnsemble& ens) {
  return std::vector<OptimizerState>(ens.size(), OptimizerState::zeros(ens.arch()));
}

struct StepReport {
  std::vector<Rollout> rollouts;
  GroupAnalysis analysis;
  bool updated = false;  // false when the group was removed as constant
  StepGradients gradients;
};

/// Stages 1-5 for one group.
inline StepReport train_step(AdapterEnsemble& ens, std::vector<OptimizerState>& states, std::span<const Token> prompt,
                             const Environment& env, const TrainerConfig& cfg, const GateHook* gate,
                             std::size_t epoch = 0, std::size_t group = 0) {
  StepReport rep;
  rep.rollouts = generate_group(ens, prompt, env, cfg, gate, epoch, group);
  rep.analysis = analyze_group(ens, rep.rollouts, cfg);
  if (cfg.remove_constant_reward_groups && rep.analysis.constant_rewards) return rep;
  rep.gradients = accumulate_gradients(ens, rep.rollouts, rep.analysis, cfg);
  apply_updates(ens, rep.gradients.per_adapter, states, cfg.optimizer);
  rep.updated = true;
  return rep;
}

// ---------------------------------------------------------------------------
// Epoch loop

struct EpochDiagnostics {
  std::size_t epoch = 0;
  double mean_block_cosine = 0.0;
  double nuclear_norm_mean = 0.0;  // -nnm_loss after the epoch
  double mean_mi = 0.0;
  std::size_t groups_updated = 0;
  std::size_t groups_removed = 0;
  std::size_t parent_buffer_size = 0;
};

struct RunResult {
  RunLog log;
  std::vector<EpochDiagnostics> epochs;
  AdapterEnsemble ensemble;
  std::vector<std::string> checkpoints;
};

struct RunOptions {
  /// When set, the ensemble is saved after every epoch as epoch_<e>.ckpt.
  std::filesystem::path checkpoint_dir;
};

inline RunResult run_training(const Environment& env, const TrainerConfig& cfg, const RunOptions& opts = {}) {
  cfg.validate();
  if (cfg.arch.vocab_size != env.vocab_size())
    throw ConfigError("arch.vocab_size (" + std::to_string(cfg.arch.vocab_size) + ") does not match environment '" +
                      env.name() + "' (" + std::to_string(env.vocab_size()) + ")");
  RunResult res;
  res.ensemble = init_ensemble(cfg.arch, cfg.seed);
  auto states = make_optimizer_states(res.ensemble);
  ParentBuffer buffer(env.initial_state(), cfg.parent_capacity);
  StreamingGateState gate(cfg.streaming);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    gate.set_epoch(epoch);
    EpochDiagnostics diag;
    diag.epoch = epoch;
    Rng parent_rng = make_rng(cfg.seed, {0x9A7E, epoch});
    std::vector<std::size_t> parents;
    for (std::size_t g = 0; g < cfg.groups_per_batch; ++g) {
      parents.push_back(select_parent(buffer, parent_rng, cfg.parent_strategy));
      buffer.visit(parents.back());
    }
    const std::vector<ParentEntry> snapshot = buffer.entries();

    double mi_sum = 0.0;
    std::size_t mi_count = 0;
    for (std::size_t g = 0; g < cfg.groups_per_batch; ++g) {
      const ParentEntry& parent = snapshot[parents[g]];
      const auto prompt = prompt_from_state(parent.state, cfg.prompt_tokens);
      GateHook hook{cfg.streaming.window,
                    [&gate](double w, std::size_t n) { return gate.decide(w, n); }};
      StepReport rep = train_step(res.ensemble, states, prompt, env, cfg, cfg.streaming.enabled ? &hook : nullptr,
                                  epoch, g);
      rep.updated ? ++diag.groups_updated : ++diag.groups_removed;

      for (std::size_t i = 0; i < rep.rollouts.size(); ++i) {
        const Rollout& r = rep.rollouts[i];
        if (r.gate_window_mi) gate.record(*r.gate_window_mi);
        RolloutRecord rec;
        rec.epoch = epoch;
        rec.group = g;
        rec.rollout = i;
        rec.adapter = r.generator;
        rec.reward = r.reward;
        rec.num_tokens = r.size();
        rec.phase1_tokens = r.phase1_tokens;
        rec.phase2_tokens = r.phase2_tokens;
        rec.u_i = rep.analysis.mi_summaries[i];
        rec.mean_mi = rep.analysis.mean_mi[i];
        rec.beta = rep.analysis.advantages.beta;
        rec.gamma_eff = rep.analysis.advantages.gamma;
        rec.streaming_mi_stopped = r.streaming_mi_stopped;
        rec.streaming_mi_stop_step = r.streaming_mi_stop_step;
        rec.constant_group = rep.analysis.constant_rewards;
        rec.text = env.render(r.generated_tokens);
        rec.family = family_label(env.candidate_text(r.generated_tokens), env.family_rules());
        res.log.push_back(std::move(rec));
        mi_sum += rep.analysis.mean_mi[i];
        ++mi_count;
        if (r.reward > parent.best_reward) {
          auto state = Environment::content_tokens(r.generated_tokens);
          buffer.offer(std::move(state), r.reward);
        }
      }
    }
    diag.mean_mi = mi_count ? mi_sum / static_cast<double>(mi_count) : 0.0;
    diag.mean_block_cosine = mean_pairwise_block_cosine(res.ensemble);
    diag.nuclear_norm_mean = -nnm_loss(res.ensemble);
    diag.parent_buffer_size = buffer.size();
    res.epochs.push_back(diag);

    if (!opts.checkpoint_dir.empty()) {
      std::filesystem::create_directories(opts.checkpoint_dir);
      const auto path = (opts.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt")).string();
      save_checkpoint(res.ensemble, path);
      res.checkpoints.push_back(path);
    }
  }
  return res;
}

}  // namespace ugttt
