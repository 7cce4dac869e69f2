#pragma once

// Group advantages: KL-budgeted entropic temperature, leave-one-out
// entropic weights, MI standardization and clipping, the beta-coupled
// exploration gain, shaped advantages and the per-token KL-to-base term.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace ugttt {

/// KL(q_beta || Uniform) = ln G - H(q_beta), q_beta = softmax(beta * R).
inline double entropic_kl_to_uniform(std::span<const double> rewards, double beta) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double r : rewards) hi = std::max(hi, beta * r);
  double z = 0.0;
  for (double r : rewards) z += std::exp(beta * r - hi);
  double h = 0.0;
  for (double r : rewards) {
    const double q = std::exp(beta * r - hi) / z;
    if (q > 0.0) h -= q * std::log(q);
  }
  return std::log(static_cast<double>(rewards.size())) - h;
}

struct BetaSolverOptions {
  double kl_target = std::numbers::ln2;
  double bracket_low = 0.0;
  double bracket_high = 1e6;
  int iterations = 60;
};

/// Bisection for the beta at which the reward softmax spends exactly
/// `kl_target` of KL against uniform. Returns nullopt for a degenerate group:
/// all rewards equal, target not strictly below the beta -> infinity limit
/// ln(G / #argmax), or bisection saturating at the upper bracket.
inline std::optional<double> solve_beta(std::span<const double> rewards, const BetaSolverOptions& opt = {}) {
  if (rewards.size() < 2) throw std::invalid_argument("solve_beta: need at least two rewards");
  for (double r : rewards)
    if (!std::isfinite(r)) throw std::invalid_argument("solve_beta: non-finite reward");
  const auto [lo_it, hi_it] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo_it == *hi_it) return std::nullopt;

  const auto ties = static_cast<double>(std::count(rewards.begin(), rewards.end(), *hi_it));
  const double kl_limit = std::log(static_cast<double>(rewards.size()) / ties);
  if (opt.kl_target >= kl_limit - 1e-12) return std::nullopt;

  double lo = opt.bracket_low, hi = opt.bracket_high;
  for (int i = 0; i < opt.iterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (entropic_kl_to_uniform(rewards, mid) < opt.kl_target)
      lo = mid;
    else
      hi = mid;
  }
  const double beta = 0.5 * (lo + hi);
  const bool saturated = beta >= opt.bracket_high * (1.0 - 1e-3) &&
                         entropic_kl_to_uniform(rewards, beta) < opt.kl_target;
  if (saturated) return std::nullopt;
  return beta;
}

struct LooAdvantages {
  std::vector<double> weights;
  std::vector<double> advantages;
};

/// w_i = exp(beta R_i) / mean_{j != i} exp(beta R_j), A_i = w_i - 1. Each
/// ratio is shifted by the largest exponent among the other rollouts.
inline LooAdvantages loo_advantages(std::span<const double> rewards, double beta) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("loo_advantages: need at least two rewards");
  if (!(std::isfinite(beta) && beta >= 0.0)) throw std::invalid_argument("loo_advantages: beta must be finite and >= 0");
  LooAdvantages out{std::vector<double>(g), std::vector<double>(g)};
  for (std::size_t i = 0; i < g; ++i) {
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g; ++j)
      if (j != i) shift = std::max(shift, beta * rewards[j]);
    double others = 0.0;
    for (std::size_t j = 0; j < g; ++j)
      if (j != i) others += std::exp(beta * rewards[j] - shift);
    others /= static_cast<double>(g - 1);
    out.weights[i] = std::exp(beta * rewards[i] - shift) / others;
    out.advantages[i] = out.weights[i] - 1.0;
  }
  return out;
}

struct StandardizedMi {
  double mean = 0.0;
  double std = 0.0;               // unbiased
  std::vector<double> z;          // unclipped z-scores (zeros when std == 0)
  std::vector<double> clipped;    // z clipped to [-clip, clip]
  std::size_t clip_count = 0;     // |{i : |z_i| > clip}|
};

inline StandardizedMi standardize_clip(std::span<const double> u, double clip = 3.0) {
  const std::size_t g = u.size();
  if (g < 2) throw std::invalid_argument("standardize_clip: need at least two values");
  StandardizedMi out;
  out.z.assign(g, 0.0);
  out.clipped.assign(g, 0.0);
  double sum = 0.0;
  for (double x : u) sum += x;
  out.mean = sum / static_cast<double>(g);
  double ss = 0.0;
  for (double x : u) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(g - 1));
  // Equal inputs can leave rounding residue in the std; treat them as constant.
  const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
  if (out.std == 0.0 || *lo == *hi) {
    out.std = 0.0;
    return out;
  }
  for (std::size_t i = 0; i < g; ++i) {
    out.z[i] = (u[i] - out.mean) / out.std;
    if (std::abs(out.z[i]) > clip) ++out.clip_count;
    out.clipped[i] = std::clamp(out.z[i], -clip, clip);
  }
  return out;
}

inline double gamma_eff(double alpha, double beta, double beta_ref, double gamma_max) {
  if (alpha < 0.0 || !(beta_ref > 0.0) || !(gamma_max > 0.0))
    throw std::invalid_argument("gamma_eff: require alpha >= 0, beta_ref > 0, gamma_max > 0");
  return alpha * std::min(beta / beta_ref, gamma_max);
}

inline double mean_abs(std::span<const double> a) {
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (double x : a) s += std::abs(x);
  return s / static_cast<double>(a.size());
}

/// A_i + gamma * mean|A| * U~_i.
inline std::vector<double> shape_advantages(std::span<const double> advantages, std::span<const double> u_tilde,
                                            double gamma) {
  if (advantages.size() != u_tilde.size()) throw std::invalid_argument("shape_advantages: length mismatch");
  const double scale = gamma * mean_abs(advantages);
  std::vector<double> out(advantages.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = advantages[i] + scale * u_tilde[i];
  return out;
}

/// Broadcast a rollout's scalar advantage to its tokens and subtract
/// kl_coef * (log pi(o_t) - log pi_base(o_t)) at every position.
inline std::vector<double> kl_token_correction(double shaped, std::span<const double> logp_policy,
                                               std::span<const double> logp_base, double kl_coef) {
  if (logp_policy.size() != logp_base.size()) throw std::invalid_argument("kl_token_correction: length mismatch");
  if (kl_coef < 0.0) throw std::invalid_argument("kl_token_correction: kl_coef must be >= 0");
  std::vector<double> out(logp_policy.size(), shaped);
  if (kl_coef == 0.0) return out;
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = shaped - kl_coef * (logp_policy[t] - logp_base[t]);
  return out;
}

struct AdvantageSettings {
  double mi_coef = 0.1;   // alpha
  double beta_ref = 2.0;
  double gamma_max = 10.0;
  double mi_clip = 3.0;
  BetaSolverOptions beta_solver{};
};

struct GroupAdvantages {
  std::vector<double> rewards;
  std::optional<double> beta;  // nullopt: degenerate group
  std::vector<double> loo_weights;
  std::vector<double> advantages;
  std::vector<double> mi_summaries;
  double u_mean = 0.0;
  double u_std = 0.0;
  std::vector<double> u_tilde;
  std::size_t clip_count = 0;
  double gamma = 0.0;
  double mean_abs_adv = 0.0;
  std::vector<double> shaped;

  bool degenerate() const { return !beta.has_value(); }
};

/// Stages 3 and 4 for one group. A degenerate beta gives A == 0 and skips
/// shaping entirely.
inline GroupAdvantages compute_group_advantages(std::span<const double> rewards, std::span<const double> mi_summaries,
                                                const AdvantageSettings& s) {
  const std::size_t g = rewards.size();
  if (mi_summaries.size() != g) throw std::invalid_argument("compute_group_advantages: length mismatch");
  GroupAdvantages out;
  out.rewards.assign(rewards.begin(), rewards.end());
  out.mi_summaries.assign(mi_summaries.begin(), mi_summaries.end());
  out.beta = solve_beta(rewards, s.beta_solver);

  const StandardizedMi st = standardize_clip(mi_summaries, s.mi_clip);
  out.u_mean = st.mean;
  out.u_std = st.std;

  if (!out.beta) {
    out.loo_weights.assign(g, 1.0);
    out.advantages.assign(g, 0.0);
    out.u_tilde.assign(g, 0.0);
    out.shaped.assign(g, 0.0);
    return out;
  }
  LooAdvantages loo = loo_advantages(rewards, *out.beta);
  out.loo_weights = std::move(loo.weights);
  out.advantages = std::move(loo.advantages);
  out.u_tilde = st.clipped;
  out.clip_count = st.clip_count;
  out.gamma = gamma_eff(s.mi_coef, *out.beta, s.beta_ref, s.gamma_max);
  out.mean_abs_adv = mean_abs(out.advantages);
  out.shaped = shape_advantages(out.advantages, out.u_tilde, out.gamma);
  return out;
}

}  // namespace ugttt
