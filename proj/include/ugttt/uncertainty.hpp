#pragma once

// Ensemble disagreement: per-token BALD mutual information, the
// top-fraction rollout summary, and the streaming early-stop gate.

#include "ugttt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace ugttt {

/// Mutual information between the next-token prediction and the ensemble
/// member, in nats: H(mixture) - mean member entropy. Exactly zero when all
/// members are bitwise identical; tiny negative roundoff is clamped to zero.
inline double mi_per_token(std::span<const Distribution> members) {
  if (members.empty()) throw std::invalid_argument("mi_per_token: no members");
  const std::size_t v = members.front().size();
  for (const auto& m : members)
    if (m.size() != v) throw std::invalid_argument("mi_per_token: alphabet size mismatch");

  const bool tied = std::all_of(members.begin() + 1, members.end(),
                                [&](const Distribution& m) { return m == members.front(); });
  if (tied) return 0.0;

  const double k = static_cast<double>(members.size());
  std::vector<double> mixture(v, 0.0);
  double mean_member_entropy = 0.0;
  for (const auto& m : members) {
    for (std::size_t i = 0; i < v; ++i) mixture[i] += m[i];
    mean_member_entropy += detail::entropy_nats(m.probs());
  }
  for (double& p : mixture) p /= k;
  mean_member_entropy /= k;
  return std::max(0.0, detail::entropy_nats(mixture) - mean_member_entropy);
}

/// Number of positions the top-fraction summary averages over: ceil(q·n),
/// at least one. The 1e-9 guard keeps q·n = 7.000000000000001 at 7.
inline std::size_t top_fraction_count(std::size_t n, double q) {
  const double x = q * static_cast<double>(n);
  auto m = static_cast<std::size_t>(std::max(0.0, std::ceil(x - 1e-9)));
  return std::clamp<std::size_t>(m, 1, n);
}

/// Mean of the ceil(q·n) largest entries of an MI trace.
inline double rollout_mi_summary(std::span<const double> trace, double q = 0.07) {
  if (trace.empty()) throw std::invalid_argument("rollout_mi_summary: empty trace");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("rollout_mi_summary: fraction must be in (0,1]");
  const std::size_t m = top_fraction_count(trace.size(), q);
  std::vector<double> v(trace.begin(), trace.end());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += v[i];
  return sum / static_cast<double>(m);
}

/// Percentile with linear interpolation between order statistics
/// (rank = p/100·(n-1)).
inline double percentile_linear(std::span<const double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile_linear: empty input");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double rank = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

enum class GateDecision { Continue, Truncate, Inactive };

inline const char* to_string(GateDecision d) {
  switch (d) {
    case GateDecision::Continue: return "continue";
    case GateDecision::Truncate: return "truncate";
    case GateDecision::Inactive: return "inactive";
  }
  return "?";
}

struct StreamingSettings {
  bool enabled = false;
  std::size_t window = 8;
  // Kept for configuration compatibility; the gate is queried once, at the cap.
  std::size_t check_interval = 4;
  std::size_t min_tokens_before_check = 8;
  double percentile = 25.0;
  std::size_t warmup_epochs = 3;
};

/// Single-writer gate state owned by the epoch loop.
class StreamingGateState {
 public:
  StreamingGateState() = default;
  explicit StreamingGateState(StreamingSettings s) : settings_(s) {
    if (!(s.percentile > 0.0 && s.percentile < 100.0))
      throw std::invalid_argument("StreamingGateState: percentile must lie in (0,100)");
    if (s.window == 0) throw std::invalid_argument("StreamingGateState: window must be positive");
  }

  const StreamingSettings& settings() const { return settings_; }
  std::size_t current_epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }
  std::span<const double> history() const { return history_; }

  bool active(std::size_t tokens_generated) const {
    return epoch_ >= settings_.warmup_epochs && tokens_generated >= settings_.min_tokens_before_check;
  }

  std::optional<double> threshold() const {
    if (history_.empty()) return std::nullopt;
    return percentile_linear(history_, settings_.percentile);
  }

  /// Decision without touching the history.
  GateDecision decide(double windowed_mi, std::size_t tokens_generated) const {
    if (!active(tokens_generated)) return GateDecision::Inactive;
    const auto t = threshold();
    if (!t) return GateDecision::Continue;
    return windowed_mi < *t ? GateDecision::Truncate : GateDecision::Continue;
  }

  void record(double windowed_mi) { history_.push_back(windowed_mi); }

  /// Decide, then append the consulted window value to the history.
  GateDecision update_and_decide(double windowed_mi, std::size_t tokens_generated) {
    const GateDecision d = decide(windowed_mi, tokens_generated);
    if (d != GateDecision::Inactive) record(windowed_mi);
    return d;
  }

 private:
  StreamingSettings settings_{};
  std::size_t epoch_ = 0;
  std::vector<double> history_;
};

/// What a rollout sampler needs from a gate: the window length and a
/// decision callback.
struct GateHook {
  std::size_t window = 1;
  std::function<GateDecision(double windowed_mi, std::size_t tokens_generated)> decide;
};

}  // namespace ugttt
