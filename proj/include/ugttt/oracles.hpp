#pragma once

// Slow, independent reference computations used to certify the library.
// Nothing here calls into the code it checks.

#include "ugttt/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ugttt::oracle {

/// Central differences, one coordinate at a time. The step is h·max(1, |x_i|).
inline std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& f,
                                                      const std::vector<double>& point, double h = 1e-5) {
  std::vector<double> grad(point.size());
  std::vector<double> x = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(point[i]));
    x[i] = point[i] + step;
    const double up = f(x);
    x[i] = point[i] - step;
    const double down = f(x);
    x[i] = point[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::runtime_error("finite_difference_gradient: non-finite evaluation at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

struct ArgmaxResult {
  std::vector<Token> best;
  double reward = 0.0;
  std::size_t evaluated = 0;
};

inline constexpr double kMaxEnumeration = 1e7;

/// Enumerates every sequence over `alphabet` of length 0..max_length (shorter
/// first, then lexicographic in alphabet order) and keeps the first maximum.
inline ArgmaxResult exhaustive_env_argmax(const Environment& env, std::span<const Token> alphabet,
                                          std::size_t max_length) {
  if (alphabet.empty()) throw std::invalid_argument("exhaustive_env_argmax: empty alphabet");
  double count = 0.0;
  for (std::size_t l = 0; l <= max_length; ++l) count += std::pow(static_cast<double>(alphabet.size()), static_cast<double>(l));
  if (count > kMaxEnumeration)
    throw std::length_error("exhaustive_env_argmax: refusing to enumerate " + std::to_string(static_cast<long long>(count)) +
                            " sequences (limit 10^7)");
  ArgmaxResult out;
  out.reward = -std::numeric_limits<double>::infinity();
  std::vector<Token> seq;
  for (std::size_t len = 0; len <= max_length; ++len) {
    std::vector<std::size_t> digit(len, 0);
    while (true) {
      seq.resize(len);
      for (std::size_t i = 0; i < len; ++i) seq[i] = alphabet[digit[i]];
      const double r = env.reward(seq);
      ++out.evaluated;
      if (r > out.reward) {
        out.reward = r;
        out.best = seq;
      }
      std::size_t pos = len;
      while (pos > 0 && ++digit[pos - 1] == alphabet.size()) digit[--pos] = 0;
      if (pos == 0) break;
    }
  }
  return out;
}

/// KL(softmax(beta·R) || Uniform) in long double.
inline long double kl_vs_uniform(std::span<const double> rewards, double beta) {
  const std::size_t g = rewards.size();
  if (g == 0) throw std::invalid_argument("kl_vs_uniform: empty");
  long double hi = -std::numeric_limits<long double>::infinity();
  for (double r : rewards) {
    if (!std::isfinite(r)) throw std::invalid_argument("kl_vs_uniform: non-finite reward");
    hi = std::max(hi, static_cast<long double>(beta) * r);
  }
  long double z = 0.0L;
  for (double r : rewards) z += std::exp(static_cast<long double>(beta) * r - hi);
  long double kl = 0.0L;
  for (double r : rewards) {
    const long double q = std::exp(static_cast<long double>(beta) * r - hi) / z;
    if (q > 0.0L) kl += q * std::log(q * static_cast<long double>(g));
  }
  return kl;
}

/// H(mixture) - mean member entropy, straight from the definition.
inline long double mutual_information(const std::vector<std::vector<double>>& members) {
  const std::size_t k = members.size(), v = members.at(0).size();
  auto entropy = [](const std::vector<long double>& p) {
    long double h = 0.0L;
    for (long double x : p)
      if (x > 0.0L) h -= x * std::log(x);
    return h;
  };
  std::vector<long double> mix(v, 0.0L);
  long double mean_h = 0.0L;
  for (const auto& m : members) {
    std::vector<long double> p(m.begin(), m.end());
    for (std::size_t i = 0; i < v; ++i) mix[i] += p[i] / static_cast<long double>(k);
    mean_h += entropy(p) / static_cast<long double>(k);
  }
  return entropy(mix) - mean_h;
}

/// Rank each value by counting (1 + #smaller + (#equal - 1)/2), then take the
/// Pearson correlation of the ranks in long double.
inline long double rank_then_pearson(std::span<const double> x, std::span<const double> y) {
  auto ranks = [](std::span<const double> v) {
    std::vector<long double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::size_t less = 0, equal = 0;
      for (double w : v) {
        if (w < v[i]) ++less;
        if (w == v[i]) ++equal;
      }
      r[i] = 1.0L + static_cast<long double>(less) + (static_cast<long double>(equal) - 1.0L) / 2.0L;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const auto n = static_cast<long double>(rx.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// The p-th percentile by linear interpolation between the two order
/// statistics around position p/100·(n-1), found by selection.
inline double percentile(std::vector<double> values, double p) {
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (lo + 1 >= values.size()) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (pos - static_cast<double>(lo)) * (b - a);
}

/// Truncate iff the gate is past warmup, enough tokens were generated, some
/// history exists, and the window value lies below its percentile.
inline bool gate_truncates(const std::vector<double>& history, double window_value, std::size_t epoch,
                           std::size_t warmup_epochs, std::size_t tokens, std::size_t min_tokens, double pct) {
  if (epoch < warmup_epochs || tokens < min_tokens || history.empty()) return false;
  return window_value < percentile(history, pct);
}

}  // namespace ugttt::oracle
