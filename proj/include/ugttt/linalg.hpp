#pragma once

// Small dense numerics shared by the rest of the library: log-softmax,
// Shannon entropy, thin SVD and the nuclear norm with its subgradient.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ugttt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class LogBase { Natural, Two };

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

/// Numerically stable log-softmax (max-shifted).
inline std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_softmax: empty input");
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (!std::isfinite(x))
      throw std::invalid_argument("log_softmax: non-finite logit");
    hi = std::max(hi, x);
  }
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - hi);
  const double log_sum = std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - hi) - log_sum;
  return out;
}

inline std::vector<double> log_softmax(const Vector& logits) {
  return log_softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
}

/// A probability vector over a finite alphabet. Construction validates
/// non-negativity and normalization (1e-9).
class Distribution {
 public:
  Distribution() = default;
  explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw std::invalid_argument("Distribution: empty");
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p))
        throw std::invalid_argument("Distribution: negative or non-finite probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("Distribution: probabilities sum to " + std::to_string(sum));
  }

  static Distribution from_log_probs(std::span<const double> log_probs) {
    std::vector<double> p(log_probs.size());
    std::transform(log_probs.begin(), log_probs.end(), p.begin(),
                   [](double lp) { return std::exp(lp); });
    return Distribution(std::move(p));
  }

  std::span<const double> probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

  friend bool operator==(const Distribution&, const Distribution&) = default;

 private:
  std::vector<double> probs_;
};

namespace detail {

// -sum p log p over raw probabilities; 0 log 0 = 0.
inline double entropy_nats(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("entropy: negative probability");
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

}  // namespace detail

inline double entropy(const Distribution& dist, LogBase base = LogBase::Natural) {
  const double h = detail::entropy_nats(dist.probs());
  return base == LogBase::Natural ? h : h / std::log(2.0);
}

struct SvdResult {
  Matrix left_vectors;    // rows x p
  Vector singular_values; // p, descending
  Matrix right_vectors;   // cols x p
};

// Thin SVD. Backed by Eigen's two-sided Jacobi SVD, which is accurate to
// working precision on the small matrices used here.
inline SvdResult svd(const Matrix& m) {
  require_finite(m, "svd");
  if (m.size() == 0) return {Matrix(m.rows(), 0), Vector(0), Matrix(m.cols(), 0)};
  Eigen::JacobiSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

inline double nuclear_norm(const Matrix& m) {
  return m.size() == 0 ? 0.0 : svd(m).singular_values.sum();
}

struct NuclearSubgradient {
  Matrix gradient;
  /// Set when some singular value fell at or below the retention threshold,
  /// in which case the subdifferential is not a single point.
  bool nonunique = false;
};

inline constexpr double kSingularValueFloor = 1e-10;

/// U·Vᵀ over the singular values above kSingularValueFloor.
inline NuclearSubgradient nuclear_norm_subgradient(const Matrix& m) {
  NuclearSubgradient out{Matrix::Zero(m.rows(), m.cols()), false};
  if (m.size() == 0) return out;
  const SvdResult s = svd(m);
  Eigen::Index kept = 0;
  while (kept < s.singular_values.size() && s.singular_values[kept] > kSingularValueFloor) ++kept;
  out.nonunique = kept < s.singular_values.size();
  if (kept > 0)
    out.gradient = s.left_vectors.leftCols(kept) * s.right_vectors.leftCols(kept).transpose();
  return out;
}

}  // namespace ugttt
