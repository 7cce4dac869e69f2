#pragma once

// Toy autoregressive policy: a frozen, seeded feature encoder followed by
// L linear heads over disjoint feature blocks. Each head has a frozen base
// matrix and K low-rank adapters; adapter k's logits are
//   sum_l (base_l + scale * B_l^(k) A_l^(k)) x_l.
// Only adapter matrices carry gradients.

#include "ugttt/linalg.hpp"
#include "ugttt/random.hpp"
#include "ugttt/uncertainty.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ugttt {

using Token = std::uint32_t;

inline constexpr Token kEndToken = 0;
inline constexpr Token kSeparatorToken = 1;
inline constexpr Token kFirstContentToken = 2;

enum class AdapterInit {
  Independent,  // per-adapter A draws, B = 0 (functionally tied at step 0)
  Tied,         // identical A across adapters, B = 0 (tied forever under shared data)
};

struct PolicyArchitecture {
  std::size_t vocab_size = 10;
  std::size_t feature_dim = 48;
  std::size_t tracked_layers = 2;
  std::size_t adapter_rank = 4;
  std::size_t ensemble_size = 5;
  std::uint64_t encoder_seed = 17;
  double lora_scale = 2.0;
  std::size_t hash_width = 24;
  std::size_t length_buckets = 16;
  double encoder_gain = 0.7;
  double base_init_std = 0.3;
  double adapter_init_std = 0.02;
  AdapterInit init = AdapterInit::Independent;

  /// Input width of each tracked head (the d_in of the stacked projection).
  std::size_t layer_width() const { return feature_dim / tracked_layers; }

  void validate() const {
    if (vocab_size < 4) throw std::invalid_argument("PolicyArchitecture: vocab_size must be >= 4");
    if (tracked_layers < 1) throw std::invalid_argument("PolicyArchitecture: tracked_layers must be >= 1");
    if (ensemble_size < 1 || adapter_rank < 1)
      throw std::invalid_argument("PolicyArchitecture: ensemble_size and adapter_rank must be >= 1");
    if (feature_dim % tracked_layers != 0)
      throw std::invalid_argument("PolicyArchitecture: feature_dim must be divisible by tracked_layers");
    if (ensemble_size * adapter_rank > layer_width())
      throw std::invalid_argument(
          "PolicyArchitecture: ensemble_size * adapter_rank exceeds the per-layer input width "
          "(orthogonal adapter subspaces infeasible)");
    if (hash_width < 1 || length_buckets < 1)
      throw std::invalid_argument("PolicyArchitecture: hash_width and length_buckets must be >= 1");
  }
};

/// Fixed non-trainable map from a token prefix to a feature vector:
/// sparse indicator features (last token, second-to-last token, hashed
/// bigram/trigram, length bucket, start flag) pushed through tanh(M h + b).
/// Entries lie in (-1, 1), so the norm is bounded by sqrt(feature_dim).
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  explicit FeatureEncoder(const PolicyArchitecture& arch)
      : vocab_(arch.vocab_size), hash_width_(arch.hash_width), length_buckets_(arch.length_buckets) {
    Rng rng(derive_seed(arch.encoder_seed, {0xE7C0DE}));
    std::normal_distribution<double> normal(0.0, arch.encoder_gain);
    mix_.resize(static_cast<Eigen::Index>(arch.feature_dim), static_cast<Eigen::Index>(raw_dim()));
    for (Eigen::Index c = 0; c < mix_.cols(); ++c)
      for (Eigen::Index r = 0; r < mix_.rows(); ++r) mix_(r, c) = normal(rng);
    bias_.resize(mix_.rows());
    for (Eigen::Index r = 0; r < bias_.size(); ++r) bias_[r] = 0.5 * normal(rng);
  }

  FeatureEncoder(Matrix mix, Vector bias, std::size_t vocab, std::size_t hash_width, std::size_t length_buckets)
      : vocab_(vocab), hash_width_(hash_width), length_buckets_(length_buckets),
        mix_(std::move(mix)), bias_(std::move(bias)) {
    if (static_cast<std::size_t>(mix_.cols()) != raw_dim() || bias_.size() != mix_.rows())
      throw std::invalid_argument("FeatureEncoder: shape mismatch");
  }

  std::size_t raw_dim() const { return 2 * vocab_ + hash_width_ + length_buckets_ + 1; }
  std::size_t output_dim() const { return static_cast<std::size_t>(mix_.rows()); }
  const Matrix& mix() const { return mix_; }
  const Vector& bias() const { return bias_; }
  std::size_t vocab() const { return vocab_; }
  std::size_t hash_width() const { return hash_width_; }
  std::size_t length_buckets() const { return length_buckets_; }

  Vector encode(std::span<const Token> tokens) const {
    for (Token t : tokens)
      if (t >= vocab_) throw std::out_of_range("encode_context: token " + std::to_string(t) + " outside vocabulary");
    Vector pre = bias_;
    auto add = [&](std::size_t slot) { pre += mix_.col(static_cast<Eigen::Index>(slot)); };
    const std::size_t n = tokens.size();
    const std::size_t hash_base = 2 * vocab_;
    const std::size_t len_base = hash_base + hash_width_;
    if (n == 0) {
      add(raw_dim() - 1);
    } else {
      add(tokens[n - 1]);
      if (n >= 2) {
        add(vocab_ + tokens[n - 2]);
        add(hash_base + mix64(0xB1 ^ (tokens[n - 2] * vocab_ + tokens[n - 1])) % hash_width_);
      }
      if (n >= 3)
        add(hash_base +
            mix64(0x7A1 ^ ((tokens[n - 3] * vocab_ + tokens[n - 2]) * vocab_ + tokens[n - 1])) % hash_width_);
    }
    add(len_base + std::min(n, length_buckets_ - 1));
    return pre.array().tanh().matrix();
  }

  friend bool operator==(const FeatureEncoder& a, const FeatureEncoder& b) {
    return a.vocab_ == b.vocab_ && a.hash_width_ == b.hash_width_ && a.length_buckets_ == b.length_buckets_ &&
           a.mix_ == b.mix_ && a.bias_ == b.bias_;
  }

 private:
  std::size_t vocab_ = 0, hash_width_ = 1, length_buckets_ = 1;
  Matrix mix_;
  Vector bias_;
};

/// One adapter's trainable matrices, or a gradient with the same layout.
struct AdapterTensors {
  std::vector<Matrix> a;  // per layer, r x layer_width
  std::vector<Matrix> b;  // per layer, vocab x r

  static AdapterTensors zeros(const PolicyArchitecture& arch) {
    AdapterTensors t;
    const auto r = static_cast<Eigen::Index>(arch.adapter_rank);
    const auto w = static_cast<Eigen::Index>(arch.layer_width());
    const auto v = static_cast<Eigen::Index>(arch.vocab_size);
    for (std::size_t l = 0; l < arch.tracked_layers; ++l) {
      t.a.push_back(Matrix::Zero(r, w));
      t.b.push_back(Matrix::Zero(v, r));
    }
    return t;
  }

  AdapterTensors& operator+=(const AdapterTensors& o) {
    for (std::size_t l = 0; l < a.size(); ++l) {
      a[l] += o.a[l];
      b[l] += o.b[l];
    }
    return *this;
  }

  AdapterTensors& operator*=(double s) {
    for (auto& m : a) m *= s;
    for (auto& m : b) m *= s;
    return *this;
  }

  bool all_finite() const {
    for (const auto& m : a) if (!m.allFinite()) return false;
    for (const auto& m : b) if (!m.allFinite()) return false;
    return true;
  }

  double max_abs() const {
    double out = 0.0;
    for (const auto& m : a) if (m.size()) out = std::max(out, m.cwiseAbs().maxCoeff());
    for (const auto& m : b) if (m.size()) out = std::max(out, m.cwiseAbs().maxCoeff());
    return out;
  }

  friend bool operator==(const AdapterTensors&, const AdapterTensors&) = default;
};

class AdapterEnsemble {
 public:
  AdapterEnsemble() = default;
  AdapterEnsemble(PolicyArchitecture arch, FeatureEncoder encoder, std::vector<Matrix> base,
                  std::vector<AdapterTensors> adapters)
      : arch_(arch), encoder_(std::move(encoder)), base_(std::move(base)), adapters_(std::move(adapters)) {
    arch_.validate();
    if (base_.size() != arch_.tracked_layers || adapters_.size() != arch_.ensemble_size)
      throw std::invalid_argument("AdapterEnsemble: layer or adapter count mismatch");
    for (const auto& m : base_) require_finite(m, "AdapterEnsemble base");
  }

  const PolicyArchitecture& arch() const { return arch_; }
  const FeatureEncoder& encoder() const { return encoder_; }
  std::size_t size() const { return adapters_.size(); }
  std::size_t layers() const { return base_.size(); }

  /// Frozen after construction; there is no mutable accessor.
  const Matrix& base(std::size_t layer) const { return base_.at(layer); }
  const std::vector<Matrix>& base_layers() const { return base_; }

  const AdapterTensors& adapter(std::size_t k) const { return adapters_.at(k); }
  AdapterTensors& adapter(std::size_t k) { return adapters_.at(k); }

  Vector base_logits(const Vector& features) const {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(arch_.vocab_size));
    const auto w = static_cast<Eigen::Index>(arch_.layer_width());
    for (std::size_t l = 0; l < base_.size(); ++l)
      out.noalias() += base_[l] * features.segment(static_cast<Eigen::Index>(l) * w, w);
    return out;
  }

  Vector adapter_logits(std::size_t k, const Vector& features) const {
    const AdapterTensors& ad = adapters_.at(k);
    Vector out = Vector::Zero(static_cast<Eigen::Index>(arch_.vocab_size));
    const auto w = static_cast<Eigen::Index>(arch_.layer_width());
    for (std::size_t l = 0; l < base_.size(); ++l) {
      const auto x = features.segment(static_cast<Eigen::Index>(l) * w, w);
      const Vector down = ad.a[l] * x;
      out.noalias() += base_[l] * x;
      out.noalias() += arch_.lora_scale * (ad.b[l] * down);
    }
    return out;
  }

  /// Dense effective weight of adapter k at one layer.
  Matrix effective_weight(std::size_t k, std::size_t layer) const {
    const AdapterTensors& ad = adapters_.at(k);
    return base_.at(layer) + arch_.lora_scale * ad.b.at(layer) * ad.a.at(layer);
  }

  friend bool operator==(const AdapterEnsemble& x, const AdapterEnsemble& y) {
    return x.encoder_ == y.encoder_ && x.base_ == y.base_ && x.adapters_ == y.adapters_ &&
           x.arch_.vocab_size == y.arch_.vocab_size && x.arch_.feature_dim == y.arch_.feature_dim &&
           x.arch_.tracked_layers == y.arch_.tracked_layers && x.arch_.adapter_rank == y.arch_.adapter_rank &&
           x.arch_.ensemble_size == y.arch_.ensemble_size && x.arch_.lora_scale == y.arch_.lora_scale;
  }

 private:
  PolicyArchitecture arch_{};
  FeatureEncoder encoder_;
  std::vector<Matrix> base_;
  std::vector<AdapterTensors> adapters_;
};

inline AdapterEnsemble init_ensemble(const PolicyArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  const auto v = static_cast<Eigen::Index>(arch.vocab_size);
  const auto w = static_cast<Eigen::Index>(arch.layer_width());
  const auto r = static_cast<Eigen::Index>(arch.adapter_rank);

  auto gaussian = [](Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
    std::normal_distribution<double> normal(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, c) = normal(rng);
    return m;
  };

  Rng base_rng(derive_seed(seed, {0xBA5E}));
  std::vector<Matrix> base;
  for (std::size_t l = 0; l < arch.tracked_layers; ++l) base.push_back(gaussian(v, w, arch.base_init_std, base_rng));

  std::vector<AdapterTensors> adapters;
  for (std::size_t k = 0; k < arch.ensemble_size; ++k) {
    const std::uint64_t stream = arch.init == AdapterInit::Tied ? 0 : k;
    Rng rng(derive_seed(seed, {0xADA9, stream}));
    AdapterTensors t;
    for (std::size_t l = 0; l < arch.tracked_layers; ++l) {
      t.a.push_back(gaussian(r, w, arch.adapter_init_std, rng));
      t.b.push_back(Matrix::Zero(v, r));
    }
    adapters.push_back(std::move(t));
  }
  return AdapterEnsemble(arch, FeatureEncoder(arch), std::move(base), std::move(adapters));
}

inline Vector encode_context(const AdapterEnsemble& ens, std::span<const Token> tokens) {
  return ens.encoder().encode(tokens);
}

inline Vector adapter_logits(const AdapterEnsemble& ens, std::size_t k, const Vector& features) {
  return ens.adapter_logits(k, features);
}

inline std::vector<double> adapter_log_probs(const AdapterEnsemble& ens, std::size_t k, const Vector& features) {
  return log_softmax(ens.adapter_logits(k, features));
}

inline std::vector<double> base_log_probs(const AdapterEnsemble& ens, const Vector& features) {
  return log_softmax(ens.base_logits(features));
}

struct Rollout {
  std::vector<Token> prompt_tokens;
  std::vector<Token> generated_tokens;
  std::size_t generator = 0;
  std::size_t phase1_tokens = 0;
  std::size_t phase2_tokens = 0;
  std::vector<double> per_token_logprob_old;
  double reward = 0.0;
  bool streaming_mi_stopped = false;
  std::optional<std::size_t> streaming_mi_stop_step;
  /// Window statistic the gate was shown, if it was consulted (not inactive).
  std::optional<double> gate_window_mi;

  std::size_t size() const { return generated_tokens.size(); }

  std::vector<Token> context(std::size_t t) const {
    std::vector<Token> c(prompt_tokens);
    c.insert(c.end(), generated_tokens.begin(), generated_tokens.begin() + static_cast<std::ptrdiff_t>(t));
    return c;
  }
};

struct RolloutLimits {
  std::size_t max_tokens = 24;
  /// Phase-1 length at which a streaming gate is queried.
  std::size_t phase1_cap = 8;
  /// Tokens allowed after a forced separator (separator included).
  std::size_t phase2_budget = 8;
};

inline std::vector<Vector> rollout_features(const AdapterEnsemble& ens, const Rollout& r) {
  std::vector<Vector> out;
  out.reserve(r.size());
  std::vector<Token> ctx(r.prompt_tokens);
  for (std::size_t t = 0; t < r.size(); ++t) {
    out.push_back(ens.encoder().encode(ctx));
    ctx.push_back(r.generated_tokens[t]);
  }
  return out;
}

inline Token sample_from_log_probs(std::span<const double> log_probs, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    acc += std::exp(log_probs[i]);
    if (u < acc) return static_cast<Token>(i);
  }
  // Roundoff left u above the cumulative mass: take the last token with mass.
  for (std::size_t i = log_probs.size(); i-- > 0;)
    if (std::isfinite(log_probs[i])) return static_cast<Token>(i);
  return 0;
}

/// Samples one rollout from adapter k at temperature 1. When a gate is
/// supplied it is queried once, when phase 1 reaches limits.phase1_cap, with
/// the mean per-token ensemble MI over the trailing gate->window positions.
/// A truncate decision forces the separator and allows a bounded phase 2.
inline Rollout sample_rollout(const AdapterEnsemble& ens, std::size_t k, std::span<const Token> prompt,
                              const RolloutLimits& limits, const GateHook* gate, Rng& rng) {
  if (k >= ens.size()) throw std::out_of_range("sample_rollout: adapter index");
  Rollout r;
  r.prompt_tokens.assign(prompt.begin(), prompt.end());
  r.generator = k;

  std::vector<Token> ctx(prompt.begin(), prompt.end());
  std::vector<double> mi_trace;
  bool in_phase2 = false;
  bool forced = false;
  bool queried = false;
  std::size_t phase2_count = 0;

  auto push = [&](Token tok, double lp) {
    r.generated_tokens.push_back(tok);
    r.per_token_logprob_old.push_back(lp);
    ctx.push_back(tok);
    if (in_phase2) ++phase2_count;
  };

  while (r.generated_tokens.size() < limits.max_tokens) {
    const Vector x = ens.encoder().encode(ctx);

    if (gate && !in_phase2 && !queried && r.generated_tokens.size() == limits.phase1_cap) {
      queried = true;
      const std::size_t w = std::min(gate->window, mi_trace.size());
      double windowed = 0.0;
      if (w > 0) {
        for (std::size_t i = mi_trace.size() - w; i < mi_trace.size(); ++i) windowed += mi_trace[i];
        windowed /= static_cast<double>(w);
      }
      const GateDecision d = gate->decide(windowed, r.generated_tokens.size());
      if (d != GateDecision::Inactive) r.gate_window_mi = windowed;
      if (d == GateDecision::Truncate) {
        r.streaming_mi_stopped = true;
        r.streaming_mi_stop_step = r.generated_tokens.size();
        r.phase1_tokens = r.generated_tokens.size();
        in_phase2 = forced = true;
        const auto lp = adapter_log_probs(ens, k, x);
        push(kSeparatorToken, lp[kSeparatorToken]);
        if (phase2_count >= limits.phase2_budget) break;
        continue;
      }
    }

    const auto lp = adapter_log_probs(ens, k, x);
    if (gate && !in_phase2 && !queried) {
      std::vector<Distribution> members;
      members.reserve(ens.size());
      for (std::size_t j = 0; j < ens.size(); ++j)
        members.push_back(j == k ? Distribution::from_log_probs(lp)
                                 : Distribution::from_log_probs(adapter_log_probs(ens, j, x)));
      mi_trace.push_back(mi_per_token(members));
    }

    const Token tok = sample_from_log_probs(lp, rng);
    if (tok == kSeparatorToken && !in_phase2) {
      r.phase1_tokens = r.generated_tokens.size();
      in_phase2 = true;
    }
    push(tok, lp[tok]);
    if (tok == kEndToken) break;
    if (forced && phase2_count >= limits.phase2_budget) break;
  }
  if (!in_phase2) r.phase1_tokens = r.generated_tokens.size();
  r.phase2_tokens = r.generated_tokens.size() - r.phase1_tokens;
  return r;
}

/// Every adapter's predictive distribution at one position of one rollout.
struct PositionScores {
  std::vector<Distribution> members;  // K
  std::vector<double> token_logprob;  // K: log p_k(o_t | prefix)
  double base_token_logprob = 0.0;    // log p_base(o_t | prefix)
};

using RolloutScores = std::vector<PositionScores>;

/// Scores every position of every rollout under all K adapters (and the
/// frozen base), processing `chunk_size` positions at a time. Chunking does
/// not change any value.
inline std::vector<RolloutScores> score_all_adapters(const AdapterEnsemble& ens, std::span<const Rollout> rollouts,
                                                     std::size_t chunk_size) {
  if (chunk_size == 0) throw std::invalid_argument("score_all_adapters: chunk_size must be >= 1");
  std::vector<RolloutScores> out(rollouts.size());
  struct Job { std::size_t rollout, t; };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    out[i].resize(rollouts[i].size());
    for (std::size_t t = 0; t < rollouts[i].size(); ++t) jobs.push_back({i, t});
  }

  std::vector<Vector> features;
  for (std::size_t begin = 0; begin < jobs.size(); begin += chunk_size) {
    const std::size_t end = std::min(jobs.size(), begin + chunk_size);
    features.clear();
    for (std::size_t j = begin; j < end; ++j) {
      const Rollout& r = rollouts[jobs[j].rollout];
      features.push_back(ens.encoder().encode(r.context(jobs[j].t)));
    }
    for (std::size_t j = begin; j < end; ++j) {
      const Rollout& r = rollouts[jobs[j].rollout];
      const Token tok = r.generated_tokens[jobs[j].t];
      PositionScores& ps = out[jobs[j].rollout][jobs[j].t];
      ps.base_token_logprob = base_log_probs(ens, features[j - begin])[tok];
    }
    for (std::size_t k = 0; k < ens.size(); ++k) {
      for (std::size_t j = begin; j < end; ++j) {
        const Rollout& r = rollouts[jobs[j].rollout];
        const Token tok = r.generated_tokens[jobs[j].t];
        const auto lp = adapter_log_probs(ens, k, features[j - begin]);
        PositionScores& ps = out[jobs[j].rollout][jobs[j].t];
        ps.members.push_back(Distribution::from_log_probs(lp));
        ps.token_logprob.push_back(lp[tok]);
      }
    }
  }
  return out;
}

struct LogprobGrads {
  std::vector<double> logprobs;  // current log pi_k(o_t | prefix)
  AdapterTensors grads;          // d/d(adapter k) of sum_t coeff_t log pi_k(o_t | prefix)
};

/// Log-probabilities of a rollout's tokens under adapter k and the analytic
/// gradient of sum_t coeffs[t] * log pi_k(o_t | prefix) with respect to
/// adapter k's A and B. The frozen base has no gradient slot.
inline LogprobGrads logprob_and_grads(const AdapterEnsemble& ens, std::size_t k, const Rollout& rollout,
                                      std::span<const double> coeffs) {
  if (coeffs.size() != rollout.size()) throw std::invalid_argument("logprob_and_grads: coefficient length mismatch");
  for (double c : coeffs)
    if (!std::isfinite(c)) throw std::invalid_argument("logprob_and_grads: non-finite coefficient");
  const PolicyArchitecture& arch = ens.arch();
  const AdapterTensors& ad = ens.adapter(k);
  const auto w = static_cast<Eigen::Index>(arch.layer_width());
  const double s = arch.lora_scale;

  LogprobGrads out{{}, AdapterTensors::zeros(arch)};
  out.logprobs.reserve(rollout.size());
  const auto features = rollout_features(ens, rollout);
  for (std::size_t t = 0; t < rollout.size(); ++t) {
    const auto lp = adapter_log_probs(ens, k, features[t]);
    const Token tok = rollout.generated_tokens[t];
    out.logprobs.push_back(lp[tok]);
    if (coeffs[t] == 0.0) continue;
    Vector g(static_cast<Eigen::Index>(lp.size()));
    for (std::size_t i = 0; i < lp.size(); ++i) g[static_cast<Eigen::Index>(i)] = -std::exp(lp[i]);
    g[tok] += 1.0;
    g *= coeffs[t];
    for (std::size_t l = 0; l < ad.a.size(); ++l) {
      const auto x = features[t].segment(static_cast<Eigen::Index>(l) * w, w);
      const Vector down = ad.a[l] * x;
      out.grads.b[l].noalias() += s * g * down.transpose();
      out.grads.a[l].noalias() += s * (ad.b[l].transpose() * g) * x.transpose();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary, versioned, bit-exact round trip.

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
inline double read_f64(std::istream& is) {
  double v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
inline void write_matrix(std::ostream& os, const Matrix& m) {
  write_u64(os, static_cast<std::uint64_t>(m.rows()));
  write_u64(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) write_f64(os, m(r, c));
}
inline Matrix read_matrix(std::istream& is) {
  const auto rows = static_cast<Eigen::Index>(read_u64(is));
  const auto cols = static_cast<Eigen::Index>(read_u64(is));
  if (rows > (1 << 20) || cols > (1 << 20)) throw std::runtime_error("checkpoint: implausible matrix shape");
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = read_f64(is);
  return m;
}

inline constexpr char kCheckpointMagic[8] = {'U', 'G', 'T', 'T', 'T', 'C', 'K', 'P'};
inline constexpr std::uint64_t kCheckpointVersion = 1;

}  // namespace detail

inline void save_checkpoint(const AdapterEnsemble& ens, std::ostream& os) {
  using namespace detail;
  const PolicyArchitecture& a = ens.arch();
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_u64(os, kCheckpointVersion);
  for (std::uint64_t v : {std::uint64_t(a.vocab_size), std::uint64_t(a.feature_dim), std::uint64_t(a.tracked_layers),
                          std::uint64_t(a.adapter_rank), std::uint64_t(a.ensemble_size), a.encoder_seed,
                          std::uint64_t(a.hash_width), std::uint64_t(a.length_buckets),
                          std::uint64_t(a.init == AdapterInit::Tied)})
    write_u64(os, v);
  for (double v : {a.lora_scale, a.encoder_gain, a.base_init_std, a.adapter_init_std}) write_f64(os, v);
  write_matrix(os, ens.encoder().mix());
  write_matrix(os, Matrix(ens.encoder().bias()));
  for (const auto& m : ens.base_layers()) write_matrix(os, m);
  for (std::size_t k = 0; k < ens.size(); ++k)
    for (std::size_t l = 0; l < ens.layers(); ++l) {
      write_matrix(os, ens.adapter(k).a[l]);
      write_matrix(os, ens.adapter(k).b[l]);
    }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline AdapterEnsemble load_checkpoint(std::istream& is) {
  using namespace detail;
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  if (read_u64(is) != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
  PolicyArchitecture a;
  a.vocab_size = read_u64(is);
  a.feature_dim = read_u64(is);
  a.tracked_layers = read_u64(is);
  a.adapter_rank = read_u64(is);
  a.ensemble_size = read_u64(is);
  a.encoder_seed = read_u64(is);
  a.hash_width = read_u64(is);
  a.length_buckets = read_u64(is);
  a.init = read_u64(is) ? AdapterInit::Tied : AdapterInit::Independent;
  a.lora_scale = read_f64(is);
  a.encoder_gain = read_f64(is);
  a.base_init_std = read_f64(is);
  a.adapter_init_std = read_f64(is);
  a.validate();
  Matrix mix = read_matrix(is);
  Matrix bias = read_matrix(is);
  FeatureEncoder enc(std::move(mix), Vector(bias.col(0)), a.vocab_size, a.hash_width, a.length_buckets);
  std::vector<Matrix> base;
  for (std::size_t l = 0; l < a.tracked_layers; ++l) base.push_back(read_matrix(is));
  std::vector<AdapterTensors> adapters(a.ensemble_size);
  for (auto& t : adapters)
    for (std::size_t l = 0; l < a.tracked_layers; ++l) {
      t.a.push_back(read_matrix(is));
      t.b.push_back(read_matrix(is));
    }
  return AdapterEnsemble(a, std::move(enc), std::move(base), std::move(adapters));
}

inline void save_checkpoint(const AdapterEnsemble& ens, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  save_checkpoint(ens, os);
}

inline AdapterEnsemble load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  return load_checkpoint(is);
}

}  // namespace ugttt
