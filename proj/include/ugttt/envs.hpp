#pragma once

// Toy discovery environments with deterministic checkers, and the ordered
// regular-expression family labeler.

#include "ugttt/policy.hpp"
#include "ugttt/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ugttt {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Family rules

struct FamilyRule {
  std::size_t rule_id = 0;
  std::string pattern;
  std::string label;
  std::regex matcher;
};

inline const std::string kOtherFamily = "other";

inline FamilyRule make_family_rule(std::size_t id, std::string label, std::string pattern) {
  try {
    std::regex re(pattern, std::regex::ECMAScript);
    return FamilyRule{id, std::move(pattern), std::move(label), std::move(re)};
  } catch (const std::regex_error& e) {
    throw ConfigError("family rule " + std::to_string(id) + " (" + label + "): malformed pattern '" + pattern +
                      "': " + e.what());
  }
}

/// One rule per line: `<label> <pattern>`; blank lines and `#` comments are
/// skipped. Order of appearance is evaluation order.
inline std::vector<FamilyRule> parse_family_rules(std::istream& is) {
  std::vector<FamilyRule> rules;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto label_end = line.find_first_of(" \t", first);
    if (label_end == std::string::npos) throw ConfigError("family rules line " + std::to_string(lineno) + ": missing pattern");
    const auto pat_begin = line.find_first_not_of(" \t", label_end);
    auto pat_end = line.find_last_not_of(" \t\r");
    if (pat_begin == std::string::npos) throw ConfigError("family rules line " + std::to_string(lineno) + ": missing pattern");
    rules.push_back(make_family_rule(rules.size(), line.substr(first, label_end - first),
                                     line.substr(pat_begin, pat_end - pat_begin + 1)));
  }
  return rules;
}

inline std::vector<FamilyRule> parse_family_rules(const std::string& text) {
  std::istringstream is(text);
  return parse_family_rules(is);
}

inline std::vector<FamilyRule> load_family_rules(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open family rule file " + path);
  return parse_family_rules(is);
}

inline std::string format_family_rules(const std::vector<FamilyRule>& rules) {
  std::string out;
  for (const auto& r : rules) out += r.label + " " + r.pattern + "\n";
  return out;
}

/// Label of the first rule whose pattern occurs in the text, else "other".
inline std::string family_label(const std::string& text, const std::vector<FamilyRule>& rules) {
  for (const auto& r : rules)
    if (std::regex_search(text, r.matcher)) return r.label;
  return kOtherFamily;
}

// ---------------------------------------------------------------------------
// Environment interface

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string name() const = 0;
  virtual std::string description() const = 0;
  virtual std::size_t vocab_size() const = 0;
  /// Deterministic, total score of a generated token sequence: decode, then
  /// verify. Malformed candidates score 0.
  virtual double reward(std::span<const Token> generated) const = 0;
  virtual std::vector<Token> initial_state() const { return {}; }
  virtual const std::vector<FamilyRule>& family_rules() const = 0;

  /// Character for each token; END renders as '.', the separator as '|'.
  virtual char token_char(Token t) const {
    if (t == kEndToken) return '.';
    if (t == kSeparatorToken) return '|';
    return static_cast<char>('a' + (t - kFirstContentToken));
  }

  std::string render(std::span<const Token> tokens) const {
    std::string s;
    s.reserve(tokens.size());
    for (Token t : tokens) s.push_back(token_char(t));
    return s;
  }

  /// Text the family rules see: the rendered content tokens.
  std::string candidate_text(std::span<const Token> generated) const { return render(content_tokens(generated)); }

  /// Content tokens up to the end marker; the separator is dropped. This is
  /// the solution a rollout contributes as a future parent state.
  static std::vector<Token> content_tokens(std::span<const Token> generated) {
    std::vector<Token> out;
    for (Token t : generated) {
      if (t == kEndToken) break;
      if (t != kSeparatorToken) out.push_back(t);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Motif environment: reward counts planted motifs, minus a length penalty.

struct Motif {
  std::string text;
  double weight = 1.0;
};

class MotifEnv final : public Environment {
 public:
  struct Options {
    std::size_t alphabet = 8;
    std::size_t motif_count = 4;
    std::size_t motif_length = 2;
    std::size_t free_length = 8;
    double length_penalty = 0.1;
    double reward_scale = 1.0;
  };

  explicit MotifEnv(std::uint64_t seed = 0) : MotifEnv(seed, Options{}) {}

  MotifEnv(std::uint64_t seed, Options opt) : opt_(opt) {
    if (opt.alphabet < 2 || opt.alphabet > 26) throw std::invalid_argument("MotifEnv: alphabet must be in [2,26]");
    if (opt.motif_count * opt.motif_length > opt.alphabet)
      throw std::invalid_argument("MotifEnv: motif_count * motif_length must not exceed the alphabet");
    Rng rng(derive_seed(seed, {0x307F}));
    std::vector<char> letters;
    for (std::size_t i = 0; i < opt.alphabet; ++i) letters.push_back(static_cast<char>('a' + i));
    std::shuffle(letters.begin(), letters.end(), rng);
    // Motifs use disjoint letters, so no string can count toward two motifs
    // at once.
    for (std::size_t m = 0; m < opt.motif_count; ++m) {
      std::string text(letters.begin() + static_cast<std::ptrdiff_t>(m * opt.motif_length),
                       letters.begin() + static_cast<std::ptrdiff_t>((m + 1) * opt.motif_length));
      motifs_.push_back({text, 1.0 - 0.05 * static_cast<double>(m)});
    }
    build_rules();
  }

  MotifEnv(std::vector<Motif> motifs, Options opt) : opt_(opt), motifs_(std::move(motifs)) {
    for (const auto& m : motifs_)
      for (char c : m.text)
        if (c < 'a' || static_cast<std::size_t>(c - 'a') >= opt.alphabet)
          throw std::invalid_argument("MotifEnv: motif letter outside alphabet");
    build_rules();
  }

  std::string name() const override { return "motif"; }
  std::string description() const override {
    std::string d = "Emit strings containing hidden motifs; each occurrence earns its weight, tokens beyond " +
                    std::to_string(opt_.free_length) + " cost " + std::to_string(opt_.length_penalty) + ".";
    return d;
  }
  std::size_t vocab_size() const override { return opt_.alphabet + kFirstContentToken; }
  const std::vector<FamilyRule>& family_rules() const override { return rules_; }
  const std::vector<Motif>& motifs() const { return motifs_; }
  const Options& options() const { return opt_; }

  /// Candidate string: content letters before the end marker.
  std::string decode(std::span<const Token> generated) const {
    std::string s;
    for (Token t : content_tokens(generated)) {
      if (t >= vocab_size()) return {};
      s.push_back(token_char(t));
    }
    return s;
  }

  /// Weighted non-overlapping motif counts minus the length penalty, floored at
/// 0, times reward_scale.
  double verify_motif(const std::string& candidate) const {
    double r = 0.0;
    for (const auto& m : motifs_) {
      if (m.text.empty()) continue;
      std::size_t pos = 0, count = 0;
      while ((pos = candidate.find(m.text, pos)) != std::string::npos) {
        ++count;
        pos += m.text.size();
      }
      r += m.weight * static_cast<double>(count);
    }
    const double excess = candidate.size() > opt_.free_length ? static_cast<double>(candidate.size() - opt_.free_length) : 0.0;
    return opt_.reward_scale * std::max(0.0, r - opt_.length_penalty * excess);
  }

  double reward(std::span<const Token> generated) const override { return verify_motif(decode(generated)); }

 private:
  void build_rules() {
    rules_.clear();
    for (std::size_t m = 0; m < motifs_.size(); ++m)
      rules_.push_back(make_family_rule(m, "motif_" + motifs_[m].text, motifs_[m].text));
  }

  Options opt_;
  std::vector<Motif> motifs_;
  std::vector<FamilyRule> rules_;
};

// ---------------------------------------------------------------------------
// Step-function autoconvolution environment.

/// (sum h)^2 / (n * max_k (h*h)(k)) for non-negative heights with positive
/// sum; 0 otherwise. Bounded above by (2n-1)/n.
inline double verify_step_autocorr(std::span<const double> h) {
  const std::size_t n = h.size();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (double x : h) {
    if (!std::isfinite(x) || x < 0.0) return 0.0;
    sum += x;
  }
  if (!(sum > 0.0)) return 0.0;
  double peak = 0.0;
  for (std::size_t k = 0; k + 1 < 2 * n; ++k) {
    double c = 0.0;
    const std::size_t lo = k >= n ? k - n + 1 : 0;
    const std::size_t hi = std::min(k, n - 1);
    for (std::size_t i = lo; i <= hi; ++i) c += h[i] * h[k - i];
    peak = std::max(peak, c);
  }
  return sum * sum / (static_cast<double>(n) * peak);
}

class AutocorrEnv final : public Environment {
 public:
  struct Options {
    std::size_t length = 8;       // number of steps n
    std::size_t levels = 4;       // digit base
    std::size_t group_width = 1;  // digits per height
  };

  AutocorrEnv() : AutocorrEnv(Options{}) {}
  explicit AutocorrEnv(Options opt) : opt_(opt) {
    if (opt.length < 1 || opt.levels < 2 || opt.levels > 10 || opt.group_width < 1)
      throw std::invalid_argument("AutocorrEnv: invalid options");
    rules_ = parse_family_rules(default_rules_text());
  }

  static std::string default_rules_text() {
    return "plateau (\\d)\\1\\1\n"
           "hollow 0\\d*0\n"
           "ramp 01|12|23\n";
  }

  std::string name() const override {
    return opt_.length == 4 && opt_.levels == 3 ? "autocorr-tiny" : "autocorr";
  }
  std::string description() const override {
    return "Emit " + std::to_string(opt_.length) + " step heights as base-" + std::to_string(opt_.levels) +
           " digit groups of width " + std::to_string(opt_.group_width) +
           "; reward is (sum h)^2 / (n max autoconvolution).";
  }
  std::size_t vocab_size() const override { return opt_.levels + kFirstContentToken; }
  const std::vector<FamilyRule>& family_rules() const override { return rules_; }
  const Options& options() const { return opt_; }

  char token_char(Token t) const override {
    if (t >= kFirstContentToken) return static_cast<char>('0' + (t - kFirstContentToken));
    return Environment::token_char(t);
  }

  /// Heights from fixed-width digit groups; nullopt when the digit count is
  /// not exactly length * group_width.
  std::optional<std::vector<double>> decode(std::span<const Token> generated) const {
    const auto digits = content_tokens(generated);
    if (digits.size() != opt_.length * opt_.group_width) return std::nullopt;
    std::vector<double> h;
    for (std::size_t i = 0; i < opt_.length; ++i) {
      std::size_t v = 0;
      for (std::size_t j = 0; j < opt_.group_width; ++j) {
        const Token t = digits[i * opt_.group_width + j];
        if (t < kFirstContentToken || t >= vocab_size()) return std::nullopt;
        v = v * opt_.levels + (t - kFirstContentToken);
      }
      h.push_back(static_cast<double>(v));
    }
    return h;
  }

  double reward(std::span<const Token> generated) const override {
    const auto h = decode(generated);
    return h ? verify_step_autocorr(*h) : 0.0;
  }

 private:
  Options opt_;
  std::vector<FamilyRule> rules_;
};

/// Wraps an environment and replaces its family rules, e.g. with rules read
/// from a file. Everything else forwards to the wrapped environment.
class RelabeledEnv final : public Environment {
 public:
  RelabeledEnv(std::unique_ptr<Environment> inner, std::vector<FamilyRule> rules)
      : inner_(std::move(inner)), rules_(std::move(rules)) {
    if (!inner_) throw std::invalid_argument("RelabeledEnv: null environment");
  }
  std::string name() const override { return inner_->name(); }
  std::string description() const override { return inner_->description(); }
  std::size_t vocab_size() const override { return inner_->vocab_size(); }
  double reward(std::span<const Token> generated) const override { return inner_->reward(generated); }
  std::vector<Token> initial_state() const override { return inner_->initial_state(); }
  const std::vector<FamilyRule>& family_rules() const override { return rules_; }
  char token_char(Token t) const override { return inner_->token_char(t); }

 private:
  std::unique_ptr<Environment> inner_;
  std::vector<FamilyRule> rules_;
};

inline const std::vector<std::string>& environment_names() {
  static const std::vector<std::string> names{"motif", "autocorr", "autocorr-tiny"};
  return names;
}

inline std::unique_ptr<Environment> make_environment(const std::string& name, std::uint64_t seed = 0) {
  if (name == "motif") return std::make_unique<MotifEnv>(seed);
  if (name == "autocorr") return std::make_unique<AutocorrEnv>();
  if (name == "autocorr-tiny") return std::make_unique<AutocorrEnv>(AutocorrEnv::Options{4, 3, 1});
  throw ConfigError("unknown environment '" + name + "'");
}

}  // namespace ugttt
