#pragma once

// Run metrics over finished logs: family entropy, cumulative R_max and
// new-best events, Spearman length-reward diagnostics, CSV export and SVG
// charts that carry their own data table.

#include "ugttt/runlog.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ugttt {

inline constexpr const char* kUndefined = "undefined";

struct EntropyBits {
  double bits = 0.0;
  bool defined = false;  // false for an empty label set
};

/// Shannon entropy in bits of the empirical label distribution.
inline EntropyBits family_entropy(std::span<const std::string> labels) {
  if (labels.empty()) return {0.0, false};
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (const auto& [label, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return {std::max(0.0, h), true};
}

/// 1-based ranks, ties sharing the average of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[idx[m]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation (Pearson on average ranks). nullopt when
/// either rank vector has zero variance.
inline std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman_rho: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman_rho: need at least two pairs");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Per-epoch summaries

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t rollouts = 0;
  std::size_t correct = 0;
  std::map<std::string, std::size_t> families;  // over correct rollouts
  double entropy_bits = 0.0;
  bool entropy_defined = false;
  double r_max = 0.0;  // cumulative through this epoch
  std::size_t new_best_events = 0;
  double mean_mi = 0.0;
  double mean_tokens = 0.0;
  double firing_rate = 0.0;
  double mean_reward = 0.0;
};

/// New-best events: rewards strictly above the running maximum, which
/// starts at 0. Records are replayed in log order.
inline std::vector<EpochSummary> summarize(const RunLog& log) {
  std::vector<EpochSummary> out;
  if (log.empty()) return out;
  std::size_t max_epoch = 0;
  for (const auto& r : log) max_epoch = std::max(max_epoch, r.epoch);
  out.resize(max_epoch + 1);
  std::vector<std::vector<std::string>> labels(max_epoch + 1);
  std::vector<double> mi(max_epoch + 1, 0.0), tokens(max_epoch + 1, 0.0), fired(max_epoch + 1, 0.0),
      reward(max_epoch + 1, 0.0), epoch_best(max_epoch + 1, 0.0);
  double running = 0.0;
  for (const auto& r : log) {
    EpochSummary& s = out[r.epoch];
    ++s.rollouts;
    mi[r.epoch] += r.mean_mi;
    tokens[r.epoch] += static_cast<double>(r.num_tokens);
    fired[r.epoch] += r.streaming_mi_stopped ? 1.0 : 0.0;
    reward[r.epoch] += r.reward;
    epoch_best[r.epoch] = std::max(epoch_best[r.epoch], r.reward);
    if (r.reward > running) {
      running = r.reward;
      ++s.new_best_events;
    }
    if (r.correct()) {
      ++s.correct;
      ++s.families[r.family];
      labels[r.epoch].push_back(r.family);
    }
  }
  double cumulative = 0.0;
  for (std::size_t e = 0; e <= max_epoch; ++e) {
    EpochSummary& s = out[e];
    s.epoch = e;
    const auto h = family_entropy(labels[e]);
    s.entropy_bits = h.bits;
    s.entropy_defined = h.defined;
    cumulative = std::max(cumulative, epoch_best[e]);
    s.r_max = cumulative;
    if (s.rollouts) {
      const double n = static_cast<double>(s.rollouts);
      s.mean_mi = mi[e] / n;
      s.mean_tokens = tokens[e] / n;
      s.firing_rate = fired[e] / n;
      s.mean_reward = reward[e] / n;
    }
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string summaries_to_csv(const std::vector<EpochSummary>& rows) {
  std::string out =
      "epoch,rollouts,correct,entropy_bits,entropy_defined,r_max,new_best_events,mean_mi,mean_tokens,"
      "firing_rate,mean_reward,families\n";
  for (const auto& s : rows) {
    std::string fam;
    for (const auto& [label, c] : s.families) {
      if (!fam.empty()) fam += ';';
      fam += label + ":" + std::to_string(c);
    }
    out += std::to_string(s.epoch) + "," + std::to_string(s.rollouts) + "," + std::to_string(s.correct) + "," +
           format_double(s.entropy_bits) + "," + (s.entropy_defined ? "1" : "0") + "," + format_double(s.r_max) +
           "," + std::to_string(s.new_best_events) + "," + format_double(s.mean_mi) + "," +
           format_double(s.mean_tokens) + "," + format_double(s.firing_rate) + "," + format_double(s.mean_reward) +
           "," + fam + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Length-reward diagnostic

struct LengthRewardRho {
  std::optional<double> think;
  std::optional<double> code;
  std::optional<double> total;
  std::size_t correct = 0;
};

/// Spearman rho between phase lengths and reward over correct rollouts with
/// epoch in [epoch_lo, epoch_hi].
inline LengthRewardRho length_reward_diagnostic(const RunLog& log, std::size_t epoch_lo, std::size_t epoch_hi) {
  std::vector<double> think, code, total, reward;
  for (const auto& r : log) {
    if (r.epoch < epoch_lo || r.epoch > epoch_hi || !r.correct()) continue;
    think.push_back(static_cast<double>(r.phase1_tokens));
    code.push_back(static_cast<double>(r.phase2_tokens));
    total.push_back(static_cast<double>(r.phase1_tokens + r.phase2_tokens));
    reward.push_back(r.reward);
  }
  LengthRewardRho out;
  out.correct = reward.size();
  if (reward.size() < 2) return out;
  out.think = spearman_rho(think, reward);
  out.code = spearman_rho(code, reward);
  out.total = spearman_rho(total, reward);
  return out;
}

struct DiagnosticRow {
  std::string run;
  LengthRewardRho early;  // epochs 0-2
  LengthRewardRho all;
};

inline DiagnosticRow diagnose_runlog(const std::string& name, const RunLog& log, std::size_t early_last_epoch = 2) {
  std::size_t last = 0;
  for (const auto& r : log) last = std::max(last, r.epoch);
  return {name, length_reward_diagnostic(log, 0, early_last_epoch), length_reward_diagnostic(log, 0, last)};
}

inline const std::vector<std::string>& diagnostic_columns() {
  static const std::vector<std::string> cols{"rho_think[0-2]", "rho_code[0-2]", "rho_total[0-2]",
                                             "rho_think[all]", "rho_code[all]", "rho_total[all]"};
  return cols;
}

inline std::string format_rho(const std::optional<double>& r) {
  if (!r) return kUndefined;
  char buf[16];
  std::snprintf(buf, sizeof buf, "%+.2f", *r);
  return buf;
}

/// Two windows of three coefficients each, one row per run.
inline std::string format_diagnostic_table(const std::vector<DiagnosticRow>& rows, char sep = '\t') {
  std::string out = "run";
  for (const auto& c : diagnostic_columns()) out += sep + c;
  out += '\n';
  for (const auto& r : rows) {
    out += r.run;
    for (const auto* w : {&r.early, &r.all})
      for (const auto* v : {&w->think, &w->code, &w->total}) out += sep + format_rho(*v);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG charts

struct PlotSeries {
  std::string label;
  bool baseline = false;
  RunLog log;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#5b3f8c", "#d9822b", "#2b8cbe", "#3a9a5b", "#c23b4a",
                                 "#8c6d31", "#7f7f7f", "#17becf", "#bcbd22", "#e377c2"};
  return colors[i % (sizeof colors / sizeof *colors)];
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string embed(const std::string& run, const std::string& csv) {
  return "<metadata class=\"ugttt-data\" data-run=\"" + xml_escape(run) + "\"><![CDATA[\n" + csv + "]]></metadata>\n";
}

}  // namespace detail

/// Data tables embedded in an SVG produced by emit_plots, keyed by run label.
inline std::map<std::string, std::string> extract_embedded_data(const std::string& svg) {
  std::map<std::string, std::string> out;
  const std::string open = "<metadata class=\"ugttt-data\" data-run=\"";
  std::size_t pos = 0;
  while ((pos = svg.find(open, pos)) != std::string::npos) {
    pos += open.size();
    const auto name_end = svg.find('"', pos);
    std::string name = svg.substr(pos, name_end - pos);
    for (const auto& [esc, raw] : std::vector<std::pair<std::string, std::string>>{
             {"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&amp;", "&"}}) {
      for (std::size_t p; (p = name.find(esc)) != std::string::npos;) name.replace(p, esc.size(), raw);
    }
    const auto cdata = svg.find("<![CDATA[\n", name_end) + 10;
    const auto end = svg.find("]]>", cdata);
    out[name] = svg.substr(cdata, end - cdata);
    pos = end;
  }
  return out;
}

/// Family entropy and cumulative R_max per epoch, one panel each. Baseline
/// runs are dashed, method runs solid.
inline std::string render_dynamics_svg(const std::vector<PlotSeries>& runs) {
  const double w = 760, h = 340, pad_l = 56, pad_r = 16, pad_t = 36, pad_b = 48, gap = 64;
  const double panel_w = (w - pad_l - pad_r - gap) / 2.0, panel_h = h - pad_t - pad_b;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << " " << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  std::vector<std::vector<EpochSummary>> sums;
  std::size_t max_epoch = 0;
  bool any = false;
  for (const auto& r : runs) {
    sums.push_back(summarize(r.log));
    os << detail::embed(r.label, summaries_to_csv(sums.back()));
    if (!sums.back().empty()) {
      any = true;
      max_epoch = std::max(max_epoch, sums.back().size() - 1);
    }
  }
  if (!any) {
    os << "<text x=\"" << w / 2 << "\" y=\"" << h / 2 << "\" text-anchor=\"middle\">no data</text>\n</svg>\n";
    return os.str();
  }

  struct Panel { const char* title; double (*get)(const EpochSummary&); };
  const Panel panels[2] = {{"family entropy H (bits)", [](const EpochSummary& s) { return s.entropy_bits; }},
                           {"cumulative R_max", [](const EpochSummary& s) { return s.r_max; }}};
  for (int p = 0; p < 2; ++p) {
    const double x0 = pad_l + p * (panel_w + gap), y0 = pad_t;
    double hi = 0.0;
    for (const auto& s : sums)
      for (const auto& e : s) hi = std::max(hi, panels[p].get(e));
    if (hi <= 0.0) hi = 1.0;
    auto px = [&](std::size_t e) {
      return x0 + (max_epoch == 0 ? panel_w / 2 : panel_w * static_cast<double>(e) / static_cast<double>(max_epoch));
    };
    auto py = [&](double v) { return y0 + panel_h - panel_h * v / hi; };
    os << "<g class=\"panel\">\n<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 - 14
       << "\" text-anchor=\"middle\" font-size=\"13\">" << panels[p].title << "</text>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 + panel_h << "\" x2=\"" << x0 + panel_w << "\" y2=\"" << y0 + panel_h
       << "\" stroke=\"black\"/>\n<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y0 + panel_h
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << y0 + 4 << "\" text-anchor=\"end\">" << detail::fmt(hi) << "</text>\n";
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << y0 + panel_h + 4 << "\" text-anchor=\"end\">0</text>\n";
    for (std::size_t e = 0; e <= max_epoch; ++e)
      os << "<text x=\"" << px(e) << "\" y=\"" << y0 + panel_h + 16 << "\" text-anchor=\"middle\">" << e << "</text>\n";
    os << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 + panel_h + 32 << "\" text-anchor=\"middle\">epoch</text>\n";
    for (std::size_t r = 0; r < runs.size(); ++r) {
      if (sums[r].empty()) continue;
      const char* color = detail::palette(r);
      os << "<polyline class=\"series\" data-run=\"" << detail::xml_escape(runs[r].label) << "\" fill=\"none\" stroke=\""
         << color << "\" stroke-width=\"2\"" << (runs[r].baseline ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
      for (const auto& e : sums[r]) os << px(e.epoch) << "," << py(panels[p].get(e)) << " ";
      os << "\"/>\n";
      for (const auto& e : sums[r])
        os << "<circle cx=\"" << px(e.epoch) << "\" cy=\"" << py(panels[p].get(e)) << "\" r=\"2.5\" fill=\"" << color
           << "\"/>\n";
    }
    os << "</g>\n";
  }
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const double lx = pad_l + 160.0 * static_cast<double>(r), ly = h - 8;
    os << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 22 << "\" y2=\"" << ly - 4 << "\" stroke=\""
       << detail::palette(r) << "\" stroke-width=\"2\"" << (runs[r].baseline ? " stroke-dasharray=\"6 4\"" : "")
       << "/>\n<text x=\"" << lx + 26 << "\" y=\"" << ly << "\">" << detail::xml_escape(runs[r].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Stacked per-epoch family composition of correct rollouts for one run.
inline std::string render_family_svg(const PlotSeries& run) {
  const auto sums = summarize(run.log);
  const double w = 560, h = 320, pad_l = 48, pad_r = 150, pad_t = 32, pad_b = 40;
  const double plot_w = w - pad_l - pad_r, plot_h = h - pad_t - pad_b;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << " " << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << detail::embed(run.label, summaries_to_csv(sums));
  os << "<text x=\"" << pad_l + plot_w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">family composition: "
     << detail::xml_escape(run.label) << "</text>\n";
  if (sums.empty()) {
    os << "<text x=\"" << w / 2 << "\" y=\"" << h / 2 << "\" text-anchor=\"middle\">no data</text>\n</svg>\n";
    return os.str();
  }
  std::vector<std::string> families;
  for (const auto& s : sums)
    for (const auto& [f, c] : s.families)
      if (std::find(families.begin(), families.end(), f) == families.end()) families.push_back(f);
  std::sort(families.begin(), families.end());

  const double slot = plot_w / static_cast<double>(sums.size());
  const double bar = slot * 0.7;
  for (const auto& s : sums) {
    const double x = pad_l + slot * static_cast<double>(s.epoch) + (slot - bar) / 2;
    double y = pad_t + plot_h;
    for (std::size_t f = 0; f < families.size(); ++f) {
      const auto it = s.families.find(families[f]);
      if (it == s.families.end() || s.correct == 0) continue;
      const double frac = static_cast<double>(it->second) / static_cast<double>(s.correct);
      const double bh = frac * plot_h;
      y -= bh;
      os << "<rect class=\"segment\" data-epoch=\"" << s.epoch << "\" data-family=\"" << detail::xml_escape(families[f])
         << "\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar << "\" height=\"" << bh << "\" fill=\""
         << detail::palette(f) << "\"/>\n";
    }
    os << "<text x=\"" << x + bar / 2 << "\" y=\"" << pad_t + plot_h + 14 << "\" text-anchor=\"middle\">" << s.epoch
       << "</text>\n";
    os << "<text x=\"" << x + bar / 2 << "\" y=\"" << pad_t + plot_h + 28 << "\" text-anchor=\"middle\" font-size=\"9\">H="
       << detail::fmt(s.entropy_bits) << "</text>\n";
  }
  os << "<line x1=\"" << pad_l << "\" y1=\"" << pad_t + plot_h << "\" x2=\"" << pad_l + plot_w << "\" y2=\""
     << pad_t + plot_h << "\" stroke=\"black\"/>\n";
  for (std::size_t f = 0; f < families.size(); ++f) {
    const double ly = pad_t + 14.0 * static_cast<double>(f);
    os << "<rect x=\"" << w - pad_r + 12 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\""
       << detail::palette(f) << "\"/>\n<text x=\"" << w - pad_r + 26 << "\" y=\"" << ly + 9 << "\">"
       << detail::xml_escape(families[f]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string sanitize_filename(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "run" : out;
}

/// Writes dynamics.svg plus families_<label>.svg per run; returns the paths.
inline std::vector<std::string> emit_plots(const std::vector<PlotSeries>& runs, const std::filesystem::path& dir) {
  if (runs.empty()) throw std::invalid_argument("emit_plots: no runs");
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  auto write = [&](const std::filesystem::path& p, const std::string& body) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("emit_plots: cannot write " + p.string());
    os << body;
    written.push_back(p.string());
  };
  write(dir / "dynamics.svg", render_dynamics_svg(runs));
  for (const auto& r : runs) write(dir / ("families_" + sanitize_filename(r.label) + ".svg"), render_family_svg(r));
  return written;
}

}  // namespace ugttt
