#pragma once

// Per-rollout run log: JSON lines, one record per rollout, plus a stable
// digest of the serialized stream.

#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ugttt {

struct RolloutRecord {
  std::size_t epoch = 0;
  std::size_t group = 0;
  std::size_t rollout = 0;
  std::size_t adapter = 0;
  double reward = 0.0;
  std::size_t num_tokens = 0;
  std::size_t phase1_tokens = 0;
  std::size_t phase2_tokens = 0;
  double u_i = 0.0;
  double mean_mi = 0.0;
  std::optional<double> beta;
  double gamma_eff = 0.0;
  bool streaming_mi_stopped = false;
  std::optional<std::size_t> streaming_mi_stop_step;
  bool constant_group = false;
  std::string family;
  std::string text;

  bool correct() const { return reward > 0.0; }
};

using RunLog = std::vector<RolloutRecord>;

inline nlohmann::ordered_json to_json(const RolloutRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["group"] = r.group;
  j["rollout"] = r.rollout;
  j["adapter"] = r.adapter;
  j["reward"] = r.reward;
  j["num_tokens"] = r.num_tokens;
  j["phase1_tokens"] = r.phase1_tokens;
  j["phase2_tokens"] = r.phase2_tokens;
  j["U_i"] = r.u_i;
  j["mean_mi"] = r.mean_mi;
  j["beta"] = r.beta ? nlohmann::ordered_json(*r.beta) : nlohmann::ordered_json(nullptr);
  j["gamma_eff"] = r.gamma_eff;
  j["streaming_mi_stopped"] = r.streaming_mi_stopped;
  j["streaming_mi_stop_step"] =
      r.streaming_mi_stop_step ? nlohmann::ordered_json(*r.streaming_mi_stop_step) : nlohmann::ordered_json(nullptr);
  j["constant_group"] = r.constant_group;
  j["family"] = r.family;
  j["text"] = r.text;
  return j;
}

/// Reads a record, ignoring fields it does not know. `epoch` and `reward`
/// are required; everything else defaults.
inline RolloutRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::runtime_error("runlog: record is not an object");
  if (!j.contains("epoch") || !j.contains("reward")) throw std::runtime_error("runlog: record lacks epoch or reward");
  RolloutRecord r;
  auto size_field = [&](const char* k) -> std::size_t { return j.contains(k) && j[k].is_number() ? j[k].get<std::size_t>() : 0; };
  r.epoch = j.at("epoch").get<std::size_t>();
  r.reward = j.at("reward").get<double>();
  r.group = size_field("group");
  r.rollout = size_field("rollout");
  r.adapter = size_field("adapter");
  r.num_tokens = size_field("num_tokens");
  r.phase1_tokens = size_field("phase1_tokens");
  r.phase2_tokens = size_field("phase2_tokens");
  if (j.contains("U_i") && j["U_i"].is_number()) r.u_i = j["U_i"].get<double>();
  if (j.contains("mean_mi") && j["mean_mi"].is_number()) r.mean_mi = j["mean_mi"].get<double>();
  if (j.contains("beta") && j["beta"].is_number()) r.beta = j["beta"].get<double>();
  if (j.contains("gamma_eff") && j["gamma_eff"].is_number()) r.gamma_eff = j["gamma_eff"].get<double>();
  if (j.contains("streaming_mi_stopped")) {
    const auto& s = j["streaming_mi_stopped"];
    r.streaming_mi_stopped = s.is_boolean() ? s.get<bool>() : (s.is_number() && s.get<double>() != 0.0);
  }
  if (j.contains("streaming_mi_stop_step") && j["streaming_mi_stop_step"].is_number())
    r.streaming_mi_stop_step = j["streaming_mi_stop_step"].get<std::size_t>();
  if (j.contains("constant_group") && j["constant_group"].is_boolean()) r.constant_group = j["constant_group"].get<bool>();
  if (j.contains("family") && j["family"].is_string()) r.family = j["family"].get<std::string>();
  if (j.contains("text") && j["text"].is_string()) r.text = j["text"].get<std::string>();
  return r;
}

inline std::string to_jsonl(const RunLog& log) {
  std::string out;
  for (const auto& r : log) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline void write_runlog(const RunLog& log, std::ostream& os) { os << to_jsonl(log); }

inline void write_runlog(const RunLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("runlog: cannot open " + path);
  write_runlog(log, os);
}

inline RunLog read_runlog(std::istream& is) {
  RunLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      log.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("runlog line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

inline RunLog read_runlog(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("runlog: cannot open " + path);
  return read_runlog(is);
}

/// 64-bit FNV-1a over the JSON-lines serialization, as 16 hex digits.
inline std::string runlog_digest(const RunLog& log) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_jsonl(log)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ugttt
