#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "drivestyle/trajectory.hpp"

namespace drivestyle {

using json = nlohmann::json;

namespace detail {

inline double require_number(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(line, std::string("missing field \"") + key + "\"");
  if (!it->is_number()) throw ParseError(line, std::string("field \"") + key + "\" is not a number");
  return it->get<double>();
}

inline json parse_json_line(const std::string& text, std::size_t line) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError(line, "malformed JSON record");
  if (!j.is_object()) throw ParseError(line, "record is not a JSON object");
  return j;
}

}  // namespace detail

// Parses one drive from JSONL text: a header line followed by one line per
// sample. The result is validated; errors name the offending line or field.
inline TrajectoryLog parse_log(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  TrajectoryLog log;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = detail::parse_json_line(line, line_no);
    if (!have_header) {
      if (!j.contains("driver_id") || !j["driver_id"].is_string())
        throw ParseError(line_no, "header needs a string \"driver_id\"");
      if (!j.contains("scenario_id") || !j["scenario_id"].is_string())
        throw ParseError(line_no, "header needs a string \"scenario_id\"");
      log.driver_id = j["driver_id"].get<std::string>();
      log.scenario_id = j["scenario_id"].get<std::string>();
      log.run_index = static_cast<int>(detail::require_number(j, "run_index", line_no));
      log.sample_rate_hz = detail::require_number(j, "sample_rate_hz", line_no);
      log.route_length_m = detail::require_number(j, "route_length_m", line_no);
      have_header = true;
      continue;
    }
    EgoState s;
    s.t = detail::require_number(j, "t", line_no);
    s.x = detail::require_number(j, "x", line_no);
    s.y = detail::require_number(j, "y", line_no);
    s.heading = detail::require_number(j, "heading", line_no);
    s.speed = detail::require_number(j, "speed", line_no);
    s.lon_accel = detail::require_number(j, "lon_accel", line_no);
    s.throttle = detail::require_number(j, "throttle", line_no);
    s.brake = detail::require_number(j, "brake", line_no);
    s.steer = detail::require_number(j, "steer", line_no);
    s.lane_index = static_cast<int>(detail::require_number(j, "lane_index", line_no));
    LeadObservation lo;
    auto lead_it = j.find("lead");
    if (lead_it == j.end() || !lead_it->is_object())
      throw ParseError(line_no, "missing \"lead\" object");
    const json& jl = *lead_it;
    if (!jl.contains("present") || !jl["present"].is_boolean())
      throw ParseError(line_no, "lead needs a boolean \"present\"");
    lo.present = jl["present"].get<bool>();
    lo.gap = detail::require_number(jl, "gap", line_no);
    lo.rel_speed = detail::require_number(jl, "rel_speed", line_no);
    log.states.push_back(s);
    log.lead.push_back(lo);
  }
  if (!have_header) throw ParseError(1, "empty log: header line missing");
  log.validate();
  return log;
}

// Serializes a validated log back to JSONL. Doubles use shortest round-trip
// form, so parse_log(write_log(x)) reproduces x exactly.
inline std::string write_log(const TrajectoryLog& log) {
  log.validate();
  std::string out;
  out.reserve(128 * (log.states.size() + 1));
  {
    json h;
    h["driver_id"] = log.driver_id;
    h["scenario_id"] = log.scenario_id;
    h["run_index"] = log.run_index;
    h["sample_rate_hz"] = log.sample_rate_hz;
    h["route_length_m"] = log.route_length_m;
    out += h.dump();
    out += '\n';
  }
  for (std::size_t i = 0; i < log.states.size(); ++i) {
    const EgoState& s = log.states[i];
    const LeadObservation& lo = log.lead[i];
    json j;
    j["t"] = s.t;
    j["x"] = s.x;
    j["y"] = s.y;
    j["heading"] = s.heading;
    j["speed"] = s.speed;
    j["lon_accel"] = s.lon_accel;
    j["throttle"] = s.throttle;
    j["brake"] = s.brake;
    j["steer"] = s.steer;
    j["lane_index"] = s.lane_index;
    j["lead"] = {{"present", lo.present}, {"gap", lo.gap}, {"rel_speed", lo.rel_speed}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed on " + path.string());
  return ss.str();
}

// Writes via a temp file plus rename so partial output never lands at `path`.
inline void write_text_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

inline TrajectoryLog parse_log_file(const std::filesystem::path& path) {
  try {
    return parse_log(read_text_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void write_log_file(const std::filesystem::path& path, const TrajectoryLog& log) {
  write_text_file_atomic(path, write_log(log));
}

}  // namespace drivestyle
