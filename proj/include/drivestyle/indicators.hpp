#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/trajectory.hpp"

namespace drivestyle {

// Bounded-aggregation cap for time-to-collision style quantities (seconds).
constexpr double kTtcMax = 10.0;
// A TTC sample is defined only when closing faster than this (m/s).
constexpr double kTtcMinRelSpeed = 0.1;
// Pedal threshold that separates incidental from deliberate braking.
constexpr double kBrakeThreshold = 0.1;
// Steering deadband for reversal counting.
constexpr double kSteerDeadband = 0.05;

struct CatalogEntry {
  std::string id;
  std::string unit;
  std::string note;
};

struct IndicatorCatalog {
  std::vector<CatalogEntry> entries;

  int index_of(const std::string& id) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].id == id) return static_cast<int>(i);
    throw ValidationError("unknown indicator id \"" + id + "\"");
  }
  std::size_t size() const { return entries.size(); }
};

// The fixed extraction catalog. Order is part of the contract: CSV columns,
// selection tie-breaks and score vectors all follow it.
inline const IndicatorCatalog& builtin_catalog() {
  static const IndicatorCatalog catalog{{
      {"max_speed", "m/s", "largest sampled speed"},
      {"mean_speed", "m/s", "mean sampled speed"},
      {"speed_std", "m/s", "population std of speed"},
      {"lon_accel_p95", "m/s^2", "95th percentile of positive longitudinal acceleration (nearest rank); 0 if none"},
      {"lon_accel_trunc_low", "m/s^2", "mean of the lowest 5% of longitudinal acceleration samples"},
      {"jerk_rms", "m/s^3", "RMS of finite-difference jerk"},
      {"mean_ttc", "s", "mean time-to-collision, samples capped at 10 s; undefined samples contribute 10 s"},
      {"min_ttc", "s", "minimum time-to-collision under the same 10 s cap"},
      {"time_headway_mean", "s", "mean gap/speed over samples with a lead and speed > 1 m/s; 10 s if none"},
      {"overtakes_per_km", "1/km", "completed passes of a slower lead, per route km"},
      {"lane_changes_per_km", "1/km", "sustained lane transitions (held >= 1 s), per route km"},
      {"brake_events_per_km", "1/km", "brake onsets above 0.1 preceded by >= 0.5 s of release, per route km"},
      {"brake_intensity_mean", "-", "mean brake pedal over samples with brake > 0.1; 0 if none"},
      {"throttle_mean", "-", "mean throttle pedal"},
      {"steering_reversal_rate", "1/min", "sign flips of steer outside a 0.05 deadband, per minute"},
      {"stop_count", "-", "standstill intervals (speed < 0.1 m/s) lasting >= 1 s"},
  }};
  return catalog;
}

// One extracted row: the catalog's indicators for a single log.
struct IndicatorVector {
  std::string driver_id;
  std::string scenario_id;
  int run_index = 0;
  std::vector<double> values;
};

namespace detail {

struct LaneRun {
  int lane;
  double t_start, t_end;
  std::size_t i_start;
};

inline std::vector<LaneRun> lane_runs(const TrajectoryLog& log) {
  std::vector<LaneRun> runs;
  for (std::size_t i = 0; i < log.states.size(); ++i) {
    const int lane = log.states[i].lane_index;
    if (runs.empty() || runs.back().lane != lane)
      runs.push_back({lane, log.states[i].t, log.states[i].t, i});
    else
      runs.back().t_end = log.states[i].t;
  }
  return runs;
}

struct LaneTransition {
  double t;            // when the new lane was entered
  int from, to;
  std::size_t prev_i;  // last sample index before the transition
};

// Sustained transitions only: a new lane counts once it is held >= 1 s, which
// debounces sensor flicker. The current lane only advances on counted changes.
inline std::vector<LaneTransition> lane_transitions(const TrajectoryLog& log) {
  const auto runs = lane_runs(log);
  std::vector<LaneTransition> out;
  if (runs.empty()) return out;
  int confirmed = runs.front().lane;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].lane == confirmed) continue;
    if (runs[r].t_end - runs[r].t_start >= 1.0 - 1e-9) {
      out.push_back({runs[r].t_start, confirmed, runs[r].lane, runs[r].i_start - 1});
      confirmed = runs[r].lane;
    }
  }
  return out;
}

inline double nearest_rank_percentile(std::vector<double> v, double pct) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  if (rank == 0) rank = 1;
  if (rank > v.size()) rank = v.size();
  return v[rank - 1];
}

}  // namespace detail

inline int detect_lane_changes(const TrajectoryLog& log) {
  return static_cast<int>(detail::lane_transitions(log).size());
}

// A completed overtake: a sustained lane change made while closing on a lead
// (present, gap < 50 m just before the move), followed by a sustained return
// to the departed lane within 30 s. Both transitions are consumed.
inline int detect_overtakes(const TrajectoryLog& log) {
  const auto trans = detail::lane_transitions(log);
  std::vector<bool> used(trans.size(), false);
  int count = 0;
  for (std::size_t k = 0; k < trans.size(); ++k) {
    if (used[k]) continue;
    const LeadObservation& lo = log.lead[trans[k].prev_i];
    if (!lo.present || lo.gap >= 50.0) continue;
    for (std::size_t j = k + 1; j < trans.size(); ++j) {
      if (trans[j].t - trans[k].t > 30.0) break;
      if (used[j]) continue;
      if (trans[j].to == trans[k].from) {
        ++count;
        used[k] = used[j] = true;
        break;
      }
    }
  }
  return count;
}

// Computes every catalog indicator for one validated log.
inline IndicatorVector compute_indicators(const TrajectoryLog& log,
                                          const IndicatorCatalog& catalog = builtin_catalog()) {
  log.validate();
  const std::size_t n = log.states.size();
  const double duration = log.duration_s();
  const double km = log.route_length_m / 1000.0;

  std::vector<double> speeds(n), accels(n);
  for (std::size_t i = 0; i < n; ++i) {
    speeds[i] = log.states[i].speed;
    accels[i] = log.states[i].lon_accel;
  }

  std::vector<double> pos_accels;
  for (double a : accels)
    if (a > 0.0) pos_accels.push_back(a);

  std::vector<double> sorted_accels = accels;
  std::sort(sorted_accels.begin(), sorted_accels.end());
  const std::size_t low_n =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(n))));
  double trunc_low = 0.0;
  for (std::size_t i = 0; i < low_n; ++i) trunc_low += sorted_accels[i];
  trunc_low /= static_cast<double>(low_n);

  double jerk_sq = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double j = (accels[i + 1] - accels[i]) * log.sample_rate_hz;
    jerk_sq += j * j;
  }
  const double jerk_rms = n > 1 ? std::sqrt(jerk_sq / static_cast<double>(n - 1)) : 0.0;

  double ttc_sum = 0.0, ttc_min = kTtcMax;
  for (std::size_t i = 0; i < n; ++i) {
    const LeadObservation& lo = log.lead[i];
    double ttc = kTtcMax;
    if (lo.present && lo.rel_speed > kTtcMinRelSpeed)
      ttc = std::min(kTtcMax, lo.gap / lo.rel_speed);
    ttc_sum += ttc;
    ttc_min = std::min(ttc_min, ttc);
  }

  std::vector<double> headways;
  for (std::size_t i = 0; i < n; ++i)
    if (log.lead[i].present && speeds[i] > 1.0) headways.push_back(log.lead[i].gap / speeds[i]);
  const double headway_mean = headways.empty() ? kTtcMax : mean_of(headways);

  // An event is a pedal onset above the threshold preceded by at least 0.5 s
  // of release, so brief dips do not split one braking episode into two.
  int brake_events = 0;
  double below_start = -1e9;
  bool was_below = true;
  double brake_sum = 0.0;
  int brake_samples = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double b = log.states[i].brake;
    if (b > kBrakeThreshold) {
      brake_sum += b;
      ++brake_samples;
      if (was_below && log.states[i].t - below_start >= 0.5) ++brake_events;
      was_below = false;
    } else if (!was_below) {
      below_start = log.states[i].t;
      was_below = true;
    }
  }

  double throttle_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) throttle_sum += log.states[i].throttle;

  int reversals = 0;
  int last_sign = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double st = log.states[i].steer;
    const int sign = st > kSteerDeadband ? 1 : (st < -kSteerDeadband ? -1 : 0);
    if (sign != 0) {
      if (last_sign != 0 && sign != last_sign) ++reversals;
      last_sign = sign;
    }
  }
  const double reversal_rate = duration > 0.0 ? reversals / (duration / 60.0) : 0.0;

  int stops = 0;
  std::size_t i = 0;
  while (i < n) {
    if (speeds[i] < 0.1) {
      std::size_t j = i;
      while (j + 1 < n && speeds[j + 1] < 0.1) ++j;
      if (log.states[j].t - log.states[i].t >= 1.0 - 1e-9) ++stops;
      i = j + 1;
    } else {
      ++i;
    }
  }

  IndicatorVector out;
  out.driver_id = log.driver_id;
  out.scenario_id = log.scenario_id;
  out.run_index = log.run_index;
  out.values.resize(catalog.size());
  auto set = [&](const char* id, double v) {
    out.values[static_cast<std::size_t>(catalog.index_of(id))] = v;
  };
  set("max_speed", *std::max_element(speeds.begin(), speeds.end()));
  set("mean_speed", mean_of(speeds));
  set("speed_std", population_std(speeds));
  set("lon_accel_p95", detail::nearest_rank_percentile(pos_accels, 95.0));
  set("lon_accel_trunc_low", trunc_low);
  set("jerk_rms", jerk_rms);
  set("mean_ttc", ttc_sum / static_cast<double>(n));
  set("min_ttc", ttc_min);
  set("time_headway_mean", headway_mean);
  set("overtakes_per_km", detect_overtakes(log) / km);
  set("lane_changes_per_km", detect_lane_changes(log) / km);
  set("brake_events_per_km", brake_events / km);
  set("brake_intensity_mean", brake_samples > 0 ? brake_sum / brake_samples : 0.0);
  set("throttle_mean", throttle_sum / static_cast<double>(n));
  set("steering_reversal_rate", reversal_rate);
  set("stop_count", static_cast<double>(stops));
  for (double v : out.values)
    if (!std::isfinite(v)) throw NumericError("indicator extraction produced a non-finite value");
  return out;
}

struct SelectionResult {
  std::vector<double> scores;             // one per catalog entry, catalog order
  std::vector<std::string> selected_ids;  // k ids, highest score first
};

// Ranks indicators by how much drivers disagree on them. Per scenario: take
// each driver's mean, subtract the across-driver median, and measure the
// population std of those offsets; scores average across scenarios. Ties
// break toward the earlier catalog entry.
inline SelectionResult select_top_k(const std::vector<IndicatorVector>& rows, int k,
                                    const IndicatorCatalog& catalog = builtin_catalog()) {
  if (k < 1 || static_cast<std::size_t>(k) > catalog.size())
    throw ValidationError("select_top_k: k must be in [1, " + std::to_string(catalog.size()) + "]");
  if (rows.empty()) throw ValidationError("select_top_k: no indicator rows");
  std::set<std::string> driver_set;
  for (const auto& r : rows) {
    if (r.values.size() != catalog.size())
      throw ValidationError("select_top_k: row width does not match catalog");
    driver_set.insert(r.driver_id);
  }
  if (driver_set.size() < 2)
    throw ValidationError("select_top_k: needs at least 2 distinct drivers");

  // scenario -> driver -> rows, in first-appearance order for determinism.
  std::vector<std::string> scenario_order;
  std::map<std::string, std::vector<const IndicatorVector*>> by_scenario;
  for (const auto& r : rows) {
    auto [it, inserted] = by_scenario.try_emplace(r.scenario_id);
    if (inserted) scenario_order.push_back(r.scenario_id);
    it->second.push_back(&r);
  }

  const std::size_t dim = catalog.size();
  std::vector<double> scores(dim, 0.0);
  for (const auto& scenario : scenario_order) {
    const auto& scenario_rows = by_scenario[scenario];
    std::vector<std::string> driver_order;
    std::map<std::string, std::vector<const IndicatorVector*>> by_driver;
    for (const auto* r : scenario_rows) {
      auto [it, inserted] = by_driver.try_emplace(r->driver_id);
      if (inserted) driver_order.push_back(r->driver_id);
      it->second.push_back(r);
    }
    for (std::size_t d = 0; d < dim; ++d) {
      std::vector<double> driver_means;
      driver_means.reserve(driver_order.size());
      for (const auto& drv : driver_order) {
        double s = 0.0;
        for (const auto* r : by_driver[drv]) s += r->values[d];
        driver_means.push_back(s / static_cast<double>(by_driver[drv].size()));
      }
      if (driver_means.size() < 2) continue;  // degenerate scenario adds zero spread
      const double mid = median_of(driver_means);
      for (double& m : driver_means) m -= mid;
      scores[d] += population_std(driver_means);
    }
  }
  for (double& s : scores) s /= static_cast<double>(scenario_order.size());

  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  SelectionResult res;
  res.scores = scores;
  res.selected_ids.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) res.selected_ids.push_back(catalog.entries[order[static_cast<std::size_t>(i)]].id);
  return res;
}

// --- serialization -----------------------------------------------------------

inline std::string write_indicator_csv(const std::vector<IndicatorVector>& rows,
                                       const IndicatorCatalog& catalog = builtin_catalog()) {
  std::string out = "driver_id,scenario_id,run_index";
  for (const auto& e : catalog.entries) out += "," + e.id;
  out += '\n';
  for (const auto& r : rows) {
    if (r.values.size() != catalog.size())
      throw ValidationError("indicator CSV: row width does not match catalog");
    out += r.driver_id + "," + r.scenario_id + "," + std::to_string(r.run_index);
    for (double v : r.values) out += "," + fmt_double(v);
    out += '\n';
  }
  return out;
}

inline std::vector<IndicatorVector> parse_indicator_csv(std::string_view text,
                                                        const IndicatorCatalog& catalog = builtin_catalog()) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<IndicatorVector> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!have_header) {
      if (cells.size() != catalog.size() + 3)
        throw ParseError(line_no, "indicator CSV header has " + std::to_string(cells.size()) +
                                      " columns, expected " + std::to_string(catalog.size() + 3));
      for (std::size_t i = 0; i < catalog.size(); ++i)
        if (cells[i + 3] != catalog.entries[i].id)
          throw ParseError(line_no, "indicator CSV column \"" + cells[i + 3] +
                                        "\" does not match catalog entry \"" + catalog.entries[i].id + "\"");
      have_header = true;
      continue;
    }
    if (cells.size() != catalog.size() + 3)
      throw ParseError(line_no, "indicator CSV row has wrong column count");
    IndicatorVector r;
    r.driver_id = cells[0];
    r.scenario_id = cells[1];
    try {
      r.run_index = std::stoi(cells[2]);
    } catch (const std::exception&) {
      throw ParseError(line_no, "bad run_index \"" + cells[2] + "\"");
    }
    r.values.reserve(catalog.size());
    for (std::size_t i = 0; i < catalog.size(); ++i) {
      const std::string& cell = cells[i + 3];
      double v;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        throw ParseError(line_no, "bad number \"" + cell + "\" in column " + catalog.entries[i].id);
      r.values.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  if (!have_header) throw ParseError(1, "indicator CSV: header missing");
  return rows;
}

inline nlohmann::json selection_to_json(const SelectionResult& sel,
                                        const IndicatorCatalog& catalog = builtin_catalog()) {
  nlohmann::json scores = nlohmann::json::object();
  for (std::size_t i = 0; i < catalog.size(); ++i) scores[catalog.entries[i].id] = sel.scores[i];
  return nlohmann::json{{"scores", scores}, {"selected", sel.selected_ids}};
}

inline SelectionResult selection_from_json(const nlohmann::json& j,
                                           const IndicatorCatalog& catalog = builtin_catalog()) {
  if (!j.contains("scores") || !j.contains("selected"))
    throw ValidationError("selection JSON needs \"scores\" and \"selected\"");
  SelectionResult sel;
  sel.scores.resize(catalog.size(), 0.0);
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto& id = catalog.entries[i].id;
    if (!j["scores"].contains(id)) throw ValidationError("selection JSON missing score for " + id);
    sel.scores[i] = j["scores"][id].get<double>();
  }
  for (const auto& id : j["selected"]) {
    sel.selected_ids.push_back(id.get<std::string>());
    catalog.index_of(sel.selected_ids.back());  // throws on unknown ids
  }
  return sel;
}

}  // namespace drivestyle
