#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "drivestyle/trajectory.hpp"

namespace drivestyle {

constexpr double kLaneWidth = 3.5;   // meters
constexpr double kCarLength = 4.5;   // meters, bumper to bumper subtraction
constexpr double kLeadVisibility = 200.0;  // meters; beyond this the lead is not observed
constexpr double kLeadRamp = 3.0;    // lead speed tracking limit, m/s^2

// Behavioral parameters for one synthetic driver. The first five are the
// classic car-following terms; the last three shape maneuvers and texture.
struct DriverProfile {
  std::string id;
  double desired_speed = 24.0;          // free-flow target, m/s
  double time_headway = 1.5;            // desired gap in seconds
  double max_accel = 1.8;               // m/s^2
  double comfort_decel = 2.0;           // m/s^2
  double min_gap = 2.5;                 // standstill gap, m
  double lane_change_propensity = 0.35; // [0, 1] eagerness to pass
  double brake_aggression = 0.3;        // [0, 1] stiffens the braking response
  double noise_scale = 0.05;            // [0, 1] accel/steer jitter magnitude

  void validate() const {
    if (id.empty()) throw ValidationError("profile: empty id");
    if (desired_speed <= 0 || time_headway <= 0 || max_accel <= 0 || comfort_decel <= 0 ||
        min_gap <= 0)
      throw ValidationError("profile \"" + id + "\": car-following parameters must be positive");
    if (lane_change_propensity < 0 || lane_change_propensity > 1 || brake_aggression < 0 ||
        brake_aggression > 1 || noise_scale < 0 || noise_scale > 1)
      throw ValidationError("profile \"" + id + "\": shaping parameters must lie in [0, 1]");
  }
};

// Lead-vehicle speed schedule: target speed switches at given times and is
// tracked with a bounded ramp.
struct LeadPhase {
  double t_start = 0.0;
  double target_speed = 0.0;
};

struct LeadScript {
  bool present = false;
  double initial_gap = 30.0;  // meters ahead of the ego at t = 0
  std::vector<LeadPhase> phases;

  double target_at(double t) const {
    double target = phases.empty() ? 0.0 : phases.front().target_speed;
    for (const auto& p : phases)
      if (p.t_start <= t) target = p.target_speed;
    return target;
  }
};

struct ScenarioSpec {
  std::string scenario_id;
  double route_length_m = 1000.0;
  int lane_count = 1;
  double reference_speed = 25.0;  // route design speed, m/s
  LeadScript lead;
  std::array<double, 8> context{};  // fixed descriptor fed to style-aware models
};

// The context layout is part of the checkpoint contract; keep it stable.
inline std::array<double, 8> scenario_context(double route_length, int lanes, double ref_speed,
                                              const LeadScript& lead) {
  double mean_target = 0.0;
  bool has_stop = false;
  if (lead.present && !lead.phases.empty()) {
    for (const auto& p : lead.phases) {
      mean_target += p.target_speed;
      if (p.target_speed < 0.5) has_stop = true;
    }
    mean_target /= static_cast<double>(lead.phases.size());
  }
  return {
      lanes / 4.0,
      lead.present ? 1.0 : 0.0,
      ref_speed / 40.0,
      lead.present ? lead.initial_gap / 100.0 : 0.0,
      mean_target / 40.0,
      has_stop ? 1.0 : 0.0,
      route_length / 2000.0,
      (lanes > 1 && lead.present) ? 1.0 : 0.0,
  };
}

inline ScenarioSpec make_scenario(std::string id, double route, int lanes, double ref,
                                  LeadScript lead) {
  ScenarioSpec s;
  s.scenario_id = std::move(id);
  s.route_length_m = route;
  s.lane_count = lanes;
  s.reference_speed = ref;
  s.lead = std::move(lead);
  s.context = scenario_context(route, lanes, ref, s.lead);
  return s;
}

// Four fixed situations chosen to excite different style axes: free cruising,
// constrained following, passing opportunities, and queue dynamics.
inline const std::vector<ScenarioSpec>& builtin_scenarios() {
  static const std::vector<ScenarioSpec> scenarios = [] {
    std::vector<ScenarioSpec> v;
    v.push_back(make_scenario("free_highway", 1000.0, 3, 30.0, LeadScript{}));
    v.push_back(make_scenario("dense_following", 600.0, 1, 25.0,
                              LeadScript{true, 25.0,
                                         {{0.0, 12.0}, {8.0, 5.0}, {18.0, 14.0}, {30.0, 6.0}, {42.0, 12.0}}}));
    v.push_back(make_scenario("lane_change_corridor", 800.0, 3, 25.0,
                              LeadScript{true, 40.0, {{0.0, 8.0}}}));
    v.push_back(make_scenario("stop_and_go", 400.0, 1, 20.0,
                              LeadScript{true, 20.0,
                                         {{0.0, 8.0}, {10.0, 0.0}, {22.0, 8.0}, {40.0, 0.0}, {52.0, 8.0}}}));
    return v;
  }();
  return scenarios;
}

inline const ScenarioSpec& scenario_by_id(const std::string& id) {
  for (const auto& s : builtin_scenarios())
    if (s.scenario_id == id) return s;
  throw ValidationError("unknown scenario \"" + id + "\"");
}

// Ten synthetic drivers spanning the plausible style box from timid to darty;
// driver_08 sits mid-pack on car-following but with much larger jitter.
inline const std::vector<DriverProfile>& default_profiles() {
  static const std::vector<DriverProfile> profiles = {
      {"driver_00", 18.0, 2.40, 1.0, 1.4, 4.0, 0.05, 0.10, 0.03},
      {"driver_01", 21.0, 2.00, 1.3, 1.6, 3.2, 0.15, 0.20, 0.05},
      {"driver_02", 23.0, 1.70, 1.6, 1.8, 2.8, 0.30, 0.30, 0.05},
      {"driver_03", 24.0, 1.50, 1.8, 2.0, 2.5, 0.40, 0.30, 0.06},
      {"driver_04", 26.0, 1.30, 2.0, 2.2, 2.2, 0.50, 0.40, 0.07},
      {"driver_05", 28.0, 1.10, 2.3, 2.4, 2.0, 0.60, 0.50, 0.08},
      {"driver_06", 30.0, 0.95, 2.5, 2.6, 1.8, 0.75, 0.60, 0.09},
      {"driver_07", 32.0, 0.85, 2.8, 2.8, 1.6, 0.85, 0.70, 0.10},
      {"driver_08", 27.0, 1.20, 2.2, 2.5, 2.0, 0.50, 0.50, 0.25},
      {"driver_09", 33.0, 0.80, 3.0, 3.0, 1.5, 0.95, 0.80, 0.12},
  };
  return profiles;
}

// Mid-box profile used wherever a single reference driving style is needed.
inline const DriverProfile& expert_profile() {
  static const DriverProfile p{"expert", 24.0, 1.50, 1.8, 2.0, 2.5, 0.35, 0.30, 0.04};
  return p;
}

// Classic car-following acceleration; gap may be infinity for a free road.
inline double idm_accel(const DriverProfile& p, double v, double gap, double closing_speed) {
  const double b_eff = p.comfort_decel * (1.0 + p.brake_aggression);
  const double free_term = std::pow(v / p.desired_speed, 4.0);
  double interaction = 0.0;
  if (std::isfinite(gap) && gap > 1e-9) {
    const double s_star =
        p.min_gap + std::max(0.0, v * p.time_headway +
                                      v * closing_speed / (2.0 * std::sqrt(p.max_accel * b_eff)));
    interaction = (s_star / gap) * (s_star / gap);
  }
  return p.max_accel * (1.0 - free_term - interaction);
}

// One synthetic drive of a profile through a scenario. Deterministic in
// (profile, scenario, seed); the log validates by construction.
inline TrajectoryLog generate(const DriverProfile& profile, const ScenarioSpec& scenario,
                              std::uint64_t seed, int run_index = 0) {
  profile.validate();
  if (scenario.route_length_m <= 0 || scenario.lane_count < 1)
    throw ValidationError("scenario \"" + scenario.scenario_id + "\": bad geometry");
  std::mt19937_64 rng(seed);
  const double dt = kSampleDt;
  const double t_max = 60.0 + scenario.route_length_m / 2.0;

  double s = 0.0;
  double v = 0.8 * std::min(profile.desired_speed, scenario.reference_speed);
  double y = 0.0;
  double y_prev = 0.0;

  bool lead_on = scenario.lead.present;
  double s_lead = lead_on ? kCarLength + scenario.lead.initial_gap : 0.0;
  double v_lead = lead_on ? scenario.lead.target_at(0.0) : 0.0;

  // Lane-change bookkeeping: ego may leave the lead's lane to pass and
  // deterministically returns once clear.
  int lane_from = 0, lane_to = 0;
  double change_progress = 1.0;  // >= 1 means not currently changing
  bool pass_pending_return = false;
  const double change_duration = 3.0;

  TrajectoryLog log;
  log.driver_id = profile.id;
  log.scenario_id = scenario.scenario_id;
  log.run_index = run_index;
  log.route_length_m = scenario.route_length_m;

  for (int step = 0;; ++step) {
    const double t = step * dt;
    if (s >= scenario.route_length_m || t > t_max) break;

    // Lead tracks its scheduled speed with a bounded ramp.
    if (lead_on) {
      const double target = scenario.lead.target_at(t);
      const double dv = clamp(target - v_lead, -kLeadRamp * dt, kLeadRamp * dt);
      v_lead = std::max(0.0, v_lead + dv);
      s_lead += v_lead * dt;
    }

    const int current_lane = change_progress < 0.5 ? lane_from : lane_to;
    const bool lead_ahead = lead_on && current_lane == 0 && s_lead > s;
    const double gap = lead_ahead ? s_lead - s - kCarLength
                                  : std::numeric_limits<double>::infinity();
    const bool observed = lead_ahead && gap >= 0.0 && gap <= kLeadVisibility;

    // Initiate a pass: closing on a clearly slower lead with a free lane.
    if (change_progress >= 1.0 && scenario.lane_count > 1 && observed &&
        gap < std::max(25.0, 1.5 * v) && v_lead < profile.desired_speed - 1.0 &&
        lane_to == 0) {
      if (uniform01(rng) < profile.lane_change_propensity * 0.02) {
        lane_from = 0;
        lane_to = 1;
        change_progress = 0.0;
        pass_pending_return = true;
      }
    }
    // Return once safely past the lead.
    if (change_progress >= 1.0 && pass_pending_return && lane_to == 1 &&
        s > s_lead + 12.0 + 0.5 * v) {
      lane_from = 1;
      lane_to = 0;
      change_progress = 0.0;
      pass_pending_return = false;
    }

    double accel = idm_accel(profile, v, gap, v - v_lead);
    accel += gaussian(rng) * 0.4 * profile.noise_scale;
    accel = clamp(accel, -9.0, profile.max_accel);

    const double v_new = std::max(0.0, v + accel * dt);
    const double a_eff = (v_new - v) / dt;
    v = v_new;
    s += v * dt;

    if (change_progress < 1.0) {
      change_progress = std::min(1.0, change_progress + dt / change_duration);
      const double tau = change_progress;
      const double blend = tau * tau * (3.0 - 2.0 * tau);
      y = kLaneWidth * (lane_from + blend * (lane_to - lane_from));
    }

    const double vy = (y - y_prev) / dt;
    y_prev = y;
    const double heading = normalize_angle(std::atan2(vy, std::max(v, 0.1)));
    const double steer_clean = clamp(heading * 3.0, -1.0, 1.0);
    const double steer =
        clamp(steer_clean + gaussian(rng) * 0.08 * profile.noise_scale, -1.0, 1.0);

    EgoState st;
    st.t = t;
    st.x = s;
    st.y = y;
    st.heading = heading;
    st.speed = v;
    st.lon_accel = a_eff;
    st.throttle = a_eff > 0.0 ? clamp(a_eff / 3.0, 0.0, 1.0) : 0.0;
    st.brake = a_eff < 0.0 ? clamp(-a_eff / 6.0, 0.0, 1.0) : 0.0;
    st.steer = steer;
    st.lane_index = change_progress < 0.5 ? lane_from : lane_to;
    log.states.push_back(st);

    LeadObservation lo;
    if (observed) {
      lo.present = true;
      lo.gap = gap;
      lo.rel_speed = v - v_lead;
    }
    log.lead.push_back(lo);

    if (lead_ahead && gap <= 0.0)
      throw NumericError("synthetic drive collided: profile \"" + profile.id +
                         "\" in scenario \"" + scenario.scenario_id + "\" at t=" + fmt_double(t));
  }
  if (log.states.size() < 2)
    throw NumericError("synthetic drive terminated immediately in scenario \"" +
                       scenario.scenario_id + "\"");
  log.validate();
  return log;
}

struct Corpus {
  std::vector<TrajectoryLog> logs;  // profile-major, then scenario, then run
  std::uint64_t master_seed = 0;
  int runs_per_pair = 0;
};

// Derived seeds depend on (profile, scenario, run) indices, so adding runs or
// profiles at the end never disturbs existing logs.
inline Corpus generate_corpus(const std::vector<DriverProfile>& profiles,
                              const std::vector<ScenarioSpec>& scenarios, int runs_per_pair,
                              std::uint64_t master_seed) {
  if (profiles.empty() || scenarios.empty() || runs_per_pair < 1)
    throw ValidationError("generate_corpus: needs profiles, scenarios and runs_per_pair >= 1");
  Corpus corpus;
  corpus.master_seed = master_seed;
  corpus.runs_per_pair = runs_per_pair;
  corpus.logs.reserve(profiles.size() * scenarios.size() * static_cast<std::size_t>(runs_per_pair));
  for (std::size_t p = 0; p < profiles.size(); ++p)
    for (std::size_t sc = 0; sc < scenarios.size(); ++sc)
      for (int r = 0; r < runs_per_pair; ++r) {
        const std::uint64_t seed = mix_seed(master_seed, p, sc, static_cast<std::uint64_t>(r));
        corpus.logs.push_back(generate(profiles[p], scenarios[sc], seed, r));
      }
  return corpus;
}

}  // namespace drivestyle
