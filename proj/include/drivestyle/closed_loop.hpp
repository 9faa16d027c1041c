#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/planner.hpp"
#include "drivestyle/sim.hpp"
#include "drivestyle/trajectory.hpp"

namespace drivestyle {

constexpr double kPidKp = 0.86;
constexpr double kPidKi = 0.75;
constexpr double kPidKd = 0.3;
constexpr int kPidWindow = 40;

constexpr double kOverrideLateralGate = 1.2;  // m, lead considered only within this offset
constexpr double kOverrideMinGap = 6.0;       // m, strict
constexpr double kOverrideMinTtc = 1.5;       // s, strict
constexpr int kDefaultWaypointRate = 15;      // simulation steps between densified waypoints
constexpr double kRoadEdgeMargin = 0.75;      // m, tracker keeps targets this far inside the road

constexpr double kWheelBase = 2.8;      // m
constexpr double kMaxWheelAngle = 0.61; // rad at full steer
constexpr double kMaxLatAccel = 4.0;    // m/s^2, wheel authority shrinks with speed
constexpr double kMaxDriveAccel = 3.0;  // m/s^2 at full throttle
constexpr double kMaxBrakeAccel = 6.0;  // m/s^2 at full brake
constexpr double kSpeedGain = 1.5;      // longitudinal proportional gain
constexpr int kReplanInterval = 5;      // simulation steps between planner queries

struct ControlCommand {
  double throttle = 0.0;  // [0, 1]
  double brake = 0.0;     // [0, 1]
  double steer = 0.0;     // [-1, 1]
};

// Lateral PID over heading error. The window holds the errors seen on previous
// calls; the integral spans the window's duration and the derivative compares
// against the most recent past error.
struct PidState {
  std::deque<double> window;

  void reset() { window.clear(); }
};

inline double pid_steer(PidState& state, double heading_error, double dt) {
  if (dt <= 0.0) throw ValidationError("pid_steer: dt must be positive");
  double integral = 0.0;
  if (!state.window.empty()) {
    const double window_mean = mean_of(std::vector<double>(state.window.begin(), state.window.end()));
    integral = kPidKi * window_mean * (static_cast<double>(state.window.size()) * dt);
  }
  const double prev = state.window.empty() ? 0.0 : state.window.back();
  const double derivative = kPidKd * (heading_error - prev) / dt;
  state.window.push_back(heading_error);
  if (state.window.size() > static_cast<std::size_t>(kPidWindow)) state.window.pop_front();
  return clamp(kPidKp * heading_error + integral + derivative, -1.0, 1.0);
}

// Emergency-brake decision. Pure in (gap, rel_speed, lateral offset): brakes
// when the lead sits within +-1.2 m laterally and either the gap is under 6 m
// or the closing time-to-contact is under 1.5 s. Boundary values do not
// trigger.
inline bool safety_override(const LeadObservation& lead, double lateral_offset) {
  if (!lead.present) return false;
  if (std::abs(lateral_offset) > kOverrideLateralGate) return false;
  if (lead.gap < kOverrideMinGap) return true;
  if (lead.rel_speed > 0.0 && lead.gap / lead.rel_speed < kOverrideMinTtc) return true;
  return false;
}

// Resamples a polyline to evenly spaced waypoints, endpoint included. The
// nominal spacing is the distance covered in `rate` simulation steps at the
// reference speed; the actual spacing divides the arc length evenly.
inline std::vector<Waypoint> densify_waypoints(const std::vector<Waypoint>& route, int rate,
                                               double reference_speed) {
  if (route.size() < 2) throw ValidationError("densify_waypoints: route needs at least 2 points");
  if (rate < 1) throw ValidationError("densify_waypoints: rate must be >= 1");
  if (reference_speed <= 0.0)
    throw ValidationError("densify_waypoints: reference speed must be positive");

  std::vector<double> cumulative(route.size(), 0.0);
  for (std::size_t i = 1; i < route.size(); ++i) {
    const double dx = route[i].x - route[i - 1].x;
    const double dy = route[i].y - route[i - 1].y;
    cumulative[i] = cumulative[i - 1] + std::hypot(dx, dy);
  }
  const double total = cumulative.back();
  if (total <= 0.0) throw ValidationError("densify_waypoints: route has zero length");

  const double nominal = rate * kSampleDt * reference_speed;
  const int count = std::max(2, static_cast<int>(std::lround(total / nominal)) + 1);
  const double step = total / (count - 1);

  std::vector<Waypoint> out;
  out.reserve(static_cast<std::size_t>(count));
  std::size_t seg = 1;
  for (int k = 0; k < count; ++k) {
    const double s = std::min(step * k, total);
    while (seg + 1 < route.size() && cumulative[seg] < s) ++seg;
    const double seg_len = cumulative[seg] - cumulative[seg - 1];
    const double frac = seg_len > 0.0 ? (s - cumulative[seg - 1]) / seg_len : 0.0;
    const auto& a = route[seg - 1];
    const auto& b = route[seg];
    out.push_back(Waypoint{a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y),
                           std::atan2(b.y - a.y, b.x - a.x)});
  }
  return out;
}

struct RolloutMetrics {
  double route_completion = 0.0;  // [0, 1]
  int collisions = 0;
  bool success = false;           // completion == 1 and no collisions
  double driving_score = 0.0;     // 100 * completion * 0.5^collisions
};

inline nlohmann::json metrics_to_json(const RolloutMetrics& m) {
  return nlohmann::json{{"route_completion", m.route_completion},
                        {"collisions", m.collisions},
                        {"success", m.success},
                        {"driving_score", m.driving_score}};
}

struct RolloutResult {
  TrajectoryLog log;
  RolloutMetrics metrics;
};

struct RolloutOptions {
  int waypoint_rate = kDefaultWaypointRate;
  bool use_safety_override = true;
  std::string label = "planner";
  std::uint64_t seed = 0;
  double max_duration_s = 0.0;  // 0 picks 60 + route/2, matching the data generator
};

// Optional proposal re-ranking hook; by default the highest-confidence
// proposal wins.
using ProposalSelector = std::function<int(const ProposalSet&)>;

// Drives one scenario closed-loop at 10 Hz. The planner is queried every
// `waypoint_rate` steps; the chosen proposal is frozen in world coordinates
// and tracked between replans (PID steering toward densified waypoints,
// proportional speed control toward the plan's implied speed, capped at the
// scenario's speed-limit proxy). Tracking a world-frame plan is what gives
// the loop lateral feedback: per-step ego-frame replanning would inherit any
// drift. The safety override still vetoes the pedals at the full 10 Hz.
// The episode ends at route completion, first collision, or timeout.
inline RolloutResult rollout(const PlannerParams& planner, const ScenarioSpec& scenario,
                             const RolloutOptions& opts = {},
                             const ProposalSelector& selector = {}) {
  planner.check_shapes();
  if (scenario.route_length_m <= 0 || scenario.reference_speed <= 0 || scenario.lane_count < 1)
    throw ValidationError("rollout: scenario must have positive route, speed, and lanes");
  if (opts.waypoint_rate < 1) throw ValidationError("rollout: waypoint_rate must be >= 1");

  const double dt = kSampleDt;
  const double t_max =
      opts.max_duration_s > 0.0 ? opts.max_duration_s : 60.0 + scenario.route_length_m / 2.0;
  const long max_steps = std::lround(t_max / dt);

  std::mt19937_64 rng(mix_seed(opts.seed, 0xC1));
  const double v_jitter = 1.0 + 0.1 * (2.0 * uniform01(rng) - 1.0);
  const double gap_jitter = 1.0 + 0.1 * (2.0 * uniform01(rng) - 1.0);

  double x = 0.0, y = 0.0, heading = 0.0;
  double v = clamp(0.8 * scenario.reference_speed * v_jitter, 0.0, scenario.reference_speed);
  double accel = 0.0;

  const bool lead_on = scenario.lead.present;
  double s_lead = lead_on ? kCarLength + scenario.lead.initial_gap * gap_jitter : 0.0;
  double v_lead = lead_on ? scenario.lead.target_at(0.0) : 0.0;

  TrajectoryLog log;
  log.driver_id = opts.label;
  log.scenario_id = scenario.scenario_id;
  log.run_index = static_cast<int>(opts.seed % 1000000);
  log.sample_rate_hz = kSampleRateHz;
  log.route_length_m = scenario.route_length_m;

  PidState pid;
  RolloutMetrics metrics;
  const int history_step = static_cast<int>(std::lround(kWaypointDt * kSampleRateHz));
  const double arrive_radius =
      std::max(2.0, 0.3 * opts.waypoint_rate * dt * scenario.reference_speed);

  std::vector<Waypoint> dense;   // current world-frame plan, densified
  std::size_t next_wp = 0;
  double v_target = 0.0;

  double furthest = 0.0;
  for (long i = 0; i < max_steps; ++i) {
    const double t = i * dt;

    const double gap = lead_on ? s_lead - x - kCarLength : 0.0;
    const bool observed =
        lead_on && gap >= 0.0 && gap <= kLeadVisibility && std::abs(y) < kLaneWidth / 2.0;
    LeadObservation obs;
    if (observed) {
      obs.present = true;
      obs.gap = gap;
      obs.rel_speed = v - v_lead;
    }

    EgoState cur;
    cur.t = t;
    cur.x = x;
    cur.y = y;
    cur.heading = heading;
    cur.speed = v;
    cur.lon_accel = accel;
    cur.lane_index = std::min(scenario.lane_count - 1,
                              std::max(0, static_cast<int>(std::lround(std::abs(y) / kLaneWidth))));

    if (i % opts.waypoint_rate == 0) {
      PlannerInput input;
      for (int hIdx = 0; hIdx < kHistoryLen; ++hIdx) {
        const long j = std::max<long>(0, i - static_cast<long>(kHistoryLen - 1 - hIdx) * history_step);
        const EgoState& past = j == i ? cur : log.states[static_cast<std::size_t>(j)];
        const Waypoint rel = to_relative(past.x, past.y, past.heading, x, y, heading);
        input.history[static_cast<std::size_t>(hIdx)] =
            HistoryState{rel.x, rel.y, rel.heading, past.speed, past.lon_accel};
      }
      input.lead = obs;
      input.context = scenario.context;

      try {
        const ProposalSet proposals = predict(planner, input);
        const int pick = selector ? selector(proposals) : select_best(proposals).first;
        if (pick < 0 || pick >= kNumProposals)
          throw ValidationError("rollout: proposal selector returned an invalid index");
        const PlannedTrajectory& plan = proposals.proposals[static_cast<std::size_t>(pick)];

        std::vector<Waypoint> world;
        world.reserve(plan.points.size());
        for (const auto& p : plan.points) world.push_back(to_world(p, x, y, heading));
        double plan_len = 0.0;
        for (std::size_t k = 1; k < world.size(); ++k)
          plan_len += std::hypot(world[k].x - world[k - 1].x, world[k].y - world[k - 1].y);

        dense.clear();
        next_wp = 1;
        if (plan_len > 1e-6) {
          dense = densify_waypoints(world, opts.waypoint_rate, scenario.reference_speed);
          // Road keeping: tracked targets stay inside the drivable corridor,
          // so a wild proposal cannot steer the ego off the route.
          const double y_lo = -(kLaneWidth / 2.0 - kRoadEdgeMargin);
          const double y_hi = (scenario.lane_count - 1) * kLaneWidth +
                              kLaneWidth / 2.0 - kRoadEdgeMargin;
          for (auto& wp : dense) wp.y = clamp(wp.y, y_lo, y_hi);
        }

        const auto& p0 = plan.points[0];
        const auto& p1 = plan.points[1];
        v_target = clamp(std::hypot(p1.x - p0.x, p1.y - p0.y) / kWaypointDt, 0.0,
                         scenario.reference_speed);
      } catch (const NumericError& e) {
        throw NumericError("rollout step " + std::to_string(i) + ": " + e.what());
      }
    }

    ControlCommand cmd;
    double heading_error = 0.0;
    if (!dense.empty()) {
      while (next_wp + 1 < dense.size() &&
             std::hypot(dense[next_wp].x - x, dense[next_wp].y - y) < arrive_radius)
        ++next_wp;
      const Waypoint& target = dense[std::min(next_wp, dense.size() - 1)];
      const Waypoint rel = to_relative(target.x, target.y, target.heading, x, y, heading);
      if (std::hypot(rel.x, rel.y) > 1e-6) heading_error = std::atan2(rel.y, rel.x);
    }
    cmd.steer = pid_steer(pid, heading_error, dt);

    const double a_cmd = clamp(kSpeedGain * (v_target - v), -kMaxBrakeAccel, kMaxDriveAccel);
    if (a_cmd >= 0.0) {
      cmd.throttle = a_cmd / kMaxDriveAccel;
    } else {
      cmd.brake = -a_cmd / kMaxBrakeAccel;
    }

    if (opts.use_safety_override && safety_override(obs, -y)) {
      cmd.throttle = 0.0;
      cmd.brake = 1.0;
    }

    const double a = kMaxDriveAccel * cmd.throttle - kMaxBrakeAccel * cmd.brake;
    const double v_next = std::max(0.0, v + a * dt);
    const double a_eff = (v_next - v) / dt;
    x += v_next * std::cos(heading) * dt;
    y += v_next * std::sin(heading) * dt;
    // Physical steering authority shrinks with speed so lateral acceleration
    // stays bounded; without this the 10 Hz kinematic update is unstable at
    // highway speeds (full steer at 30 m/s would yaw 0.75 rad per step).
    const double wheel_limit =
        std::min(kMaxWheelAngle, std::atan(kMaxLatAccel * kWheelBase / std::max(v * v, 1.0)));
    const double wheel = clamp(kMaxWheelAngle * cmd.steer, -wheel_limit, wheel_limit);
    heading = normalize_angle(heading + (v_next / kWheelBase) * std::tan(wheel) * dt);
    v = v_next;
    accel = a_eff;
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(heading) || !std::isfinite(v))
      throw NumericError("rollout: non-finite state at step " + std::to_string(i));

    cur.throttle = cmd.throttle;
    cur.brake = cmd.brake;
    cur.steer = cmd.steer;
    cur.lon_accel = a_eff;
    log.states.push_back(cur);
    log.lead.push_back(obs);

    if (lead_on) {
      const double target = scenario.lead.target_at(t);
      if (v_lead < target) v_lead = std::min(target, v_lead + kLeadRamp * dt);
      if (v_lead > target) v_lead = std::max(target, v_lead - kLeadRamp * dt);
      s_lead += v_lead * dt;
    }

    furthest = std::max(furthest, x);
    if (lead_on && s_lead - x - kCarLength <= 0.0 && std::abs(y) < kLaneWidth / 2.0) {
      metrics.collisions += 1;
      break;
    }
    if (x >= scenario.route_length_m) break;
  }

  metrics.route_completion = clamp(furthest / scenario.route_length_m, 0.0, 1.0);
  metrics.success = metrics.route_completion >= 1.0 && metrics.collisions == 0;
  metrics.driving_score =
      100.0 * metrics.route_completion * std::pow(0.5, metrics.collisions);

  if (log.states.size() < 2)
    throw NumericError("rollout: episode ended before producing a usable log");
  log.validate();
  return RolloutResult{std::move(log), metrics};
}

struct TrackResult {
  double max_lateral_error = 0.0;
  long steps = 0;
};

namespace detail {

inline double point_segment_distance(double px, double py, const Waypoint& a, const Waypoint& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0.0 ? clamp(((px - a.x) * vx + (py - a.y) * vy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(px - (a.x + t * vx), py - (a.y + t * vy));
}

inline double route_distance(double px, double py, const std::vector<Waypoint>& route) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < route.size(); ++i)
    best = std::min(best, point_segment_distance(px, py, route[i - 1], route[i]));
  return best;
}

}  // namespace detail

// Pure waypoint-following benchmark: holds a constant commanded speed and
// steers at the densified waypoints with the PID controller. Reports the
// worst distance from the true route, which is how waypoint density trades
// off against corner cutting.
inline TrackResult track_route(const std::vector<Waypoint>& route, int rate, double speed) {
  if (speed <= 0.0) throw ValidationError("track_route: speed must be positive");
  const auto dense = densify_waypoints(route, rate, speed);
  const double dt = kSampleDt;

  double x = route.front().x, y = route.front().y;
  double heading = std::atan2(route[1].y - route[0].y, route[1].x - route[0].x);
  double v = speed;
  PidState pid;
  TrackResult result;

  double total = 0.0;
  for (std::size_t i = 1; i < route.size(); ++i)
    total += std::hypot(route[i].x - route[i - 1].x, route[i].y - route[i - 1].y);
  const long max_steps = std::lround(3.0 * total / speed / dt);
  const double arrive_radius = std::max(2.0, 0.3 * rate * dt * speed);

  std::size_t next = 1;
  for (long step = 0; step < max_steps; ++step) {
    while (next + 1 < dense.size() &&
           std::hypot(dense[next].x - x, dense[next].y - y) < arrive_radius)
      ++next;
    const Waypoint& target = dense[next];
    const Waypoint rel = to_relative(target.x, target.y, target.heading, x, y, heading);
    const double heading_error = std::hypot(rel.x, rel.y) > 1e-6 ? std::atan2(rel.y, rel.x) : 0.0;
    const double steer = pid_steer(pid, heading_error, dt);

    const double a_cmd = clamp(kSpeedGain * (speed - v), -kMaxBrakeAccel, kMaxDriveAccel);
    v = std::max(0.0, v + a_cmd * dt);
    x += v * std::cos(heading) * dt;
    y += v * std::sin(heading) * dt;
    heading = normalize_angle(heading + (v / kWheelBase) * std::tan(kMaxWheelAngle * steer) * dt);

    result.max_lateral_error = std::max(result.max_lateral_error, detail::route_distance(x, y, route));
    result.steps = step + 1;
    if (next + 1 >= dense.size() && std::hypot(dense.back().x - x, dense.back().y - y) < arrive_radius)
      break;
  }
  return result;
}

// Planner parameters that ignore every input: zero weights and a head bias
// encoding straight constant-speed proposals with a flat confidence profile.
// Useful as a control in safety tests.
inline PlannerParams blind_planner(double speed) {
  PlannerParams p;
  p.bw1 = Eigen::MatrixXd::Zero(kPlannerHidden, kPlannerFeatureDim);
  p.bb1 = Eigen::VectorXd::Zero(kPlannerHidden);
  p.bw2 = Eigen::MatrixXd::Zero(kPlannerLatent, kPlannerHidden);
  p.bb2 = Eigen::VectorXd::Zero(kPlannerLatent);
  p.hw = Eigen::MatrixXd::Zero(kPlannerHeadDim, kPlannerLatent);
  p.hb = Eigen::VectorXd::Zero(kPlannerHeadDim);
  for (int pt = 0; pt < kTrajectoryPoints; ++pt)
    for (int k = 0; k < kNumProposals; ++k)
      p.hb(k * kRewardCoordDim + 3 * pt) = speed * kWaypointDt * pt / coord_scale(0);
  p.backbone_trainable = false;
  return p;
}

}  // namespace drivestyle
