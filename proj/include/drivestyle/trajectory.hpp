#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "drivestyle/common.hpp"

namespace drivestyle {

constexpr int kTrajectoryPoints = 8;      // waypoints per planned trajectory
constexpr double kWaypointDt = 0.5;       // seconds between consecutive waypoints
constexpr double kSampleRateHz = 10.0;    // the only supported log rate
constexpr double kSampleDt = 1.0 / kSampleRateHz;

// Maps any angle into (-pi, pi]; idempotent on its own outputs.
inline double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  else if (a > kPi) a -= 2.0 * kPi;
  return a;
}

struct EgoState {
  double t = 0.0;          // seconds since log start
  double x = 0.0;          // meters, world frame
  double y = 0.0;
  double heading = 0.0;    // radians in (-pi, pi]
  double speed = 0.0;      // m/s, >= 0
  double lon_accel = 0.0;  // m/s^2, signed
  double throttle = 0.0;   // [0, 1]
  double brake = 0.0;      // [0, 1]
  double steer = 0.0;      // [-1, 1], left positive
  int lane_index = 0;      // >= 0
};

struct LeadObservation {
  bool present = false;
  double gap = 0.0;        // bumper-to-bumper meters, >= 0 when present
  double rel_speed = 0.0;  // closing speed m/s, positive when approaching
};

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

// Fixed-horizon trajectory in the frame of its first pose.
struct PlannedTrajectory {
  std::array<Waypoint, kTrajectoryPoints> points{};
  double dt = kWaypointDt;
};

// One recorded drive: per-sample ego states plus lead-vehicle observations.
struct TrajectoryLog {
  std::string driver_id;
  std::string scenario_id;
  int run_index = 0;
  double sample_rate_hz = kSampleRateHz;
  double route_length_m = 0.0;
  std::vector<EgoState> states;
  std::vector<LeadObservation> lead;

  double duration_s() const {
    return states.size() < 2 ? 0.0 : states.back().t - states.front().t;
  }

  // Throws ValidationError on the first violated field; the message names it.
  void validate() const;
};

inline void TrajectoryLog::validate() const {
  if (driver_id.empty()) throw ValidationError("log: empty driver_id");
  if (scenario_id.empty()) throw ValidationError("log: empty scenario_id");
  if (run_index < 0) throw ValidationError("log: negative run_index");
  if (sample_rate_hz != kSampleRateHz)
    throw ValidationError("log: unsupported sample_rate_hz " + fmt_double(sample_rate_hz) +
                          " (only " + fmt_double(kSampleRateHz) + " Hz accepted; logs are never resampled)");
  if (route_length_m <= 0.0) throw ValidationError("log: route_length_m must be positive");
  if (states.size() < 2) throw ValidationError("log: needs at least 2 samples");
  if (lead.size() != states.size())
    throw ValidationError("log: lead observation count " + std::to_string(lead.size()) +
                          " does not match state count " + std::to_string(states.size()));
  const double nominal_dt = 1.0 / sample_rate_hz;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const EgoState& s = states[i];
    const std::string at = " at sample " + std::to_string(i);
    if (!std::isfinite(s.t) || !std::isfinite(s.x) || !std::isfinite(s.y) ||
        !std::isfinite(s.heading) || !std::isfinite(s.speed) || !std::isfinite(s.lon_accel) ||
        !std::isfinite(s.throttle) || !std::isfinite(s.brake) || !std::isfinite(s.steer))
      throw ValidationError("log: non-finite field" + at);
    if (i > 0) {
      const double dt = s.t - states[i - 1].t;
      if (dt <= 0.0) throw ValidationError("log: non-monotonic time" + at);
      if (std::fabs(dt - nominal_dt) > 0.01 * nominal_dt)
        throw ValidationError("log: sample spacing " + fmt_double(dt) +
                              " deviates more than 1% from nominal" + at);
    }
    if (s.speed < 0.0) throw ValidationError("log: negative speed" + at);
    if (s.heading <= -kPi || s.heading > kPi)
      throw ValidationError("log: heading outside (-pi, pi]" + at);
    if (s.throttle < 0.0 || s.throttle > 1.0) throw ValidationError("log: throttle outside [0, 1]" + at);
    if (s.brake < 0.0 || s.brake > 1.0) throw ValidationError("log: brake outside [0, 1]" + at);
    if (s.steer < -1.0 || s.steer > 1.0) throw ValidationError("log: steer outside [-1, 1]" + at);
    if (s.lane_index < 0) throw ValidationError("log: negative lane_index" + at);
    const LeadObservation& lo = lead[i];
    if (lo.present) {
      if (!std::isfinite(lo.gap) || !std::isfinite(lo.rel_speed))
        throw ValidationError("log: non-finite lead observation" + at);
      if (lo.gap < 0.0) throw ValidationError("log: negative lead gap" + at);
    }
  }
}

// Express a world pose in the frame of a reference pose.
inline Waypoint to_relative(double x, double y, double heading,
                            double ref_x, double ref_y, double ref_heading) {
  const double dx = x - ref_x;
  const double dy = y - ref_y;
  const double c = std::cos(ref_heading);
  const double s = std::sin(ref_heading);
  return Waypoint{c * dx + s * dy, -s * dx + c * dy, normalize_angle(heading - ref_heading)};
}

inline Waypoint to_world(const Waypoint& rel, double ref_x, double ref_y, double ref_heading) {
  const double c = std::cos(ref_heading);
  const double s = std::sin(ref_heading);
  return Waypoint{ref_x + c * rel.x - s * rel.y,
                  ref_y + s * rel.x + c * rel.y,
                  normalize_angle(rel.heading + ref_heading)};
}

// Cuts a log into fixed-horizon trajectories: one per start sample i = 0,
// stride, 2*stride, ... as long as the full window of 8 waypoints spaced
// 0.5 s apart (36 samples at 10 Hz) fits. Each trajectory is expressed in the
// frame of its first pose, so its first waypoint is the origin with heading 0.
inline std::vector<PlannedTrajectory> slice_segments(const TrajectoryLog& log, int stride) {
  if (stride < 1) throw ValidationError("slice_segments: stride must be >= 1");
  const int per_point = static_cast<int>(std::lround(kWaypointDt * log.sample_rate_hz));
  const int window = (kTrajectoryPoints - 1) * per_point + 1;
  std::vector<PlannedTrajectory> out;
  const int n = static_cast<int>(log.states.size());
  if (n < window) return out;
  out.reserve(static_cast<std::size_t>((n - window) / stride + 1));
  for (int i = 0; i + window <= n; i += stride) {
    const EgoState& ref = log.states[static_cast<std::size_t>(i)];
    PlannedTrajectory traj;
    for (int p = 0; p < kTrajectoryPoints; ++p) {
      const EgoState& s = log.states[static_cast<std::size_t>(i + p * per_point)];
      traj.points[static_cast<std::size_t>(p)] =
          to_relative(s.x, s.y, s.heading, ref.x, ref.y, ref.heading);
    }
    out.push_back(traj);
  }
  return out;
}

// Speeds implied by consecutive waypoint spacing; 7 values for 8 points.
inline std::array<double, kTrajectoryPoints - 1> segment_speeds(const PlannedTrajectory& t) {
  std::array<double, kTrajectoryPoints - 1> v{};
  for (int p = 0; p + 1 < kTrajectoryPoints; ++p) {
    const double dx = t.points[static_cast<std::size_t>(p + 1)].x - t.points[static_cast<std::size_t>(p)].x;
    const double dy = t.points[static_cast<std::size_t>(p + 1)].y - t.points[static_cast<std::size_t>(p)].y;
    v[static_cast<std::size_t>(p)] = std::sqrt(dx * dx + dy * dy) / t.dt;
  }
  return v;
}

}  // namespace drivestyle
