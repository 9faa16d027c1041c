#pragma once

#include <random>
#include <string>
#include <vector>

#include "drivestyle/trajectory.hpp"

namespace testutil {

using namespace drivestyle;

// Straight drive along +x at constant speed; lead absent throughout.
inline TrajectoryLog straight_log(int n_samples, double speed,
                                  const std::string& driver = "d0",
                                  const std::string& scenario = "s0") {
  TrajectoryLog log;
  log.driver_id = driver;
  log.scenario_id = scenario;
  log.run_index = 0;
  log.route_length_m = 1000.0;
  log.states.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    EgoState s;
    s.t = i * kSampleDt;
    s.x = speed * s.t;
    s.speed = speed;
    log.states.push_back(s);
    log.lead.push_back(LeadObservation{});
  }
  return log;
}

// Randomized but always-valid log for round-trip and invariance properties.
inline TrajectoryLog random_log(std::uint64_t seed, int n_samples = 60) {
  std::mt19937_64 rng(seed);
  TrajectoryLog log;
  log.driver_id = "drv" + std::to_string(rng() % 100);
  log.scenario_id = "scn" + std::to_string(rng() % 10);
  log.run_index = static_cast<int>(rng() % 8);
  log.route_length_m = uniform_range(rng, 200.0, 2000.0);
  double x = uniform_range(rng, -50.0, 50.0);
  double y = uniform_range(rng, -50.0, 50.0);
  double heading = uniform_range(rng, -3.0, 3.0);
  for (int i = 0; i < n_samples; ++i) {
    EgoState s;
    s.t = i * kSampleDt;
    const double v = uniform_range(rng, 0.0, 35.0);
    heading = normalize_angle(heading + uniform_range(rng, -0.05, 0.05));
    x += v * kSampleDt * std::cos(heading);
    y += v * kSampleDt * std::sin(heading);
    s.x = x;
    s.y = y;
    s.heading = heading;
    s.speed = v;
    s.lon_accel = uniform_range(rng, -6.0, 3.0);
    s.throttle = uniform_range(rng, 0.0, 1.0);
    s.brake = uniform_range(rng, 0.0, 1.0);
    s.steer = uniform_range(rng, -1.0, 1.0);
    s.lane_index = static_cast<int>(rng() % 3);
    log.states.push_back(s);
    LeadObservation lo;
    if (rng() % 2 == 0) {
      lo.present = true;
      lo.gap = uniform_range(rng, 0.5, 120.0);
      lo.rel_speed = uniform_range(rng, -10.0, 10.0);
    }
    log.lead.push_back(lo);
  }
  return log;
}

}  // namespace testutil
