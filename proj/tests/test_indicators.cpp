#include <catch2/catch_amalgamated.hpp>

#include "drivestyle/indicators.hpp"
#include "helpers.hpp"

using namespace drivestyle;

namespace {

double value_of(const IndicatorVector& row, const char* id) {
  return row.values[static_cast<std::size_t>(builtin_catalog().index_of(id))];
}

// Indicator row with a single nonzero column, for selection tests.
IndicatorVector synthetic_row(const std::string& driver, const std::string& scenario,
                              int run, const char* id, double v) {
  IndicatorVector r;
  r.driver_id = driver;
  r.scenario_id = scenario;
  r.run_index = run;
  r.values.assign(builtin_catalog().size(), 0.0);
  r.values[static_cast<std::size_t>(builtin_catalog().index_of(id))] = v;
  return r;
}

}  // namespace

TEST_CASE("catalog has 16 uniquely named entries", "[indicators]") {
  const auto& cat = builtin_catalog();
  REQUIRE(cat.size() == 16);
  for (std::size_t i = 0; i < cat.size(); ++i)
    for (std::size_t j = i + 1; j < cat.size(); ++j)
      CHECK(cat.entries[i].id != cat.entries[j].id);
  CHECK_THROWS_AS(cat.index_of("no_such_indicator"), ValidationError);
}

TEST_CASE("speed statistics on a constant-speed log", "[indicators]") {
  auto row = compute_indicators(testutil::straight_log(600, 20.0));
  CHECK(value_of(row, "max_speed") == Catch::Approx(20.0));
  CHECK(value_of(row, "mean_speed") == Catch::Approx(20.0));
  CHECK(value_of(row, "speed_std") == Catch::Approx(0.0).margin(1e-12));
  CHECK(value_of(row, "throttle_mean") == Catch::Approx(0.0));
  CHECK(value_of(row, "stop_count") == 0.0);
}

TEST_CASE("acceleration percentiles use nearest rank", "[indicators]") {
  auto log = testutil::straight_log(100, 10.0);
  for (int i = 0; i < 100; ++i) log.states[static_cast<std::size_t>(i)].lon_accel = (i + 1) / 100.0;
  auto row = compute_indicators(log);
  // ceil(0.95 * 100) = 95th smallest of 0.01..1.00.
  CHECK(value_of(row, "lon_accel_p95") == Catch::Approx(0.95));
  // Lowest 5% = 5 samples: 0.01..0.05.
  CHECK(value_of(row, "lon_accel_trunc_low") == Catch::Approx(0.03));
}

TEST_CASE("no positive acceleration means p95 of zero", "[indicators]") {
  auto log = testutil::straight_log(50, 10.0);
  for (auto& s : log.states) s.lon_accel = -0.5;
  auto row = compute_indicators(log);
  CHECK(value_of(row, "lon_accel_p95") == 0.0);
  CHECK(value_of(row, "lon_accel_trunc_low") == Catch::Approx(-0.5));
}

TEST_CASE("jerk rms on an alternating acceleration profile", "[indicators]") {
  auto log = testutil::straight_log(100, 10.0);
  for (int i = 0; i < 100; ++i) log.states[static_cast<std::size_t>(i)].lon_accel = (i % 2 == 0) ? 0.0 : 1.0;
  auto row = compute_indicators(log);
  // Every consecutive pair differs by 1 over 0.1 s -> |jerk| = 10 throughout.
  CHECK(value_of(row, "jerk_rms") == Catch::Approx(10.0));
}

TEST_CASE("ttc aggregation with a steadily closing lead", "[indicators]") {
  auto log = testutil::straight_log(100, 20.0);
  for (auto& lo : log.lead) lo = LeadObservation{true, 30.0, 10.0};
  auto row = compute_indicators(log);
  CHECK(value_of(row, "mean_ttc") == Catch::Approx(3.0));
  CHECK(value_of(row, "min_ttc") == Catch::Approx(3.0));
  CHECK(value_of(row, "time_headway_mean") == Catch::Approx(30.0 / 20.0));
}

TEST_CASE("undefined ttc samples contribute the 10 s cap", "[indicators]") {
  auto log = testutil::straight_log(100, 20.0);
  auto row = compute_indicators(log);  // no lead at all
  CHECK(value_of(row, "mean_ttc") == Catch::Approx(10.0));
  CHECK(value_of(row, "min_ttc") == Catch::Approx(10.0));
  CHECK(value_of(row, "time_headway_mean") == Catch::Approx(10.0));

  // Receding lead (negative closing speed) is undefined too.
  for (auto& lo : log.lead) lo = LeadObservation{true, 30.0, -5.0};
  row = compute_indicators(log);
  CHECK(value_of(row, "mean_ttc") == Catch::Approx(10.0));

  // Distant defined samples are capped, never above undefined ones.
  for (auto& lo : log.lead) lo = LeadObservation{true, 500.0, 1.0};
  row = compute_indicators(log);
  CHECK(value_of(row, "mean_ttc") == Catch::Approx(10.0));
  CHECK(value_of(row, "min_ttc") == Catch::Approx(10.0));
}

TEST_CASE("lane change detection requires a sustained transition", "[indicators]") {
  auto held = testutil::straight_log(100, 15.0);
  for (std::size_t i = 40; i < 100; ++i) held.states[i].lane_index = 1;  // held 6 s
  CHECK(detect_lane_changes(held) == 1);

  auto flicker = testutil::straight_log(100, 15.0);
  for (std::size_t i = 40; i < 43; ++i) flicker.states[i].lane_index = 1;  // 0.3 s blip
  CHECK(detect_lane_changes(flicker) == 0);

  auto back_and_forth = testutil::straight_log(200, 15.0);
  for (std::size_t i = 50; i < 80; ++i) back_and_forth.states[i].lane_index = 1;   // 3 s
  for (std::size_t i = 120; i < 200; ++i) back_and_forth.states[i].lane_index = 1; // 8 s
  CHECK(detect_lane_changes(back_and_forth) == 3);
}

TEST_CASE("overtake needs a close lead and a timely return", "[indicators]") {
  auto make = [](bool with_lead, std::size_t return_at) {
    auto log = testutil::straight_log(400, 15.0);
    if (with_lead)
      for (std::size_t i = 0; i < 100; ++i) log.lead[i] = LeadObservation{true, 25.0, 5.0};
    for (std::size_t i = 100; i < return_at; ++i) log.states[i].lane_index = 1;
    return log;
  };
  CHECK(detect_overtakes(make(true, 180)) == 1);   // out 8 s, back in time
  CHECK(detect_lane_changes(make(true, 180)) == 2);
  CHECK(detect_overtakes(make(false, 180)) == 0);  // no lead: plain lane changes
  // Return 35 s later misses the 30 s window.
  auto late = testutil::straight_log(500, 15.0);
  for (std::size_t i = 0; i < 100; ++i) late.lead[i] = LeadObservation{true, 25.0, 5.0};
  for (std::size_t i = 100; i < 460; ++i) late.states[i].lane_index = 1;
  CHECK(detect_overtakes(late) == 0);
}

TEST_CASE("brake events are debounced onsets", "[indicators]") {
  auto log = testutil::straight_log(200, 15.0);
  auto pulse = [&](std::size_t from, std::size_t to, double level) {
    for (std::size_t i = from; i < to; ++i) log.states[i].brake = level;
  };
  pulse(10, 20, 0.5);   // event 1
  pulse(40, 50, 0.3);   // event 2 (3 s later)
  pulse(52, 60, 0.3);   // onset 0.2 s after release: debounced
  pulse(100, 110, 0.9); // event 3
  auto row = compute_indicators(log);
  CHECK(value_of(row, "brake_events_per_km") == Catch::Approx(3.0));  // route is 1 km
  // Mean over the 38 braking samples: (10*0.5 + 18*0.3 + 10*0.9) / 38.
  CHECK(value_of(row, "brake_intensity_mean") == Catch::Approx((5.0 + 5.4 + 9.0) / 38.0));
}

TEST_CASE("steering reversals count deadband-filtered sign flips", "[indicators]") {
  auto log = testutil::straight_log(601, 15.0);  // 60 s
  for (std::size_t i = 0; i < log.states.size(); ++i) {
    if (i < 100) log.states[i].steer = 0.1;
    else if (i < 200) log.states[i].steer = -0.1;
    else if (i < 300) log.states[i].steer = 0.02;  // inside deadband, no sign
    else if (i < 400) log.states[i].steer = -0.1;  // same sign as last: no flip
    else log.states[i].steer = 0.1;
  }
  auto row = compute_indicators(log);
  // Flips at i=100 and i=400 over exactly 60 s.
  CHECK(value_of(row, "steering_reversal_rate") == Catch::Approx(2.0));
}

TEST_CASE("stop counting needs a full second at standstill", "[indicators]") {
  auto log = testutil::straight_log(300, 10.0);
  auto stop = [&](std::size_t from, std::size_t to) {
    for (std::size_t i = from; i < to; ++i) log.states[i].speed = 0.0;
  };
  stop(50, 70);    // 1.9 s: counts
  stop(100, 105);  // 0.4 s: too short
  stop(200, 260);  // 5.9 s: counts
  auto row = compute_indicators(log);
  CHECK(value_of(row, "stop_count") == 2.0);
}

TEST_CASE("zero-motion log produces finite indicators", "[indicators]") {
  auto log = testutil::straight_log(100, 0.0);
  auto row = compute_indicators(log);
  for (double v : row.values) CHECK(std::isfinite(v));
  CHECK(value_of(row, "stop_count") == 1.0);
  CHECK(value_of(row, "mean_speed") == 0.0);
}

TEST_CASE("selection score matches the hand-computed spread", "[indicators]") {
  // Driver means 0, 0.5, 1.0 on one indicator: median 0.5, offsets -0.5/0/0.5,
  // population std = sqrt(1/6).
  std::vector<IndicatorVector> rows;
  rows.push_back(synthetic_row("a", "s1", 0, "jerk_rms", 0.0));
  rows.push_back(synthetic_row("b", "s1", 0, "jerk_rms", 0.5));
  rows.push_back(synthetic_row("c", "s1", 0, "jerk_rms", 1.0));
  auto sel = select_top_k(rows, 3);
  const double expected = std::sqrt(1.0 / 6.0);
  CHECK(sel.scores[static_cast<std::size_t>(builtin_catalog().index_of("jerk_rms"))] ==
        Catch::Approx(expected).epsilon(1e-12));
  CHECK(sel.selected_ids[0] == "jerk_rms");
  // Remaining scores are all zero; ties resolve in catalog order.
  CHECK(sel.selected_ids[1] == builtin_catalog().entries[0].id);
  CHECK(sel.selected_ids[2] == builtin_catalog().entries[1].id);
}

TEST_CASE("selection averages per-scenario scores", "[indicators]") {
  std::vector<IndicatorVector> rows;
  rows.push_back(synthetic_row("a", "s1", 0, "jerk_rms", 0.0));
  rows.push_back(synthetic_row("b", "s1", 0, "jerk_rms", 0.5));
  rows.push_back(synthetic_row("c", "s1", 0, "jerk_rms", 1.0));
  rows.push_back(synthetic_row("a", "s2", 0, "jerk_rms", 0.0));
  rows.push_back(synthetic_row("b", "s2", 0, "jerk_rms", 1.0));
  rows.push_back(synthetic_row("c", "s2", 0, "jerk_rms", 2.0));
  auto sel = select_top_k(rows, 1);
  const double expected = 0.5 * (std::sqrt(1.0 / 6.0) + std::sqrt(4.0 / 6.0));
  CHECK(sel.scores[static_cast<std::size_t>(builtin_catalog().index_of("jerk_rms"))] ==
        Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("per-driver means are taken before the spread", "[indicators]") {
  // Two runs per driver; within-driver variation must not inflate the score.
  std::vector<IndicatorVector> rows;
  rows.push_back(synthetic_row("a", "s1", 0, "max_speed", 10.0));
  rows.push_back(synthetic_row("a", "s1", 1, "max_speed", 20.0));  // mean 15
  rows.push_back(synthetic_row("b", "s1", 0, "max_speed", 14.0));
  rows.push_back(synthetic_row("b", "s1", 1, "max_speed", 16.0));  // mean 15
  auto sel = select_top_k(rows, 1);
  CHECK(sel.scores[static_cast<std::size_t>(builtin_catalog().index_of("max_speed"))] ==
        Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("selection rejects degenerate inputs", "[indicators]") {
  std::vector<IndicatorVector> rows;
  rows.push_back(synthetic_row("a", "s1", 0, "jerk_rms", 1.0));
  CHECK_THROWS_AS(select_top_k(rows, 1), ValidationError);  // one driver
  rows.push_back(synthetic_row("b", "s1", 0, "jerk_rms", 2.0));
  CHECK_THROWS_AS(select_top_k(rows, 0), ValidationError);
  CHECK_THROWS_AS(select_top_k(rows, 17), ValidationError);
  CHECK_THROWS_AS(select_top_k({}, 1), ValidationError);
}

TEST_CASE("indicator CSV round trips", "[indicators]") {
  std::vector<IndicatorVector> rows;
  for (int i = 0; i < 6; ++i) {
    auto log = testutil::random_log(9000 + static_cast<std::uint64_t>(i));
    rows.push_back(compute_indicators(log));
  }
  const std::string csv = write_indicator_csv(rows);
  auto back = parse_indicator_csv(csv);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].driver_id == rows[i].driver_id);
    CHECK(back[i].scenario_id == rows[i].scenario_id);
    CHECK(back[i].run_index == rows[i].run_index);
    for (std::size_t d = 0; d < rows[i].values.size(); ++d)
      CHECK(back[i].values[d] == rows[i].values[d]);
  }
  CHECK(write_indicator_csv(back) == csv);
  CHECK_THROWS_AS(parse_indicator_csv("a,b\n"), ParseError);
}

TEST_CASE("selection JSON round trips", "[indicators]") {
  std::vector<IndicatorVector> rows;
  rows.push_back(synthetic_row("a", "s1", 0, "jerk_rms", 0.0));
  rows.push_back(synthetic_row("b", "s1", 0, "jerk_rms", 0.5));
  rows.push_back(synthetic_row("c", "s1", 0, "jerk_rms", 1.0));
  auto sel = select_top_k(rows, 10);
  auto j = selection_to_json(sel);
  auto back = selection_from_json(j);
  CHECK(back.selected_ids == sel.selected_ids);
  for (std::size_t i = 0; i < sel.scores.size(); ++i) CHECK(back.scores[i] == sel.scores[i]);
}
