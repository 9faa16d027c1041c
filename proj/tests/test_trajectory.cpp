#include <catch2/catch_amalgamated.hpp>

#include "drivestyle/log_io.hpp"
#include "drivestyle/trajectory.hpp"
#include "helpers.hpp"

using namespace drivestyle;

TEST_CASE("normalize_angle maps into (-pi, pi]", "[trajectory]") {
  CHECK(normalize_angle(0.0) == 0.0);
  CHECK(normalize_angle(kPi) == Catch::Approx(kPi));
  CHECK(normalize_angle(-kPi) == Catch::Approx(kPi));
  CHECK(normalize_angle(3.0 * kPi / 2.0) == Catch::Approx(-kPi / 2.0));
  CHECK(normalize_angle(-3.0 * kPi / 2.0) == Catch::Approx(kPi / 2.0));
  CHECK(normalize_angle(5.0 * kPi) == Catch::Approx(kPi));
}

TEST_CASE("normalize_angle is idempotent on its outputs", "[trajectory]") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 1000; ++i) {
    const double a = uniform_range(rng, -50.0, 50.0);
    const double once = normalize_angle(a);
    CHECK(once > -kPi);
    CHECK(once <= kPi);
    CHECK(normalize_angle(once) == once);
  }
}

TEST_CASE("slice_segments window arithmetic", "[trajectory]") {
  // 8 waypoints spaced 0.5 s need 36 samples at 10 Hz.
  CHECK(slice_segments(testutil::straight_log(36, 10.0), 10).size() == 1);
  CHECK(slice_segments(testutil::straight_log(35, 10.0), 10).size() == 0);
  CHECK(slice_segments(testutil::straight_log(100, 10.0), 10).size() == 7);
  CHECK(slice_segments(testutil::straight_log(100, 10.0), 1).size() == 65);
  CHECK(slice_segments(testutil::straight_log(71, 10.0), 5).size() == 8);
}

TEST_CASE("slice_segments expresses waypoints in the first pose frame", "[trajectory]") {
  auto segs = slice_segments(testutil::straight_log(36, 10.0), 10);
  REQUIRE(segs.size() == 1);
  for (int p = 0; p < kTrajectoryPoints; ++p) {
    CHECK(segs[0].points[p].x == Catch::Approx(5.0 * p).margin(1e-12));
    CHECK(segs[0].points[p].y == Catch::Approx(0.0).margin(1e-12));
    CHECK(segs[0].points[p].heading == Catch::Approx(0.0).margin(1e-12));
  }
  auto v = segment_speeds(segs[0]);
  for (double s : v) CHECK(s == Catch::Approx(10.0).margin(1e-9));
}

TEST_CASE("slice_segments is invariant under rigid world transforms", "[trajectory]") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    TrajectoryLog log = testutil::random_log(1000 + trial);
    TrajectoryLog moved = log;
    const double tx = uniform_range(rng, -500.0, 500.0);
    const double ty = uniform_range(rng, -500.0, 500.0);
    const double th = uniform_range(rng, -kPi, kPi);
    const double c = std::cos(th), s = std::sin(th);
    for (auto& st : moved.states) {
      const double nx = tx + c * st.x - s * st.y;
      const double ny = ty + s * st.x + c * st.y;
      st.x = nx;
      st.y = ny;
      st.heading = normalize_angle(st.heading + th);
    }
    auto a = slice_segments(log, 7);
    auto b = slice_segments(moved, 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (int p = 0; p < kTrajectoryPoints; ++p) {
        CHECK(a[i].points[p].x == Catch::Approx(b[i].points[p].x).margin(1e-9));
        CHECK(a[i].points[p].y == Catch::Approx(b[i].points[p].y).margin(1e-9));
        CHECK(std::fabs(normalize_angle(a[i].points[p].heading - b[i].points[p].heading)) < 1e-9);
      }
  }
}

TEST_CASE("validate rejects malformed logs with a named reason", "[trajectory]") {
  auto ok = testutil::straight_log(40, 5.0);
  REQUIRE_NOTHROW(ok.validate());

  auto bad_time = ok;
  bad_time.states[2].t = bad_time.states[1].t;
  CHECK_THROWS_WITH(bad_time.validate(), Catch::Matchers::ContainsSubstring("non-monotonic time"));

  auto bad_rate = ok;
  bad_rate.sample_rate_hz = 20.0;
  CHECK_THROWS_WITH(bad_rate.validate(), Catch::Matchers::ContainsSubstring("sample_rate_hz"));

  auto bad_speed = ok;
  bad_speed.states[5].speed = -1.0;
  CHECK_THROWS_WITH(bad_speed.validate(), Catch::Matchers::ContainsSubstring("negative speed"));

  auto bad_throttle = ok;
  bad_throttle.states[0].throttle = 1.5;
  CHECK_THROWS_WITH(bad_throttle.validate(), Catch::Matchers::ContainsSubstring("throttle"));

  auto bad_len = ok;
  bad_len.route_length_m = 0.0;
  CHECK_THROWS_WITH(bad_len.validate(), Catch::Matchers::ContainsSubstring("route_length_m"));

  auto bad_lead = ok;
  bad_lead.lead.pop_back();
  CHECK_THROWS_WITH(bad_lead.validate(), Catch::Matchers::ContainsSubstring("lead observation count"));
}

TEST_CASE("JSONL round trip is exact for randomized valid logs", "[trajectory]") {
  for (int trial = 0; trial < 25; ++trial) {
    TrajectoryLog log = testutil::random_log(5000 + trial);
    TrajectoryLog back = parse_log(write_log(log));
    REQUIRE(back.states.size() == log.states.size());
    CHECK(back.driver_id == log.driver_id);
    CHECK(back.scenario_id == log.scenario_id);
    CHECK(back.run_index == log.run_index);
    CHECK(back.sample_rate_hz == log.sample_rate_hz);
    CHECK(back.route_length_m == log.route_length_m);
    for (std::size_t i = 0; i < log.states.size(); ++i) {
      CHECK(back.states[i].t == log.states[i].t);
      CHECK(back.states[i].x == log.states[i].x);
      CHECK(back.states[i].y == log.states[i].y);
      CHECK(back.states[i].heading == log.states[i].heading);
      CHECK(back.states[i].speed == log.states[i].speed);
      CHECK(back.states[i].lon_accel == log.states[i].lon_accel);
      CHECK(back.states[i].throttle == log.states[i].throttle);
      CHECK(back.states[i].brake == log.states[i].brake);
      CHECK(back.states[i].steer == log.states[i].steer);
      CHECK(back.states[i].lane_index == log.states[i].lane_index);
      CHECK(back.lead[i].present == log.lead[i].present);
      CHECK(back.lead[i].gap == log.lead[i].gap);
      CHECK(back.lead[i].rel_speed == log.lead[i].rel_speed);
    }
    // Byte-identical on re-serialization as well.
    CHECK(write_log(back) == write_log(log));
  }
}

TEST_CASE("parse_log reports the offending line", "[trajectory]") {
  std::string text = write_log(testutil::straight_log(40, 5.0));
  // Corrupt the third line (second sample).
  std::size_t p1 = text.find('\n');
  std::size_t p2 = text.find('\n', p1 + 1);
  std::size_t p3 = text.find('\n', p2 + 1);
  std::string broken = text.substr(0, p2 + 1) + "{not json}\n" + text.substr(p3 + 1);
  try {
    parse_log(broken);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("line 3"));
  }

  std::string no_field = text;
  std::size_t pos = no_field.find("\"speed\"");
  REQUIRE(pos != std::string::npos);
  no_field.replace(pos, 7, "\"spd__\"");
  CHECK_THROWS_AS(parse_log(no_field), ParseError);

  CHECK_THROWS_WITH(parse_log("\n\n"), Catch::Matchers::ContainsSubstring("header"));
}

TEST_CASE("parse_log rejects non-monotonic time with a clear error", "[trajectory]") {
  auto log = testutil::straight_log(40, 5.0);
  std::string text = write_log(log);
  log.states[3].t = log.states[2].t;  // now invalid; serialize by hand
  std::string broken = text;
  const std::string needle = "\"t\":" + fmt_double(3 * kSampleDt);
  std::size_t pos = broken.find(needle);
  REQUIRE(pos != std::string::npos);
  broken.replace(pos, needle.size(), "\"t\":" + fmt_double(2 * kSampleDt));
  CHECK_THROWS_WITH(parse_log(broken), Catch::Matchers::ContainsSubstring("non-monotonic"));
}
