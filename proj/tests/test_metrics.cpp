#include <catch2/catch_amalgamated.hpp>

#include "drivestyle/metrics.hpp"
#include "helpers.hpp"

using namespace drivestyle;

namespace {

std::vector<Sample> gaussian_cloud(std::uint64_t seed, std::size_t n, std::size_t dim,
                                   double mu, double sigma) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out(n, Sample(dim));
  for (auto& s : out)
    for (auto& v : s) v = mu + sigma * gaussian(rng);
  return out;
}

}  // namespace

TEST_CASE("rbf kernel basics", "[metrics]") {
  Sample a{1.0, 2.0}, b{1.0, 2.0}, c{2.0, 2.0};
  CHECK(rbf_kernel(a, b, 0.7) == 1.0);
  CHECK(rbf_kernel(a, c, 0.5) == Catch::Approx(std::exp(-0.5)));
  CHECK_THROWS_AS(rbf_kernel(a, Sample{1.0}, 0.5), ValidationError);
  CHECK_THROWS_AS(rbf_kernel(a, b, 0.0), ValidationError);
}

TEST_CASE("mmd squared matches the two-point hand computation", "[metrics]") {
  // X = {0}, Y = {1} in 1-D with gamma 0.5: 1 + 1 - 2 exp(-0.5).
  std::vector<Sample> x{{0.0}}, y{{1.0}};
  const double expected = 2.0 - 2.0 * std::exp(-0.5);
  CHECK(mmd_squared(x, y, 0.5) == Catch::Approx(expected).epsilon(1e-14));
  CHECK(mmdss(x, y, 0.5) == Catch::Approx(1.0 / (1.0 + std::sqrt(expected))).epsilon(1e-14));
}

TEST_CASE("identical sample sets score exactly 1", "[metrics]") {
  for (int trial = 0; trial < 10; ++trial) {
    auto x = gaussian_cloud(100 + static_cast<std::uint64_t>(trial), 17, 10, 0.3, 0.2);
    CHECK(std::fabs(mmd_squared(x, x, 0.8)) < 1e-9);
    CHECK(std::fabs(mmdss(x, x, 0.8) - 1.0) < 1e-9);
    CHECK(std::fabs(mmdss(x, x) - 1.0) < 1e-9);
  }
}

TEST_CASE("mmdss is symmetric and bounded", "[metrics]") {
  for (int trial = 0; trial < 10; ++trial) {
    auto x = gaussian_cloud(200 + static_cast<std::uint64_t>(trial), 12, 10, 0.4, 0.25);
    auto y = gaussian_cloud(300 + static_cast<std::uint64_t>(trial), 15, 10, 0.6, 0.15);
    const double gamma = 1.3;
    const double sxy = mmdss(x, y, gamma);
    const double syx = mmdss(y, x, gamma);
    CHECK(sxy == Catch::Approx(syx).epsilon(1e-12));
    CHECK(sxy > 0.0);
    CHECK(sxy <= 1.0);
  }
}

TEST_CASE("mmd grows with mean separation", "[metrics]") {
  auto x = gaussian_cloud(400, 40, 10, 0.5, 0.1);
  const double gamma = 2.0;
  double prev = -1.0;
  for (double shift : {0.0, 0.1, 0.2, 0.4, 0.8}) {
    auto y = gaussian_cloud(500, 40, 10, 0.5 + shift, 0.1);
    const double m = mmd_squared(x, y, gamma);
    CHECK(m > prev);
    prev = m;
  }
}

TEST_CASE("median heuristic bandwidth", "[metrics]") {
  // Distances 3-4-5 triangle: pooled pairwise distances {3, 4, 5}, median 4.
  std::vector<Sample> pooled{{0.0, 0.0}, {3.0, 0.0}, {3.0, 4.0}};
  CHECK(median_heuristic_gamma(pooled) == Catch::Approx(1.0 / 32.0).epsilon(1e-14));
  // All identical points: sigma falls back to 1 -> gamma 0.5.
  std::vector<Sample> same{{2.0, 2.0}, {2.0, 2.0}, {2.0, 2.0}};
  CHECK(median_heuristic_gamma(same) == Catch::Approx(0.5));
}

TEST_CASE("kl matches the closed-form Gaussian hand computation", "[metrics]") {
  // Moments X: mean 0, var 1; Y: mean 1, var 1 -> KL = 0.5.
  // Two-point sets {-1, 1} (mean 0, population var 1) and {0, 2} (mean 1, var 1).
  std::vector<Sample> x{{-1.0}, {1.0}};
  std::vector<Sample> y{{0.0}, {2.0}};
  CHECK(kl_divergence(x, y) == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(kl_divergence(x, x) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("kl divergence is nonnegative and asymmetric", "[metrics]") {
  auto x = gaussian_cloud(600, 30, 10, 0.4, 0.3);
  auto y = gaussian_cloud(700, 25, 10, 0.7, 0.1);
  CHECK(kl_divergence(x, y) >= 0.0);
  CHECK(kl_divergence(y, x) >= 0.0);
  CHECK(kl_divergence(x, y) != Catch::Approx(kl_divergence(y, x)));
  CHECK_THROWS_AS(kl_divergence({{1.0}}, {{0.0}, {1.0}}), ValidationError);
}

TEST_CASE("variance floor keeps degenerate sets finite", "[metrics]") {
  std::vector<Sample> point{{0.5}, {0.5}, {0.5}};
  std::vector<Sample> spread{{0.0}, {1.0}};
  CHECK(std::isfinite(kl_divergence(point, spread)));
  CHECK(std::isfinite(kl_divergence(spread, point)));
  CHECK(kl_divergence(point, point) == 0.0);
}

TEST_CASE("scenario minmax normalizes into the unit interval", "[metrics]") {
  std::vector<IndicatorVector> rows;
  for (int i = 0; i < 12; ++i)
    rows.push_back(compute_indicators(testutil::random_log(400 + static_cast<std::uint64_t>(i))));
  auto normalized = scenario_minmax(rows);
  REQUIRE(normalized.size() == rows.size());
  for (const auto& r : normalized)
    for (double v : r.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  // Extremes map to 0 and 1 per scenario and column unless degenerate.
  auto stats = compute_scenario_stats(rows);
  for (const auto& [scenario, mins] : stats.min_by_scenario) {
    const auto& maxs = stats.max_by_scenario.at(scenario);
    for (std::size_t d = 0; d < mins.size(); ++d) {
      if (maxs[d] <= mins[d]) continue;
      double lo = 2.0, hi = -1.0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].scenario_id != scenario) continue;
        lo = std::min(lo, normalized[i].values[d]);
        hi = std::max(hi, normalized[i].values[d]);
      }
      CHECK(lo == Catch::Approx(0.0).margin(1e-12));
      CHECK(hi == Catch::Approx(1.0).margin(1e-12));
    }
  }
}

TEST_CASE("degenerate normalization column maps to one half", "[metrics]") {
  std::vector<IndicatorVector> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[static_cast<std::size_t>(i)].driver_id = "d" + std::to_string(i);
    rows[static_cast<std::size_t>(i)].scenario_id = "s";
    rows[static_cast<std::size_t>(i)].values.assign(builtin_catalog().size(), 7.5);
  }
  auto normalized = scenario_minmax(rows);
  for (const auto& r : normalized)
    for (double v : r.values) CHECK(v == 0.5);
}

TEST_CASE("normalization stats round trip through JSON", "[metrics]") {
  std::vector<IndicatorVector> rows;
  for (int i = 0; i < 8; ++i)
    rows.push_back(compute_indicators(testutil::random_log(800 + static_cast<std::uint64_t>(i))));
  auto stats = compute_scenario_stats(rows);
  auto back = ScenarioNormStats::from_json(stats.to_json());
  REQUIRE(back.min_by_scenario.size() == stats.min_by_scenario.size());
  for (const auto& [scenario, mins] : stats.min_by_scenario) {
    for (std::size_t d = 0; d < mins.size(); ++d) {
      CHECK(back.min_by_scenario.at(scenario)[d] == mins[d]);
      CHECK(back.max_by_scenario.at(scenario)[d] == stats.max_by_scenario.at(scenario)[d]);
    }
  }
}

TEST_CASE("similarity report separates tight and shifted clouds", "[metrics]") {
  std::vector<StyleDistribution> dists;
  dists.push_back({"a", gaussian_cloud(900, 24, 10, 0.3, 0.05)});
  dists.push_back({"b", gaussian_cloud(901, 24, 10, 0.5, 0.05)});
  dists.push_back({"c", gaussian_cloud(902, 24, 10, 0.7, 0.05)});
  auto rep = similarity_report(dists, 77);

  REQUIRE(rep.labels.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::fabs(rep.mmdss_matrix[i][i] - 1.0) < 1e-9);
    CHECK(rep.kl_matrix[i][i] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(rep.intra_mmdss[i].has_value());
    CHECK(*rep.intra_mmdss[i] > rep.inter_mean_mmdss);
  }
  CHECK(rep.intra_mean_mmdss > rep.inter_mean_mmdss);
  CHECK(rep.intra_mean_kl < rep.inter_mean_kl);
  CHECK(rep.gamma > 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(rep.mmdss_matrix[i][j] == Catch::Approx(rep.mmdss_matrix[j][i]).epsilon(1e-12));

  // Same seed reproduces the report bit for bit; JSON emission is stable.
  auto rep2 = similarity_report(dists, 77);
  CHECK(similarity_to_json(rep).dump() == similarity_to_json(rep2).dump());
  auto rep3 = similarity_report(dists, 78);
  CHECK(rep3.gamma == rep.gamma);  // gamma ignores the split seed
}

TEST_CASE("similarity report rejects undersized inputs", "[metrics]") {
  std::vector<StyleDistribution> one;
  one.push_back({"a", gaussian_cloud(950, 10, 10, 0.5, 0.1)});
  CHECK_THROWS_AS(similarity_report(one, 1), ValidationError);
  one.push_back({"b", {{0.1}}});
  CHECK_THROWS_AS(similarity_report(one, 1), ValidationError);
}
