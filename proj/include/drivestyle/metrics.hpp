#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/indicators.hpp"

namespace drivestyle {

// Style vectors produced by the pipeline have this many dimensions, though
// every metric below works for any consistent dimension.
constexpr int kStyleDim = 10;

constexpr double kKlVarianceFloor = 1e-6;

using Sample = std::vector<double>;

// A labeled bag of style vectors, e.g. one driver's normalized indicators.
struct StyleDistribution {
  std::string label;
  std::vector<Sample> samples;
};

namespace detail {

inline void check_samples(const std::vector<Sample>& s, const char* who) {
  if (s.empty()) throw ValidationError(std::string(who) + ": empty sample set");
  const std::size_t dim = s.front().size();
  if (dim == 0) throw ValidationError(std::string(who) + ": zero-dimensional samples");
  for (const auto& x : s) {
    if (x.size() != dim) throw ValidationError(std::string(who) + ": inconsistent sample dimensions");
    for (double v : x)
      if (!std::isfinite(v)) throw ValidationError(std::string(who) + ": non-finite sample value");
  }
}

inline double sq_dist(const Sample& a, const Sample& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

inline double rbf_kernel(const Sample& a, const Sample& b, double gamma) {
  if (a.size() != b.size()) throw ValidationError("rbf_kernel: dimension mismatch");
  if (!(gamma > 0.0)) throw ValidationError("rbf_kernel: gamma must be positive");
  return std::exp(-gamma * detail::sq_dist(a, b));
}

// gamma = 1 / (2 sigma^2) with sigma the median pairwise distance over the
// pooled samples; sigma of 0 (all points coincide) falls back to 1.
inline double median_heuristic_gamma(const std::vector<Sample>& pooled) {
  detail::check_samples(pooled, "median_heuristic_gamma");
  std::vector<double> dists;
  dists.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j)
      dists.push_back(std::sqrt(detail::sq_dist(pooled[i], pooled[j])));
  double sigma = dists.empty() ? 0.0 : median_of(dists);
  if (sigma <= 0.0) sigma = 1.0;
  return 1.0 / (2.0 * sigma * sigma);
}

// Biased V-statistic with diagonal terms. All three sums run over the full
// index grids, so mmd_squared(X, X) cancels to exactly 0 in floating point.
inline double mmd_squared(const std::vector<Sample>& x, const std::vector<Sample>& y, double gamma) {
  detail::check_samples(x, "mmd_squared");
  detail::check_samples(y, "mmd_squared");
  if (x.front().size() != y.front().size()) throw ValidationError("mmd_squared: dimension mismatch");
  const double m = static_cast<double>(x.size());
  const double n = static_cast<double>(y.size());
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (const auto& a : x)
    for (const auto& b : x) kxx += rbf_kernel(a, b, gamma);
  for (const auto& a : y)
    for (const auto& b : y) kyy += rbf_kernel(a, b, gamma);
  for (const auto& a : x)
    for (const auto& b : y) kxy += rbf_kernel(a, b, gamma);
  return kxx / (m * m) + kyy / (n * n) - 2.0 * kxy / (m * n);
}

// Similarity score in (0, 1]: 1 / (1 + MMD), with MMD the square root of the
// clamped V-statistic. Identical distributions score exactly 1.
inline double mmdss(const std::vector<Sample>& x, const std::vector<Sample>& y, double gamma) {
  return 1.0 / (1.0 + std::sqrt(std::max(0.0, mmd_squared(x, y, gamma))));
}

inline double mmdss(const std::vector<Sample>& x, const std::vector<Sample>& y) {
  std::vector<Sample> pooled = x;
  pooled.insert(pooled.end(), y.begin(), y.end());
  return mmdss(x, y, median_heuristic_gamma(pooled));
}

// KL divergence between diagonal Gaussians moment-matched to each sample set
// (population variance, floored at 1e-6), averaged over dimensions.
inline double kl_divergence(const std::vector<Sample>& x, const std::vector<Sample>& y) {
  detail::check_samples(x, "kl_divergence");
  detail::check_samples(y, "kl_divergence");
  if (x.front().size() != y.front().size()) throw ValidationError("kl_divergence: dimension mismatch");
  if (x.size() < 2 || y.size() < 2)
    throw ValidationError("kl_divergence: needs at least 2 samples per side");
  const std::size_t dim = x.front().size();
  double total = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    double mu1 = 0.0, mu2 = 0.0;
    for (const auto& s : x) mu1 += s[d];
    for (const auto& s : y) mu2 += s[d];
    mu1 /= static_cast<double>(x.size());
    mu2 /= static_cast<double>(y.size());
    double v1 = 0.0, v2 = 0.0;
    for (const auto& s : x) v1 += (s[d] - mu1) * (s[d] - mu1);
    for (const auto& s : y) v2 += (s[d] - mu2) * (s[d] - mu2);
    v1 = std::max(v1 / static_cast<double>(x.size()), kKlVarianceFloor);
    v2 = std::max(v2 / static_cast<double>(y.size()), kKlVarianceFloor);
    total += 0.5 * std::log(v2 / v1) + (v1 + (mu1 - mu2) * (mu1 - mu2)) / (2.0 * v2) - 0.5;
  }
  // Analytically nonnegative; the clamp only absorbs rounding at ~1e-16.
  return std::max(0.0, total / static_cast<double>(dim));
}

// --- scenario-conditioned min-max normalization -------------------------------

// Per-scenario, per-indicator min and max over a corpus of raw rows.
struct ScenarioNormStats {
  std::map<std::string, std::vector<double>> min_by_scenario;
  std::map<std::string, std::vector<double>> max_by_scenario;

  nlohmann::json to_json(const IndicatorCatalog& catalog = builtin_catalog()) const {
    nlohmann::json scenarios = nlohmann::json::object();
    for (const auto& [scenario, mins] : min_by_scenario) {
      nlohmann::json per = nlohmann::json::object();
      const auto& maxs = max_by_scenario.at(scenario);
      for (std::size_t i = 0; i < catalog.size(); ++i)
        per[catalog.entries[i].id] = {{"min", mins[i]}, {"max", maxs[i]}};
      scenarios[scenario] = per;
    }
    return nlohmann::json{{"scenarios", scenarios}};
  }

  static ScenarioNormStats from_json(const nlohmann::json& j,
                                     const IndicatorCatalog& catalog = builtin_catalog()) {
    if (!j.contains("scenarios")) throw ValidationError("norm stats JSON needs \"scenarios\"");
    ScenarioNormStats st;
    for (const auto& [scenario, per] : j.at("scenarios").items()) {
      std::vector<double> mins(catalog.size()), maxs(catalog.size());
      for (std::size_t i = 0; i < catalog.size(); ++i) {
        const auto& id = catalog.entries[i].id;
        if (!per.contains(id)) throw ValidationError("norm stats JSON missing indicator " + id);
        mins[i] = per.at(id).at("min").get<double>();
        maxs[i] = per.at(id).at("max").get<double>();
      }
      st.min_by_scenario[scenario] = std::move(mins);
      st.max_by_scenario[scenario] = std::move(maxs);
    }
    return st;
  }
};

inline ScenarioNormStats compute_scenario_stats(const std::vector<IndicatorVector>& rows,
                                                const IndicatorCatalog& catalog = builtin_catalog()) {
  if (rows.empty()) throw ValidationError("compute_scenario_stats: no rows");
  ScenarioNormStats st;
  for (const auto& r : rows) {
    if (r.values.size() != catalog.size())
      throw ValidationError("compute_scenario_stats: row width does not match catalog");
    auto [mins_it, fresh] = st.min_by_scenario.try_emplace(r.scenario_id, r.values);
    auto maxs_it = st.max_by_scenario.try_emplace(r.scenario_id, r.values).first;
    if (!fresh)
      for (std::size_t i = 0; i < r.values.size(); ++i) {
        mins_it->second[i] = std::min(mins_it->second[i], r.values[i]);
        maxs_it->second[i] = std::max(maxs_it->second[i], r.values[i]);
      }
  }
  return st;
}

// Min-max into [0, 1] with the stats of the row's scenario; degenerate columns
// (max == min) map to 0.5, and out-of-range values clamp to the edges.
inline double normalize_indicator(const ScenarioNormStats& st, const std::string& scenario_id,
                                  std::size_t index, double v) {
  auto mins_it = st.min_by_scenario.find(scenario_id);
  if (mins_it == st.min_by_scenario.end())
    throw ValidationError("normalize_indicator: unknown scenario \"" + scenario_id + "\"");
  const double lo = mins_it->second[index];
  const double hi = st.max_by_scenario.at(scenario_id)[index];
  if (hi <= lo) return 0.5;
  return clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

inline std::vector<IndicatorVector> apply_scenario_minmax(const std::vector<IndicatorVector>& rows,
                                                          const ScenarioNormStats& st) {
  std::vector<IndicatorVector> out = rows;
  for (auto& r : out)
    for (std::size_t i = 0; i < r.values.size(); ++i)
      r.values[i] = normalize_indicator(st, r.scenario_id, i, r.values[i]);
  return out;
}

inline std::vector<IndicatorVector> scenario_minmax(const std::vector<IndicatorVector>& rows) {
  return apply_scenario_minmax(rows, compute_scenario_stats(rows));
}

// --- pairwise similarity report ------------------------------------------------

// Cross-distribution similarity matrices plus per-distribution cohesion from a
// seeded half-split. One pooled median-heuristic gamma covers every pair so
// the entries are mutually comparable.
struct SimilarityReport {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> mmdss_matrix;
  std::vector<std::vector<double>> kl_matrix;
  std::vector<std::optional<double>> intra_mmdss;  // per label; empty if < 4 samples
  std::vector<std::optional<double>> intra_kl;
  double intra_mean_mmdss = 0.0;
  double inter_mean_mmdss = 0.0;
  double intra_mean_kl = 0.0;
  double inter_mean_kl = 0.0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
};

inline SimilarityReport similarity_report(const std::vector<StyleDistribution>& dists,
                                          std::uint64_t seed) {
  if (dists.size() < 2) throw ValidationError("similarity_report: needs at least 2 distributions");
  for (const auto& d : dists) {
    detail::check_samples(d.samples, "similarity_report");
    if (d.samples.size() < 2)
      throw ValidationError("similarity_report: distribution \"" + d.label + "\" has fewer than 2 samples");
  }
  std::vector<Sample> pooled;
  for (const auto& d : dists) pooled.insert(pooled.end(), d.samples.begin(), d.samples.end());

  SimilarityReport rep;
  rep.seed = seed;
  rep.gamma = median_heuristic_gamma(pooled);
  const std::size_t n = dists.size();
  rep.labels.reserve(n);
  for (const auto& d : dists) rep.labels.push_back(d.label);
  rep.mmdss_matrix.assign(n, std::vector<double>(n, 0.0));
  rep.kl_matrix.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      rep.mmdss_matrix[i][j] = mmdss(dists[i].samples, dists[j].samples, rep.gamma);
      rep.kl_matrix[i][j] = kl_divergence(dists[i].samples, dists[j].samples);
    }

  // Cohesion: split each distribution into seeded halves and compare them.
  // KL of a half-split is direction-dependent, so it is symmetrized.
  rep.intra_mmdss.resize(n);
  rep.intra_kl.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = dists[i].samples;
    if (s.size() < 4) continue;
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    deterministic_shuffle(idx, rng);
    std::vector<Sample> a, b;
    for (std::size_t k = 0; k < idx.size(); ++k)
      (k < idx.size() / 2 ? a : b).push_back(s[idx[k]]);
    rep.intra_mmdss[i] = mmdss(a, b, rep.gamma);
    rep.intra_kl[i] = 0.5 * (kl_divergence(a, b) + kl_divergence(b, a));
  }

  double intra_m = 0.0, intra_k = 0.0;
  int intra_count = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (rep.intra_mmdss[i]) {
      intra_m += *rep.intra_mmdss[i];
      intra_k += *rep.intra_kl[i];
      ++intra_count;
    }
  if (intra_count > 0) {
    rep.intra_mean_mmdss = intra_m / intra_count;
    rep.intra_mean_kl = intra_k / intra_count;
  }
  double inter_m = 0.0, inter_k = 0.0;
  int pairs = 0, ordered = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      inter_k += rep.kl_matrix[i][j];
      ++ordered;
      if (i < j) {
        inter_m += rep.mmdss_matrix[i][j];
        ++pairs;
      }
    }
  rep.inter_mean_mmdss = inter_m / pairs;
  rep.inter_mean_kl = inter_k / ordered;
  return rep;
}

inline nlohmann::json similarity_to_json(const SimilarityReport& rep) {
  auto opt_list = [](const std::vector<std::optional<double>>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& o : v)
      out.push_back(o ? nlohmann::json(*o) : nlohmann::json(nullptr));
    return out;
  };
  return nlohmann::json{
      {"labels", rep.labels},
      {"mmdss", rep.mmdss_matrix},
      {"kl", rep.kl_matrix},
      {"intra", {{"mmdss", rep.intra_mean_mmdss},
                 {"kl", rep.intra_mean_kl},
                 {"per_label_mmdss", opt_list(rep.intra_mmdss)},
                 {"per_label_kl", opt_list(rep.intra_kl)}}},
      {"inter", {{"mmdss", rep.inter_mean_mmdss}, {"kl", rep.inter_mean_kl}}},
      {"gamma", rep.gamma},
      {"seed", rep.seed},
  };
}

}  // namespace drivestyle
