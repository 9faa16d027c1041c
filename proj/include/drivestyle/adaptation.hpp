#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/indicators.hpp"
#include "drivestyle/metrics.hpp"
#include "drivestyle/planner.hpp"
#include "drivestyle/reward_model.hpp"

namespace drivestyle {

enum class Variant { kDft, kPdsaWb, kPdsa };

inline std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::kDft: return "dft";
    case Variant::kPdsaWb: return "pdsa-wb";
    default: return "pdsa";
  }
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "dft") return Variant::kDft;
  if (s == "pdsa-wb") return Variant::kPdsaWb;
  if (s == "pdsa") return Variant::kPdsa;
  throw ValidationError("unknown variant '" + s + "' (expected dft, pdsa-wb, or pdsa)");
}

// Context handed to the reward model during fine-tuning. The style-blind
// variant zeroes it out; the full variant forwards the scenario descriptor.
inline std::vector<double> reward_context(Variant v,
                                          const std::array<double, kPlannerContextDim>& scenario_ctx,
                                          int context_dim) {
  std::vector<double> ctx(static_cast<std::size_t>(context_dim), 0.0);
  if (v == Variant::kPdsa) {
    const int n = std::min(context_dim, kPlannerContextDim);
    for (int i = 0; i < n; ++i) ctx[static_cast<std::size_t>(i)] = scenario_ctx[static_cast<std::size_t>(i)];
  }
  return ctx;
}

struct StyleLossResult {
  double loss = 0.0;
  Eigen::VectorXd g_head;  // gradient w.r.t. the planner head output
};

namespace detail {

// Input gradient of the reward MSE without the parameter gradients the
// frozen-reward objective never needs.
inline double reward_input_grad(const RewardNetParams& p, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& target, Eigen::VectorXd& g_input) {
  const auto cache = reward_forward(p, x, NetMode::kEval);
  const Eigen::VectorXd err = cache.out - target;
  const double loss = err.squaredNorm() / kStyleDim;
  const Eigen::VectorXd g_out = (2.0 / kStyleDim) * err;
  const Eigen::VectorXd g_z2 =
      (p.w3.transpose() * g_out).cwiseProduct((cache.z2.array() > 0.0).cast<double>().matrix());
  const Eigen::VectorXd g_z1 =
      (p.w2.transpose() * g_z2).cwiseProduct((cache.z1.array() > 0.0).cast<double>().matrix());
  g_input = p.w1.transpose() * g_z1;
  return loss;
}

}  // namespace detail

// Inverse of decode_head for the coordinate block; logits are left at zero.
inline Eigen::VectorXd encode_head(const ProposalSet& set) {
  Eigen::VectorXd head = Eigen::VectorXd::Zero(kPlannerHeadDim);
  for (int k = 0; k < kNumProposals; ++k) {
    for (int pt = 0; pt < kTrajectoryPoints; ++pt) {
      const auto& w = set.proposals[static_cast<std::size_t>(k)].points[static_cast<std::size_t>(pt)];
      const int base = k * kRewardCoordDim + 3 * pt;
      head(base) = w.x / coord_scale(0);
      head(base + 1) = w.y / coord_scale(1);
      head(base + 2) = w.heading / coord_scale(2);
    }
    head(kNumProposals * kRewardCoordDim + k) = set.confidences[static_cast<std::size_t>(k)];
  }
  return head;
}

// Style objective: every proposal's predicted style vector is pulled toward
// the target with mean squared error, summed over the 20 proposals. The
// reward network stays frozen; gradients pass through its input, through the
// feature normalization, and into the head's coordinate block (confidence
// logits receive none).
inline StyleLossResult style_loss(const Eigen::VectorXd& head, const RewardNetParams& reward,
                                  const std::vector<double>& context,
                                  const Eigen::VectorXd& target_style) {
  if (head.size() != kPlannerHeadDim) throw ValidationError("style_loss: bad head size");
  if (target_style.size() != kStyleDim) throw ValidationError("style_loss: bad target size");
  if (static_cast<int>(context.size()) != reward.context_dim)
    throw ValidationError("style_loss: context size does not match the reward model");

  StyleLossResult result;
  result.g_head = Eigen::VectorXd::Zero(kPlannerHeadDim);
  for (int k = 0; k < kNumProposals; ++k) {
    Eigen::VectorXd raw(reward.in_dim());
    for (int c = 0; c < kRewardCoordDim; ++c)
      raw(c) = head(k * kRewardCoordDim + c) * coord_scale(c);
    for (int i = 0; i < reward.context_dim; ++i)
      raw(kRewardCoordDim + i) = context[static_cast<std::size_t>(i)];

    const Eigen::VectorXd x = normalize_input(raw, reward.norm);
    Eigen::VectorXd g_input;
    result.loss += detail::reward_input_grad(reward, x, target_style, g_input);

    for (int c = 0; c < kRewardCoordDim; ++c) {
      const double lo = reward.norm.min(c), hi = reward.norm.max(c);
      const double slope =
          (hi > lo && raw(c) > lo && raw(c) < hi) ? 1.0 / (hi - lo) : 0.0;
      result.g_head(k * kRewardCoordDim + c) += g_input(c) * slope * coord_scale(c);
    }
  }
  if (!std::isfinite(result.loss)) throw NumericError("style_loss: non-finite loss");
  return result;
}

inline double style_loss_value(const ProposalSet& set, const RewardNetParams& reward,
                               const std::vector<double>& context,
                               const Eigen::VectorXd& target_style) {
  return style_loss(encode_head(set), reward, context, target_style).loss;
}

namespace detail {

// Mean squared second difference of the decoded waypoint coordinates, in
// meters/radians. Style gradients through a frozen network inflate exactly
// this high-frequency content first, so fine-tuning penalizes it explicitly;
// accumulates weight * d/d(head) into g_head and returns the unweighted loss.
inline double smoothness_penalty(const Eigen::VectorXd& head, Eigen::VectorXd& g_head,
                                 double weight) {
  constexpr int inner = kTrajectoryPoints - 2;
  constexpr double norm = 1.0 / (kNumProposals * inner * 3);
  double loss = 0.0;
  for (int k = 0; k < kNumProposals; ++k)
    for (int pt = 1; pt <= inner; ++pt)
      for (int c = 0; c < 3; ++c) {
        const int base = k * kRewardCoordDim + 3 * (pt - 1) + c;
        const double s = coord_scale(c);
        const double d2 = (head(base + 6) - 2.0 * head(base + 3) + head(base)) * s;
        loss += d2 * d2;
        const double g = weight * norm * 2.0 * d2 * s;
        g_head(base + 6) += g;
        g_head(base + 3) -= 2.0 * g;
        g_head(base) += g;
      }
  return loss * norm;
}

}  // namespace detail

// --- fine-tuning -----------------------------------------------------------------

struct FinetuneConfig {
  Variant variant = Variant::kPdsa;
  double lambda_style = 1.0;
  double mu_smooth = 1.0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 10;
  std::uint64_t seed = 0;
  std::string target_driver_id;
};

struct FinetuneSample {
  PlannerInput input;
  PlannedTrajectory target;      // observed future in the same frame
  Eigen::VectorXd target_style;  // the source driver's style vector
  std::string group;
};

inline std::vector<FinetuneSample> make_finetune_samples(
    const TrajectoryLog& log, const std::array<double, kPlannerContextDim>& context, int stride,
    const Eigen::VectorXd& target_style) {
  if (target_style.size() != kStyleDim)
    throw ValidationError("make_finetune_samples: target style must have " +
                          std::to_string(kStyleDim) + " entries");
  std::vector<FinetuneSample> out;
  for (auto& s : make_imitation_samples(log, context, stride)) {
    FinetuneSample f;
    f.input = s.input;
    f.target = s.target;
    f.target_style = target_style;
    f.group = std::move(s.group);
    out.push_back(std::move(f));
  }
  return out;
}

struct FinetuneEpochLoss {
  double trajectory = 0.0;
  double style = 0.0;
  double smooth = 0.0;
  double total = 0.0;
};

struct SafetySummary {
  double success_rate = 0.0;
  double mean_driving_score = 0.0;
  int collisions = 0;
};

struct FinetuneReport {
  std::string variant;
  std::string target_driver_id;
  std::vector<FinetuneEpochLoss> curve;
  std::optional<double> pre_style_mmdss;
  std::optional<double> post_style_mmdss;
  std::optional<SafetySummary> pre_safety;
  std::optional<SafetySummary> post_safety;
};

inline nlohmann::json finetune_report_to_json(const FinetuneReport& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& e : r.curve)
    curve.push_back({{"trajectory", e.trajectory},
                     {"style", e.style},
                     {"smooth", e.smooth},
                     {"total", e.total}});
  nlohmann::json j{{"variant", r.variant},
                   {"target_driver_id", r.target_driver_id},
                   {"curve", std::move(curve)}};
  j["pre_style_mmdss"] = r.pre_style_mmdss ? nlohmann::json(*r.pre_style_mmdss) : nlohmann::json();
  j["post_style_mmdss"] =
      r.post_style_mmdss ? nlohmann::json(*r.post_style_mmdss) : nlohmann::json();
  auto safety = [](const std::optional<SafetySummary>& s) {
    if (!s) return nlohmann::json();
    return nlohmann::json{{"success_rate", s->success_rate},
                          {"mean_driving_score", s->mean_driving_score},
                          {"collisions", s->collisions}};
  };
  j["pre_safety"] = safety(r.pre_safety);
  j["post_safety"] = safety(r.post_safety);
  return j;
}

// Optional hook used to score style alignment of a parameter snapshot before
// and after the run (the pipeline wires evaluate_style_alignment in here).
using StyleProbe = std::function<double(const PlannerParams&)>;

// Style-guided fine-tuning: winner-take-all trajectory L2, a smoothness
// penalty on every proposal, and the weighted style objective, updating only
// the proposal head. The backbone and the reward network come out
// bit-identical.
inline std::pair<PlannerParams, FinetuneReport> finetune(const PlannerParams& planner,
                                                         const RewardNetParams& reward,
                                                         const std::vector<FinetuneSample>& samples,
                                                         const FinetuneConfig& cfg,
                                                         const StyleProbe& probe = {}) {
  planner.check_shapes();
  reward.check_shapes();
  if (samples.empty()) throw ValidationError("finetune: empty sample set");
  if (cfg.lambda_style < 0) throw ValidationError("finetune: lambda_style must be >= 0");
  if (cfg.mu_smooth < 0) throw ValidationError("finetune: mu_smooth must be >= 0");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw ValidationError("finetune: epochs and batch_size must be >= 1");
  const bool use_style = cfg.variant != Variant::kDft && cfg.lambda_style > 0.0;
  if (use_style && cfg.variant == Variant::kPdsa && reward.context_dim != kPlannerContextDim)
    throw ValidationError("finetune: reward context_dim must match the scenario descriptor");
  for (const auto& s : samples)
    if (s.target_style.size() != kStyleDim)
      throw ValidationError("finetune: every sample needs a " + std::to_string(kStyleDim) +
                            "-dim target style");

  PlannerParams p = planner;
  p.backbone_trainable = false;  // head-only by contract

  FinetuneReport report;
  report.variant = variant_to_string(cfg.variant);
  report.target_driver_id = cfg.target_driver_id;
  if (probe) report.pre_style_mmdss = probe(p);

  Eigen::MatrixXd m_hw = Eigen::MatrixXd::Zero(p.hw.rows(), p.hw.cols()), v_hw = m_hw;
  Eigen::VectorXd m_hb = Eigen::VectorXd::Zero(p.hb.size()), v_hb = m_hb;
  long t = 0;

  std::vector<std::size_t> indices(samples.size());
  std::iota(indices.begin(), indices.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 order_rng(mix_seed(cfg.seed, 0xF7, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = indices;
    deterministic_shuffle(order, order_rng);

    FinetuneEpochLoss epoch_loss;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      detail::PlannerGrads grads(p);
      for (std::size_t k = start; k < end; ++k) {
        const auto& sample = samples[order[k]];
        const auto cache = planner_forward(p, sample.input);
        Eigen::VectorXd g_head = Eigen::VectorXd::Zero(kPlannerHeadDim);
        double traj_loss = 0.0, winner_mse = 0.0;
        detail::wta_loss_grad(cache, sample.target, g_head, traj_loss, winner_mse, false);

        double sloss = 0.0;
        if (use_style) {
          const auto ctx = reward_context(cfg.variant, sample.input.context, reward.context_dim);
          auto sres = style_loss(cache.head, reward, ctx, sample.target_style);
          sloss = sres.loss;
          g_head += cfg.lambda_style * sres.g_head;
        }

        double smooth = 0.0;
        if (cfg.mu_smooth > 0.0)
          smooth = detail::smoothness_penalty(cache.head, g_head, cfg.mu_smooth);

        const double total = traj_loss + cfg.lambda_style * sloss + cfg.mu_smooth * smooth;
        if (!std::isfinite(total))
          throw NumericError("finetune: loss diverged at epoch " + std::to_string(epoch));
        detail::planner_backward_from_head(p, cache, g_head, grads);
        epoch_loss.trajectory += traj_loss;
        epoch_loss.style += sloss;
        epoch_loss.smooth += smooth;
        epoch_loss.total += total;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      ++t;
      detail::adam_update(p.hw, m_hw, v_hw, Eigen::MatrixXd(grads.hw * inv), cfg.learning_rate,
                          cfg.beta1, cfg.beta2, cfg.adam_eps, t);
      detail::adam_update(p.hb, m_hb, v_hb, Eigen::VectorXd(grads.hb * inv), cfg.learning_rate,
                          cfg.beta1, cfg.beta2, cfg.adam_eps, t);
    }
    const double n = static_cast<double>(samples.size());
    epoch_loss.trajectory /= n;
    epoch_loss.style /= n;
    epoch_loss.smooth /= n;
    epoch_loss.total /= n;
    report.curve.push_back(epoch_loss);
  }

  if (probe) report.post_style_mmdss = probe(p);
  return {std::move(p), std::move(report)};
}

// --- style alignment evaluation ----------------------------------------------------

// Indicators that an 8-point, 0.5 s-spaced trajectory segment can support
// directly; everything else in a style vector must come from the reward model.
inline const std::vector<std::string>& segment_supported_indicators() {
  static const std::vector<std::string> ids = {
      "max_speed", "mean_speed", "speed_std", "lon_accel_p95", "lon_accel_trunc_low", "jerk_rms"};
  return ids;
}

// Raw (unnormalized) values of the segment-supported indicators.
inline std::map<std::string, double> analytic_segment_style(const PlannedTrajectory& traj) {
  const auto speed_array = segment_speeds(traj);
  const std::vector<double> speeds(speed_array.begin(), speed_array.end());
  std::vector<double> accels;
  for (std::size_t i = 1; i < speeds.size(); ++i)
    accels.push_back((speeds[i] - speeds[i - 1]) / kWaypointDt);
  std::vector<double> jerks;
  for (std::size_t i = 1; i < accels.size(); ++i)
    jerks.push_back((accels[i] - accels[i - 1]) / kWaypointDt);

  std::map<std::string, double> out;
  out["max_speed"] = *std::max_element(speeds.begin(), speeds.end());
  out["mean_speed"] = mean_of(speeds);
  out["speed_std"] = population_std(speeds);

  std::vector<double> positive;
  for (double a : accels)
    if (a > 0.0) positive.push_back(a);
  out["lon_accel_p95"] = positive.empty() ? 0.0 : detail::nearest_rank_percentile(positive, 95.0);

  std::vector<double> sorted_accels = accels;
  std::sort(sorted_accels.begin(), sorted_accels.end());
  const std::size_t low_n =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.05 * sorted_accels.size())));
  double low_sum = 0.0;
  for (std::size_t i = 0; i < low_n; ++i) low_sum += sorted_accels[i];
  out["lon_accel_trunc_low"] = low_sum / static_cast<double>(low_n);

  double jerk_sq = 0.0;
  for (double j : jerks) jerk_sq += j * j;
  out["jerk_rms"] = std::sqrt(jerk_sq / static_cast<double>(jerks.size()));
  return out;
}

struct StyleEvalSample {
  PlannerInput input;
  std::string scenario_id;
  std::string group;  // source log key; planner styles are averaged per group
};

struct StyleEvalSet {
  std::vector<StyleEvalSample> samples;
  std::vector<Sample> target_styles;      // ground-truth rows, selected-indicator order
  std::vector<std::string> selected_ids;  // style vector layout
  ScenarioNormStats stats;                // scenario min-max for the analytic entries
};

// Measures how closely the planner's selected proposals match the target
// driver's style distribution. Each proposal yields a style vector whose
// segment-supported entries come from the analytic indicator math and whose
// remaining entries come from the reward model (when provided); vectors are
// averaged per source log and compared to the ground-truth rows with MMDSS.
// The reward model always sees the true scenario context here so that every
// fine-tuning variant is scored by the same referee.
inline double evaluate_style_alignment(const PlannerParams& planner, const RewardNetParams* reward,
                                       const StyleEvalSet& set) {
  planner.check_shapes();
  if (set.samples.empty()) throw ValidationError("evaluate_style_alignment: empty eval set");
  if (set.target_styles.empty())
    throw ValidationError("evaluate_style_alignment: no target style rows");
  if (set.selected_ids.empty())
    throw ValidationError("evaluate_style_alignment: no selected indicators");

  const auto& catalog = builtin_catalog();
  const auto& analytic_ids = segment_supported_indicators();
  std::vector<int> reward_slot(set.selected_ids.size(), -1);
  std::vector<std::size_t> catalog_index(set.selected_ids.size(), 0);
  std::vector<bool> is_analytic(set.selected_ids.size(), false);
  std::vector<std::size_t> used_dims;
  for (std::size_t d = 0; d < set.selected_ids.size(); ++d) {
    const auto& id = set.selected_ids[d];
    catalog_index[d] = catalog.index_of(id);
    if (std::find(analytic_ids.begin(), analytic_ids.end(), id) != analytic_ids.end()) {
      is_analytic[d] = true;
      used_dims.push_back(d);
    } else if (reward != nullptr) {
      if (static_cast<int>(set.selected_ids.size()) != kStyleDim)
        throw ValidationError(
            "evaluate_style_alignment: reward-backed evaluation needs a full style vector");
      reward_slot[d] = static_cast<int>(d);
      used_dims.push_back(d);
    }
  }
  if (used_dims.empty())
    throw ValidationError("evaluate_style_alignment: no computable style dimensions");
  for (const auto& row : set.target_styles)
    if (row.size() != set.selected_ids.size())
      throw ValidationError("evaluate_style_alignment: target row width mismatch");

  // Per-group accumulation keeps the granularity of the ground truth: one
  // style vector per source log.
  std::vector<std::string> group_order;
  std::map<std::string, std::pair<Sample, int>> by_group;
  for (const auto& s : set.samples) {
    const auto proposal = select_best(predict(planner, s.input)).second;
    const auto analytic = analytic_segment_style(proposal);

    Eigen::VectorXd reward_style;
    if (reward != nullptr) {
      const auto ctx = reward_context(Variant::kPdsa, s.input.context, reward->context_dim);
      const Eigen::VectorXd raw = trajectory_features(proposal, ctx);
      reward_style = reward_eval(*reward, normalize_input(raw, reward->norm));
    }

    Sample vec;
    vec.reserve(used_dims.size());
    for (std::size_t d : used_dims) {
      if (is_analytic[d]) {
        vec.push_back(normalize_indicator(set.stats, s.scenario_id, catalog_index[d],
                                          analytic.at(set.selected_ids[d])));
      } else {
        vec.push_back(clamp(reward_style(reward_slot[d]), 0.0, 1.0));
      }
    }

    auto [it, fresh] = by_group.try_emplace(s.group, std::make_pair(Sample(vec.size(), 0.0), 0));
    if (fresh) group_order.push_back(s.group);
    for (std::size_t i = 0; i < vec.size(); ++i) it->second.first[i] += vec[i];
    it->second.second += 1;
  }

  std::vector<Sample> planner_styles;
  planner_styles.reserve(group_order.size());
  for (const auto& g : group_order) {
    auto& [sum, count] = by_group.at(g);
    Sample mean(sum.size());
    for (std::size_t i = 0; i < sum.size(); ++i) mean[i] = sum[i] / count;
    planner_styles.push_back(std::move(mean));
  }

  std::vector<Sample> gt;
  gt.reserve(set.target_styles.size());
  for (const auto& row : set.target_styles) {
    Sample r;
    r.reserve(used_dims.size());
    for (std::size_t d : used_dims) r.push_back(row[d]);
    gt.push_back(std::move(r));
  }

  return mmdss(planner_styles, gt);
}

}  // namespace drivestyle
