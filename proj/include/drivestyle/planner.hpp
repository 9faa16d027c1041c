#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/reward_model.hpp"
#include "drivestyle/trajectory.hpp"

namespace drivestyle {

constexpr int kNumProposals = 20;
constexpr int kHistoryLen = 4;             // past poses 0.5 s apart, newest last
constexpr int kPlannerHidden = 128;
constexpr int kPlannerLatent = 64;
constexpr int kPlannerContextDim = 8;
constexpr int kPlannerFeatureDim = kHistoryLen * 5 + 3 + kPlannerContextDim;  // 31
constexpr int kPlannerHeadDim = kNumProposals * kRewardCoordDim + kNumProposals;
constexpr int kPlannerCheckpointVersion = 1;

// One past pose expressed in the current (newest) pose frame.
struct HistoryState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  double lon_accel = 0.0;
};

struct PlannerInput {
  std::array<HistoryState, kHistoryLen> history{};  // oldest first; last is the origin pose
  LeadObservation lead;
  std::array<double, kPlannerContextDim> context{};
};

// Fixed featurization scales; documented constants rather than learned stats
// so a checkpoint fully determines behavior.
inline Eigen::VectorXd planner_features(const PlannerInput& in) {
  Eigen::VectorXd f(kPlannerFeatureDim);
  int k = 0;
  for (const auto& h : in.history) {
    f(k++) = h.x / 20.0;
    f(k++) = h.y / 5.0;
    f(k++) = h.heading;
    f(k++) = h.speed / 30.0;
    f(k++) = h.lon_accel / 5.0;
  }
  f(k++) = in.lead.present ? 1.0 : 0.0;
  f(k++) = in.lead.present ? std::min(in.lead.gap, 200.0) / 100.0 : 2.0;
  f(k++) = in.lead.present ? in.lead.rel_speed / 15.0 : 0.0;
  for (double c : in.context) f(k++) = c;
  return f;
}

// Frozen-after-pretraining encoder plus a linear proposal head. The head emits
// 20 candidate trajectories (24 coords each) and 20 confidence logits.
struct PlannerParams {
  Eigen::MatrixXd bw1, bw2;  // backbone 31 -> 128 -> 64
  Eigen::VectorXd bb1, bb2;
  Eigen::MatrixXd hw;        // head 64 -> 500
  Eigen::VectorXd hb;
  bool backbone_trainable = true;

  void check_shapes() const {
    if (bw1.rows() != kPlannerHidden || bw1.cols() != kPlannerFeatureDim ||
        bb1.size() != kPlannerHidden || bw2.rows() != kPlannerLatent ||
        bw2.cols() != kPlannerHidden || bb2.size() != kPlannerLatent ||
        hw.rows() != kPlannerHeadDim || hw.cols() != kPlannerLatent ||
        hb.size() != kPlannerHeadDim)
      throw ValidationError("planner params: tensor shapes do not match the architecture");
  }
};

inline PlannerParams init_planner_params(std::uint64_t seed) {
  PlannerParams p;
  std::mt19937_64 rng(mix_seed(seed, 0xB2));
  p.bw1 = detail::uniform_matrix(rng, kPlannerHidden, kPlannerFeatureDim);
  p.bb1 = Eigen::VectorXd::Zero(kPlannerHidden);
  p.bw2 = detail::uniform_matrix(rng, kPlannerLatent, kPlannerHidden);
  p.bb2 = Eigen::VectorXd::Zero(kPlannerLatent);
  p.hw = detail::uniform_matrix(rng, kPlannerHeadDim, kPlannerLatent);
  p.hb = Eigen::VectorXd::Zero(kPlannerHeadDim);
  return p;
}

struct PlannerForwardCache {
  Eigen::VectorXd f, z1, h1, z2, h2, head;
};

inline PlannerForwardCache planner_forward(const PlannerParams& p, const PlannerInput& in) {
  p.check_shapes();
  PlannerForwardCache c;
  c.f = planner_features(in);
  c.z1 = p.bw1 * c.f + p.bb1;
  c.h1 = c.z1.cwiseMax(0.0);
  c.z2 = p.bw2 * c.h1 + p.bb2;
  c.h2 = c.z2.cwiseMax(0.0);
  c.head = p.hw * c.h2 + p.hb;
  if (!c.head.allFinite()) throw NumericError("planner forward produced non-finite outputs");
  return c;
}

struct ProposalSet {
  std::array<PlannedTrajectory, kNumProposals> proposals;
  std::array<double, kNumProposals> confidences{};  // raw logits
};

// The head works in scaled coordinate units so its outputs stay O(1); decoding
// multiplies back to meters/radians. Scales mirror the input featurization.
inline double coord_scale(int coord_index) {
  switch (coord_index % 3) {
    case 0: return 20.0;  // x
    case 1: return 5.0;   // y
    default: return 1.0;  // heading
  }
}

inline ProposalSet decode_head(const Eigen::VectorXd& head) {
  ProposalSet set;
  for (int k = 0; k < kNumProposals; ++k) {
    for (int pt = 0; pt < kTrajectoryPoints; ++pt) {
      const int base = k * kRewardCoordDim + 3 * pt;
      set.proposals[static_cast<std::size_t>(k)].points[static_cast<std::size_t>(pt)] =
          Waypoint{head(base) * coord_scale(0), head(base + 1) * coord_scale(1),
                   head(base + 2) * coord_scale(2)};
    }
    set.confidences[static_cast<std::size_t>(k)] = head(kNumProposals * kRewardCoordDim + k);
  }
  return set;
}

// Deterministic: same parameters and input always produce the same proposals.
inline ProposalSet predict(const PlannerParams& p, const PlannerInput& in) {
  return decode_head(planner_forward(p, in).head);
}

// Highest-confidence proposal; exact logit ties resolve to the lowest index.
inline std::pair<int, PlannedTrajectory> select_best(const ProposalSet& set) {
  int best = 0;
  for (int k = 1; k < kNumProposals; ++k)
    if (set.confidences[static_cast<std::size_t>(k)] > set.confidences[static_cast<std::size_t>(best)])
      best = k;
  return {best, set.proposals[static_cast<std::size_t>(best)]};
}

// --- imitation data ------------------------------------------------------------

struct ImitationSample {
  PlannerInput input;
  PlannedTrajectory target;
  std::string group;  // source log key for split bookkeeping
};

// Pairs each fixed-horizon future (as produced by slice_segments) with the
// observation history available at its start sample. History older than the
// log start repeats the first sample, so every segment yields a sample.
inline std::vector<ImitationSample> make_imitation_samples(
    const TrajectoryLog& log, const std::array<double, kPlannerContextDim>& context, int stride) {
  if (stride < 1) throw ValidationError("make_imitation_samples: stride must be >= 1");
  const int per_point = static_cast<int>(std::lround(kWaypointDt * log.sample_rate_hz));
  const int window = (kTrajectoryPoints - 1) * per_point + 1;
  const int n = static_cast<int>(log.states.size());
  std::vector<ImitationSample> out;
  if (n < window) return out;
  const std::string group =
      log.driver_id + "/" + log.scenario_id + "/" + std::to_string(log.run_index);
  for (int i = 0; i + window <= n; i += stride) {
    const EgoState& ref = log.states[static_cast<std::size_t>(i)];
    ImitationSample s;
    s.group = group;
    for (int hIdx = 0; hIdx < kHistoryLen; ++hIdx) {
      const int j = std::max(0, i - (kHistoryLen - 1 - hIdx) * per_point);
      const EgoState& past = log.states[static_cast<std::size_t>(j)];
      const Waypoint rel = to_relative(past.x, past.y, past.heading, ref.x, ref.y, ref.heading);
      s.input.history[static_cast<std::size_t>(hIdx)] =
          HistoryState{rel.x, rel.y, rel.heading, past.speed, past.lon_accel};
    }
    s.input.lead = log.lead[static_cast<std::size_t>(i)];
    s.input.context = context;
    for (int pt = 0; pt < kTrajectoryPoints; ++pt) {
      const EgoState& fut = log.states[static_cast<std::size_t>(i + pt * per_point)];
      s.target.points[static_cast<std::size_t>(pt)] =
          to_relative(fut.x, fut.y, fut.heading, ref.x, ref.y, ref.heading);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// --- pretraining ---------------------------------------------------------------

struct PlannerTrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 0;
};

struct PlannerEpochStats {
  double loss = 0.0;            // winner MSE + confidence cross-entropy
  double winner_mse = 0.0;
  double proposal_spread = 0.0; // mean pairwise endpoint distance, diagnostic
};

struct PretrainResult {
  PlannerParams params;
  std::vector<PlannerEpochStats> curve;
};

namespace detail {

struct PlannerGrads {
  Eigen::MatrixXd bw1, bw2, hw;
  Eigen::VectorXd bb1, bb2, hb;
  double loss = 0.0;
  double winner_mse = 0.0;

  explicit PlannerGrads(const PlannerParams& p)
      : bw1(Eigen::MatrixXd::Zero(p.bw1.rows(), p.bw1.cols())),
        bw2(Eigen::MatrixXd::Zero(p.bw2.rows(), p.bw2.cols())),
        hw(Eigen::MatrixXd::Zero(p.hw.rows(), p.hw.cols())),
        bb1(Eigen::VectorXd::Zero(p.bb1.size())),
        bb2(Eigen::VectorXd::Zero(p.bb2.size())),
        hb(Eigen::VectorXd::Zero(p.hb.size())) {}
};

// Backpropagates a head-output gradient into parameter grads; the backbone
// part is skipped when it is frozen.
inline void planner_backward_from_head(const PlannerParams& p, const PlannerForwardCache& c,
                                       const Eigen::VectorXd& g_head, PlannerGrads& g) {
  g.hw += g_head * c.h2.transpose();
  g.hb += g_head;
  if (!p.backbone_trainable) return;
  Eigen::VectorXd g_h2 = p.hw.transpose() * g_head;
  Eigen::VectorXd g_z2 = g_h2.cwiseProduct((c.z2.array() > 0.0).cast<double>().matrix());
  g.bw2 += g_z2 * c.h1.transpose();
  g.bb2 += g_z2;
  Eigen::VectorXd g_h1 = p.bw2.transpose() * g_z2;
  Eigen::VectorXd g_z1 = g_h1.cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
  g.bw1 += g_z1 * c.f.transpose();
  g.bb1 += g_z1;
}

// Winner-take-all imitation term: the closest proposal (lowest coordinate MSE
// in scaled head units, ties to the lowest index) is pulled toward the target
// and the confidence logits are trained to pick it.
inline void wta_loss_grad(const PlannerForwardCache& c, const PlannedTrajectory& target,
                          Eigen::VectorXd& g_head, double& loss, double& winner_mse,
                          bool with_confidence) {
  Eigen::VectorXd t(kRewardCoordDim);
  for (int pt = 0; pt < kTrajectoryPoints; ++pt) {
    t(3 * pt) = target.points[static_cast<std::size_t>(pt)].x / coord_scale(0);
    t(3 * pt + 1) = target.points[static_cast<std::size_t>(pt)].y / coord_scale(1);
    t(3 * pt + 2) = target.points[static_cast<std::size_t>(pt)].heading / coord_scale(2);
  }
  int winner = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kNumProposals; ++k) {
    const double mse =
        (c.head.segment(k * kRewardCoordDim, kRewardCoordDim) - t).squaredNorm() / kRewardCoordDim;
    if (mse < best_mse) {
      best_mse = mse;
      winner = k;
    }
  }
  winner_mse = best_mse;
  loss = best_mse;
  g_head.segment(winner * kRewardCoordDim, kRewardCoordDim) +=
      (2.0 / kRewardCoordDim) *
      (c.head.segment(winner * kRewardCoordDim, kRewardCoordDim) - t);

  if (!with_confidence) return;
  const auto logits = c.head.segment(kNumProposals * kRewardCoordDim, kNumProposals);
  const double max_logit = logits.maxCoeff();
  Eigen::VectorXd expd = (logits.array() - max_logit).exp();
  const double z = expd.sum();
  loss += -(logits(winner) - max_logit) + std::log(z);
  Eigen::VectorXd g_logits = expd / z;
  g_logits(winner) -= 1.0;
  g_head.segment(kNumProposals * kRewardCoordDim, kNumProposals) += g_logits;
}

inline double proposal_spread(const ProposalSet& set) {
  double sum = 0.0;
  int pairs = 0;
  for (int a = 0; a < kNumProposals; ++a)
    for (int b = a + 1; b < kNumProposals; ++b) {
      const auto& pa = set.proposals[static_cast<std::size_t>(a)].points.back();
      const auto& pb = set.proposals[static_cast<std::size_t>(b)].points.back();
      sum += std::hypot(pa.x - pb.x, pa.y - pb.y);
      ++pairs;
    }
  return sum / pairs;
}

}  // namespace detail

// Imitation pretraining over expert samples. Deterministic in (data, seed).
inline PretrainResult pretrain_planner(PlannerParams start,
                                       const std::vector<ImitationSample>& data,
                                       const PlannerTrainConfig& cfg) {
  if (data.empty()) throw ValidationError("pretrain_planner: empty dataset");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw ValidationError("pretrain_planner: epochs and batch_size must be >= 1");
  start.check_shapes();

  PretrainResult result;
  result.params = std::move(start);
  PlannerParams& p = result.params;

  Eigen::MatrixXd m_bw1 = Eigen::MatrixXd::Zero(p.bw1.rows(), p.bw1.cols()), v_bw1 = m_bw1;
  Eigen::MatrixXd m_bw2 = Eigen::MatrixXd::Zero(p.bw2.rows(), p.bw2.cols()), v_bw2 = m_bw2;
  Eigen::MatrixXd m_hw = Eigen::MatrixXd::Zero(p.hw.rows(), p.hw.cols()), v_hw = m_hw;
  Eigen::VectorXd m_bb1 = Eigen::VectorXd::Zero(p.bb1.size()), v_bb1 = m_bb1;
  Eigen::VectorXd m_bb2 = Eigen::VectorXd::Zero(p.bb2.size()), v_bb2 = m_bb2;
  Eigen::VectorXd m_hb = Eigen::VectorXd::Zero(p.hb.size()), v_hb = m_hb;
  long t = 0;

  std::vector<std::size_t> indices(data.size());
  std::iota(indices.begin(), indices.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 order_rng(mix_seed(cfg.seed, 0xE2, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = indices;
    deterministic_shuffle(order, order_rng);

    double loss_sum = 0.0, mse_sum = 0.0;
    for (std::size_t startIdx = 0; startIdx < order.size();
         startIdx += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), startIdx + static_cast<std::size_t>(cfg.batch_size));
      detail::PlannerGrads grads(p);
      for (std::size_t k = startIdx; k < end; ++k) {
        const auto& sample = data[order[k]];
        auto cache = planner_forward(p, sample.input);
        Eigen::VectorXd g_head = Eigen::VectorXd::Zero(kPlannerHeadDim);
        double loss = 0.0, winner_mse = 0.0;
        detail::wta_loss_grad(cache, sample.target, g_head, loss, winner_mse, true);
        if (!std::isfinite(loss))
          throw NumericError("pretrain_planner: loss diverged at epoch " + std::to_string(epoch));
        detail::planner_backward_from_head(p, cache, g_head, grads);
        grads.loss += loss;
        grads.winner_mse += winner_mse;
      }
      const double inv = 1.0 / static_cast<double>(end - startIdx);
      loss_sum += grads.loss;
      mse_sum += grads.winner_mse;
      ++t;
      detail::adam_update(p.hw, m_hw, v_hw, Eigen::MatrixXd(grads.hw * inv), cfg.learning_rate,
                          cfg.beta1, cfg.beta2, cfg.adam_eps, t);
      detail::adam_update(p.hb, m_hb, v_hb, Eigen::VectorXd(grads.hb * inv), cfg.learning_rate,
                          cfg.beta1, cfg.beta2, cfg.adam_eps, t);
      if (p.backbone_trainable) {
        detail::adam_update(p.bw1, m_bw1, v_bw1, Eigen::MatrixXd(grads.bw1 * inv),
                            cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        detail::adam_update(p.bb1, m_bb1, v_bb1, Eigen::VectorXd(grads.bb1 * inv),
                            cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        detail::adam_update(p.bw2, m_bw2, v_bw2, Eigen::MatrixXd(grads.bw2 * inv),
                            cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        detail::adam_update(p.bb2, m_bb2, v_bb2, Eigen::VectorXd(grads.bb2 * inv),
                            cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
      }
    }

    PlannerEpochStats stats;
    stats.loss = loss_sum / static_cast<double>(data.size());
    stats.winner_mse = mse_sum / static_cast<double>(data.size());
    stats.proposal_spread = detail::proposal_spread(predict(p, data.front().input));
    result.curve.push_back(stats);
  }
  return result;
}

// --- checkpoint serialization ----------------------------------------------------

inline nlohmann::json planner_to_json(const PlannerParams& p) {
  p.check_shapes();
  return nlohmann::json{
      {"version", kPlannerCheckpointVersion},
      {"part", "planner"},
      {"backbone",
       {{{"w", detail::matrix_to_json(p.bw1)}, {"b", detail::vector_to_json(p.bb1)}},
        {{"w", detail::matrix_to_json(p.bw2)}, {"b", detail::vector_to_json(p.bb2)}}}},
      {"head", {{"w", detail::matrix_to_json(p.hw)}, {"b", detail::vector_to_json(p.hb)}}},
      {"backbone_trainable", p.backbone_trainable},
  };
}

inline PlannerParams planner_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("version") || j.at("version").get<int>() != kPlannerCheckpointVersion)
      throw ValidationError("planner checkpoint: unsupported or missing version");
    if (!j.contains("part") || j.at("part").get<std::string>() != "planner")
      throw ValidationError("planner checkpoint: wrong or missing part tag");
    const auto& backbone = j.at("backbone");
    if (!backbone.is_array() || backbone.size() != 2)
      throw ValidationError("planner checkpoint: expected 2 backbone layers");
    PlannerParams p;
    p.bw1 = detail::matrix_from_json(backbone[0].at("w"));
    p.bb1 = detail::vector_from_json(backbone[0].at("b"));
    p.bw2 = detail::matrix_from_json(backbone[1].at("w"));
    p.bb2 = detail::vector_from_json(backbone[1].at("b"));
    p.hw = detail::matrix_from_json(j.at("head").at("w"));
    p.hb = detail::vector_from_json(j.at("head").at("b"));
    p.backbone_trainable = j.value("backbone_trainable", true);
    p.check_shapes();
    for (const auto* m : {&p.bw1, &p.bw2, &p.hw})
      if (!m->allFinite()) throw ValidationError("planner checkpoint: non-finite weights");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("planner checkpoint: corrupt structure: ") + e.what());
  }
}

}  // namespace drivestyle
