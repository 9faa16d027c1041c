#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/metrics.hpp"
#include "drivestyle/trajectory.hpp"

namespace drivestyle {

constexpr int kRewardHidden = 256;
constexpr int kRewardCoordDim = kTrajectoryPoints * 3;  // 24 flattened waypoint coords
constexpr int kRewardCheckpointVersion = 1;

// Per-feature min/max for unit-interval input normalization.
struct FeatureNormStats {
  Eigen::VectorXd min;
  Eigen::VectorXd max;
};

// Two hidden layers of 256 with ReLU and dropout, then a linear projection to
// the 10 style dimensions. Weights are stored row-major as (out x in).
struct RewardNetParams {
  int context_dim = 0;
  Eigen::MatrixXd w1, w2, w3;
  Eigen::VectorXd b1, b2, b3;
  FeatureNormStats norm;

  int in_dim() const { return kRewardCoordDim + context_dim; }

  void check_shapes() const {
    if (context_dim < 0) throw ValidationError("reward params: negative context_dim");
    if (w1.rows() != kRewardHidden || w1.cols() != in_dim() || b1.size() != kRewardHidden ||
        w2.rows() != kRewardHidden || w2.cols() != kRewardHidden || b2.size() != kRewardHidden ||
        w3.rows() != kStyleDim || w3.cols() != kRewardHidden || b3.size() != kStyleDim)
      throw ValidationError("reward params: tensor shapes do not match the architecture");
    if (norm.min.size() != in_dim() || norm.max.size() != in_dim())
      throw ValidationError("reward params: normalization stats do not match in_dim");
  }
};

namespace detail {

// Uniform fan-in init, filled row-major so the layout is reproducible.
inline Eigen::MatrixXd uniform_matrix(std::mt19937_64& rng, int rows, int cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = uniform_range(rng, -bound, bound);
  return m;
}

inline void check_finite(const Eigen::VectorXd& v, const char* where) {
  if (!v.allFinite())
    throw NumericError(std::string("reward model: non-finite activation at ") + where);
}

}  // namespace detail

inline RewardNetParams init_reward_params(std::uint64_t seed, int context_dim) {
  if (context_dim < 0) throw ValidationError("init_reward_params: negative context_dim");
  RewardNetParams p;
  p.context_dim = context_dim;
  std::mt19937_64 rng(mix_seed(seed, 0xA1));
  p.w1 = detail::uniform_matrix(rng, kRewardHidden, p.in_dim());
  p.b1 = Eigen::VectorXd::Zero(kRewardHidden);
  p.w2 = detail::uniform_matrix(rng, kRewardHidden, kRewardHidden);
  p.b2 = Eigen::VectorXd::Zero(kRewardHidden);
  p.w3 = detail::uniform_matrix(rng, kStyleDim, kRewardHidden);
  p.b3 = Eigen::VectorXd::Zero(kStyleDim);
  p.norm.min = Eigen::VectorXd::Zero(p.in_dim());
  p.norm.max = Eigen::VectorXd::Ones(p.in_dim());
  return p;
}

// Flattens a trajectory (in its own start frame) plus scenario context into
// the raw input feature vector.
inline Eigen::VectorXd trajectory_features(const PlannedTrajectory& traj,
                                           const std::vector<double>& context) {
  Eigen::VectorXd f(kRewardCoordDim + static_cast<int>(context.size()));
  for (int p = 0; p < kTrajectoryPoints; ++p) {
    f(3 * p) = traj.points[static_cast<std::size_t>(p)].x;
    f(3 * p + 1) = traj.points[static_cast<std::size_t>(p)].y;
    f(3 * p + 2) = traj.points[static_cast<std::size_t>(p)].heading;
  }
  for (std::size_t i = 0; i < context.size(); ++i)
    f(kRewardCoordDim + static_cast<int>(i)) = context[i];
  return f;
}

inline FeatureNormStats compute_feature_stats(const std::vector<Eigen::VectorXd>& raw) {
  if (raw.empty()) throw ValidationError("compute_feature_stats: no samples");
  FeatureNormStats st;
  st.min = raw.front();
  st.max = raw.front();
  for (const auto& f : raw) {
    if (f.size() != st.min.size())
      throw ValidationError("compute_feature_stats: inconsistent feature dimensions");
    st.min = st.min.cwiseMin(f);
    st.max = st.max.cwiseMax(f);
  }
  return st;
}

// Min-max into [0, 1]; constant features map to 0.5 and out-of-range inputs
// clamp, mirroring the indicator normalization conventions.
inline Eigen::VectorXd normalize_input(const Eigen::VectorXd& raw, const FeatureNormStats& st) {
  if (raw.size() != st.min.size())
    throw ValidationError("normalize_input: feature dimension mismatch");
  Eigen::VectorXd out(raw.size());
  for (int i = 0; i < raw.size(); ++i) {
    const double lo = st.min(i), hi = st.max(i);
    out(i) = hi <= lo ? 0.5 : clamp((raw(i) - lo) / (hi - lo), 0.0, 1.0);
  }
  return out;
}

enum class NetMode { kTrain, kEval };

// Everything backward needs, including the realized dropout multipliers so a
// training-mode pass can be differentiated (and finite-difference checked)
// against the exact same stochastic network.
struct RewardForwardCache {
  Eigen::VectorXd x;        // normalized input
  Eigen::VectorXd z1, d1;   // pre-activation and post relu+dropout
  Eigen::VectorXd m1;       // dropout multipliers (1/keep or 0); ones in eval
  Eigen::VectorXd z2, d2;
  Eigen::VectorXd m2;
  Eigen::VectorXd out;
};

inline RewardForwardCache reward_forward(const RewardNetParams& p, const Eigen::VectorXd& x,
                                         NetMode mode, double dropout_p = 0.1,
                                         std::uint64_t dropout_seed = 0) {
  p.check_shapes();
  if (x.size() != p.in_dim()) throw ValidationError("reward_forward: input dimension mismatch");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ValidationError("reward_forward: dropout_p must be in [0, 1)");
  RewardForwardCache c;
  c.x = x;
  c.z1 = p.w1 * x + p.b1;
  detail::check_finite(c.z1, "hidden layer 1");
  c.m1 = Eigen::VectorXd::Ones(kRewardHidden);
  c.m2 = Eigen::VectorXd::Ones(kRewardHidden);
  if (mode == NetMode::kTrain && dropout_p > 0.0) {
    std::mt19937_64 rng(mix_seed(dropout_seed, 0xd0));
    const double keep = 1.0 - dropout_p;
    for (int i = 0; i < kRewardHidden; ++i) c.m1(i) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
    for (int i = 0; i < kRewardHidden; ++i) c.m2(i) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  }
  c.d1 = c.z1.cwiseMax(0.0).cwiseProduct(c.m1);
  c.z2 = p.w2 * c.d1 + p.b2;
  detail::check_finite(c.z2, "hidden layer 2");
  c.d2 = c.z2.cwiseMax(0.0).cwiseProduct(c.m2);
  c.out = p.w3 * c.d2 + p.b3;
  detail::check_finite(c.out, "output layer");
  return c;
}

inline Eigen::VectorXd reward_eval(const RewardNetParams& p, const Eigen::VectorXd& x) {
  return reward_forward(p, x, NetMode::kEval).out;
}

struct RewardGrads {
  Eigen::MatrixXd w1, w2, w3;
  Eigen::VectorXd b1, b2, b3;
  Eigen::VectorXd input;  // d loss / d normalized input
  double loss = 0.0;
};

// Mean-squared-error loss over the 10 output dimensions and its exact
// gradients through the cached forward pass.
inline RewardGrads reward_backward(const RewardNetParams& p, const RewardForwardCache& c,
                                   const Eigen::VectorXd& target) {
  if (target.size() != kStyleDim) throw ValidationError("reward_backward: target must have 10 dims");
  RewardGrads g;
  const Eigen::VectorXd err = c.out - target;
  g.loss = err.squaredNorm() / kStyleDim;
  const Eigen::VectorXd g_out = (2.0 / kStyleDim) * err;
  g.w3 = g_out * c.d2.transpose();
  g.b3 = g_out;
  Eigen::VectorXd g_d2 = p.w3.transpose() * g_out;
  Eigen::VectorXd g_z2 =
      g_d2.cwiseProduct(c.m2).cwiseProduct((c.z2.array() > 0.0).cast<double>().matrix());
  g.w2 = g_z2 * c.d1.transpose();
  g.b2 = g_z2;
  Eigen::VectorXd g_d1 = p.w2.transpose() * g_z2;
  Eigen::VectorXd g_z1 =
      g_d1.cwiseProduct(c.m1).cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
  g.w1 = g_z1 * c.x.transpose();
  g.b1 = g_z1;
  g.input = p.w1.transpose() * g_z1;
  return g;
}

// Whole-minibatch forward/backward over column-stacked samples. One GEMM per
// layer replaces per-sample matvecs and outer products; the reduction over the
// batch happens inside the products in a fixed order, so results stay
// deterministic. Dropout masks are drawn per column from the same per-sample
// seeds the single-sample path uses.
struct RewardBatchWork {
  Eigen::MatrixXd x, t, z1, m1, d1, z2, m2, d2, out, err, g_z2, g_z1;

  RewardBatchWork(int in_dim, int batch) {
    x.resize(in_dim, batch);
    t.resize(kStyleDim, batch);
    z1.resize(kRewardHidden, batch);
    m1.resize(kRewardHidden, batch);
    d1.resize(kRewardHidden, batch);
    z2.resize(kRewardHidden, batch);
    m2.resize(kRewardHidden, batch);
    d2.resize(kRewardHidden, batch);
    out.resize(kStyleDim, batch);
    err.resize(kStyleDim, batch);
    g_z2.resize(kRewardHidden, batch);
    g_z1.resize(kRewardHidden, batch);
  }
};

// Returns the summed per-sample loss for the batch; fills `g` with the summed
// (not averaged) parameter gradients.
inline double reward_train_batch(const RewardNetParams& p, RewardBatchWork& w, int batch,
                                 double dropout_p, const std::uint64_t* drop_seeds,
                                 RewardGrads& g) {
  const auto X = w.x.leftCols(batch);
  const auto T = w.t.leftCols(batch);
  auto Z1 = w.z1.leftCols(batch);
  auto M1 = w.m1.leftCols(batch);
  auto D1 = w.d1.leftCols(batch);
  auto Z2 = w.z2.leftCols(batch);
  auto M2 = w.m2.leftCols(batch);
  auto D2 = w.d2.leftCols(batch);
  auto OUT = w.out.leftCols(batch);
  auto ERR = w.err.leftCols(batch);
  auto G_Z2 = w.g_z2.leftCols(batch);
  auto G_Z1 = w.g_z1.leftCols(batch);

  Z1.noalias() = p.w1 * X;
  Z1.colwise() += p.b1;
  if (dropout_p > 0.0) {
    const double keep = 1.0 - dropout_p;
    for (int j = 0; j < batch; ++j) {
      std::mt19937_64 rng(mix_seed(drop_seeds[j], 0xd0));
      for (int i = 0; i < kRewardHidden; ++i) M1(i, j) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
      for (int i = 0; i < kRewardHidden; ++i) M2(i, j) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
    }
  } else {
    M1.setOnes();
    M2.setOnes();
  }
  D1 = Z1.cwiseMax(0.0).cwiseProduct(M1);
  Z2.noalias() = p.w2 * D1;
  Z2.colwise() += p.b2;
  D2 = Z2.cwiseMax(0.0).cwiseProduct(M2);
  OUT.noalias() = p.w3 * D2;
  OUT.colwise() += p.b3;

  ERR = OUT - T;
  const double loss_sum = ERR.colwise().squaredNorm().sum() / kStyleDim;

  ERR *= 2.0 / kStyleDim;  // now the output gradient
  g.w3.noalias() = ERR * D2.transpose();
  g.b3 = ERR.rowwise().sum();
  G_Z2.noalias() = p.w3.transpose() * ERR;
  G_Z2 = G_Z2.cwiseProduct(M2).cwiseProduct((Z2.array() > 0.0).cast<double>().matrix());
  g.w2.noalias() = G_Z2 * D1.transpose();
  g.b2 = G_Z2.rowwise().sum();
  G_Z1.noalias() = p.w2.transpose() * G_Z2;
  G_Z1 = G_Z1.cwiseProduct(M1).cwiseProduct((Z1.array() > 0.0).cast<double>().matrix());
  g.w1.noalias() = G_Z1 * X.transpose();
  g.b1 = G_Z1.rowwise().sum();
  return loss_sum;
}

struct RewardTrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double dropout_p = 0.1;
  int batch_size = 64;
  int epochs = 20;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

// One supervised example; `group` ties segments from the same source log so
// the train/validation split never leaks a log across sides.
struct RewardTrainSample {
  Eigen::VectorXd raw_features;
  Eigen::VectorXd target;  // 10-dim style vector
  std::string group;
};

struct RewardEpochStats {
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct RewardTrainResult {
  RewardNetParams params;
  std::vector<RewardEpochStats> curve;
};

namespace detail {

struct AdamState {
  Eigen::MatrixXd mw1, vw1, mw2, vw2, mw3, vw3;
  Eigen::VectorXd mb1, vb1, mb2, vb2, mb3, vb3;
  long t = 0;

  explicit AdamState(const RewardNetParams& p)
      : mw1(Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols())), vw1(mw1),
        mw2(Eigen::MatrixXd::Zero(p.w2.rows(), p.w2.cols())), vw2(mw2),
        mw3(Eigen::MatrixXd::Zero(p.w3.rows(), p.w3.cols())), vw3(mw3),
        mb1(Eigen::VectorXd::Zero(p.b1.size())), vb1(mb1),
        mb2(Eigen::VectorXd::Zero(p.b2.size())), vb2(mb2),
        mb3(Eigen::VectorXd::Zero(p.b3.size())), vb3(mb3) {}
};

template <typename T>
void adam_update(T& param, T& m, T& v, const T& grad, double lr, double beta1, double beta2,
                 double eps, long t) {
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace detail

// Full training run: fit normalization stats, split by group, minibatch Adam.
// Deterministic in (dataset order, config seed).
inline RewardTrainResult train_reward(const std::vector<RewardTrainSample>& dataset,
                                      const RewardTrainConfig& cfg, int context_dim) {
  if (dataset.empty()) throw ValidationError("train_reward: empty dataset");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw ValidationError("train_reward: epochs and batch_size must be >= 1");

  RewardTrainResult result;
  result.params = init_reward_params(cfg.seed, context_dim);
  RewardNetParams& p = result.params;
  for (const auto& s : dataset) {
    if (s.raw_features.size() != p.in_dim())
      throw ValidationError("train_reward: sample feature dimension mismatch");
    if (s.target.size() != kStyleDim)
      throw ValidationError("train_reward: sample target must have 10 dims");
  }

  {
    std::vector<Eigen::VectorXd> raw;
    raw.reserve(dataset.size());
    for (const auto& s : dataset) raw.push_back(s.raw_features);
    p.norm = compute_feature_stats(raw);
  }

  // Group-aware split: whole source logs go to one side or the other.
  std::vector<std::string> groups;
  for (const auto& s : dataset)
    if (std::find(groups.begin(), groups.end(), s.group) == groups.end())
      groups.push_back(s.group);
  std::mt19937_64 split_rng(mix_seed(cfg.seed, 0x51));
  deterministic_shuffle(groups, split_rng);
  std::size_t val_groups = static_cast<std::size_t>(
      std::floor(cfg.val_fraction * static_cast<double>(groups.size())));
  if (val_groups >= groups.size()) val_groups = groups.size() - 1;
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto pos = std::find(groups.begin(), groups.end(), dataset[i].group) - groups.begin();
    (static_cast<std::size_t>(pos) < val_groups ? val_idx : train_idx).push_back(i);
  }
  if (train_idx.empty()) throw ValidationError("train_reward: empty training split");

  std::vector<Eigen::VectorXd> inputs(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    inputs[i] = normalize_input(dataset[i].raw_features, p.norm);

  detail::AdamState adam(p);
  RewardBatchWork work(p.in_dim(), cfg.batch_size);
  std::vector<std::uint64_t> drop_seeds(static_cast<std::size_t>(cfg.batch_size), 0);
  RewardGrads grads;
  grads.w1.resize(p.w1.rows(), p.w1.cols());
  grads.b1.resize(p.b1.size());
  grads.w2.resize(p.w2.rows(), p.w2.cols());
  grads.b2.resize(p.b2.size());
  grads.w3.resize(p.w3.rows(), p.w3.cols());
  grads.b3.resize(p.b3.size());
  result.curve.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 order_rng(mix_seed(cfg.seed, 0xe0, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = train_idx;
    deterministic_shuffle(order, order_rng);

    double train_loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int bsize = static_cast<int>(end - start);
      for (int j = 0; j < bsize; ++j) {
        const std::size_t k = start + static_cast<std::size_t>(j);
        const std::size_t i = order[k];
        work.x.col(j) = inputs[i];
        work.t.col(j) = dataset[i].target;
        drop_seeds[static_cast<std::size_t>(j)] =
            mix_seed(cfg.seed, 0xdd, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(k));
      }
      const double batch_loss =
          reward_train_batch(p, work, bsize, cfg.dropout_p, drop_seeds.data(), grads);
      if (!std::isfinite(batch_loss))
        throw NumericError("train_reward: loss diverged at epoch " + std::to_string(epoch));
      train_loss_sum += batch_loss;
      seen += end - start;
      const double inv = 1.0 / static_cast<double>(bsize);
      grads.w1 *= inv; grads.b1 *= inv;
      grads.w2 *= inv; grads.b2 *= inv;
      grads.w3 *= inv; grads.b3 *= inv;
      ++adam.t;
      detail::adam_update(p.w1, adam.mw1, adam.vw1, grads.w1, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, adam.t);
      detail::adam_update(p.b1, adam.mb1, adam.vb1, grads.b1, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, adam.t);
      detail::adam_update(p.w2, adam.mw2, adam.vw2, grads.w2, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, adam.t);
      detail::adam_update(p.b2, adam.mb2, adam.vb2, grads.b2, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, adam.t);
      detail::adam_update(p.w3, adam.mw3, adam.vw3, grads.w3, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, adam.t);
      detail::adam_update(p.b3, adam.mb3, adam.vb3, grads.b3, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, adam.t);
    }

    RewardEpochStats stats;
    stats.train_mse = seen > 0 ? train_loss_sum / static_cast<double>(seen) : 0.0;
    const auto& eval_idx = val_idx.empty() ? train_idx : val_idx;
    double val_sum = 0.0;
    for (std::size_t start = 0; start < eval_idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(eval_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int bsize = static_cast<int>(end - start);
      for (int j = 0; j < bsize; ++j) {
        const std::size_t i = eval_idx[start + static_cast<std::size_t>(j)];
        work.x.col(j) = inputs[i];
        work.t.col(j) = dataset[i].target;
      }
      auto Z1 = work.z1.leftCols(bsize);
      auto Z2 = work.z2.leftCols(bsize);
      auto OUT = work.out.leftCols(bsize);
      Z1.noalias() = p.w1 * work.x.leftCols(bsize);
      Z1.colwise() += p.b1;
      work.d1.leftCols(bsize) = Z1.cwiseMax(0.0);
      Z2.noalias() = p.w2 * work.d1.leftCols(bsize);
      Z2.colwise() += p.b2;
      work.d2.leftCols(bsize) = Z2.cwiseMax(0.0);
      OUT.noalias() = p.w3 * work.d2.leftCols(bsize);
      OUT.colwise() += p.b3;
      val_sum += (OUT - work.t.leftCols(bsize)).colwise().squaredNorm().sum() / kStyleDim;
    }
    stats.val_mse = val_sum / static_cast<double>(eval_idx.size());
    if (!std::isfinite(stats.val_mse))
      throw NumericError("train_reward: validation loss diverged at epoch " + std::to_string(epoch));
    result.curve.push_back(stats);
  }
  return result;
}

// --- checkpoint serialization --------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ValidationError("checkpoint: bad weight matrix");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().size();
  Eigen::MatrixXd m(static_cast<int>(rows), static_cast<int>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ValidationError("checkpoint: ragged weight matrix");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
  }
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("checkpoint: bad vector");
  Eigen::VectorXd v(static_cast<int>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::json reward_to_json(const RewardNetParams& p) {
  p.check_shapes();
  return nlohmann::json{
      {"version", kRewardCheckpointVersion},
      {"context_dim", p.context_dim},
      {"norm_stats",
       {{"min", detail::vector_to_json(p.norm.min)}, {"max", detail::vector_to_json(p.norm.max)}}},
      {"layers",
       {{{"w", detail::matrix_to_json(p.w1)}, {"b", detail::vector_to_json(p.b1)}},
        {{"w", detail::matrix_to_json(p.w2)}, {"b", detail::vector_to_json(p.b2)}},
        {{"w", detail::matrix_to_json(p.w3)}, {"b", detail::vector_to_json(p.b3)}}}},
  };
}

inline RewardNetParams reward_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("version") || j.at("version").get<int>() != kRewardCheckpointVersion)
      throw ValidationError("reward checkpoint: unsupported or missing version");
    RewardNetParams p;
    p.context_dim = j.at("context_dim").get<int>();
    p.norm.min = detail::vector_from_json(j.at("norm_stats").at("min"));
    p.norm.max = detail::vector_from_json(j.at("norm_stats").at("max"));
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != 3)
      throw ValidationError("reward checkpoint: expected exactly 3 layers");
    p.w1 = detail::matrix_from_json(layers[0].at("w"));
    p.b1 = detail::vector_from_json(layers[0].at("b"));
    p.w2 = detail::matrix_from_json(layers[1].at("w"));
    p.b2 = detail::vector_from_json(layers[1].at("b"));
    p.w3 = detail::matrix_from_json(layers[2].at("w"));
    p.b3 = detail::vector_from_json(layers[2].at("b"));
    p.check_shapes();
    for (const auto* m : {&p.w1, &p.w2, &p.w3})
      if (!m->allFinite()) throw ValidationError("reward checkpoint: non-finite weights");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("reward checkpoint: corrupt structure: ") + e.what());
  }
}

}  // namespace drivestyle
