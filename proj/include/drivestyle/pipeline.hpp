#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/adaptation.hpp"
#include "drivestyle/closed_loop.hpp"
#include "drivestyle/common.hpp"
#include "drivestyle/indicators.hpp"
#include "drivestyle/log_io.hpp"
#include "drivestyle/metrics.hpp"
#include "drivestyle/planner.hpp"
#include "drivestyle/reward_model.hpp"
#include "drivestyle/sim.hpp"
#include "drivestyle/trajectory.hpp"

namespace drivestyle {

// ---------------------------------------------------------------------------
// Configuration shared by every stage. One flat JSON object; unknown keys are
// rejected so a typo in a config file fails loudly instead of silently using
// a default.
// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::uint64_t master_seed = 123;
  int runs_per_pair = 8;
  int k = 10;

  int reward_stride = 10;
  int reward_epochs = 250;
  double reward_lr = 1e-3;
  int reward_batch = 64;

  int planner_stride = 5;
  int planner_epochs = 30;
  double planner_lr = 1e-3;
  int planner_batch = 32;

  int finetune_stride = 20;
  int finetune_epochs = 8;
  double finetune_lr = 1e-4;
  double lambda_style = 1.0;
  double mu_smooth = 1.0;
  int finetune_batch = 32;

  int rollout_runs = 5;
  int waypoint_rate = 15;
  int parallel = 1;

  void validate() const {
    if (runs_per_pair < 1) throw ValidationError("config: runs_per_pair must be >= 1");
    if (k < 1) throw ValidationError("config: k must be >= 1");
    if (reward_stride < 1 || planner_stride < 1 || finetune_stride < 1)
      throw ValidationError("config: strides must be >= 1");
    if (reward_epochs < 1 || planner_epochs < 1 || finetune_epochs < 1)
      throw ValidationError("config: epoch counts must be >= 1");
    if (reward_batch < 1 || planner_batch < 1 || finetune_batch < 1)
      throw ValidationError("config: batch sizes must be >= 1");
    if (!(reward_lr > 0) || !(planner_lr > 0) || !(finetune_lr > 0))
      throw ValidationError("config: learning rates must be positive");
    if (lambda_style < 0) throw ValidationError("config: lambda_style must be >= 0");
    if (mu_smooth < 0) throw ValidationError("config: mu_smooth must be >= 0");
    if (rollout_runs < 1) throw ValidationError("config: rollout_runs must be >= 1");
    if (waypoint_rate < 1) throw ValidationError("config: waypoint_rate must be >= 1");
    if (parallel < 1) throw ValidationError("config: parallel must be >= 1");
  }
};

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  return nlohmann::json{{"master_seed", c.master_seed},
                        {"runs_per_pair", c.runs_per_pair},
                        {"k", c.k},
                        {"reward_stride", c.reward_stride},
                        {"reward_epochs", c.reward_epochs},
                        {"reward_lr", c.reward_lr},
                        {"reward_batch", c.reward_batch},
                        {"planner_stride", c.planner_stride},
                        {"planner_epochs", c.planner_epochs},
                        {"planner_lr", c.planner_lr},
                        {"planner_batch", c.planner_batch},
                        {"finetune_stride", c.finetune_stride},
                        {"finetune_epochs", c.finetune_epochs},
                        {"finetune_lr", c.finetune_lr},
                        {"lambda_style", c.lambda_style},
                        {"mu_smooth", c.mu_smooth},
                        {"finetune_batch", c.finetune_batch},
                        {"rollout_runs", c.rollout_runs},
                        {"waypoint_rate", c.waypoint_rate},
                        {"parallel", c.parallel}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config: top level must be a JSON object");
  PipelineConfig c;
  const nlohmann::json defaults = pipeline_config_to_json(c);
  for (const auto& item : j.items())
    if (!defaults.contains(item.key()))
      throw ValidationError("config: unknown key \"" + item.key() + "\"");
  try {
    c.master_seed = j.value("master_seed", c.master_seed);
    c.runs_per_pair = j.value("runs_per_pair", c.runs_per_pair);
    c.k = j.value("k", c.k);
    c.reward_stride = j.value("reward_stride", c.reward_stride);
    c.reward_epochs = j.value("reward_epochs", c.reward_epochs);
    c.reward_lr = j.value("reward_lr", c.reward_lr);
    c.reward_batch = j.value("reward_batch", c.reward_batch);
    c.planner_stride = j.value("planner_stride", c.planner_stride);
    c.planner_epochs = j.value("planner_epochs", c.planner_epochs);
    c.planner_lr = j.value("planner_lr", c.planner_lr);
    c.planner_batch = j.value("planner_batch", c.planner_batch);
    c.finetune_stride = j.value("finetune_stride", c.finetune_stride);
    c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
    c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
    c.lambda_style = j.value("lambda_style", c.lambda_style);
    c.mu_smooth = j.value("mu_smooth", c.mu_smooth);
    c.finetune_batch = j.value("finetune_batch", c.finetune_batch);
    c.rollout_runs = j.value("rollout_runs", c.rollout_runs);
    c.waypoint_rate = j.value("waypoint_rate", c.waypoint_rate);
    c.parallel = j.value("parallel", c.parallel);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, "config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Manifest: records what gen-data produced so downstream stages can reload
// the corpus without re-deriving anything.
// ---------------------------------------------------------------------------

inline nlohmann::json profile_to_json(const DriverProfile& p) {
  return nlohmann::json{{"desired_speed", p.desired_speed},
                        {"time_headway", p.time_headway},
                        {"max_accel", p.max_accel},
                        {"comfort_decel", p.comfort_decel},
                        {"min_gap", p.min_gap},
                        {"lane_change_propensity", p.lane_change_propensity},
                        {"brake_aggression", p.brake_aggression},
                        {"noise_scale", p.noise_scale}};
}

inline DriverProfile profile_from_json(const std::string& id, const nlohmann::json& j) {
  DriverProfile p;
  p.id = id;
  try {
    p.desired_speed = j.at("desired_speed").get<double>();
    p.time_headway = j.at("time_headway").get<double>();
    p.max_accel = j.at("max_accel").get<double>();
    p.comfort_decel = j.at("comfort_decel").get<double>();
    p.min_gap = j.at("min_gap").get<double>();
    p.lane_change_propensity = j.at("lane_change_propensity").get<double>();
    p.brake_aggression = j.at("brake_aggression").get<double>();
    p.noise_scale = j.at("noise_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("profile \"" + id + "\": " + e.what());
  }
  p.validate();
  return p;
}

inline nlohmann::json scenario_to_json(const ScenarioSpec& s) {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& ph : s.lead.phases)
    phases.push_back({{"t_start", ph.t_start}, {"target_speed", ph.target_speed}});
  return nlohmann::json{{"scenario_id", s.scenario_id},
                        {"route_length_m", s.route_length_m},
                        {"lane_count", s.lane_count},
                        {"reference_speed", s.reference_speed},
                        {"lead",
                         {{"present", s.lead.present},
                          {"initial_gap", s.lead.initial_gap},
                          {"phases", phases}}}};
}

inline ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  try {
    LeadScript lead;
    const auto& jl = j.at("lead");
    lead.present = jl.at("present").get<bool>();
    lead.initial_gap = jl.at("initial_gap").get<double>();
    for (const auto& jp : jl.at("phases"))
      lead.phases.push_back(
          {jp.at("t_start").get<double>(), jp.at("target_speed").get<double>()});
    // make_scenario recomputes the derived context array.
    return make_scenario(j.at("scenario_id").get<std::string>(),
                         j.at("route_length_m").get<double>(), j.at("lane_count").get<int>(),
                         j.at("reference_speed").get<double>(), lead);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scenario: ") + e.what());
  }
}

struct CorpusManifest {
  std::uint64_t seed = 0;
  int runs_per_pair = 0;
  std::vector<DriverProfile> profiles;
  std::vector<ScenarioSpec> scenarios;
  std::vector<std::string> logs;  // paths relative to the output root

  const ScenarioSpec& scenario(const std::string& id) const {
    for (const auto& s : scenarios)
      if (s.scenario_id == id) return s;
    throw ValidationError("manifest: unknown scenario \"" + id + "\"");
  }
};

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
  nlohmann::json profiles = nlohmann::json::object();
  for (const auto& p : m.profiles) profiles[p.id] = profile_to_json(p);
  nlohmann::json scenarios = nlohmann::json::array();
  for (const auto& s : m.scenarios) scenarios.push_back(scenario_to_json(s));
  return nlohmann::json{{"seed", m.seed},
                        {"runs_per_pair", m.runs_per_pair},
                        {"profiles", profiles},
                        {"scenarios", scenarios},
                        {"logs", m.logs}};
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j) {
  CorpusManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.runs_per_pair = j.at("runs_per_pair").get<int>();
    for (const auto& item : j.at("profiles").items())
      m.profiles.push_back(profile_from_json(item.key(), item.value()));
    for (const auto& js : j.at("scenarios")) m.scenarios.push_back(scenario_from_json(js));
    m.logs = j.at("logs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Artifact layout under one output root. Every stage reads and writes through
// these paths so the on-disk contract lives in a single place.
// ---------------------------------------------------------------------------

struct ArtifactPaths {
  std::filesystem::path root;

  std::filesystem::path corpus_dir() const { return root / "corpus"; }
  std::filesystem::path manifest() const { return corpus_dir() / "manifest.json"; }
  std::filesystem::path indicators_raw() const { return root / "indicators_raw.csv"; }
  std::filesystem::path indicators_norm() const { return root / "indicators_norm.csv"; }
  std::filesystem::path scenario_stats() const { return root / "scenario_stats.json"; }
  std::filesystem::path selection() const { return root / "selection.json"; }
  std::filesystem::path similarity() const { return root / "similarity.json"; }
  std::filesystem::path reward_checkpoint() const { return root / "reward.json"; }
  std::filesystem::path reward_curve() const { return root / "reward_curve.json"; }
  std::filesystem::path planner_checkpoint() const { return root / "planner_pretrained.json"; }
  std::filesystem::path planner_curve() const { return root / "planner_curve.json"; }
  std::filesystem::path finetune_dir() const { return root / "finetune"; }
  std::filesystem::path finetune_checkpoint(const std::string& driver,
                                            Variant variant) const {
    return finetune_dir() / (driver + "_" + variant_to_string(variant) + ".json");
  }
  std::filesystem::path finetune_report(const std::string& driver, Variant variant) const {
    return finetune_dir() / (driver + "_" + variant_to_string(variant) + "_report.json");
  }
  std::filesystem::path rollout_dir() const { return root / "rollouts"; }
  std::filesystem::path report() const { return root / "report.md"; }
};

namespace detail {

inline std::string log_key(const std::string& driver, const std::string& scenario, int run) {
  return driver + "/" + scenario + "/" + std::to_string(run);
}

inline std::uint64_t string_salt(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file_atomic(path, j.dump(2) + "\n");
}

// Normalized indicator rows keyed by source log.
inline std::unordered_map<std::string, std::size_t> index_rows(
    const std::vector<IndicatorVector>& rows) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < rows.size(); ++i)
    index[log_key(rows[i].driver_id, rows[i].scenario_id, rows[i].run_index)] = i;
  return index;
}

inline std::vector<std::size_t> selected_catalog_indices(const SelectionResult& sel,
                                                         const IndicatorCatalog& catalog) {
  std::vector<std::size_t> idx;
  idx.reserve(sel.selected_ids.size());
  for (const auto& id : sel.selected_ids) idx.push_back(catalog.index_of(id));
  return idx;
}

inline Eigen::VectorXd row_slice(const IndicatorVector& row,
                                 const std::vector<std::size_t>& indices) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = row.values[indices[i]];
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage: gen-data. Simulates every profile on every scenario and writes one
// JSONL log per run plus the manifest.
// ---------------------------------------------------------------------------

inline CorpusManifest run_gen_data(const PipelineConfig& cfg, const ArtifactPaths& paths) {
  cfg.validate();
  std::vector<DriverProfile> profiles = default_profiles();
  profiles.push_back(expert_profile());
  const std::vector<ScenarioSpec>& scenarios = builtin_scenarios();

  Corpus corpus = generate_corpus(profiles, scenarios, cfg.runs_per_pair, cfg.master_seed);

  std::filesystem::create_directories(paths.corpus_dir());
  CorpusManifest manifest;
  manifest.seed = cfg.master_seed;
  manifest.runs_per_pair = cfg.runs_per_pair;
  manifest.profiles = profiles;
  manifest.scenarios = scenarios;
  for (const auto& log : corpus.logs) {
    const std::string name =
        log.driver_id + "_" + log.scenario_id + "_r" + std::to_string(log.run_index) + ".jsonl";
    write_log_file(paths.corpus_dir() / name, log);
    manifest.logs.push_back("corpus/" + name);
  }
  detail::write_json_file(paths.manifest(), manifest_to_json(manifest));
  return manifest;
}

inline CorpusManifest load_manifest(const ArtifactPaths& paths) {
  return manifest_from_json(detail::read_json_file(paths.manifest()));
}

// ---------------------------------------------------------------------------
// Stage: extract. Computes the raw indicator table, fits per-scenario min-max
// stats, and writes both the raw and normalized CSVs.
// ---------------------------------------------------------------------------

struct ExtractResult {
  std::vector<IndicatorVector> raw;
  std::vector<IndicatorVector> normalized;
  ScenarioNormStats stats;
};

inline ExtractResult run_extract(const ArtifactPaths& paths) {
  const CorpusManifest manifest = load_manifest(paths);
  if (manifest.logs.empty()) throw ValidationError("extract: manifest lists no logs");

  ExtractResult result;
  result.raw.reserve(manifest.logs.size());
  for (const auto& rel : manifest.logs) {
    const TrajectoryLog log = parse_log_file(paths.root / rel);
    result.raw.push_back(compute_indicators(log));
  }
  result.stats = compute_scenario_stats(result.raw);
  result.normalized = apply_scenario_minmax(result.raw, result.stats);

  write_text_file_atomic(paths.indicators_raw(), write_indicator_csv(result.raw));
  write_text_file_atomic(paths.indicators_norm(), write_indicator_csv(result.normalized));
  detail::write_json_file(paths.scenario_stats(), result.stats.to_json());
  return result;
}

inline std::vector<IndicatorVector> load_normalized_rows(const ArtifactPaths& paths) {
  return parse_indicator_csv(read_text_file(paths.indicators_norm()));
}

inline ScenarioNormStats load_scenario_stats(const ArtifactPaths& paths) {
  return ScenarioNormStats::from_json(detail::read_json_file(paths.scenario_stats()));
}

// The reference profile drives like a textbook and is kept out of style
// statistics; it only supplies pretraining demonstrations.
inline const std::vector<std::string>& default_excluded_drivers() {
  static const std::vector<std::string> v = {expert_profile().id};
  return v;
}

inline std::vector<IndicatorVector> drop_drivers(std::vector<IndicatorVector> rows,
                                                 const std::vector<std::string>& excluded) {
  rows.erase(std::remove_if(rows.begin(), rows.end(),
                            [&](const IndicatorVector& r) {
                              return std::find(excluded.begin(), excluded.end(), r.driver_id) !=
                                     excluded.end();
                            }),
             rows.end());
  return rows;
}

// ---------------------------------------------------------------------------
// Stage: select-indicators. Ranks catalog entries by across-driver spread on
// the normalized table and keeps the top k.
// ---------------------------------------------------------------------------

inline SelectionResult run_select_indicators(
    const ArtifactPaths& paths, int k,
    const std::vector<std::string>& excluded = default_excluded_drivers()) {
  const std::vector<IndicatorVector> rows = drop_drivers(load_normalized_rows(paths), excluded);
  if (rows.empty()) throw ValidationError("select-indicators: no rows after exclusions");
  const SelectionResult sel = select_top_k(rows, k);
  detail::write_json_file(paths.selection(), selection_to_json(sel));
  return sel;
}

inline SelectionResult load_selection(const ArtifactPaths& paths) {
  return selection_from_json(detail::read_json_file(paths.selection()));
}

// ---------------------------------------------------------------------------
// Stage: eval-style. Builds one style distribution per driver from the
// selected indicator dimensions and writes the pairwise similarity report.
// ---------------------------------------------------------------------------

inline SimilarityReport run_eval_style(
    const PipelineConfig& cfg, const ArtifactPaths& paths,
    const std::vector<std::string>& excluded = default_excluded_drivers()) {
  const std::vector<IndicatorVector> rows = drop_drivers(load_normalized_rows(paths), excluded);
  const SelectionResult sel = load_selection(paths);
  const std::vector<std::size_t> indices =
      detail::selected_catalog_indices(sel, builtin_catalog());

  std::vector<StyleDistribution> dists;
  std::unordered_map<std::string, std::size_t> by_driver;
  for (const auto& row : rows) {
    auto [it, fresh] = by_driver.try_emplace(row.driver_id, dists.size());
    if (fresh) dists.push_back({row.driver_id, {}});
    Sample sample;
    sample.reserve(indices.size());
    for (std::size_t idx : indices) sample.push_back(row.values[idx]);
    dists[it->second].samples.push_back(std::move(sample));
  }

  const SimilarityReport rep = similarity_report(dists, mix_seed(cfg.master_seed, 0xE5));
  detail::write_json_file(paths.similarity(), similarity_to_json(rep));
  return rep;
}

// ---------------------------------------------------------------------------
// Stage: train-reward. Each trajectory segment becomes one training example;
// the target is the normalized style vector of the log the segment came from,
// restricted to the selected indicators.
// ---------------------------------------------------------------------------

inline RewardTrainResult run_train_reward(const PipelineConfig& cfg, const ArtifactPaths& paths) {
  const CorpusManifest manifest = load_manifest(paths);
  const std::vector<IndicatorVector> rows = load_normalized_rows(paths);
  const SelectionResult sel = load_selection(paths);
  if (static_cast<int>(sel.selected_ids.size()) != kStyleDim)
    throw ValidationError("train-reward: selection must have exactly " +
                          std::to_string(kStyleDim) + " indicators, got " +
                          std::to_string(sel.selected_ids.size()));
  const std::vector<std::size_t> indices =
      detail::selected_catalog_indices(sel, builtin_catalog());
  const auto row_index = detail::index_rows(rows);

  std::vector<RewardTrainSample> dataset;
  for (const auto& rel : manifest.logs) {
    const TrajectoryLog log = parse_log_file(paths.root / rel);
    const auto it =
        row_index.find(detail::log_key(log.driver_id, log.scenario_id, log.run_index));
    if (it == row_index.end())
      throw ValidationError("train-reward: no indicator row for log " + rel);
    const Eigen::VectorXd target = detail::row_slice(rows[it->second], indices);
    const auto& ctx = manifest.scenario(log.scenario_id).context;
    const std::vector<double> context(ctx.begin(), ctx.end());
    const std::string group =
        detail::log_key(log.driver_id, log.scenario_id, log.run_index);
    for (const auto& seg : slice_segments(log, cfg.reward_stride))
      dataset.push_back({trajectory_features(seg, context), target, group});
  }

  RewardTrainConfig rtc;
  rtc.learning_rate = cfg.reward_lr;
  rtc.batch_size = cfg.reward_batch;
  rtc.epochs = cfg.reward_epochs;
  rtc.seed = mix_seed(cfg.master_seed, 0x5E);
  RewardTrainResult result = train_reward(dataset, rtc, kPlannerContextDim);

  detail::write_json_file(paths.reward_checkpoint(), reward_to_json(result.params));
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& e : result.curve)
    curve.push_back({{"train_mse", e.train_mse}, {"val_mse", e.val_mse}});
  detail::write_json_file(paths.reward_curve(), curve);
  return result;
}

inline RewardNetParams load_reward(const ArtifactPaths& paths) {
  return reward_from_json(detail::read_json_file(paths.reward_checkpoint()));
}

// ---------------------------------------------------------------------------
// Stage: pretrain-planner. Behavior cloning on the reference profile's logs.
// ---------------------------------------------------------------------------

inline PretrainResult run_pretrain_planner(const PipelineConfig& cfg,
                                               const ArtifactPaths& paths) {
  const CorpusManifest manifest = load_manifest(paths);
  const std::string& expert_id = expert_profile().id;

  std::vector<ImitationSample> data;
  for (const auto& rel : manifest.logs) {
    const TrajectoryLog log = parse_log_file(paths.root / rel);
    if (log.driver_id != expert_id) continue;
    const auto& ctx = manifest.scenario(log.scenario_id).context;
    for (auto& s : make_imitation_samples(log, ctx, cfg.planner_stride))
      data.push_back(std::move(s));
  }
  if (data.empty())
    throw ValidationError("pretrain-planner: no logs from driver \"" + expert_id + "\"");

  PlannerTrainConfig ptc;
  ptc.learning_rate = cfg.planner_lr;
  ptc.batch_size = cfg.planner_batch;
  ptc.epochs = cfg.planner_epochs;
  ptc.seed = mix_seed(cfg.master_seed, 0x92);
  PlannerParams start = init_planner_params(mix_seed(cfg.master_seed, 0x91));
  PretrainResult result = pretrain_planner(start, data, ptc);

  detail::write_json_file(paths.planner_checkpoint(), planner_to_json(result.params));
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& e : result.curve)
    curve.push_back({{"loss", e.loss},
                     {"winner_mse", e.winner_mse},
                     {"proposal_spread", e.proposal_spread}});
  detail::write_json_file(paths.planner_curve(), curve);
  return result;
}

inline PlannerParams load_planner(const std::filesystem::path& path) {
  return planner_from_json(detail::read_json_file(path));
}

// ---------------------------------------------------------------------------
// Stage: finetune. Adapts the pretrained head toward one driver's style and
// probes style alignment before and after.
// ---------------------------------------------------------------------------

// Everything evaluate_style_alignment needs for one target driver, assembled
// from the corpus artifacts.
inline StyleEvalSet build_style_eval_set(const CorpusManifest& manifest,
                                         const ArtifactPaths& paths,
                                         const std::vector<IndicatorVector>& rows,
                                         const SelectionResult& sel,
                                         const ScenarioNormStats& stats,
                                         const std::string& driver_id, int stride) {
  const std::vector<std::size_t> indices =
      detail::selected_catalog_indices(sel, builtin_catalog());
  const auto row_index = detail::index_rows(rows);

  StyleEvalSet set;
  set.selected_ids = sel.selected_ids;
  set.stats = stats;
  bool found = false;
  for (const auto& rel : manifest.logs) {
    const TrajectoryLog log = parse_log_file(paths.root / rel);
    if (log.driver_id != driver_id) continue;
    found = true;
    const auto it =
        row_index.find(detail::log_key(log.driver_id, log.scenario_id, log.run_index));
    if (it == row_index.end())
      throw ValidationError("style eval: no indicator row for log " + rel);
    const auto& ctx = manifest.scenario(log.scenario_id).context;
    for (const auto& s : make_imitation_samples(log, ctx, stride))
      set.samples.push_back({s.input, log.scenario_id, s.group});
    const Eigen::VectorXd target = detail::row_slice(rows[it->second], indices);
    set.target_styles.push_back(
        std::vector<double>(target.data(), target.data() + target.size()));
  }
  if (!found) throw ValidationError("style eval: no logs from driver \"" + driver_id + "\"");
  return set;
}

inline FinetuneReport run_finetune(const PipelineConfig& cfg, const ArtifactPaths& paths,
                                   const std::string& driver_id, Variant variant) {
  const CorpusManifest manifest = load_manifest(paths);
  const std::vector<IndicatorVector> rows = load_normalized_rows(paths);
  const SelectionResult sel = load_selection(paths);
  const ScenarioNormStats stats = load_scenario_stats(paths);
  const RewardNetParams reward = load_reward(paths);
  PlannerParams planner = load_planner(paths.planner_checkpoint());
  const std::vector<std::size_t> indices =
      detail::selected_catalog_indices(sel, builtin_catalog());
  const auto row_index = detail::index_rows(rows);

  std::vector<FinetuneSample> samples;
  for (const auto& rel : manifest.logs) {
    const TrajectoryLog log = parse_log_file(paths.root / rel);
    if (log.driver_id != driver_id) continue;
    const auto it =
        row_index.find(detail::log_key(log.driver_id, log.scenario_id, log.run_index));
    if (it == row_index.end())
      throw ValidationError("finetune: no indicator row for log " + rel);
    const Eigen::VectorXd style = detail::row_slice(rows[it->second], indices);
    const auto& ctx = manifest.scenario(log.scenario_id).context;
    for (auto& s : make_finetune_samples(log, ctx, cfg.finetune_stride, style))
      samples.push_back(std::move(s));
  }
  if (samples.empty())
    throw ValidationError("finetune: no logs from driver \"" + driver_id + "\"");

  const StyleEvalSet eval_set = build_style_eval_set(manifest, paths, rows, sel, stats,
                                                     driver_id, cfg.finetune_stride);
  const StyleProbe probe = [&](const PlannerParams& p) {
    return evaluate_style_alignment(p, &reward, eval_set);
  };

  FinetuneConfig ftc;
  ftc.variant = variant;
  ftc.lambda_style = cfg.lambda_style;
  ftc.mu_smooth = cfg.mu_smooth;
  ftc.learning_rate = cfg.finetune_lr;
  ftc.batch_size = cfg.finetune_batch;
  ftc.epochs = cfg.finetune_epochs;
  ftc.seed = mix_seed(cfg.master_seed, 0xF1, detail::string_salt(driver_id),
                      static_cast<std::uint64_t>(variant));
  ftc.target_driver_id = driver_id;

  auto [tuned, report] = finetune(planner, reward, samples, ftc, probe);

  std::filesystem::create_directories(paths.finetune_dir());
  detail::write_json_file(paths.finetune_checkpoint(driver_id, variant),
                          planner_to_json(tuned));
  detail::write_json_file(paths.finetune_report(driver_id, variant),
                          finetune_report_to_json(report));
  return report;
}

// ---------------------------------------------------------------------------
// Stage: rollout. Drives a checkpoint through a scenario across several
// seeds and summarizes the outcome.
// ---------------------------------------------------------------------------

struct RolloutBatch {
  std::string label;
  std::string scenario_id;
  std::vector<RolloutResult> runs;
  double success_rate = 0.0;
  double mean_driving_score = 0.0;
  int collisions = 0;
};

inline RolloutBatch rollout_batch(const PlannerParams& planner, const ScenarioSpec& scenario,
                                  int runs, std::uint64_t base_seed, int waypoint_rate,
                                  bool use_safety_override, int parallel,
                                  const std::string& label) {
  if (runs < 1) throw ValidationError("rollout: runs must be >= 1");
  RolloutBatch batch;
  batch.label = label;
  batch.scenario_id = scenario.scenario_id;
  batch.runs.resize(static_cast<std::size_t>(runs));
  std::vector<std::string> errors(static_cast<std::size_t>(runs));
  parallel_for(static_cast<std::size_t>(runs), parallel, [&](std::size_t i) {
    RolloutOptions opts;
    opts.waypoint_rate = waypoint_rate;
    opts.use_safety_override = use_safety_override;
    opts.label = label;
    opts.seed = mix_seed(base_seed, 0xA0, static_cast<std::uint64_t>(i));
    try {
      batch.runs[i] = rollout(planner, scenario, opts);
    } catch (const NumericError& e) {
      errors[i] = e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw NumericError("rollout " + scenario.scenario_id + ": " + e);

  for (const auto& r : batch.runs) {
    batch.success_rate += r.metrics.success ? 1.0 : 0.0;
    batch.mean_driving_score += r.metrics.driving_score;
    batch.collisions += r.metrics.collisions;
  }
  batch.success_rate /= runs;
  batch.mean_driving_score /= runs;
  return batch;
}

inline nlohmann::json rollout_batch_to_json(const RolloutBatch& batch) {
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& r : batch.runs) metrics.push_back(metrics_to_json(r.metrics));
  return nlohmann::json{{"label", batch.label},
                        {"scenario_id", batch.scenario_id},
                        {"runs", static_cast<int>(batch.runs.size())},
                        {"success_rate", batch.success_rate},
                        {"mean_driving_score", batch.mean_driving_score},
                        {"collisions", batch.collisions},
                        {"metrics", metrics}};
}

inline RolloutBatch run_rollout(const PipelineConfig& cfg, const ArtifactPaths& paths,
                                const std::filesystem::path& planner_path,
                                const std::string& scenario_id, const std::string& label,
                                bool use_safety_override = true) {
  const PlannerParams planner = load_planner(planner_path);
  const ScenarioSpec& scenario = scenario_by_id(scenario_id);
  const RolloutBatch batch =
      rollout_batch(planner, scenario, cfg.rollout_runs, cfg.master_seed, cfg.waypoint_rate,
                    use_safety_override, cfg.parallel, label);

  const std::filesystem::path dir = paths.rollout_dir() / label / scenario_id;
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < batch.runs.size(); ++i)
    write_log_file(dir / ("run_" + std::to_string(i) + ".jsonl"), batch.runs[i].log);
  detail::write_json_file(dir / "summary.json", rollout_batch_to_json(batch));
  return batch;
}

// ---------------------------------------------------------------------------
// Stage: report. Renders whatever artifacts exist into one markdown page.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string md_num(double v) { return fmt_double(v); }

inline void report_selection(const nlohmann::json& j, std::string& md) {
  md += "## Selected indicators\n\n| rank | indicator | spread score |\n|---|---|---|\n";
  const auto& scores = j.at("scores");
  int rank = 1;
  for (const auto& id : j.at("selected")) {
    const std::string name = id.get<std::string>();
    md += "| " + std::to_string(rank++) + " | " + name + " | " +
          md_num(scores.at(name).get<double>()) + " |\n";
  }
  md += "\n";
}

inline void report_similarity(const nlohmann::json& j, std::string& md) {
  const double intra_mmdss = j.at("intra").at("mmdss").get<double>();
  const double inter_mmdss = j.at("inter").at("mmdss").get<double>();
  md += "## Style separability\n\n";
  md += "| statistic | MMDSS | KL |\n|---|---|---|\n";
  md += "| intra-driver mean | " + md_num(intra_mmdss) + " | " +
        md_num(j.at("intra").at("kl").get<double>()) + " |\n";
  md += "| inter-driver mean | " + md_num(inter_mmdss) + " | " +
        md_num(j.at("inter").at("kl").get<double>()) + " |\n";
  md += "| gap (intra - inter MMDSS) | " + md_num(intra_mmdss - inter_mmdss) + " | |\n\n";
}

inline void report_curves(const nlohmann::json* reward, const nlohmann::json* planner,
                          std::string& md) {
  if (!reward && !planner) return;
  md += "## Training\n\n";
  if (reward && !reward->empty()) {
    const auto& last = reward->back();
    md += "- style reward: final train MSE " + md_num(last.at("train_mse").get<double>()) +
          ", validation MSE " + md_num(last.at("val_mse").get<double>()) + " after " +
          std::to_string(reward->size()) + " epochs\n";
  }
  if (planner && !planner->empty()) {
    const auto& last = planner->back();
    md += "- planner pretraining: final loss " + md_num(last.at("loss").get<double>()) +
          ", winner MSE " + md_num(last.at("winner_mse").get<double>()) + " after " +
          std::to_string(planner->size()) + " epochs\n";
  }
  md += "\n";
}

inline void report_finetunes(const std::vector<nlohmann::json>& reports, std::string& md) {
  if (reports.empty()) return;
  md += "## Fine-tuning\n\n| driver | variant | style MMDSS before | after | change |\n"
        "|---|---|---|---|---|\n";
  for (const auto& j : reports) {
    const std::string driver = j.at("target_driver_id").get<std::string>();
    const std::string variant = j.at("variant").get<std::string>();
    std::string pre = "-", post = "-", delta = "-";
    if (!j.at("pre_style_mmdss").is_null() && !j.at("post_style_mmdss").is_null()) {
      const double a = j.at("pre_style_mmdss").get<double>();
      const double b = j.at("post_style_mmdss").get<double>();
      pre = md_num(a);
      post = md_num(b);
      delta = md_num(b - a);
    }
    md += "| " + driver + " | " + variant + " | " + pre + " | " + post + " | " + delta + " |\n";
  }
  md += "\n";
}

inline void report_rollouts(const std::vector<nlohmann::json>& summaries, std::string& md) {
  if (summaries.empty()) return;
  md += "## Closed-loop driving\n\n| checkpoint | scenario | runs | success rate | "
        "mean driving score | collisions |\n|---|---|---|---|---|---|\n";
  for (const auto& j : summaries)
    md += "| " + j.at("label").get<std::string>() + " | " +
          j.at("scenario_id").get<std::string>() + " | " +
          std::to_string(j.at("runs").get<int>()) + " | " +
          md_num(j.at("success_rate").get<double>()) + " | " +
          md_num(j.at("mean_driving_score").get<double>()) + " | " +
          std::to_string(j.at("collisions").get<int>()) + " |\n";
  md += "\n";
}

}  // namespace detail

inline std::string run_report(const ArtifactPaths& paths) {
  namespace fs = std::filesystem;
  std::string md = "# Driving-style pipeline report\n\n";
  bool any = false;

  if (fs::exists(paths.manifest())) {
    const CorpusManifest m = load_manifest(paths);
    md += "Corpus: " + std::to_string(m.logs.size()) + " logs from " +
          std::to_string(m.profiles.size()) + " drivers on " +
          std::to_string(m.scenarios.size()) + " scenarios (seed " + std::to_string(m.seed) +
          ", " + std::to_string(m.runs_per_pair) + " runs per pair).\n\n";
    any = true;
  }
  if (fs::exists(paths.selection())) {
    detail::report_selection(detail::read_json_file(paths.selection()), md);
    any = true;
  }
  if (fs::exists(paths.similarity())) {
    detail::report_similarity(detail::read_json_file(paths.similarity()), md);
    any = true;
  }
  {
    nlohmann::json reward_curve, planner_curve;
    const nlohmann::json* rp = nullptr;
    const nlohmann::json* pp = nullptr;
    if (fs::exists(paths.reward_curve())) {
      reward_curve = detail::read_json_file(paths.reward_curve());
      rp = &reward_curve;
      any = true;
    }
    if (fs::exists(paths.planner_curve())) {
      planner_curve = detail::read_json_file(paths.planner_curve());
      pp = &planner_curve;
      any = true;
    }
    detail::report_curves(rp, pp, md);
  }
  if (fs::exists(paths.finetune_dir())) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(paths.finetune_dir()))
      if (entry.path().filename().string().ends_with("_report.json"))
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<nlohmann::json> reports;
    for (const auto& f : files) reports.push_back(detail::read_json_file(f));
    detail::report_finetunes(reports, md);
    if (!reports.empty()) any = true;
  }
  if (fs::exists(paths.rollout_dir())) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(paths.rollout_dir()))
      if (entry.path().filename() == "summary.json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<nlohmann::json> summaries;
    for (const auto& f : files) summaries.push_back(detail::read_json_file(f));
    detail::report_rollouts(summaries, md);
    if (!summaries.empty()) any = true;
  }

  if (!any)
    throw ValidationError("report: no artifacts found under " + paths.root.string());
  write_text_file_atomic(paths.report(), md);
  return md;
}

}  // namespace drivestyle
