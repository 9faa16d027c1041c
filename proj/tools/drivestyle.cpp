// Command-line driver: every pipeline stage as a subcommand with file-based
// handoffs. Exit codes: 0 success, 2 input error, 3 numeric failure, 4 I/O.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "drivestyle/pipeline.hpp"

namespace {

using namespace drivestyle;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int parallel = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_parallel = false) {
  cmd->add_option("--config", args.config_path, "pipeline config JSON")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out_dir, "artifact directory")->required();
  cmd->add_option("--seed", args.seed, "override the config master seed");
  if (with_parallel)
    cmd->add_option("--parallel", args.parallel, "worker threads")->check(CLI::PositiveNumber);
}

PipelineConfig resolve_config(const CommonArgs& args) {
  PipelineConfig cfg;
  if (!args.config_path.empty()) cfg = load_pipeline_config(args.config_path);
  if (args.seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(args.seed);
  if (args.parallel > 0) {
    const int cores = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    cfg.parallel = std::min(args.parallel, cores);
  }
  cfg.validate();
  return cfg;
}

ArtifactPaths resolve_paths(const CommonArgs& args) {
  ArtifactPaths paths{std::filesystem::path(args.out_dir)};
  std::filesystem::create_directories(paths.root);
  return paths;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"driving-style toolkit: synthetic corpus, style metrics, planner adaptation"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string driver_id;
  std::string variant_name = "pdsa";
  std::string planner_path;
  std::string scenario_id;
  std::string label = "planner";
  bool no_override = false;
  int k = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "simulate the driver/scenario corpus");
  add_common(gen, args);

  CLI::App* extract = app.add_subcommand("extract", "compute raw and normalized indicators");
  add_common(extract, args);

  CLI::App* select = app.add_subcommand("select-indicators", "rank indicators by spread");
  add_common(select, args);
  select->add_option("--k", k, "number of indicators to keep")->check(CLI::PositiveNumber);

  CLI::App* eval = app.add_subcommand("eval-style", "pairwise driver similarity report");
  add_common(eval, args, true);

  CLI::App* reward = app.add_subcommand("train-reward", "train the style reward net");
  add_common(reward, args);

  CLI::App* pretrain = app.add_subcommand("pretrain-planner", "behavior-clone the planner");
  add_common(pretrain, args);

  CLI::App* ft = app.add_subcommand("finetune", "adapt the planner head to one driver");
  add_common(ft, args);
  ft->add_option("--driver", driver_id, "target driver id")->required();
  ft->add_option("--variant", variant_name, "dft, pdsa-wb, or pdsa")
      ->check(CLI::IsMember({"dft", "pdsa-wb", "pdsa"}));

  CLI::App* roll = app.add_subcommand("rollout", "closed-loop runs of a checkpoint");
  add_common(roll, args, true);
  roll->add_option("--planner", planner_path, "planner checkpoint JSON")
      ->required()
      ->check(CLI::ExistingFile);
  roll->add_option("--scenario", scenario_id, "scenario id (default: all builtin)");
  roll->add_option("--label", label, "name for the rollout artifact directory");
  roll->add_flag("--no-override", no_override, "disable the safety override");

  CLI::App* report = app.add_subcommand("report", "render artifacts to markdown");
  add_common(report, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    const PipelineConfig cfg = resolve_config(args);
    const ArtifactPaths paths = resolve_paths(args);

    if (gen->parsed()) {
      const CorpusManifest m = run_gen_data(cfg, paths);
      std::printf("gen-data: %zu logs -> %s\n", m.logs.size(), paths.corpus_dir().c_str());
    } else if (extract->parsed()) {
      const ExtractResult ex = run_extract(paths);
      std::printf("extract: %zu rows -> %s\n", ex.normalized.size(),
                  paths.indicators_norm().c_str());
    } else if (select->parsed()) {
      const SelectionResult sel = run_select_indicators(paths, k > 0 ? k : cfg.k);
      std::printf("select-indicators:");
      for (const auto& id : sel.selected_ids) std::printf(" %s", id.c_str());
      std::printf("\n");
    } else if (eval->parsed()) {
      const SimilarityReport rep = run_eval_style(cfg, paths);
      std::printf("eval-style: intra MMDSS %s, inter MMDSS %s -> %s\n",
                  fmt_double(rep.intra_mean_mmdss).c_str(),
                  fmt_double(rep.inter_mean_mmdss).c_str(), paths.similarity().c_str());
    } else if (reward->parsed()) {
      const RewardTrainResult rt = run_train_reward(cfg, paths);
      std::printf("train-reward: val MSE %s after %zu epochs -> %s\n",
                  fmt_double(rt.curve.back().val_mse).c_str(), rt.curve.size(),
                  paths.reward_checkpoint().c_str());
    } else if (pretrain->parsed()) {
      const PretrainResult pt = run_pretrain_planner(cfg, paths);
      std::printf("pretrain-planner: winner MSE %s after %zu epochs -> %s\n",
                  fmt_double(pt.curve.back().winner_mse).c_str(), pt.curve.size(),
                  paths.planner_checkpoint().c_str());
    } else if (ft->parsed()) {
      const Variant variant = variant_from_string(variant_name);
      const FinetuneReport rep = run_finetune(cfg, paths, driver_id, variant);
      std::printf("finetune %s/%s: style MMDSS %s -> %s\n", driver_id.c_str(),
                  variant_name.c_str(),
                  rep.pre_style_mmdss ? fmt_double(*rep.pre_style_mmdss).c_str() : "?",
                  rep.post_style_mmdss ? fmt_double(*rep.post_style_mmdss).c_str() : "?");
    } else if (roll->parsed()) {
      std::vector<std::string> ids;
      if (!scenario_id.empty()) {
        ids.push_back(scenario_id);
      } else {
        for (const auto& s : builtin_scenarios()) ids.push_back(s.scenario_id);
      }
      for (const auto& id : ids) {
        const RolloutBatch batch =
            run_rollout(cfg, paths, planner_path, id, label, !no_override);
        std::printf("rollout %s/%s: success %s, score %s, collisions %d\n", label.c_str(),
                    id.c_str(), fmt_double(batch.success_rate).c_str(),
                    fmt_double(batch.mean_driving_score).c_str(), batch.collisions);
      }
    } else if (report->parsed()) {
      run_report(paths);
      std::printf("report -> %s\n", paths.report().c_str());
    }
    return 0;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
}
