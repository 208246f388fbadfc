// Command-line front end: demo generation, policy training, closed-loop
// evaluation with inference-time adaptation variants, and the grasp-map
// stability study. Exit codes: 0 success, 2 usage/validation error,
// 3 numeric failure during training or sampling.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crossgrip/pipeline.hpp"

using namespace crossgrip;

namespace {

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.validate();
    return c;
  }
  return load_config(path);
}

void print_eval_table(const EvalReport& r) {
  std::printf("ablation=%s config_hash=%s\n", r.ablation.c_str(),
              r.config_hash.c_str());
  std::printf("%-8s %8s %8s %10s %10s %6s %8s %9s %10s %9s\n", "gripper", "episodes",
              "success", "grasp_miss", "collision", "drop", "timeout", "succ_rate",
              "mean_div", "min_ftip");
  for (const EvalSummary& s : r.summaries) {
    std::printf("%-8s %8d %8d %10d %10d %6d %8d %9.3f %10.6f %9.4f\n",
                s.gripper.c_str(), s.episodes, s.count(Outcome::Success),
                s.count(Outcome::GraspMiss), s.count(Outcome::Collision),
                s.count(Outcome::Drop), s.count(Outcome::Timeout),
                s.success_rate, s.mean_divergence, s.min_fingertip);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gripper-adaptive diffusion pick-and-place policy toolkit"};
  app.require_subcommand(1);

  // ---- gen-demos ----
  auto* gen = app.add_subcommand(
      "gen-demos", "Run the scripted demonstrator and write a demo dataset");
  std::string gen_config, gen_out;
  int gen_n = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "JSON config file")
      ->check(CLI::ExistingFile);
  gen->add_option("--n", gen_n, "number of successful demos to keep");
  gen->add_option("--seed", gen_seed, "master RNG seed");
  gen->add_option("--out", gen_out, "output dataset path (JSON lines)")
      ->required();

  // ---- train ----
  auto* tr = app.add_subcommand(
      "train", "Train the denoising policy network on a demo dataset");
  std::string tr_config, tr_demos, tr_out, tr_loss;
  int tr_epochs = 0;
  std::uint64_t tr_seed = 0;
  bool tr_raw = false;
  tr->add_option("--config", tr_config, "JSON config file")
      ->check(CLI::ExistingFile);
  tr->add_option("--demos", tr_demos, "demo dataset path")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "output checkpoint path")->required();
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--seed", tr_seed, "training RNG seed");
  tr->add_option("--loss-out", tr_loss,
                 "loss curve CSV path (default: <out>.loss.csv)");
  tr->add_flag("--raw-map", tr_raw,
               "train on raw pooled grasp maps instead of processed ones");

  // ---- eval ----
  auto* ev = app.add_subcommand(
      "eval", "Closed-loop rollout evaluation across grippers");
  std::string ev_config, ev_model, ev_out, ev_ablate = "none", ev_trace;
  std::vector<std::string> ev_grippers;
  int ev_episodes = 0, ev_threads = 1;
  std::uint64_t ev_seed = 0;
  ev->add_option("--config", ev_config, "JSON config file")
      ->check(CLI::ExistingFile);
  ev->add_option("--model", ev_model, "policy checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "output report path (JSON)")->required();
  ev->add_option("--grippers", ev_grippers,
                 "comma-separated gripper ids (default: all configured)")
      ->delimiter(',');
  ev->add_option("--episodes", ev_episodes, "episodes per gripper");
  ev->add_option("--ablate", ev_ablate,
                 "none | no-projection | no-mapping | no-graspmap");
  ev->add_option("--seed", ev_seed, "evaluation RNG seed");
  ev->add_option("--threads", ev_threads, "worker threads")
      ->check(CLI::PositiveNumber);
  ev->add_option("--trace-projection", ev_trace,
                 "write per-chunk safety-projection trace CSV here");

  // ---- graspmap-eval ----
  auto* gm = app.add_subcommand(
      "graspmap-eval", "Raw-vs-processed grasp-map stability study");
  std::string gm_config, gm_out, gm_dump;
  int gm_pairs = 100;
  std::uint64_t gm_seed = 0;
  gm->add_option("--config", gm_config, "JSON config file")
      ->check(CLI::ExistingFile);
  gm->add_option("--pairs", gm_pairs, "number of rendered map pairs")
      ->check(CLI::PositiveNumber);
  gm->add_option("--seed", gm_seed, "RNG seed");
  gm->add_option("--out", gm_out, "output CSV path")->required();
  gm->add_option("--dump-dir", gm_dump,
                 "also write the first few map pairs as GMAP files here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      RunConfig config = load_config_or_default(gen_config);
      const int n = gen->count("--n") ? gen_n : config.demo_count;
      const std::uint64_t seed =
          gen->count("--seed") ? gen_seed : config.train_seed;
      const DemoGenResult r = generate_demo_dataset(config, n, seed);
      save_dataset(r.episodes, gen_out);
      std::printf("episodes=%zu redraws=%d config_hash=%s\n",
                  r.episodes.size(), r.redraws, config_hash(config).c_str());
      return 0;
    }

    if (tr->parsed()) {
      RunConfig config = load_config_or_default(tr_config);
      if (tr->count("--epochs")) config.epochs = tr_epochs;
      if (tr->count("--seed")) config.train_seed = tr_seed;
      if (tr_raw) config.feature_mode = "raw";
      config.validate();
      const auto demos = load_dataset(tr_demos);
      const TrainResult r = train_pipeline(demos, config);
      save_policy(r.model, tr_out);
      const std::string loss_path = tr_loss.empty() ? tr_out + ".loss.csv" : tr_loss;
      save_loss_curve(r.loss_curve, r.model.config_hash, loss_path);
      std::printf("samples=%zu epochs=%d final_mse=%.17g feature_mode=%s "
                  "config_hash=%s\n",
                  build_training_samples(demos, config.t_a, config.feature_mode)
                      .size(),
                  config.epochs,
                  r.loss_curve.empty() ? 0.0 : r.loss_curve.back().second,
                  config.feature_mode.c_str(), r.model.config_hash.c_str());
      return 0;
    }

    if (ev->parsed()) {
      RunConfig config = load_config_or_default(ev_config);
      const PolicyModel model = load_policy(ev_model);
      const Ablation ablation = parse_ablation(ev_ablate);
      if (ablation == Ablation::NoGraspMap && model.feature_mode != "raw")
        throw std::invalid_argument(
            "--ablate no-graspmap requires a checkpoint trained with "
            "--raw-map (feature_mode=raw)");
      if (ablation != Ablation::NoGraspMap && model.feature_mode != "processed")
        throw std::invalid_argument(
            "checkpoint was trained with --raw-map; only --ablate "
            "no-graspmap can evaluate it");
      {
        RunConfig cmp = config;
        cmp.feature_mode = model.feature_mode;
        if (config_hash(cmp) != model.config_hash)
          std::fprintf(stderr,
                       "warning: checkpoint config_hash %s does not match "
                       "current config %s\n",
                       model.config_hash.c_str(), config_hash(cmp).c_str());
      }
      std::vector<std::string> grippers = ev_grippers;
      if (grippers.empty())
        for (const auto& g : config.grippers) grippers.push_back(g.id);
      const int episodes =
          ev->count("--episodes") ? ev_episodes : config.eval_episodes;
      const std::uint64_t seed =
          ev->count("--seed") ? ev_seed : config.eval_seed;
      const bool tracing = !ev_trace.empty();
      const EvalReport report =
          run_eval(model, config, grippers, episodes, seed, ablation,
                   tracing ? 1 : ev_threads, tracing);
      save_eval_report(report, ev_out);
      if (tracing) save_projection_trace(report, ev_trace);
      print_eval_table(report);
      return 0;
    }

    if (gm->parsed()) {
      RunConfig config = load_config_or_default(gm_config);
      const std::uint64_t seed =
          gm->count("--seed") ? gm_seed : config.eval_seed;
      if (!gm_dump.empty()) std::filesystem::create_directories(gm_dump);
      const GraspMapEvalResult r =
          run_graspmap_eval(config, gm_pairs, seed, gm_dump);
      save_graspmap_eval(r, config_hash(config), gm_out);
      std::printf("pairs=%d median_kl_raw=%.17g median_kl_processed=%.17g "
                  "frac_processed_lower=%.3f config_hash=%s\n",
                  gm_pairs, r.median_raw, r.median_processed,
                  r.frac_processed_lower, config_hash(config).c_str());
      return 0;
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;  // unreachable: require_subcommand guarantees one branch ran
}
