#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "crossgrip/config.hpp"
#include "crossgrip/diffusion.hpp"
#include "crossgrip/grasp_map.hpp"
#include "crossgrip/gripper.hpp"
#include "crossgrip/projection.hpp"
#include "crossgrip/rng.hpp"
#include "crossgrip/sim_world.hpp"

namespace crossgrip {

// ---- demo generation -------------------------------------------------------

inline DemoGenResult generate_demo_dataset(const RunConfig& config, int n,
                                           std::uint64_t seed) {
  const GripperConfig& ref = config.find_gripper(config.reference_gripper);
  DemoGenResult r = generate_demos(config.scene_profile, config.scene_ranges,
                                   ref, make_world_setup(config), n, Rng(seed));
  const std::string hash = config_hash(config);
  for (auto& ep : r.episodes) ep.config_hash = hash;
  return r;
}

// ---- training ---------------------------------------------------------------

/// Convert recorded episodes to (stacked observation, action chunk) pairs.
/// The first step duplicates itself as its own predecessor; chunks past the
/// episode end repeat the final action (hold position / keep jaw command).
inline std::vector<TrainingSample> build_training_samples(
    const std::vector<EpisodeRecord>& episodes, int t_a,
    const std::string& feature_mode) {
  std::vector<TrainingSample> samples;
  for (const EpisodeRecord& ep : episodes) {
    const std::size_t n = ep.steps.size();
    for (std::size_t i = 0; i < n; ++i) {
      TrainingSample s;
      const Observation& prev = ep.steps[i == 0 ? 0 : i - 1].obs;
      s.obs = stack_observations(prev, ep.steps[i].obs, feature_mode);
      s.chunk.reserve(std::size_t(t_a) * 3);
      for (int j = 0; j < t_a; ++j) {
        const ActionStep& a = ep.steps[std::min(i + std::size_t(j), n - 1)].action;
        s.chunk.push_back(a.dx);
        s.chunk.push_back(a.dz);
        s.chunk.push_back(a.grip_command);
      }
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

struct TrainResult {
  PolicyModel model;
  std::vector<std::pair<int, double>> loss_curve;  // (epoch, mean MSE)
};

inline TrainResult train_pipeline(const std::vector<EpisodeRecord>& demos,
                                  const RunConfig& config) {
  const auto samples =
      build_training_samples(demos, config.t_a, config.feature_mode);
  if (samples.empty()) throw std::invalid_argument("train: empty dataset");
  const DiffusionSchedule schedule = DiffusionSchedule::make(
      config.k_train, config.beta_start, config.beta_end, config.ddim_steps);
  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.learning_rate = config.learning_rate;
  tc.seed = config.train_seed;
  tc.hidden = config.hidden;
  TrainResult r;
  r.model = train_policy_model(samples, schedule, config.t_a, config.t_o,
                               config.time_embed_dim, config.feature_mode,
                               config_hash(config), tc, &r.loss_curve);
  return r;
}

inline void save_loss_curve(const std::vector<std::pair<int, double>>& curve,
                            const std::string& config_hash_hex,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss curve: " + path);
  out << "# config_hash " << config_hash_hex << "\n";
  out << "epoch,mse\n";
  out << std::setprecision(17);
  for (const auto& [epoch, mse] : curve) out << epoch << "," << mse << "\n";
}

// ---- evaluation -------------------------------------------------------------

/// Inference-time variants for the comparison study.
///   none          — height/width mapping on, safety projection on
///   no-projection — the whole inference-time adaptation off (mapping and
///                   projection), i.e. the unmodified reference-gripper policy
///   no-mapping    — mapping off, projection on
///   no-graspmap   — mapping and projection on, but the policy consumes raw
///                   pooled maps (requires a raw-feature-trained checkpoint)
enum class Ablation { None, NoProjection, NoMapping, NoGraspMap };

inline Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::None;
  if (s == "no-projection") return Ablation::NoProjection;
  if (s == "no-mapping") return Ablation::NoMapping;
  if (s == "no-graspmap") return Ablation::NoGraspMap;
  throw std::invalid_argument("unknown ablation: " + s);
}

inline const char* ablation_to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoProjection: return "no-projection";
    case Ablation::NoMapping: return "no-mapping";
    case Ablation::NoGraspMap: return "no-graspmap";
  }
  return "?";
}

inline bool ablation_uses_mapping(Ablation a) {
  return a == Ablation::None || a == Ablation::NoGraspMap;
}

inline bool ablation_uses_projection(Ablation a) {
  return a != Ablation::NoProjection;
}

struct EvalEpisode {
  std::string gripper;
  int episode = 0;
  Outcome outcome = Outcome::Timeout;
  double divergence = 0.0;      // vs reference gripper, full method, same seed
  double min_fingertip = 0.0;   // lowest executed true fingertip height
  int steps = 0;
};

struct EvalSummary {
  std::string gripper;
  int episodes = 0;
  std::array<int, 5> counts{};  // indexed by Outcome
  double success_rate = 0.0;
  double mean_divergence = 0.0;
  double max_divergence = 0.0;
  double min_fingertip = 0.0;

  int count(Outcome o) const { return counts[std::size_t(o)]; }
  double rate(Outcome o) const {
    return episodes == 0 ? 0.0 : double(count(o)) / episodes;
  }
};

struct TraceRowExport {
  std::string gripper;
  int episode = 0;
  ProjectionTraceRow row;
};

struct EvalReport {
  std::string ablation;
  std::string config_hash;
  std::vector<EvalSummary> summaries;
  std::vector<EvalEpisode> episodes;
  std::vector<TraceRowExport> trace;  // populated only when tracing
};

namespace detail {

inline EpisodeRecord eval_rollout(const PolicyModel& model,
                                  const RunConfig& config,
                                  const GripperConfig& gripper,
                                  bool use_mapping, bool use_projection,
                                  const SceneDescription& scene, Rng ep_rng,
                                  ProjectionTrace* trace) {
  const GripperConfig& ref = config.find_gripper(config.reference_gripper);
  const GripperMapping mapping =
      use_mapping ? derive_mapping(ref, gripper) : identity_mapping();
  const WorldSetup setup = make_world_setup(config);
  ChunkGenerator gen = [&](const std::vector<double>& obs, double z_current,
                           Rng& rng) {
    SafetySpec spec = use_projection
                          ? SafetySpec{config.epsilon_safe, z_current,
                                       config.active_final_steps}
                          : SafetySpec::disabled();
    return generate_trajectory(model, obs, spec, rng, trace,
                               config.world.step_clamp);
  };
  return rollout_policy(gen, scene, gripper, mapping, mapping,
                        model.feature_mode, model.t_a, config.t_exec, setup,
                        ep_rng);
}

}  // namespace detail

/// Roll the policy out on each requested gripper. Scene draws, observation
/// noise, and denoising initializations depend only on (seed, episode index),
/// never on the gripper, so cross-gripper trajectory comparisons are
/// like-for-like. Worker threads partition episodes over a result table,
/// which keeps the report independent of scheduling.
inline EvalReport run_eval(const PolicyModel& model, const RunConfig& config,
                           const std::vector<std::string>& gripper_ids,
                           int episodes, std::uint64_t seed, Ablation ablation,
                           int threads = 1, bool trace_projection = false) {
  if (episodes < 1) throw std::invalid_argument("eval: episodes must be >= 1");
  if (threads < 1) throw std::invalid_argument("eval: threads must be >= 1");
  const GripperConfig& ref = config.find_gripper(config.reference_gripper);
  const bool use_mapping = ablation_uses_mapping(ablation);
  const bool use_projection = ablation_uses_projection(ablation);
  const Rng master(seed);

  struct Job {
    const GripperConfig* gripper;
    int episode;
  };
  std::vector<Job> jobs;
  for (const std::string& id : gripper_ids)
    for (int e = 0; e < episodes; ++e)
      jobs.push_back({&config.find_gripper(id), e});

  struct Slot {
    EvalEpisode metrics;
    std::vector<TraceRowExport> trace;
  };
  std::vector<Slot> slots(jobs.size());

  auto run_job = [&](std::size_t ji) {
    const Job& job = jobs[ji];
    Rng ep_master = master.stream(std::uint64_t(job.episode));
    Rng scene_rng = ep_master.stream(0);
    const SceneDescription scene =
        sample_scene(config.scene_profile, config.scene_ranges, scene_rng);

    ProjectionTrace trace;
    EpisodeRecord rec = detail::eval_rollout(
        model, config, *job.gripper, use_mapping, use_projection, scene,
        ep_master.stream(1), trace_projection ? &trace : nullptr);

    // Reference for divergence: reference gripper, full method, same seeds.
    EpisodeRecord ref_rec =
        (job.gripper->id == ref.id && ablation == Ablation::None)
            ? rec
            : detail::eval_rollout(model, config, ref, true, true, scene,
                                   ep_master.stream(1), nullptr);

    Slot& slot = slots[ji];
    slot.metrics.gripper = job.gripper->id;
    slot.metrics.episode = job.episode;
    slot.metrics.outcome = rec.outcome;
    slot.metrics.divergence =
        trajectory_divergence(rec.fingertip_traj, ref_rec.fingertip_traj);
    double min_ft = rec.fingertip_traj.front()[1];
    for (const auto& p : rec.fingertip_traj) min_ft = std::min(min_ft, p[1]);
    slot.metrics.min_fingertip = min_ft;
    slot.metrics.steps = int(rec.fingertip_traj.size()) - 1;
    for (const ProjectionTraceRow& row : trace.rows)
      slot.trace.push_back({job.gripper->id, job.episode, row});
  };

  if (threads == 1) {
    for (std::size_t ji = 0; ji < jobs.size(); ++ji) run_job(ji);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t ji = next.fetch_add(1); ji < jobs.size();
           ji = next.fetch_add(1))
        run_job(ji);
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }

  EvalReport report;
  report.ablation = ablation_to_string(ablation);
  report.config_hash = config_hash(config);
  std::size_t ji = 0;
  for (const std::string& id : gripper_ids) {
    EvalSummary sum;
    sum.gripper = id;
    sum.episodes = episodes;
    double div_sum = 0.0;
    double min_ft = 1e9;
    for (int e = 0; e < episodes; ++e, ++ji) {
      const Slot& slot = slots[ji];
      report.episodes.push_back(slot.metrics);
      for (const auto& t : slot.trace) report.trace.push_back(t);
      sum.counts[std::size_t(slot.metrics.outcome)] += 1;
      div_sum += slot.metrics.divergence;
      sum.max_divergence = std::max(sum.max_divergence, slot.metrics.divergence);
      min_ft = std::min(min_ft, slot.metrics.min_fingertip);
    }
    sum.success_rate = double(sum.count(Outcome::Success)) / episodes;
    sum.mean_divergence = div_sum / episodes;
    sum.min_fingertip = min_ft;
    report.summaries.push_back(std::move(sum));
  }
  return report;
}

inline nlohmann::ordered_json eval_report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "crossgrip-eval-v1";
  j["config_hash"] = r.config_hash;
  j["ablation"] = r.ablation;
  nlohmann::ordered_json summaries = nlohmann::ordered_json::array();
  for (const EvalSummary& s : r.summaries) {
    summaries.push_back({{"gripper", s.gripper},
                         {"episodes", s.episodes},
                         {"success", s.count(Outcome::Success)},
                         {"grasp_miss", s.count(Outcome::GraspMiss)},
                         {"collision", s.count(Outcome::Collision)},
                         {"drop", s.count(Outcome::Drop)},
                         {"timeout", s.count(Outcome::Timeout)},
                         {"success_rate", s.success_rate},
                         {"mean_divergence", s.mean_divergence},
                         {"max_divergence", s.max_divergence},
                         {"min_fingertip", s.min_fingertip}});
  }
  j["grippers"] = std::move(summaries);
  nlohmann::ordered_json eps = nlohmann::ordered_json::array();
  for (const EvalEpisode& e : r.episodes) {
    eps.push_back({{"gripper", e.gripper},
                   {"episode", e.episode},
                   {"outcome", outcome_to_string(e.outcome)},
                   {"divergence", e.divergence},
                   {"min_fingertip", e.min_fingertip},
                   {"steps", e.steps}});
  }
  j["episodes"] = std::move(eps);
  return j;
}

inline void save_eval_report(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eval report: " + path);
  out << eval_report_to_json(r).dump(1) << "\n";
}

inline void save_projection_trace(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write projection trace: " + path);
  out << "# config_hash " << r.config_hash << "\n";
  out << "gripper,episode,chunk,stage,pre_min_z,post_min_z,nu\n";
  out << std::setprecision(17);
  for (const TraceRowExport& t : r.trace) {
    out << t.gripper << "," << t.episode << "," << t.row.chunk_id << ","
        << t.row.stage << "," << t.row.pre_min_z << "," << t.row.post_min_z
        << ",";
    for (std::size_t i = 0; i < t.row.nu.size(); ++i)
      out << (i ? ";" : "") << t.row.nu[i];
    out << "\n";
  }
}

// ---- grasp-map stability study ---------------------------------------------

struct GraspMapEvalRow {
  int pair = 0;
  double camera_height = 0.0;
  double kl_raw = 0.0;
  double kl_processed = 0.0;
};

struct GraspMapEvalResult {
  std::vector<GraspMapEvalRow> rows;
  double median_raw = 0.0;
  double median_processed = 0.0;
  double frac_processed_lower = 0.0;  // pairs where processed KL < raw KL
};

namespace detail {
inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

/// Render each sampled scene twice with independent noise seeds and compare
/// the view-to-view KL instability of raw vs processed maps.
inline GraspMapEvalResult run_graspmap_eval(const RunConfig& config, int pairs,
                                            std::uint64_t seed,
                                            const std::string& dump_dir = "",
                                            int dump_limit = 10,
                                            double height_lo = 0.3,
                                            double height_hi = 0.7) {
  if (pairs < 1) throw std::invalid_argument("graspmap-eval: pairs must be >= 1");
  const Rng master(seed);
  GraspMapEvalResult result;
  std::vector<double> raws, procs;
  int lower = 0;
  for (int p = 0; p < pairs; ++p) {
    Rng rng = master.stream(std::uint64_t(p));
    MapScene scene;
    scene.object_count = 1;
    scene.grasp_x = rng.uniform(config.scene_ranges.object_x_lo,
                                config.scene_ranges.object_x_hi) +
                    config.scene_profile.grasp_offset_x;
    const double h = rng.uniform(height_lo, height_hi);
    const std::uint64_t seed_a = rng.next_u64();
    const std::uint64_t seed_b = rng.next_u64();
    const Heatmap raw_a = render_raw_map(scene, h, seed_a, config.map_params);
    const Heatmap raw_b = render_raw_map(scene, h, seed_b, config.map_params);
    const Heatmap proc_a = process_map(raw_a);
    const Heatmap proc_b = process_map(raw_b);
    GraspMapEvalRow row;
    row.pair = p;
    row.camera_height = h;
    row.kl_raw = kl_divergence(raw_a, raw_b);
    row.kl_processed = kl_divergence(proc_a, proc_b);
    raws.push_back(row.kl_raw);
    procs.push_back(row.kl_processed);
    if (row.kl_processed < row.kl_raw) lower += 1;
    result.rows.push_back(row);
    if (!dump_dir.empty() && p < dump_limit) {
      const std::string base = dump_dir + "/pair_" + std::to_string(p) + "_";
      save_heatmap(raw_a, base + "raw_a.gmap");
      save_heatmap(raw_b, base + "raw_b.gmap");
      save_heatmap(proc_a, base + "proc_a.gmap");
      save_heatmap(proc_b, base + "proc_b.gmap");
    }
  }
  result.median_raw = detail::median_of(raws);
  result.median_processed = detail::median_of(procs);
  result.frac_processed_lower = double(lower) / pairs;
  return result;
}

inline void save_graspmap_eval(const GraspMapEvalResult& r,
                               const std::string& config_hash_hex,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write graspmap eval: " + path);
  out << "# config_hash " << config_hash_hex << "\n";
  out << "pair,camera_height,kl_raw,kl_processed\n";
  out << std::setprecision(17);
  for (const GraspMapEvalRow& row : r.rows)
    out << row.pair << "," << row.camera_height << "," << row.kl_raw << ","
        << row.kl_processed << "\n";
}

}  // namespace crossgrip
