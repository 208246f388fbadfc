#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossgrip/grasp_map.hpp"
#include "crossgrip/gripper.hpp"
#include "crossgrip/rng.hpp"

namespace crossgrip {

/// Planar (x-z) tabletop: one graspable object and one open-top target box.
/// The table surface is z = 0.
struct SceneDescription {
  double object_x = 0.2;
  double object_width = 0.04;
  double object_height = 0.05;
  double grasp_offset_x = 0.0;  // grasp point relative to the object center
  double box_x = 0.45;
  double box_half_width = 0.05;
  double box_top_z = 0.10;

  double grasp_x() const { return object_x + grasp_offset_x; }

  void validate() const {
    if (!(object_width > 0.0) || !(object_height > 0.0))
      throw std::invalid_argument("scene: object dimensions must be > 0");
    if (!(box_half_width > 0.0) || !(box_top_z > 0.0))
      throw std::invalid_argument("scene: box dimensions must be > 0");
  }
};

enum class Outcome { Success, GraspMiss, Collision, Drop, Timeout };

inline const char* outcome_to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "Success";
    case Outcome::GraspMiss: return "GraspMiss";
    case Outcome::Collision: return "Collision";
    case Outcome::Drop: return "Drop";
    case Outcome::Timeout: return "Timeout";
  }
  return "?";
}

inline Outcome outcome_from_string(const std::string& s) {
  if (s == "Success") return Outcome::Success;
  if (s == "GraspMiss") return Outcome::GraspMiss;
  if (s == "Collision") return Outcome::Collision;
  if (s == "Drop") return Outcome::Drop;
  if (s == "Timeout") return Outcome::Timeout;
  throw std::invalid_argument("unknown outcome: " + s);
}

struct WorldParams {
  double start_ee_x = 0.35;
  double start_fingertip = 0.30;
  double step_clamp = 0.02;          // |dx|, |dz| per control step
  double grasp_window_x = 0.01;      // lateral alignment tolerance
  double grasp_window_z_min = 0.005; // fingertip must be above this to grasp
  double grasp_attempt_width = 0.015;  // closing this far on air is a miss
  double release_margin = 0.01;      // open beyond width+margin to release
  int max_steps = 200;
  // Scripted-demonstrator waypoints (fingertip heights). Each demo episode
  // draws its heights uniformly from center +- jitter so the dataset covers
  // a continuum of approach states; without that the expert visits only a
  // sparse grid and the learned policy falls off the data manifold after its
  // first imperfect action. The travel open command is NOT jittered: the jaw
  // width is a feedback channel (the policy reads it back through the
  // observation), and randomized open widths put executed widths between the
  // open and carried values, where the task phase is ambiguous.
  double hover_fingertip = 0.15;
  double hover_jitter = 0.02;
  double grasp_depth = 0.02;         // grasp at object_height - grasp_depth
  double grasp_depth_jitter = 0.003;
  double lift_fingertip = 0.18;
  double lift_jitter = 0.02;
  double place_clearance = 0.02;     // place at box_top_z + place_clearance
  double place_jitter = 0.005;
  double open_fraction_lo = 1.0;     // travel open command, fraction of full
  // Demonstrator servo law: saturated-proportional steps toward the active
  // waypoint. A bang-bang expert (full-speed then stop) leaves the offset ->
  // displacement relation unobserved except at saturation, so the cloned
  // policy never learns terminal alignment; the proportional tail puts dense
  // small-displacement supervision right where grasping needs it, and the
  // never-zero lateral term teaches the policy to keep correcting while it
  // descends and closes.
  double approach_gain = 0.6;        // displacement = gain * offset, clamped
  double align_tol_x = 0.003;        // lateral gate for descend/close/release
  double settle_tol_z = 0.004;       // vertical gate on waypoint arrival
  double commit_band = 0.001;        // height band for close/release commit
  // Uniform noise injected into the demonstrator's executed dx/dz (never the
  // jaw command) and recorded as the action. A noiseless proportional servo
  // makes the previous displacement a sufficient statistic for the next one,
  // so the cloned policy keys on its own motion history instead of the
  // offset; at a receding-horizon cutoff the plan's decaying tail then reads
  // as "aligned" and lateral correction stops. Perturbing the demonstrations
  // breaks that shortcut and shows the expert correcting its own errors.
  // Kept small enough that the perturbed grasp descent still clears the
  // 0.01 safety floor with margin.
  double demo_action_noise = 0.003;
  // One-sided jitter on the demonstrator's open-jaw command, same rationale:
  // with the open command pinned, observed width and commanded width agree
  // on every pre-grasp frame, and the cloned policy cannot tell "command the
  // open width" from "copy the width you currently see". The copy reading is
  // unstable under feedback (sampled widths drift toward the carried-object
  // width and flip the inferred task phase). Down-jittering the executed
  // command decorrelates the two while keeping it well above the release
  // threshold and the carried width. Close commands stay exact.
  double demo_width_noise = 0.012;
  // Occasional sustained "false close" during the demonstrator's approach:
  // for a few steps the executed jaw command drops into the half-closed band
  // while the recorded label keeps the expert's open command. A policy that
  // partially closes on air ends up in exactly these states, and without
  // demonstrations there the nearest training analog is the carried-object
  // phase, so it climbs away squeezing instead of reopening. The dips are
  // only injected when the gripper cannot latch onto the object (outside the
  // grasp window) and never reach the grasp-attempt width, so the label
  // "reopen and keep approaching" is always the right recovery.
  double demo_dip_prob = 0.05;  // per-step chance to start a dip
  double demo_dip_lo = 0.02;    // executed dip command range, reference scale
  double demo_dip_hi = 0.055;
  // Hold command while carrying, reference scale. Deep closes (toward zero)
  // are reserved for the in-window grasp commit: a deep command on air is a
  // terminal GraspMiss, so if the carry phase also commanded zero, any
  // sampled carry-like jaw action in an ungrasped state would end the
  // episode. Holding at an intermediate width keeps the object (it stays
  // below the release threshold on every supported gripper) while stray
  // carry-motif draws on air stay above the grasp-attempt width and the
  // episode survives to recover.
  double carry_width = 0.026;
};

/// Per-episode realization of the demonstrator's waypoints.
struct ExpertWaypoints {
  double hover_fingertip = 0.15;
  double grasp_depth = 0.02;
  double lift_fingertip = 0.18;
  double place_clearance = 0.02;
  double open_width = 0.08;  // reference-scale jaw command while travelling
  double carry_width = 0.026;  // hold command; see WorldParams::carry_width
};

inline ExpertWaypoints sample_waypoints(const WorldParams& p,
                                        double reference_open_width, Rng& rng) {
  ExpertWaypoints w;
  w.hover_fingertip = rng.uniform(p.hover_fingertip - p.hover_jitter,
                                  p.hover_fingertip + p.hover_jitter);
  w.grasp_depth = rng.uniform(p.grasp_depth - p.grasp_depth_jitter,
                              p.grasp_depth + p.grasp_depth_jitter);
  w.lift_fingertip = rng.uniform(p.lift_fingertip - p.lift_jitter,
                                 p.lift_fingertip + p.lift_jitter);
  w.place_clearance = rng.uniform(p.place_clearance - p.place_jitter,
                                  p.place_clearance + p.place_jitter);
  w.open_width =
      rng.uniform(p.open_fraction_lo, 1.0) * reference_open_width;
  w.carry_width = p.carry_width;
  return w;
}

inline ExpertWaypoints nominal_waypoints(const WorldParams& p,
                                         double reference_open_width) {
  return {p.hover_fingertip, p.grasp_depth, p.lift_fingertip,
          p.place_clearance, reference_open_width, p.carry_width};
}

/// Kinematic robot + object state. The robot always reports its height in
/// the reference tool frame (flange_z - reference finger length), which is
/// exactly the calibration mismatch the gripper mapping corrects.
struct WorldState {
  double ee_x = 0.0;
  double flange_z = 0.0;
  double grip_opening = 0.0;  // actual jaw opening of the active gripper
  bool grasped = false;
  double object_x = 0.0;
  int step_index = 0;
  bool collision = false;
  std::optional<Outcome> terminal;
};

inline double fingertip_z(const WorldState& s, const GripperConfig& g) {
  return s.flange_z - g.finger_length;
}

inline double reported_z(const WorldState& s, double reference_finger_length) {
  return s.flange_z - reference_finger_length;
}

inline WorldState initial_state(const SceneDescription& scene,
                                const GripperConfig& gripper,
                                const WorldParams& p) {
  WorldState s;
  s.ee_x = p.start_ee_x;
  s.flange_z = p.start_fingertip + gripper.finger_length;
  s.grip_opening = gripper.width_max;
  s.object_x = scene.object_x;
  return s;
}

/// One control step: dx/dz displacement commands plus a reference-scale jaw
/// width command (the robot applies unmap_width_command before actuation).
struct ActionStep {
  double dx = 0.0;
  double dz = 0.0;
  double grip_command = 0.0;
};

/// Advance the world by one action. Deterministic; the caller owns action
/// clamping (safety-corrected vertical steps may legitimately exceed it).
inline WorldState step_world(const WorldState& prev, const ActionStep& a,
                             const SceneDescription& scene,
                             const GripperConfig& gripper,
                             const GripperMapping& cmd_mapping,
                             const WorldParams& p) {
  WorldState s = prev;
  if (s.terminal) return s;

  s.ee_x += a.dx;
  s.flange_z += a.dz;
  if (s.grasped) s.object_x = s.ee_x;

  const double ft = fingertip_z(s, gripper);
  if (ft < 0.0) {
    // Below the table plane with no supporting contact: hard failure.
    s.collision = true;
    s.terminal = Outcome::Collision;
    s.step_index += 1;
    return s;
  }

  const double target = std::clamp(unmap_width_command(a.grip_command, cmd_mapping),
                                   gripper.width_min, gripper.width_max);
  if (s.grasped) {
    if (target > scene.object_width + p.release_margin) {
      s.grasped = false;
      s.grip_opening = target;
      const bool in_box = std::abs(s.object_x - scene.box_x) <= scene.box_half_width;
      s.terminal = in_box ? Outcome::Success : Outcome::Drop;
    } else {
      s.grip_opening = scene.object_width;  // jaw rests on the held object
    }
  } else {
    const bool in_window =
        std::abs(s.ee_x - scene.grasp_x()) <= p.grasp_window_x &&
        ft >= p.grasp_window_z_min && ft <= scene.object_height;
    if (in_window && target < scene.object_width) {
      s.grip_opening = scene.object_width;
      s.grasped = true;
      s.object_x = s.ee_x;  // fingers center the object
    } else {
      s.grip_opening = target;
      if (target <= p.grasp_attempt_width)
        s.terminal = Outcome::GraspMiss;  // completed a close on air
    }
  }

  s.step_index += 1;
  if (!s.terminal && s.step_index >= p.max_steps) s.terminal = Outcome::Timeout;
  return s;
}

/// Scripted demonstrator: servo to the hover point, descend, close, carry to
/// the box while lifting, descend, open. Every step is a saturated-
/// proportional move toward the active waypoint, and the lateral term stays
/// live through descent and closing so alignment is continuously corrected.
/// Acts on true state; keyed on state alone so it is a pure function.
/// Commands are reference-scale.
inline ActionStep expert_action(const WorldState& s,
                                const SceneDescription& scene,
                                const GripperConfig& gripper,
                                const WorldParams& p,
                                const ExpertWaypoints& w) {
  const double ft = fingertip_z(s, gripper);
  const double open_cmd = w.open_width;
  const double close_cmd = 0.0;
  auto servo = [&](double offset) {
    return std::clamp(p.approach_gain * offset, -p.step_clamp, p.step_clamp);
  };

  if (!s.grasped) {
    const double dx_obj = scene.grasp_x() - s.ee_x;
    if (std::abs(dx_obj) > p.align_tol_x) {
      // Phase 1: close in laterally. Descend toward hover if above it, but
      // never climb back: re-align climbs would make the jaw-open conditional
      // bimodal in dz (descend vs rise) at mid heights, and the alignment
      // gate is too fine for a noisy observer to reproduce the mode choice.
      const double dz = ft > w.hover_fingertip
                            ? servo(w.hover_fingertip - ft)
                            : 0.0;
      return {servo(dx_obj), dz, open_cmd};
    }
    // Phase 2/3: descend onto the object, then close. The jaw command only
    // flips inside a tight height band around the grasp depth, so under
    // execution noise the demonstrator visibly dwells there (micro height
    // corrections, jaw still open) for a few steps before committing. A
    // one-shot gate leaves exactly one close-context frame per episode and
    // the clone fires the close/carry motif early at mid-descent heights; the
    // dwell densifies supervision right where the commitment happens and
    // makes mis-timed chunk prefixes harmless.
    const double grasp_ft = scene.object_height - w.grasp_depth;
    const bool grasp_settled = std::abs(ft - grasp_ft) <= p.commit_band;
    return {servo(dx_obj), servo(grasp_ft - ft),
            grasp_settled ? close_cmd : open_cmd};
  }
  const double dx_box = scene.box_x - s.ee_x;
  if (std::abs(dx_box) > p.align_tol_x)    // phase 4: carry while lifting
    return {servo(dx_box), servo(w.lift_fingertip - ft), w.carry_width};
  // Phase 5: descend into the box and release, same commit band as the close.
  const double place_ft = scene.box_top_z + w.place_clearance;
  const bool place_settled = std::abs(ft - place_ft) <= p.commit_band;
  return {servo(dx_box), servo(place_ft - ft),
          place_settled ? open_cmd : w.carry_width};
}

struct ObsNoiseParams {
  double object_x_sigma = 0.005;
  double visible_length_sigma = 0.002;
};

/// Per-step sensor snapshot. Both grasp-feature variants are kept so a
/// raw-map-trained policy can be evaluated against the same dataset.
struct Observation {
  std::vector<double> grasp;      // pooled processed map, 64 values
  std::vector<double> grasp_raw;  // pooled raw map, 64 values
  std::array<double, 3> scene_f{};  // noisy object_x, box_x, visible length
  std::array<double, 3> robot{};    // ee_x, mapped height, mapped width
};

/// Build one observation. The hand camera rides on the flange, so blob scale
/// varies with height; the visible finger length is the one channel the
/// height/width mappings cannot make gripper-invariant.
inline Observation observe(const WorldState& s, const SceneDescription& scene,
                           const GripperConfig& gripper,
                           const GripperMapping& obs_mapping,
                           double reference_finger_length,
                           const ObsNoiseParams& noise,
                           const RawMapParams& map_params, Rng& rng) {
  Observation o;
  const double camera_height =
      std::max(s.flange_z, map_params.min_camera_height);
  MapScene ms;
  ms.object_count = 1;
  ms.grasp_x = s.object_x + scene.grasp_offset_x;
  const Heatmap raw = render_raw_map(ms, camera_height, rng.next_u64(), map_params);
  o.grasp = average_pool(process_map(raw));
  o.grasp_raw = average_pool(raw);
  o.scene_f = {s.object_x + rng.normal() * noise.object_x_sigma, scene.box_x,
               gripper.finger_length + rng.normal() * noise.visible_length_sigma};
  o.robot = {s.ee_x, map_height(reported_z(s, reference_finger_length), obs_mapping),
             map_width(s.grip_opening, obs_mapping)};
  return o;
}

/// Stack two consecutive observations into the policy input vector. The
/// grasp features come from the processed map unless feature_mode == "raw".
inline std::vector<double> stack_observations(const Observation& prev,
                                              const Observation& cur,
                                              const std::string& feature_mode) {
  const bool raw = feature_mode == "raw";
  std::vector<double> out;
  out.reserve(2 * (64 + 3 + 3));
  for (const Observation* o : {&prev, &cur}) {
    const auto& g = raw ? o->grasp_raw : o->grasp;
    out.insert(out.end(), g.begin(), g.end());
    out.insert(out.end(), o->scene_f.begin(), o->scene_f.end());
    out.insert(out.end(), o->robot.begin(), o->robot.end());
  }
  return out;
}

struct StepRecord {
  Observation obs;
  ActionStep action;
};

struct EpisodeRecord {
  SceneDescription scene;
  std::string gripper_id;
  std::vector<StepRecord> steps;
  Outcome outcome = Outcome::Timeout;
  std::vector<std::array<double, 2>> fingertip_traj;  // (x, fingertip z)
  std::string config_hash;
};

/// Everything a rollout needs besides the policy itself.
struct WorldSetup {
  WorldParams params;
  ObsNoiseParams noise;
  RawMapParams map_params;
  double reference_finger_length = 0.20;
  double reference_open_width = 0.08;
};

/// Run the scripted demonstrator on one scene, recording per-step
/// observations and actions.
inline EpisodeRecord run_expert_episode(const SceneDescription& scene,
                                        const GripperConfig& gripper,
                                        const WorldSetup& setup, Rng& ep_rng) {
  Rng obs_rng = ep_rng.stream(1);
  Rng waypoint_rng = ep_rng.stream(2);
  Rng action_noise_rng = ep_rng.stream(3);
  const ExpertWaypoints waypoints = sample_waypoints(
      setup.params, setup.reference_open_width, waypoint_rng);
  const GripperMapping mapping = identity_mapping();
  WorldState s = initial_state(scene, gripper, setup.params);
  EpisodeRecord rec;
  rec.scene = scene;
  rec.gripper_id = gripper.id;
  rec.fingertip_traj.push_back({s.ee_x, fingertip_z(s, gripper)});
  int dip_steps_left = 0;
  double dip_width = 0.0;
  while (!s.terminal) {
    Observation obs = observe(s, scene, gripper, mapping,
                              setup.reference_finger_length, setup.noise,
                              setup.map_params, obs_rng);
    const ActionStep a =
        expert_action(s, scene, gripper, setup.params, waypoints);
    // Record the expert's clean command as the label but execute a perturbed
    // copy. Labels stay a deterministic function of the state (no training
    // noise floor), while the perturbations both visit the off-script
    // neighborhoods a learned policy wanders into and decorrelate each label
    // from the previously executed displacement, so the clone cannot key on
    // its own motion history instead of the scene.
    ActionStep exec = a;
    const double amp = setup.params.demo_action_noise;
    if (amp > 0.0) {
      const double clamp = setup.params.step_clamp;
      exec.dx = std::clamp(exec.dx + action_noise_rng.uniform(-amp, amp),
                           -clamp, clamp);
      exec.dz = std::clamp(exec.dz + action_noise_rng.uniform(-amp, amp),
                           -clamp, clamp);
    }
    if (setup.params.demo_width_noise > 0.0 &&
        exec.grip_command == waypoints.open_width)
      exec.grip_command -=
          action_noise_rng.uniform(0.0, setup.params.demo_width_noise);
    // Sustained false-close dips (see WorldParams::demo_dip_prob). Gated on
    // the post-move pose being unable to latch: inside the grasp window a
    // half-closed executed command would silently pick the object up and the
    // recorded open label would be wrong.
    if (dip_steps_left == 0 && !s.grasped &&
        a.grip_command == waypoints.open_width &&
        setup.params.demo_dip_prob > 0.0 &&
        action_noise_rng.uniform(0.0, 1.0) < setup.params.demo_dip_prob) {
      dip_steps_left = 2 + int(action_noise_rng.uniform(0.0, 4.0));
      dip_width = action_noise_rng.uniform(setup.params.demo_dip_lo,
                                           setup.params.demo_dip_hi);
    }
    if (dip_steps_left > 0) {
      const double px = s.ee_x + exec.dx;
      const double pft = fingertip_z(s, gripper) + exec.dz;
      const bool latchable =
          std::abs(px - scene.grasp_x()) <= setup.params.grasp_window_x + 1e-3 &&
          pft <= scene.object_height + 1e-3;
      if (!s.grasped && !latchable && a.grip_command == waypoints.open_width)
        exec.grip_command = dip_width;
      --dip_steps_left;
    }
    rec.steps.push_back({std::move(obs), a});
    s = step_world(s, exec, scene, gripper, mapping, setup.params);
    rec.fingertip_traj.push_back({s.ee_x, fingertip_z(s, gripper)});
  }
  rec.outcome = *s.terminal;
  return rec;
}

/// Chunk generator contract: stacked observation + current mapped height +
/// the episode's denoising stream -> Cartesian chunk [dx, dz, grip] * t_a.
using ChunkGenerator = std::function<std::vector<double>(
    const std::vector<double>& stacked_obs, double z_current, Rng& rng)>;

/// Receding-horizon policy rollout: observe every control step, re-plan
/// every t_exec steps, execute chunks through the world.
inline EpisodeRecord rollout_policy(const ChunkGenerator& generate,
                                    const SceneDescription& scene,
                                    const GripperConfig& gripper,
                                    const GripperMapping& obs_mapping,
                                    const GripperMapping& cmd_mapping,
                                    const std::string& feature_mode, int t_a,
                                    int t_exec, const WorldSetup& setup,
                                    Rng& ep_rng) {
  Rng obs_rng = ep_rng.stream(1);
  Rng ddim_rng = ep_rng.stream(2);
  WorldState s = initial_state(scene, gripper, setup.params);
  EpisodeRecord rec;
  rec.scene = scene;
  rec.gripper_id = gripper.id;
  rec.fingertip_traj.push_back({s.ee_x, fingertip_z(s, gripper)});

  Observation cur = observe(s, scene, gripper, obs_mapping,
                            setup.reference_finger_length, setup.noise,
                            setup.map_params, obs_rng);
  Observation prev = cur;
  while (!s.terminal) {
    const auto stacked = stack_observations(prev, cur, feature_mode);
    const auto chunk = generate(stacked, cur.robot[1], ddim_rng);
    if (chunk.size() != std::size_t(t_a) * 3)
      throw std::invalid_argument("rollout: generator returned bad chunk size");
    for (int e = 0; e < t_exec && !s.terminal; ++e) {
      const ActionStep a{chunk[std::size_t(3 * e)], chunk[std::size_t(3 * e) + 1],
                         chunk[std::size_t(3 * e) + 2]};
      s = step_world(s, a, scene, gripper, cmd_mapping, setup.params);
      rec.fingertip_traj.push_back({s.ee_x, fingertip_z(s, gripper)});
      if (s.terminal) break;
      prev = cur;
      cur = observe(s, scene, gripper, obs_mapping,
                    setup.reference_finger_length, setup.noise,
                    setup.map_params, obs_rng);
    }
  }
  rec.outcome = *s.terminal;
  return rec;
}

struct SceneRanges {
  double object_x_lo = 0.10, object_x_hi = 0.30;
  double box_x_lo = 0.40, box_x_hi = 0.55;
};

inline SceneDescription sample_scene(const SceneDescription& profile,
                                     const SceneRanges& ranges, Rng& rng) {
  SceneDescription s = profile;
  s.object_x = rng.uniform(ranges.object_x_lo, ranges.object_x_hi);
  s.box_x = rng.uniform(ranges.box_x_lo, ranges.box_x_hi);
  return s;
}

struct DemoGenResult {
  std::vector<EpisodeRecord> episodes;
  int redraws = 0;
};

/// Draw scenes, run the demonstrator, keep successes, re-draw failures.
/// Aborts if the demonstrator fails implausibly often (> 10x oversampling).
inline DemoGenResult generate_demos(const SceneDescription& profile,
                                    const SceneRanges& ranges,
                                    const GripperConfig& reference,
                                    const WorldSetup& setup, int n,
                                    const Rng& master) {
  if (n <= 0) throw std::invalid_argument("generate_demos: n must be > 0");
  DemoGenResult result;
  int attempts = 0;
  while (static_cast<int>(result.episodes.size()) < n) {
    if (attempts > 10 * n)
      throw std::runtime_error("generate_demos: demonstrator failure rate "
                               "implausibly high; check world parameters");
    Rng attempt_rng = master.stream(std::uint64_t(attempts));
    attempts += 1;
    Rng scene_rng = attempt_rng.stream(0);
    const SceneDescription scene = sample_scene(profile, ranges, scene_rng);
    Rng ep_rng = attempt_rng.stream(1);
    EpisodeRecord ep = run_expert_episode(scene, reference, setup, ep_rng);
    if (ep.outcome == Outcome::Success)
      result.episodes.push_back(std::move(ep));
    else
      result.redraws += 1;
  }
  return result;
}

/// RMS pointwise distance between two trajectories resampled to a common
/// number of points by linear interpolation over normalized time.
inline double trajectory_divergence(const std::vector<std::array<double, 2>>& a,
                                    const std::vector<std::array<double, 2>>& b,
                                    int samples = 100) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("trajectory_divergence: empty trajectory");
  auto at = [](const std::vector<std::array<double, 2>>& t, double u) {
    if (t.size() == 1) return t[0];
    const double pos = u * double(t.size() - 1);
    const std::size_t i = std::min(std::size_t(pos), t.size() - 2);
    const double frac = pos - double(i);
    return std::array<double, 2>{t[i][0] + frac * (t[i + 1][0] - t[i][0]),
                                 t[i][1] + frac * (t[i + 1][1] - t[i][1])};
  };
  double sq = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double u = samples == 1 ? 0.0 : double(k) / (samples - 1);
    const auto pa = at(a, u), pb = at(b, u);
    const double dx = pa[0] - pb[0], dz = pa[1] - pb[1];
    sq += dx * dx + dz * dz;
  }
  return std::sqrt(sq / samples);
}

// ---- dataset serialization (one JSON episode per line) ----

inline nlohmann::ordered_json scene_to_json(const SceneDescription& s) {
  return {{"object_x", s.object_x},
          {"object_width", s.object_width},
          {"object_height", s.object_height},
          {"grasp_offset_x", s.grasp_offset_x},
          {"box_x", s.box_x},
          {"box_half_width", s.box_half_width},
          {"box_top_z", s.box_top_z}};
}

inline SceneDescription scene_from_json(const nlohmann::json& j) {
  SceneDescription s;
  s.object_x = j.at("object_x").get<double>();
  s.object_width = j.at("object_width").get<double>();
  s.object_height = j.at("object_height").get<double>();
  s.grasp_offset_x = j.at("grasp_offset_x").get<double>();
  s.box_x = j.at("box_x").get<double>();
  s.box_half_width = j.at("box_half_width").get<double>();
  s.box_top_z = j.at("box_top_z").get<double>();
  return s;
}

inline nlohmann::ordered_json episode_to_json(const EpisodeRecord& e) {
  nlohmann::ordered_json j;
  j["scene"] = scene_to_json(e.scene);
  j["gripper_id"] = e.gripper_id;
  j["outcome"] = outcome_to_string(e.outcome);
  j["config_hash"] = e.config_hash;
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const StepRecord& st : e.steps) {
    nlohmann::ordered_json s;
    s["g"] = st.obs.grasp;
    s["gr"] = st.obs.grasp_raw;
    s["sc"] = st.obs.scene_f;
    s["rs"] = st.obs.robot;
    s["a"] = {st.action.dx, st.action.dz, st.action.grip_command};
    steps.push_back(std::move(s));
  }
  j["steps"] = std::move(steps);
  nlohmann::ordered_json traj = nlohmann::ordered_json::array();
  for (const auto& p : e.fingertip_traj) traj.push_back({p[0], p[1]});
  j["fingertip_traj"] = std::move(traj);
  return j;
}

inline EpisodeRecord episode_from_json(const nlohmann::json& j) {
  EpisodeRecord e;
  e.scene = scene_from_json(j.at("scene"));
  e.gripper_id = j.at("gripper_id").get<std::string>();
  e.outcome = outcome_from_string(j.at("outcome").get<std::string>());
  e.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& s : j.at("steps")) {
    StepRecord st;
    st.obs.grasp = s.at("g").get<std::vector<double>>();
    st.obs.grasp_raw = s.at("gr").get<std::vector<double>>();
    const auto sc = s.at("sc").get<std::vector<double>>();
    const auto rs = s.at("rs").get<std::vector<double>>();
    const auto a = s.at("a").get<std::vector<double>>();
    if (st.obs.grasp.size() != 64 || st.obs.grasp_raw.size() != 64 ||
        sc.size() != 3 || rs.size() != 3 || a.size() != 3)
      throw std::runtime_error("dataset: bad step shape");
    std::copy(sc.begin(), sc.end(), st.obs.scene_f.begin());
    std::copy(rs.begin(), rs.end(), st.obs.robot.begin());
    st.action = {a[0], a[1], a[2]};
    e.steps.push_back(std::move(st));
  }
  for (const auto& p : j.at("fingertip_traj")) {
    if (p.size() != 2) throw std::runtime_error("dataset: bad trajectory point");
    e.fingertip_traj.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return e;
}

inline void save_dataset(const std::vector<EpisodeRecord>& episodes,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const EpisodeRecord& e : episodes) out << episode_to_json(e).dump() << "\n";
}

inline std::vector<EpisodeRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  std::vector<EpisodeRecord> episodes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty()) continue;
    try {
      episodes.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return episodes;
}

}  // namespace crossgrip
