#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "crossgrip/config.hpp"
#include "crossgrip/sim_world.hpp"

using namespace crossgrip;
using Catch::Approx;

namespace {

GripperConfig make_gripper(std::string id, double len, double wmax) {
  GripperConfig g;
  g.id = std::move(id);
  g.finger_length = len;
  g.width_max = wmax;
  g.width_min = 0.0;
  return g;
}

const GripperConfig kRef = make_gripper("G0", 0.200, 0.080);
const GripperConfig kLong = make_gripper("G1", 0.235, 0.080);
const GripperConfig kWide = make_gripper("G4", 0.160, 0.100);

std::string file_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("mapped reported height equals the true fingertip height") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    GripperConfig g = make_gripper("X", rng.uniform(0.12, 0.3),
                                   rng.uniform(0.05, 0.15));
    const GripperMapping m = derive_mapping(kRef, g);
    WorldState s;
    s.flange_z = rng.uniform(0.0, 0.6);
    CHECK(map_height(reported_z(s, kRef.finger_length), m) ==
          Approx(fingertip_z(s, g)).margin(1e-12));
  }
}

TEST_CASE("initial state encodes the start pose in the flange frame") {
  SceneDescription scene;
  WorldParams p;
  const WorldState s = initial_state(scene, kLong, p);
  CHECK(s.ee_x == 0.35);
  CHECK(s.flange_z == Approx(0.30 + 0.235).margin(1e-15));
  CHECK(fingertip_z(s, kLong) == Approx(0.30).margin(1e-15));
  CHECK(s.grip_opening == 0.08);
  CHECK_FALSE(s.grasped);
  CHECK(s.object_x == scene.object_x);
  CHECK_FALSE(s.terminal.has_value());
}

TEST_CASE("step_world applies displacements without re-clamping") {
  SceneDescription scene;
  WorldParams p;
  WorldState s = initial_state(scene, kRef, p);
  const WorldState after =
      step_world(s, {-0.5, 0.1, 0.08}, scene, kRef, identity_mapping(), p);
  CHECK(after.ee_x == Approx(-0.15).margin(1e-15));
  CHECK(after.flange_z == Approx(0.60).margin(1e-15));
  CHECK(after.step_index == 1);
  CHECK_FALSE(after.terminal.has_value());
}

TEST_CASE("grasp window membership under the default geometry") {
  SceneDescription scene;  // object at 0.2, height 0.05
  WorldParams p;
  const auto try_grasp = [&](double ee_x, double fingertip) {
    WorldState s = initial_state(scene, kRef, p);
    s.ee_x = ee_x;
    s.flange_z = fingertip + kRef.finger_length;
    // dx = dz = 0; close to below object width
    const WorldState r =
        step_world(s, {0, 0, 0.02}, scene, kRef, identity_mapping(), p);
    return r;
  };

  CHECK(try_grasp(0.2099, 0.02).grasped);             // just inside in x
  CHECK(try_grasp(0.1901, 0.02).grasped);
  CHECK_FALSE(try_grasp(0.2101, 0.02).grasped);       // just outside
  CHECK(try_grasp(0.2, 0.0051).grasped);              // near the lower z edge
  CHECK(try_grasp(0.2, 0.0499).grasped);              // near the object top
  CHECK_FALSE(try_grasp(0.2, 0.0501).grasped);        // above the object
  CHECK_FALSE(try_grasp(0.2, 0.0049).grasped);        // below the window

  const WorldState g = try_grasp(0.2, 0.03);
  CHECK(g.grasped);
  CHECK(g.grip_opening == scene.object_width);  // jaw rests on the object
  CHECK(g.object_x == 0.2);                     // fingers center the object
  CHECK_FALSE(g.terminal.has_value());
}

TEST_CASE("grasp window boundaries are inclusive (exact dyadic geometry)") {
  // All quantities are dyadic rationals so every comparison in step_world is
  // exact and <= vs < is actually observable.
  SceneDescription scene;
  scene.object_x = 0.25;
  scene.object_height = 0.0625;
  WorldParams p;
  p.grasp_window_x = 0.015625;
  p.grasp_window_z_min = 0.0078125;
  const GripperConfig g = make_gripper("D", 0.25, 0.08);
  const double ulp_ish = std::ldexp(1.0, -20);

  const auto try_grasp = [&](double ee_x, double fingertip) {
    WorldState s = initial_state(scene, g, p);
    s.ee_x = ee_x;
    s.flange_z = fingertip + g.finger_length;
    return step_world(s, {0, 0, 0.02}, scene, g, identity_mapping(), p)
        .grasped;
  };

  CHECK(try_grasp(0.25 + 0.015625, 0.03125));          // |dx| == window
  CHECK_FALSE(try_grasp(0.25 + 0.015625 + ulp_ish, 0.03125));
  CHECK(try_grasp(0.25 - 0.015625, 0.03125));
  CHECK(try_grasp(0.25, 0.0078125));                   // z == lower bound
  CHECK_FALSE(try_grasp(0.25, 0.0078125 - ulp_ish));
  CHECK(try_grasp(0.25, 0.0625));                      // z == object height
  CHECK_FALSE(try_grasp(0.25, 0.0625 + ulp_ish));
}

TEST_CASE("closing on air at grasp width is a terminal miss") {
  SceneDescription scene;
  WorldParams p;
  WorldState s = initial_state(scene, kRef, p);
  s.ee_x = 0.30;  // far from the object
  s.flange_z = 0.03 + kRef.finger_length;

  const WorldState miss =
      step_world(s, {0, 0, 0.015}, scene, kRef, identity_mapping(), p);
  REQUIRE(miss.terminal.has_value());
  CHECK(*miss.terminal == Outcome::GraspMiss);

  // A partial close above the attempt width is not a miss.
  const WorldState partial =
      step_world(s, {0, 0, 0.03}, scene, kRef, identity_mapping(), p);
  CHECK_FALSE(partial.terminal.has_value());
  CHECK(partial.grip_opening == Approx(0.03).margin(1e-15));
}

TEST_CASE("crossing the table plane is a terminal collision") {
  SceneDescription scene;
  WorldParams p;
  WorldState s = initial_state(scene, kRef, p);
  s.flange_z = 0.01 + kRef.finger_length;
  const WorldState hit =
      step_world(s, {0, -0.02, 0.08}, scene, kRef, identity_mapping(), p);
  REQUIRE(hit.terminal.has_value());
  CHECK(*hit.terminal == Outcome::Collision);
  CHECK(hit.collision);
  // Terminal states are absorbing.
  const WorldState again =
      step_world(hit, {0.02, 0.5, 0.08}, scene, kRef, identity_mapping(), p);
  CHECK(again.ee_x == hit.ee_x);
  CHECK(again.step_index == hit.step_index);
}

TEST_CASE("held object follows the gripper; release decides the outcome") {
  SceneDescription scene;
  WorldParams p;
  WorldState s = initial_state(scene, kRef, p);
  s.grasped = true;
  s.object_x = s.ee_x;
  s.flange_z = 0.15 + kRef.finger_length;

  SECTION("holding keeps the jaw on the object and drags it") {
    const WorldState h =
        step_world(s, {0.02, 0, 0.0}, scene, kRef, identity_mapping(), p);
    CHECK(h.grasped);
    CHECK(h.grip_opening == scene.object_width);
    CHECK(h.object_x == Approx(0.37).margin(1e-15));
  }
  SECTION("release over the box is a success") {
    s.ee_x = scene.box_x + scene.box_half_width - 1e-6;
    const WorldState r =
        step_world(s, {0, 0, 0.08}, scene, kRef, identity_mapping(), p);
    REQUIRE(r.terminal.has_value());
    CHECK(*r.terminal == Outcome::Success);
    CHECK_FALSE(r.grasped);
  }
  SECTION("release off the box is a drop") {
    s.ee_x = scene.box_x + scene.box_half_width + 0.001;
    const WorldState r =
        step_world(s, {0, 0, 0.08}, scene, kRef, identity_mapping(), p);
    REQUIRE(r.terminal.has_value());
    CHECK(*r.terminal == Outcome::Drop);
  }
  SECTION("a release command must clear the object width plus margin") {
    const WorldState held =
        step_world(s, {0, 0, scene.object_width + p.release_margin}, scene,
                   kRef, identity_mapping(), p);
    CHECK(held.grasped);  // boundary: needs to exceed, not meet, the margin
  }
}

TEST_CASE("step limit produces a timeout") {
  SceneDescription scene;
  WorldParams p;
  WorldState s = initial_state(scene, kRef, p);
  s.step_index = p.max_steps - 1;
  const WorldState t =
      step_world(s, {0, 0.01, 0.08}, scene, kRef, identity_mapping(), p);
  REQUIRE(t.terminal.has_value());
  CHECK(*t.terminal == Outcome::Timeout);
}

TEST_CASE("grip commands pass through the inverse width mapping") {
  SceneDescription scene;
  WorldParams p;
  const GripperMapping m = derive_mapping(kRef, kWide);  // alpha = 0.8
  WorldState s = initial_state(scene, kWide, p);
  s.ee_x = 0.30;
  // Reference full-open 0.08 -> novel command 0.08 / 0.8 = 0.10.
  const WorldState r = step_world(s, {0, 0, 0.08}, scene, kWide, m, p);
  CHECK(r.grip_opening == Approx(0.10).margin(1e-12));
  // Commands beyond the jaw range clamp to it.
  const WorldState c = step_world(s, {0, 0, 0.12}, scene, kWide, m, p);
  CHECK(c.grip_opening == kWide.width_max);
}

TEST_CASE("expert demonstrations succeed and stay above the safety height") {
  WorldSetup setup;
  SceneDescription scene;
  SceneRanges ranges;
  Rng master(40);
  for (int trial = 0; trial < 10; ++trial) {
    Rng scene_rng = master.stream(2 * trial);
    const SceneDescription sc = sample_scene(scene, ranges, scene_rng);
    Rng ep_rng = master.stream(2 * trial + 1);
    const GripperConfig& g = (trial % 2 == 0) ? kRef : kLong;
    const EpisodeRecord ep = run_expert_episode(sc, g, setup, ep_rng);
    CHECK(ep.outcome == Outcome::Success);
    CHECK(ep.steps.size() < 100);
    CHECK(ep.fingertip_traj.size() == ep.steps.size() + 1);
    for (const auto& pt : ep.fingertip_traj) CHECK(pt[1] >= 0.01);
    CHECK(ep.gripper_id == g.id);
  }
}

TEST_CASE("per-episode waypoints vary within their configured bands") {
  WorldParams p;
  Rng ra(1), rb(2);
  const auto wa = sample_waypoints(p, 0.08, ra);
  const auto wb = sample_waypoints(p, 0.08, rb);
  CHECK(wa.hover_fingertip != wb.hover_fingertip);
  for (const auto& w : {wa, wb}) {
    CHECK(std::abs(w.hover_fingertip - p.hover_fingertip) <= p.hover_jitter);
    CHECK(std::abs(w.grasp_depth - p.grasp_depth) <= p.grasp_depth_jitter);
    CHECK(std::abs(w.lift_fingertip - p.lift_fingertip) <= p.lift_jitter);
    CHECK(std::abs(w.place_clearance - p.place_clearance) <= p.place_jitter);
    CHECK(w.open_width >= p.open_fraction_lo * 0.08);
    CHECK(w.open_width <= 0.08);
  }
  const auto nom = nominal_waypoints(p, 0.08);
  CHECK(nom.hover_fingertip == p.hover_fingertip);
  CHECK(nom.open_width == 0.08);
}

TEST_CASE("expert servo law is saturated-proportional toward the waypoint") {
  SceneDescription scene;
  WorldParams p;
  const ExpertWaypoints w = nominal_waypoints(p, 0.08);
  WorldState s = initial_state(scene, kRef, p);  // 0.15 to the right

  const ActionStep far = expert_action(s, scene, kRef, p, w);
  CHECK(far.dx == -p.step_clamp);  // saturated toward the object
  CHECK(far.dz == -p.step_clamp);  // saturated toward hover height
  CHECK(far.grip_command == 0.08);

  s.ee_x = scene.grasp_x() + 0.01;  // inside the proportional band
  const ActionStep near = expert_action(s, scene, kRef, p, w);
  CHECK(near.dx == Approx(-p.approach_gain * 0.01).margin(1e-15));

  // Aligned and at grasp depth: the close command still corrects laterally.
  s.ee_x = scene.grasp_x() + 0.002;
  s.flange_z = (scene.object_height - w.grasp_depth) + kRef.finger_length;
  const ActionStep close = expert_action(s, scene, kRef, p, w);
  CHECK(close.grip_command == 0.0);
  CHECK(close.dx == Approx(-p.approach_gain * 0.002).margin(1e-15));
}

TEST_CASE("observations are deterministic and split noisy from exact fields") {
  SceneDescription scene;
  WorldSetup setup;
  WorldState s = initial_state(scene, kLong, setup.params);
  const GripperMapping m = derive_mapping(kRef, kLong);

  Rng ra(5), rb(5);
  const Observation oa = observe(s, scene, kLong, m, 0.200, setup.noise,
                                 setup.map_params, ra);
  const Observation ob = observe(s, scene, kLong, m, 0.200, setup.noise,
                                 setup.map_params, rb);
  CHECK(oa.grasp == ob.grasp);
  CHECK(oa.grasp_raw == ob.grasp_raw);
  CHECK(oa.scene_f == ob.scene_f);
  CHECK(oa.robot == ob.robot);

  REQUIRE(oa.grasp.size() == 64);
  REQUIRE(oa.grasp_raw.size() == 64);
  for (double v : oa.grasp_raw) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // Robot channels are exact; the mapping hides the gripper change.
  CHECK(oa.robot[0] == s.ee_x);
  CHECK(oa.robot[1] == Approx(fingertip_z(s, kLong)).margin(1e-12));
  CHECK(oa.robot[2] == Approx(map_width(s.grip_opening, m)).margin(1e-15));
  // box_x is exact; object_x and visible length carry sensor noise.
  CHECK(oa.scene_f[1] == scene.box_x);
  CHECK(oa.scene_f[0] != scene.object_x);
  CHECK(std::abs(oa.scene_f[0] - scene.object_x) < 0.05);
  CHECK(std::abs(oa.scene_f[2] - kLong.finger_length) < 0.02);

  ObsNoiseParams silent;
  silent.object_x_sigma = 0.0;
  silent.visible_length_sigma = 0.0;
  Rng rc(5);
  const Observation oc =
      observe(s, scene, kLong, m, 0.200, silent, setup.map_params, rc);
  CHECK(oc.scene_f[0] == scene.object_x);
  CHECK(oc.scene_f[2] == kLong.finger_length);
}

TEST_CASE("stacked observations follow the documented layout") {
  Observation prev, cur;
  prev.grasp.assign(64, 0.25);
  prev.grasp_raw.assign(64, 0.75);
  prev.scene_f = {1, 2, 3};
  prev.robot = {4, 5, 6};
  cur.grasp.assign(64, 0.5);
  cur.grasp_raw.assign(64, 0.9);
  cur.scene_f = {7, 8, 9};
  cur.robot = {10, 11, 12};

  const auto proc = stack_observations(prev, cur, "processed");
  REQUIRE(proc.size() == 140);
  CHECK(proc[0] == 0.25);
  CHECK(proc[63] == 0.25);
  CHECK(proc[64] == 1);
  CHECK(proc[66] == 3);
  CHECK(proc[67] == 4);
  CHECK(proc[69] == 6);
  CHECK(proc[70] == 0.5);
  CHECK(proc[134] == 7);
  CHECK(proc[139] == 12);

  const auto raw = stack_observations(prev, cur, "raw");
  CHECK(raw[0] == 0.75);
  CHECK(raw[70] == 0.9);
  CHECK(raw[134] == 7);
}

TEST_CASE("policy rollout executes t_exec steps per chunk and stops mid-chunk") {
  SceneDescription scene;
  WorldSetup setup;
  int calls = 0;
  std::vector<double> z_seen;
  // Constant dive: 0.021 down per step from fingertip 0.30 crosses the table
  // on step 15 (0.30 / 0.021 ≈ 14.3), in the middle of the fourth chunk.
  // The rate is chosen so the crossing lands well inside a step rather than
  // on the exact table plane, which would make the strict ft < 0 collision
  // test sensitive to floating-point accumulation.
  ChunkGenerator dive = [&](const std::vector<double>& stacked, double z,
                            Rng&) {
    ++calls;
    z_seen.push_back(z);
    REQUIRE(stacked.size() == 140);
    std::vector<double> chunk(24, 0.0);
    for (int e = 0; e < 8; ++e) {
      chunk[3 * e + 1] = -0.021;
      chunk[3 * e + 2] = 0.08;
    }
    return chunk;
  };
  Rng ep(3);
  const EpisodeRecord rec =
      rollout_policy(dive, scene, kRef, identity_mapping(), identity_mapping(),
                     "processed", 8, 4, setup, ep);
  CHECK(rec.outcome == Outcome::Collision);
  CHECK(calls == 4);
  CHECK(rec.fingertip_traj.size() == 16);  // initial pose + 15 executed steps
  REQUIRE(!z_seen.empty());
  CHECK(z_seen[0] == Approx(0.30).margin(1e-12));

  ChunkGenerator bad = [](const std::vector<double>&, double,
                          Rng&) { return std::vector<double>(7, 0.0); };
  Rng ep2(3);
  CHECK_THROWS_AS(rollout_policy(bad, scene, kRef, identity_mapping(),
                                 identity_mapping(), "processed", 8, 4, setup,
                                 ep2),
                  std::invalid_argument);
}

TEST_CASE("demo generation is deterministic and keeps only successes") {
  SceneDescription profile;
  SceneRanges ranges;
  WorldSetup setup;
  const auto a = generate_demos(profile, ranges, kRef, setup, 5, Rng(77));
  const auto b = generate_demos(profile, ranges, kRef, setup, 5, Rng(77));
  REQUIRE(a.episodes.size() == 5);
  CHECK(a.redraws == b.redraws);
  for (const auto& ep : a.episodes) CHECK(ep.outcome == Outcome::Success);

  const auto ta = std::filesystem::temp_directory_path() / "crossgrip_demo_a.jsonl";
  const auto tb = std::filesystem::temp_directory_path() / "crossgrip_demo_b.jsonl";
  save_dataset(a.episodes, ta.string());
  save_dataset(b.episodes, tb.string());
  CHECK(file_text(ta) == file_text(tb));
  std::filesystem::remove(ta);
  std::filesystem::remove(tb);

  CHECK_THROWS_AS(generate_demos(profile, ranges, kRef, setup, 0, Rng(1)),
                  std::invalid_argument);
}

TEST_CASE("scene sampling respects the configured ranges") {
  SceneDescription profile;
  SceneRanges ranges;
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const SceneDescription s = sample_scene(profile, ranges, rng);
    CHECK(s.object_x >= ranges.object_x_lo);
    CHECK(s.object_x < ranges.object_x_hi);
    CHECK(s.box_x >= ranges.box_x_lo);
    CHECK(s.box_x < ranges.box_x_hi);
    CHECK(s.object_width == profile.object_width);
  }
  SceneDescription bad;
  bad.object_width = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("dataset serialization round-trips exactly") {
  SceneDescription profile;
  SceneRanges ranges;
  WorldSetup setup;
  auto gen = generate_demos(profile, ranges, kRef, setup, 2, Rng(12));
  gen.episodes[0].config_hash = "0123456789abcdef";

  const auto path = std::filesystem::temp_directory_path() / "crossgrip_ds.jsonl";
  save_dataset(gen.episodes, path.string());
  const auto loaded = load_dataset(path.string());
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(episode_to_json(loaded[i]).dump() ==
          episode_to_json(gen.episodes[i]).dump());
    CHECK(loaded[i].outcome == gen.episodes[i].outcome);
    CHECK(loaded[i].steps.size() == gen.episodes[i].steps.size());
    CHECK(loaded[i].steps[0].obs.grasp == gen.episodes[i].steps[0].obs.grasp);
    CHECK(loaded[i].fingertip_traj == gen.episodes[i].fingertip_traj);
  }
  std::filesystem::remove(path);
}

TEST_CASE("dataset loader reports the offending line") {
  const auto path = std::filesystem::temp_directory_path() / "crossgrip_bad.jsonl";
  {
    SceneDescription profile;
    SceneRanges ranges;
    WorldSetup setup;
    auto gen = generate_demos(profile, ranges, kRef, setup, 1, Rng(12));
    save_dataset(gen.episodes, path.string());
    std::ofstream app(path, std::ios::app);
    app << "{ broken\n";
  }
  CHECK_THROWS_WITH(load_dataset(path.string()),
                    Catch::Matchers::ContainsSubstring("line 2"));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset("/nonexistent/nowhere.jsonl"),
                  std::runtime_error);
}

TEST_CASE("trajectory divergence: zero, offset, and resampling cases") {
  std::vector<std::array<double, 2>> a;
  for (int i = 0; i <= 20; ++i) a.push_back({0.01 * i, 0.3 - 0.01 * i});

  CHECK(trajectory_divergence(a, a) == 0.0);

  auto shifted = a;
  for (auto& p : shifted) p[0] += 0.035;
  CHECK(trajectory_divergence(a, shifted) == Approx(0.035).margin(1e-12));

  // Same path at doubled resolution: identical after time-normalized
  // resampling.
  std::vector<std::array<double, 2>> dense;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    dense.push_back(a[i]);
    dense.push_back({0.5 * (a[i][0] + a[i + 1][0]),
                     0.5 * (a[i][1] + a[i + 1][1])});
  }
  dense.push_back(a.back());
  CHECK(trajectory_divergence(a, dense) == Approx(0.0).margin(1e-12));

  const std::vector<std::array<double, 2>> point{{0.1, 0.2}};
  CHECK(trajectory_divergence(point, point) == 0.0);
  CHECK_THROWS_AS(trajectory_divergence({}, a), std::invalid_argument);
}
