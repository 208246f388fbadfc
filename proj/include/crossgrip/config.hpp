#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "crossgrip/gripper.hpp"
#include "crossgrip/grasp_map.hpp"
#include "crossgrip/sim_world.hpp"

namespace crossgrip {

inline std::vector<GripperConfig> default_grippers() {
  return {
      {"G0", 0.200, 0.080, 0.0},  // reference: trained and calibrated on this
      {"G1", 0.235, 0.080, 0.0},  // longest fingers, same width
      {"G2", 0.185, 0.085, 0.0},
      {"G3", 0.175, 0.075, 0.0},
      {"G4", 0.160, 0.100, 0.0},  // shortest fingers, wide jaw
      {"G5", 0.210, 0.115, 0.0},  // widest jaw
  };
}

/// Every tunable in one place. Serialized as flat dotted keys plus a
/// "grippers" array; unknown keys are rejected so typos cannot silently
/// fall back to defaults.
struct RunConfig {
  std::vector<GripperConfig> grippers = default_grippers();
  std::string reference_gripper = "G0";

  SceneDescription scene_profile;  // object_x / box_x are sampled per episode
  SceneRanges scene_ranges;
  WorldParams world;
  ObsNoiseParams obs_noise;
  RawMapParams map_params;

  int k_train = 50;
  double beta_start = 1e-4;
  // Chosen so the forward process actually reaches noise at k_train = 50:
  // sampling starts from a unit Gaussian, so alpha_bar[K] must be ~0 or the
  // first denoising step runs on inputs the model never trained on (a linear
  // ramp to 0.02 borrowed from 1000-step schedules leaves alpha_bar[50] at
  // 0.60 and the sampler noticeably off-manifold).
  double beta_end = 0.18;
  int ddim_steps = 10;

  int t_a = 8;
  int t_o = 2;
  int t_exec = 4;
  int time_embed_dim = 16;
  std::vector<int> hidden = {192, 192};
  std::string feature_mode = "processed";

  int epochs = 2000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t train_seed = 7;
  int demo_count = 60;

  int eval_episodes = 50;
  std::uint64_t eval_seed = 7;

  double epsilon_safe = 0.01;
  int active_final_steps = 1;

  const GripperConfig& find_gripper(const std::string& id) const {
    for (const auto& g : grippers)
      if (g.id == id) return g;
    throw std::invalid_argument("unknown gripper: " + id);
  }

  void validate() const {
    for (const auto& g : grippers) g.validate();
    (void)find_gripper(reference_gripper);
    scene_profile.validate();
    if (k_train < 1 || ddim_steps < 1 || k_train % ddim_steps != 0)
      throw std::invalid_argument("config: ddim_steps must divide k_train");
    if (t_a < 1 || t_o != 2 || t_exec < 1 || t_exec > t_a)
      throw std::invalid_argument("config: bad horizon settings");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
      throw std::invalid_argument("config: time_embed_dim must be even");
    if (epochs < 1 || batch_size < 1 || demo_count < 1 || eval_episodes < 1)
      throw std::invalid_argument("config: counts must be >= 1");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("config: learning_rate must be > 0");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("config: hidden sizes must be >= 1");
  }
};

namespace detail {

struct ConfigBinding {
  const char* key;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

inline const std::vector<ConfigBinding>& config_bindings() {
  using J = nlohmann::json;
  auto d = [](const char* k, double RunConfig::* m) {
    return ConfigBinding{k, [m](const RunConfig& c) { return J(c.*m); },
                         [m](RunConfig& c, const J& v) { c.*m = v.get<double>(); }};
  };
  auto i = [](const char* k, int RunConfig::* m) {
    return ConfigBinding{k, [m](const RunConfig& c) { return J(c.*m); },
                         [m](RunConfig& c, const J& v) { c.*m = v.get<int>(); }};
  };
  auto u = [](const char* k, std::uint64_t RunConfig::* m) {
    return ConfigBinding{k, [m](const RunConfig& c) { return J(c.*m); },
                         [m](RunConfig& c, const J& v) { c.*m = v.get<std::uint64_t>(); }};
  };
  auto s = [](const char* k, std::string RunConfig::* m) {
    return ConfigBinding{k, [m](const RunConfig& c) { return J(c.*m); },
                         [m](RunConfig& c, const J& v) { c.*m = v.get<std::string>(); }};
  };
  // nested-member variants
  auto nd = [](const char* k, auto outer, auto inner) {
    return ConfigBinding{
        k, [outer, inner](const RunConfig& c) { return J(c.*outer.*inner); },
        [outer, inner](RunConfig& c, const J& v) { c.*outer.*inner = v.get<double>(); }};
  };
  auto ni = [](const char* k, auto outer, auto inner) {
    return ConfigBinding{
        k, [outer, inner](const RunConfig& c) { return J(c.*outer.*inner); },
        [outer, inner](RunConfig& c, const J& v) { c.*outer.*inner = v.get<int>(); }};
  };

  static const std::vector<ConfigBinding> bindings = {
      {"reference_gripper",
       [](const RunConfig& c) { return J(c.reference_gripper); },
       [](RunConfig& c, const J& v) { c.reference_gripper = v.get<std::string>(); }},

      nd("scene.object_width", &RunConfig::scene_profile, &SceneDescription::object_width),
      nd("scene.object_height", &RunConfig::scene_profile, &SceneDescription::object_height),
      nd("scene.grasp_offset_x", &RunConfig::scene_profile, &SceneDescription::grasp_offset_x),
      nd("scene.box_half_width", &RunConfig::scene_profile, &SceneDescription::box_half_width),
      nd("scene.box_top_z", &RunConfig::scene_profile, &SceneDescription::box_top_z),
      nd("scene.object_x_lo", &RunConfig::scene_ranges, &SceneRanges::object_x_lo),
      nd("scene.object_x_hi", &RunConfig::scene_ranges, &SceneRanges::object_x_hi),
      nd("scene.box_x_lo", &RunConfig::scene_ranges, &SceneRanges::box_x_lo),
      nd("scene.box_x_hi", &RunConfig::scene_ranges, &SceneRanges::box_x_hi),

      nd("world.start_ee_x", &RunConfig::world, &WorldParams::start_ee_x),
      nd("world.start_fingertip", &RunConfig::world, &WorldParams::start_fingertip),
      nd("world.step_clamp", &RunConfig::world, &WorldParams::step_clamp),
      nd("world.grasp_window_x", &RunConfig::world, &WorldParams::grasp_window_x),
      nd("world.grasp_window_z_min", &RunConfig::world, &WorldParams::grasp_window_z_min),
      nd("world.grasp_attempt_width", &RunConfig::world, &WorldParams::grasp_attempt_width),
      nd("world.release_margin", &RunConfig::world, &WorldParams::release_margin),
      ni("world.max_steps", &RunConfig::world, &WorldParams::max_steps),
      nd("world.hover_fingertip", &RunConfig::world, &WorldParams::hover_fingertip),
      nd("world.hover_jitter", &RunConfig::world, &WorldParams::hover_jitter),
      nd("world.grasp_depth", &RunConfig::world, &WorldParams::grasp_depth),
      nd("world.grasp_depth_jitter", &RunConfig::world, &WorldParams::grasp_depth_jitter),
      nd("world.lift_fingertip", &RunConfig::world, &WorldParams::lift_fingertip),
      nd("world.lift_jitter", &RunConfig::world, &WorldParams::lift_jitter),
      nd("world.place_clearance", &RunConfig::world, &WorldParams::place_clearance),
      nd("world.place_jitter", &RunConfig::world, &WorldParams::place_jitter),
      nd("world.open_fraction_lo", &RunConfig::world, &WorldParams::open_fraction_lo),
      nd("world.approach_gain", &RunConfig::world, &WorldParams::approach_gain),
      nd("world.align_tol_x", &RunConfig::world, &WorldParams::align_tol_x),
      nd("world.settle_tol_z", &RunConfig::world, &WorldParams::settle_tol_z),
      nd("world.commit_band", &RunConfig::world, &WorldParams::commit_band),
      nd("world.demo_action_noise", &RunConfig::world,
         &WorldParams::demo_action_noise),
      nd("world.demo_width_noise", &RunConfig::world,
         &WorldParams::demo_width_noise),
      nd("world.demo_dip_prob", &RunConfig::world, &WorldParams::demo_dip_prob),
      nd("world.demo_dip_lo", &RunConfig::world, &WorldParams::demo_dip_lo),
      nd("world.demo_dip_hi", &RunConfig::world, &WorldParams::demo_dip_hi),
      nd("world.carry_width", &RunConfig::world, &WorldParams::carry_width),

      nd("noise.object_x_sigma", &RunConfig::obs_noise, &ObsNoiseParams::object_x_sigma),
      nd("noise.visible_length_sigma", &RunConfig::obs_noise, &ObsNoiseParams::visible_length_sigma),

      ni("map.width", &RunConfig::map_params, &RawMapParams::map_width),
      ni("map.height", &RunConfig::map_params, &RawMapParams::map_height),
      nd("map.workspace_width", &RunConfig::map_params, &RawMapParams::workspace_width),
      nd("map.sigma_scale", &RunConfig::map_params, &RawMapParams::sigma_scale),
      nd("map.min_camera_height", &RunConfig::map_params, &RawMapParams::min_camera_height),
      nd("map.peak_lo", &RunConfig::map_params, &RawMapParams::peak_lo),
      nd("map.peak_hi", &RunConfig::map_params, &RawMapParams::peak_hi),
      ni("map.spurious_max", &RunConfig::map_params, &RawMapParams::spurious_max),
      nd("map.spurious_peak_lo", &RunConfig::map_params, &RawMapParams::spurious_peak_lo),
      nd("map.spurious_peak_hi", &RunConfig::map_params, &RawMapParams::spurious_peak_hi),
      nd("map.spurious_sigma", &RunConfig::map_params, &RawMapParams::spurious_sigma),
      nd("map.pixel_noise", &RunConfig::map_params, &RawMapParams::pixel_noise),

      i("diffusion.k_train", &RunConfig::k_train),
      d("diffusion.beta_start", &RunConfig::beta_start),
      d("diffusion.beta_end", &RunConfig::beta_end),
      i("diffusion.ddim_steps", &RunConfig::ddim_steps),

      i("policy.t_a", &RunConfig::t_a),
      i("policy.t_o", &RunConfig::t_o),
      i("policy.t_exec", &RunConfig::t_exec),
      i("policy.time_embed_dim", &RunConfig::time_embed_dim),
      {"policy.hidden", [](const RunConfig& c) { return J(c.hidden); },
       [](RunConfig& c, const J& v) { c.hidden = v.get<std::vector<int>>(); }},
      s("policy.feature_mode", &RunConfig::feature_mode),

      i("train.epochs", &RunConfig::epochs),
      i("train.batch_size", &RunConfig::batch_size),
      d("train.learning_rate", &RunConfig::learning_rate),
      u("train.seed", &RunConfig::train_seed),
      i("train.demo_count", &RunConfig::demo_count),

      i("eval.episodes", &RunConfig::eval_episodes),
      u("eval.seed", &RunConfig::eval_seed),

      d("safety.epsilon_safe", &RunConfig::epsilon_safe),
      i("safety.active_final_steps", &RunConfig::active_final_steps),
  };
  return bindings;
}

}  // namespace detail

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json grippers = nlohmann::ordered_json::array();
  for (const auto& g : c.grippers)
    grippers.push_back({{"id", g.id},
                        {"finger_length", g.finger_length},
                        {"width_max", g.width_max},
                        {"width_min", g.width_min}});
  j["grippers"] = std::move(grippers);
  for (const auto& b : detail::config_bindings()) j[b.key] = b.get(c);
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "grippers") {
      c.grippers.clear();
      for (const auto& g : value) {
        GripperConfig gc;
        gc.id = g.at("id").get<std::string>();
        gc.finger_length = g.at("finger_length").get<double>();
        gc.width_max = g.at("width_max").get<double>();
        gc.width_min = g.at("width_min").get<double>();
        for (const auto& [gk, gv] : g.items()) {
          (void)gv;
          if (gk != "id" && gk != "finger_length" && gk != "width_max" &&
              gk != "width_min")
            throw std::invalid_argument("config: unknown gripper key: " + gk);
        }
        c.grippers.push_back(std::move(gc));
      }
      continue;
    }
    bool found = false;
    for (const auto& b : detail::config_bindings()) {
      if (key == b.key) {
        try {
          b.set(c, value);
        } catch (const nlohmann::json::exception& e) {
          throw std::invalid_argument("config key '" + key + "': " + e.what());
        }
        found = true;
        break;
      }
    }
    if (!found) throw std::invalid_argument("config: unknown key: " + key);
  }
  c.validate();
  return c;
}

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << config_to_json(c).dump(1) << "\n";
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a 64-bit over the canonical serialized form; stamped into every
/// output file so mismatched artifacts are detectable.
inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  const std::string canonical = config_to_json(c).dump();
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canonical);
  return os.str();
}

inline WorldSetup make_world_setup(const RunConfig& c) {
  const GripperConfig& ref = c.find_gripper(c.reference_gripper);
  WorldSetup s;
  s.params = c.world;
  s.noise = c.obs_noise;
  s.map_params = c.map_params;
  s.reference_finger_length = ref.finger_length;
  s.reference_open_width = ref.width_max;
  return s;
}

}  // namespace crossgrip
