#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crossgrip/nn_core.hpp"
#include "crossgrip/rng.hpp"

namespace crossgrip {

/// Thrown when training or sampling hits non-finite numbers; the CLI maps it
/// to its numeric-failure exit code.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Variance schedule for the denoising process plus the strided subsequence
/// used at inference. Index 0 is the clean sample (alpha_bar[0] == 1).
struct DiffusionSchedule {
  int k_train = 50;
  double beta_start = 1e-4;
  double beta_end = 0.18;  // terminal alpha_bar ~0; see RunConfig::beta_end
  int ddim_steps = 10;
  std::vector<double> beta;       // beta[0] unused
  std::vector<double> alpha_bar;  // cumulative product of (1 - beta)
  std::vector<int> inference_nodes;  // ascending, inference_nodes[0] == 0

  static DiffusionSchedule make(int k_train = 50, double beta_start = 1e-4,
                                double beta_end = 0.18, int ddim_steps = 10) {
    if (k_train < 2) throw std::invalid_argument("schedule: k_train < 2");
    if (ddim_steps < 1 || ddim_steps > k_train)
      throw std::invalid_argument("schedule: bad ddim_steps");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end))
      throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.k_train = k_train;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.ddim_steps = ddim_steps;
    s.beta.assign(std::size_t(k_train) + 1, 0.0);
    s.alpha_bar.assign(std::size_t(k_train) + 1, 1.0);
    for (int k = 1; k <= k_train; ++k) {
      s.beta[k] = beta_start + (beta_end - beta_start) * (k - 1) / (k_train - 1);
      s.alpha_bar[k] = s.alpha_bar[k - 1] * (1.0 - s.beta[k]);
    }
    // Evenly strided denoising subsequence, endpoints included.
    for (int i = 0; i <= ddim_steps; ++i)
      s.inference_nodes.push_back(
          static_cast<int>(std::llround(double(i) * k_train / ddim_steps)));
    for (std::size_t i = 1; i < s.inference_nodes.size(); ++i)
      if (s.inference_nodes[i] <= s.inference_nodes[i - 1])
        throw std::invalid_argument("schedule: subsequence not increasing");
    return s;
  }
};

/// Forward (noising) process: x_k = sqrt(ab_k) x_0 + sqrt(1-ab_k) noise.
inline std::vector<double> forward_diffuse(const std::vector<double>& a0,
                                           int k,
                                           const std::vector<double>& noise,
                                           const DiffusionSchedule& s) {
  if (k < 0 || k > s.k_train)
    throw std::invalid_argument("forward_diffuse: k out of range");
  if (k == 0) return a0;
  if (noise.size() != a0.size())
    throw std::invalid_argument("forward_diffuse: noise shape mismatch");
  const double sa = std::sqrt(s.alpha_bar[std::size_t(k)]);
  const double sn = std::sqrt(1.0 - s.alpha_bar[std::size_t(k)]);
  std::vector<double> out(a0.size());
  for (std::size_t i = 0; i < a0.size(); ++i)
    out[i] = sa * a0[i] + sn * noise[i];
  return out;
}

/// One deterministic (eta = 0) denoising step from level k_from to k_to:
/// reconstruct the clean estimate from the predicted noise, then re-noise to
/// the lower level with that same prediction.
inline std::vector<double> ddim_step(const std::vector<double>& a_k,
                                     const std::vector<double>& eps_hat,
                                     int k_from, int k_to,
                                     const DiffusionSchedule& s) {
  if (k_to < 0 || k_from <= k_to || k_from > s.k_train)
    throw std::invalid_argument("ddim_step: need 0 <= k_to < k_from <= K");
  if (eps_hat.size() != a_k.size())
    throw std::invalid_argument("ddim_step: eps shape mismatch");
  const double ab_f = s.alpha_bar[std::size_t(k_from)];
  const double ab_t = s.alpha_bar[std::size_t(k_to)];
  const double inv_sa = 1.0 / std::sqrt(ab_f);
  const double sn_f = std::sqrt(1.0 - ab_f);
  const double sa_t = std::sqrt(ab_t);
  const double sn_t = std::sqrt(1.0 - ab_t);
  std::vector<double> out(a_k.size());
  for (std::size_t i = 0; i < a_k.size(); ++i) {
    const double a0_hat = (a_k[i] - sn_f * eps_hat[i]) * inv_sa;
    out[i] = sa_t * a0_hat + sn_t * eps_hat[i];
  }
  return out;
}

/// Sinusoidal embedding of the denoising level, dim/2 sin-cos pairs.
inline std::vector<double> timestep_embedding(int k, int dim) {
  std::vector<double> emb(std::size_t(dim), 0.0);
  const int pairs = dim / 2;
  for (int j = 0; j < pairs; ++j) {
    const double freq = std::pow(10000.0, -double(j) / pairs);
    emb[std::size_t(2 * j)] = std::sin(k * freq);
    emb[std::size_t(2 * j) + 1] = std::cos(k * freq);
  }
  return emb;
}

/// Per-dimension min-max statistics mapping data to [-1, 1]. Observation
/// stats cover the stacked observation vector; action stats cover one
/// (dx, dz, grip) step and are tiled across the chunk.
struct NormStats {
  std::vector<double> obs_lo, obs_hi;
  std::vector<double> act_lo, act_hi;  // size 3

  static constexpr double kDegenerate = 1e-12;

  /// Collapsed dimensions get a unit range centered on the value so the
  /// transforms stay finite and invertible.
  static void fix_degenerate(std::vector<double>& lo, std::vector<double>& hi) {
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (hi[i] - lo[i] < kDegenerate) {
        const double mid = 0.5 * (hi[i] + lo[i]);
        lo[i] = mid - 0.5;
        hi[i] = mid + 0.5;
      }
    }
  }

  std::vector<double> normalize_obs(const std::vector<double>& obs) const {
    if (obs.size() != obs_lo.size())
      throw std::invalid_argument("normalize_obs: dimension mismatch");
    std::vector<double> out(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i)
      out[i] = 2.0 * (obs[i] - obs_lo[i]) / (obs_hi[i] - obs_lo[i]) - 1.0;
    return out;
  }

  /// Latent chunk (values nominally in [-1, 1]) -> Cartesian displacements.
  std::vector<double> phi(const std::vector<double>& latent) const {
    std::vector<double> out(latent.size());
    for (std::size_t i = 0; i < latent.size(); ++i) {
      const std::size_t d = i % act_lo.size();
      out[i] = act_lo[d] + 0.5 * (latent[i] + 1.0) * (act_hi[d] - act_lo[d]);
    }
    return out;
  }

  std::vector<double> phi_inverse(const std::vector<double>& cart) const {
    std::vector<double> out(cart.size());
    for (std::size_t i = 0; i < cart.size(); ++i) {
      const std::size_t d = i % act_lo.size();
      out[i] = 2.0 * (cart[i] - act_lo[d]) / (act_hi[d] - act_lo[d]) - 1.0;
    }
    return out;
  }
};

/// One supervised pair: raw stacked observation plus the Cartesian action
/// chunk (t_a steps x 3) starting at the same control step.
struct TrainingSample {
  std::vector<double> obs;
  std::vector<double> chunk;
};

/// Trained noise-prediction policy plus everything needed to run it.
struct PolicyModel {
  DenseNet net;
  NormStats norm;
  DiffusionSchedule schedule;
  int t_a = 8;
  int t_o = 2;
  int time_embed_dim = 16;
  std::string feature_mode = "processed";  // or "raw"
  std::string config_hash;

  int action_dim() const { return t_a * 3; }
  int obs_dim() const { return static_cast<int>(norm.obs_lo.size()); }
  int input_dim() const { return obs_dim() + action_dim() + time_embed_dim; }

  /// eps_hat(normalized obs, latent chunk, level k).
  std::vector<double> predict_noise(const std::vector<double>& norm_obs,
                                    const std::vector<double>& latent,
                                    int k) const {
    std::vector<double> input;
    input.reserve(std::size_t(input_dim()));
    input.insert(input.end(), norm_obs.begin(), norm_obs.end());
    input.insert(input.end(), latent.begin(), latent.end());
    const auto emb = timestep_embedding(k, time_embed_dim);
    input.insert(input.end(), emb.begin(), emb.end());
    return forward(net, input);
  }
};

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
  std::vector<int> hidden = {192, 192};
};

/// DDPM-style noise-prediction training over the sample set. Single-threaded
/// and bit-reproducible for a given seed. Appends one (epoch, mse) row per
/// epoch to loss_curve.
inline PolicyModel train_policy_model(
    const std::vector<TrainingSample>& samples, const DiffusionSchedule& sched,
    int t_a, int t_o, int time_embed_dim, const std::string& feature_mode,
    const std::string& config_hash, const TrainConfig& cfg,
    std::vector<std::pair<int, double>>* loss_curve = nullptr) {
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  const int obs_dim = static_cast<int>(samples[0].obs.size());
  const int act_dim = t_a * 3;
  for (const auto& s : samples)
    if (static_cast<int>(s.obs.size()) != obs_dim ||
        static_cast<int>(s.chunk.size()) != act_dim)
      throw std::invalid_argument("train: inconsistent sample shapes");

  PolicyModel model;
  model.schedule = sched;
  model.t_a = t_a;
  model.t_o = t_o;
  model.time_embed_dim = time_embed_dim;
  model.feature_mode = feature_mode;
  model.config_hash = config_hash;

  // Min-max stats: observations per stacked dimension, actions per step dim.
  auto& norm = model.norm;
  norm.obs_lo.assign(std::size_t(obs_dim), 1e300);
  norm.obs_hi.assign(std::size_t(obs_dim), -1e300);
  norm.act_lo.assign(3, 1e300);
  norm.act_hi.assign(3, -1e300);
  for (const auto& s : samples) {
    for (int i = 0; i < obs_dim; ++i) {
      norm.obs_lo[i] = std::min(norm.obs_lo[i], s.obs[std::size_t(i)]);
      norm.obs_hi[i] = std::max(norm.obs_hi[i], s.obs[std::size_t(i)]);
    }
    for (int i = 0; i < act_dim; ++i) {
      norm.act_lo[i % 3] = std::min(norm.act_lo[i % 3], s.chunk[std::size_t(i)]);
      norm.act_hi[i % 3] = std::max(norm.act_hi[i % 3], s.chunk[std::size_t(i)]);
    }
  }
  NormStats::fix_degenerate(norm.obs_lo, norm.obs_hi);
  NormStats::fix_degenerate(norm.act_lo, norm.act_hi);

  const std::size_t n = samples.size();
  std::vector<std::vector<double>> obs_n(n), a0(n);
  for (std::size_t i = 0; i < n; ++i) {
    obs_n[i] = norm.normalize_obs(samples[i].obs);
    a0[i] = norm.phi_inverse(samples[i].chunk);
  }

  std::vector<int> layers{obs_dim + act_dim + time_embed_dim};
  layers.insert(layers.end(), cfg.hidden.begin(), cfg.hidden.end());
  layers.push_back(act_dim);
  model.net = DenseNet::make(layers);
  Rng rng(cfg.seed);
  Rng init_rng = rng.stream(0xA11);
  init_he_uniform(model.net, init_rng);
  Rng train_rng = rng.stream(0xB22);

  AdamState adam = AdamState::make(model.net, cfg.learning_rate);
  Gradients grads = Gradients::zeros_like(model.net);
  BatchCache cache;
  const int in_dim = model.input_dim();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<double> X, target, grad_out;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Cosine-annealed step size (to 2% of base): a constant rate leaves the
    // loss gradient-noise-bound and the sampled grip channel too diffuse to
    // hold a jaw width steady over a whole approach.
    const double progress =
        cfg.epochs > 1 ? double(epoch - 1) / double(cfg.epochs - 1) : 0.0;
    adam.lr = cfg.learning_rate *
              (0.10 + 0.90 * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846)));
    // Fisher-Yates with the training stream; deterministic per (seed, epoch).
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = train_rng.below(static_cast<std::uint32_t>(i));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_sq = 0.0;
    for (std::size_t start = 0; start < n;
         start += std::size_t(cfg.batch_size)) {
      const std::size_t b = std::min(std::size_t(cfg.batch_size), n - start);
      X.assign(b * std::size_t(in_dim), 0.0);
      target.assign(b * std::size_t(act_dim), 0.0);
      for (std::size_t r = 0; r < b; ++r) {
        const std::size_t s = order[start + r];
        const int k = 1 + static_cast<int>(
                              train_rng.below(std::uint32_t(sched.k_train)));
        double* row = X.data() + r * std::size_t(in_dim);
        double* tgt = target.data() + r * std::size_t(act_dim);
        for (int i = 0; i < act_dim; ++i) tgt[i] = train_rng.normal();
        const double sa = std::sqrt(sched.alpha_bar[std::size_t(k)]);
        const double sn = std::sqrt(1.0 - sched.alpha_bar[std::size_t(k)]);
        for (int i = 0; i < obs_dim; ++i) row[i] = obs_n[s][std::size_t(i)];
        for (int i = 0; i < act_dim; ++i)
          row[obs_dim + i] = sa * a0[s][std::size_t(i)] + sn * tgt[i];
        const auto emb = timestep_embedding(k, time_embed_dim);
        for (int i = 0; i < time_embed_dim; ++i)
          row[obs_dim + act_dim + i] = emb[std::size_t(i)];
      }
      const auto& pred = forward_batch(model.net, X, static_cast<int>(b), cache);
      grad_out.assign(b * std::size_t(act_dim), 0.0);
      const double scale = 2.0 / (double(b) * act_dim);
      double batch_sq = 0.0;
      for (std::size_t i = 0; i < grad_out.size(); ++i) {
        const double diff = pred[i] - target[i];
        batch_sq += diff * diff;
        grad_out[i] = scale * diff;
      }
      // Targets are unit-variance noise, so a healthy batch loss is O(1).
      // Adam's normalized updates can keep a divergent run finite (weights
      // oscillate at huge magnitude instead of overflowing), so detecting
      // blowup needs a magnitude bound, not just an isfinite check.
      if (!std::isfinite(batch_sq) || batch_sq > 1e12 * double(b) * act_dim)
        throw NumericError("train: diverged (non-finite or absurd loss) at epoch " +
                           std::to_string(epoch));
      epoch_sq += batch_sq;
      grads.zero();
      backward_batch(model.net, cache, grad_out, grads);
      adam_step(model.net, grads, adam);
    }
    const double epoch_mse = epoch_sq / (double(n) * act_dim);
    if (loss_curve) loss_curve->emplace_back(epoch, epoch_mse);
    if (!model.net.all_finite())
      throw NumericError("train: non-finite parameters after epoch " +
                         std::to_string(epoch));
  }
  return model;
}

/// Draw the initial latent and run the strided deterministic denoising loop.
/// Returns the final latent chunk (no clamping, no safety handling); the
/// projection layer turns this into executable Cartesian actions.
inline std::vector<double> sample_latent_chunk(const PolicyModel& model,
                                               const std::vector<double>& norm_obs,
                                               Rng& rng) {
  std::vector<double> latent(std::size_t(model.action_dim()));
  for (double& v : latent) v = rng.normal();
  const auto& nodes = model.schedule.inference_nodes;
  for (std::size_t i = nodes.size() - 1; i >= 1; --i) {
    const auto eps = model.predict_noise(norm_obs, latent, nodes[i]);
    latent = ddim_step(latent, eps, nodes[i], nodes[i - 1], model.schedule);
  }
  return latent;
}

inline void clamp_displacements(std::vector<double>& cart, double limit) {
  for (std::size_t i = 0; i < cart.size(); ++i)
    if (i % 3 != 2)  // dx and dz only; grip commands are widths, not motions
      cart[i] = std::clamp(cart[i], -limit, limit);
}

/// Unconstrained sampler: denoise, denormalize, clamp per-step displacements.
/// Cartesian chunk layout: [dx0, dz0, g0, dx1, ...].
inline std::vector<double> sample_unconstrained(const PolicyModel& model,
                                                const std::vector<double>& raw_obs,
                                                Rng& rng,
                                                double step_clamp = 0.02) {
  const auto norm_obs = model.norm.normalize_obs(raw_obs);
  auto cart = model.norm.phi(sample_latent_chunk(model, norm_obs, rng));
  clamp_displacements(cart, step_clamp);
  return cart;
}

// ---- checkpoint serialization ----

inline nlohmann::ordered_json policy_to_json(const PolicyModel& m) {
  nlohmann::ordered_json j;
  j["format"] = "crossgrip-policy-v1";
  j["config_hash"] = m.config_hash;
  j["feature_mode"] = m.feature_mode;
  j["t_a"] = m.t_a;
  j["t_o"] = m.t_o;
  j["time_embed_dim"] = m.time_embed_dim;
  j["schedule"] = {{"k_train", m.schedule.k_train},
                   {"beta_start", m.schedule.beta_start},
                   {"beta_end", m.schedule.beta_end},
                   {"ddim_steps", m.schedule.ddim_steps}};
  j["layer_sizes"] = m.net.sizes;
  j["weights"] = m.net.weights;
  j["biases"] = m.net.biases;
  j["norm"] = {{"obs_lo", m.norm.obs_lo},
               {"obs_hi", m.norm.obs_hi},
               {"act_lo", m.norm.act_lo},
               {"act_hi", m.norm.act_hi}};
  return j;
}

inline PolicyModel policy_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "crossgrip-policy-v1")
      throw std::runtime_error("unknown checkpoint format");
    PolicyModel m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.feature_mode = j.at("feature_mode").get<std::string>();
    m.t_a = j.at("t_a").get<int>();
    m.t_o = j.at("t_o").get<int>();
    m.time_embed_dim = j.at("time_embed_dim").get<int>();
    const auto& s = j.at("schedule");
    m.schedule = DiffusionSchedule::make(
        s.at("k_train").get<int>(), s.at("beta_start").get<double>(),
        s.at("beta_end").get<double>(), s.at("ddim_steps").get<int>());
    m.net = DenseNet::make(j.at("layer_sizes").get<std::vector<int>>());
    m.net.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    m.net.biases = j.at("biases").get<std::vector<std::vector<double>>>();
    for (std::size_t l = 0; l < m.net.layer_count(); ++l) {
      if (m.net.weights[l].size() !=
              std::size_t(m.net.sizes[l + 1]) * m.net.sizes[l] ||
          m.net.biases[l].size() != std::size_t(m.net.sizes[l + 1]))
        throw std::runtime_error("weight shape mismatch");
    }
    const auto& nrm = j.at("norm");
    m.norm.obs_lo = nrm.at("obs_lo").get<std::vector<double>>();
    m.norm.obs_hi = nrm.at("obs_hi").get<std::vector<double>>();
    m.norm.act_lo = nrm.at("act_lo").get<std::vector<double>>();
    m.norm.act_hi = nrm.at("act_hi").get<std::vector<double>>();
    if (m.norm.obs_lo.size() != m.norm.obs_hi.size() ||
        m.norm.act_lo.size() != 3 || m.norm.act_hi.size() != 3)
      throw std::runtime_error("norm stats shape mismatch");
    if (m.net.input_dim() != m.obs_dim() + m.action_dim() + m.time_embed_dim ||
        m.net.output_dim() != m.action_dim())
      throw std::runtime_error("network dimensions inconsistent");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
}

inline void save_policy(const PolicyModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << policy_to_json(m).dump(1) << "\n";
}

inline PolicyModel load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint parse: ") + e.what());
  }
  return policy_from_json(j);
}

}  // namespace crossgrip
