#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "crossgrip/diffusion.hpp"

namespace crossgrip {

/// Height-floor constraint for chunk generation. epsilon_safe = -infinity is
/// the documented "disabled" sentinel: generation then matches the
/// unconstrained sampler bit for bit.
struct SafetySpec {
  double epsilon_safe = 0.01;    // meters above the table
  double z_current = 0.0;        // mapped height at generation time
  int active_final_steps = 1;    // project while remaining iterations <= this

  bool enabled() const { return std::isfinite(epsilon_safe); }

  static SafetySpec disabled() {
    SafetySpec s;
    s.epsilon_safe = -std::numeric_limits<double>::infinity();
    return s;
  }
};

struct CorrectionVector {
  std::vector<double> nu;  // per-step vertical corrections, all >= 0

  bool any() const {
    for (double v : nu)
      if (v != 0.0) return true;
    return false;
  }
};

/// Closed-form solution of: minimize sum(nu_j^2) subject to
/// z_current + sum_{r<=j} dz_r + nu_j >= eps for every j. The constraints
/// decouple (each nu_j appears in exactly one), so the optimum is the
/// per-constraint deficit clipped at zero.
inline std::vector<double> correction_for_displacements(
    const std::vector<double>& dz, double z_current, double eps) {
  std::vector<double> nu(dz.size(), 0.0);
  double cum = z_current;
  for (std::size_t j = 0; j < dz.size(); ++j) {
    cum += dz[j];
    nu[j] = std::max(0.0, eps - cum);
  }
  return nu;
}

inline std::vector<double> extract_dz(const std::vector<double>& cart) {
  std::vector<double> dz(cart.size() / 3);
  for (std::size_t j = 0; j < dz.size(); ++j) dz[j] = cart[3 * j + 1];
  return dz;
}

/// Latent-space projection: denormalize, correct the vertical components,
/// renormalize. Feasible chunks are returned unchanged (the exact same
/// values, no transform round-trip).
inline std::pair<std::vector<double>, CorrectionVector>
project_chunk_closed_form(const std::vector<double>& latent,
                          const SafetySpec& spec, const NormStats& norm) {
  CorrectionVector corr;
  corr.nu.assign(latent.size() / 3, 0.0);
  if (!spec.enabled()) return {latent, corr};
  auto cart = norm.phi(latent);
  corr.nu = correction_for_displacements(extract_dz(cart), spec.z_current,
                                         spec.epsilon_safe);
  if (!corr.any()) return {latent, corr};
  for (std::size_t j = 0; j < corr.nu.size(); ++j)
    cart[3 * j + 1] += corr.nu[j];
  return {norm.phi_inverse(cart), corr};
}

/// Independent reference solver for the same QP, written as a plain
/// active-set iteration (start from nu = 0, repeatedly activate the most
/// violated constraint and solve the equality-constrained subproblem).
/// Exists so the closed form can be cross-checked, not for production use.
inline std::pair<std::vector<double>, CorrectionVector>
project_chunk_qp_oracle(const std::vector<double>& latent,
                        const SafetySpec& spec, const NormStats& norm) {
  CorrectionVector corr;
  const std::size_t steps = latent.size() / 3;
  corr.nu.assign(steps, 0.0);
  if (!spec.enabled()) return {latent, corr};
  auto cart = norm.phi(latent);

  std::vector<double> position(steps, 0.0);
  double cum = spec.z_current;
  for (std::size_t j = 0; j < steps; ++j) {
    cum += cart[3 * j + 1];
    position[j] = cum;
  }

  std::vector<bool> active(steps, false);
  std::vector<double> nu(steps, 0.0);
  const std::size_t max_passes = steps + 1;
  std::size_t pass = 0;
  while (true) {
    if (++pass > max_passes + 1)
      throw std::logic_error("qp oracle: active-set iteration diverged");
    // Solve with the current active set: active constraints hold with
    // equality, inactive multipliers stay at the unconstrained optimum 0.
    for (std::size_t j = 0; j < steps; ++j)
      nu[j] = active[j] ? spec.epsilon_safe - position[j] : 0.0;
    // Drop constraints whose multiplier went negative (over-satisfied).
    bool changed = false;
    for (std::size_t j = 0; j < steps; ++j) {
      if (active[j] && nu[j] < 0.0) {
        active[j] = false;
        nu[j] = 0.0;
        changed = true;
      }
    }
    if (changed) continue;
    // Activate the most violated constraint, if any.
    double worst = 0.0;
    std::size_t worst_j = steps;
    for (std::size_t j = 0; j < steps; ++j) {
      const double violation = spec.epsilon_safe - (position[j] + nu[j]);
      if (violation > worst + 1e-15) {
        worst = violation;
        worst_j = j;
      }
    }
    if (worst_j == steps) break;
    active[worst_j] = true;
  }

  corr.nu = nu;
  bool any = false;
  for (double v : nu) any = any || v != 0.0;
  if (!any) return {latent, corr};
  for (std::size_t j = 0; j < steps; ++j) cart[3 * j + 1] += nu[j];
  return {norm.phi_inverse(cart), corr};
}

struct ProjectionTraceRow {
  int chunk_id = 0;
  int stage = 0;  // remaining denoising iterations when the projection ran
  double pre_min_z = 0.0;
  double post_min_z = 0.0;
  std::vector<double> nu;
};

struct ProjectionTrace {
  int next_chunk_id = 0;
  std::vector<ProjectionTraceRow> rows;
};

namespace detail {
inline ProjectionTraceRow trace_row(int chunk_id, int stage, double z_current,
                                    const std::vector<double>& dz,
                                    const std::vector<double>& nu) {
  ProjectionTraceRow row;
  row.chunk_id = chunk_id;
  row.stage = stage;
  row.nu = nu;
  double cum = z_current;
  double pre_min = std::numeric_limits<double>::infinity();
  double post_min = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < dz.size(); ++j) {
    cum += dz[j];
    pre_min = std::min(pre_min, cum);
    post_min = std::min(post_min, cum + nu[j]);
  }
  row.pre_min_z = pre_min;
  row.post_min_z = post_min;
  return row;
}
}  // namespace detail

/// Constrained chunk generation: the strided denoising loop with latent
/// projections over the last `active_final_steps` iterations, then
/// denormalize, clamp the per-step displacements, and apply the final
/// closed-form correction *after* clamping. That ordering is what makes the
/// executed-trajectory bound exact for arbitrary model states: nothing
/// downstream of the last correction can shrink it. Corrected steps may
/// exceed the upward clamp by their safety deficit; every other step honors
/// it.
inline std::vector<double> generate_trajectory(const PolicyModel& model,
                                               const std::vector<double>& raw_obs,
                                               const SafetySpec& spec, Rng& rng,
                                               ProjectionTrace* trace = nullptr,
                                               double step_clamp = 0.02) {
  const auto norm_obs = model.norm.normalize_obs(raw_obs);
  const int chunk_id = trace ? trace->next_chunk_id++ : 0;

  std::vector<double> latent(std::size_t(model.action_dim()));
  for (double& v : latent) v = rng.normal();
  const auto& nodes = model.schedule.inference_nodes;
  for (std::size_t i = nodes.size() - 1; i >= 1; --i) {
    const auto eps = model.predict_noise(norm_obs, latent, nodes[i]);
    latent = ddim_step(latent, eps, nodes[i], nodes[i - 1], model.schedule);
    const int remaining = static_cast<int>(i) - 1;
    if (spec.enabled() && remaining >= 1 &&
        remaining <= spec.active_final_steps) {
      auto [projected, corr] = project_chunk_closed_form(latent, spec, model.norm);
      if (trace)
        trace->rows.push_back(detail::trace_row(
            chunk_id, remaining, spec.z_current,
            extract_dz(model.norm.phi(latent)), corr.nu));
      latent = std::move(projected);
    }
  }

  auto cart = model.norm.phi(latent);
  clamp_displacements(cart, step_clamp);
  if (spec.enabled()) {
    const auto dz = extract_dz(cart);
    const auto nu = correction_for_displacements(dz, spec.z_current,
                                                 spec.epsilon_safe);
    if (trace)
      trace->rows.push_back(
          detail::trace_row(chunk_id, 0, spec.z_current, dz, nu));
    for (std::size_t j = 0; j < nu.size(); ++j) cart[3 * j + 1] += nu[j];
  }
  return cart;
}

}  // namespace crossgrip
