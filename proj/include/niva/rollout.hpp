#pragma once

#include <optional>

#include "niva/training.hpp"

namespace niva {

struct RolloutConfig {
  int horizon = 0;      // steps; 0 = length of the scenario's future
  int num_rollouts = 32;
  int patch_size = 1;   // steps each sampled action is held before resampling
  bool condition_on_truth = false;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AgentOverride {
  std::optional<int> intention;
  std::optional<std::vector<double>> style;
  std::optional<std::vector<double>> nu;
};

struct RolloutStepStats {
  std::vector<double> prior_mean;  // latent state entering the emission
  std::vector<double> prior_var;
  std::vector<double> posterior_mean;  // set when conditioning on truth
  bool decision = false;               // false on held (patch) steps
};

struct RolloutResult {
  RolloutRecord record;
  std::vector<std::vector<RolloutStepStats>> stats;  // [step][agent]
};

// Autoregressive closed-loop sampling. Per-agent latents (b, z, nu) come from
// a stream keyed by (scenario id, rollout index, agent index); nu is drawn
// once and reused at every step of the horizon.
RolloutResult rollout_scenario(const Scenario& scenario, const ParamStore& params,
                               const ModelConfig& cfg, const RolloutConfig& rcfg,
                               int rollout_index,
                               const std::vector<AgentOverride>* overrides = nullptr);

std::vector<RolloutResult> rollout_many(const Scenario& scenario,
                                        const ParamStore& params,
                                        const ModelConfig& cfg,
                                        const RolloutConfig& rcfg,
                                        const std::vector<AgentOverride>* overrides =
                                            nullptr);

// Replaces the latent mean by the posterior mean given an observed state.
std::vector<double> condition_update(const DiagGaussian& prior, const EmissionModel& em,
                                     const std::vector<double>& truth);

// ---- synchronous-vs-asynchronous decision bound ---------------------------

// Toy control system for the patch-size error bound: named dynamics, a
// Lipschitz constant, and a bounded action difference. The async agent keeps
// the synchronous action until its decision time delta, then switches.
struct AsyncBoundCase {
  std::string dynamics = "decay";  // f(x, u) = rate * (u - x)
  double lipschitz_k = 1.0;
  double action_gap_m = 0.5;
  double patch_tau = 0.5;       // seconds
  double decision_delay = 0.25; // seconds in [0, patch_tau]
  double decay_rate = 0.0;      // 0: use lipschitz_k
  std::vector<double> x0 = {0.0};
  std::vector<double> u_sync = {1.0};

  void validate() const;
};

struct AsyncBoundRow {
  double tau = 0.0;
  double empirical_gap = 0.0;
  double analytic_bound = 0.0;  // K M tau e^{K tau}
};

// RK4 integration of both trajectories at h = tau / 1000; the decision delay
// scales proportionally when tau differs from the case's patch_tau.
std::vector<AsyncBoundRow> async_bound_check(const AsyncBoundCase& c,
                                             const std::vector<double>& taus);

}  // namespace niva
