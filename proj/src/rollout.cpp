#include "niva/rollout.hpp"

#include <cmath>
#include <stdexcept>

namespace niva {

void RolloutConfig::validate() const {
  if (horizon < 0) throw std::invalid_argument("RolloutConfig: horizon must be >= 0");
  if (num_rollouts < 1)
    throw std::invalid_argument("RolloutConfig: num_rollouts must be >= 1");
  if (patch_size < 1) throw std::invalid_argument("RolloutConfig: patch_size must be >= 1");
}

std::vector<double> condition_update(const DiagGaussian& prior, const EmissionModel& em,
                                     const std::vector<double>& truth) {
  return posterior(prior, em, truth).mean;
}

namespace {

struct HeldAction {
  double dx = 0.0, dy = 0.0, dheading = 0.0;
};

}  // namespace

RolloutResult rollout_scenario(const Scenario& scenario, const ParamStore& params,
                               const ModelConfig& cfg, const RolloutConfig& rcfg,
                               int rollout_index,
                               const std::vector<AgentOverride>* overrides) {
  scenario.validate();
  rcfg.validate();
  const int n_agents = scenario.num_agents();
  const int t_h = scenario.history_steps();
  const int horizon = rcfg.horizon > 0 ? rcfg.horizon : scenario.future_steps();
  if (horizon < 1)
    throw std::invalid_argument("rollout_scenario: no horizon (scenario has no future)");
  if (overrides != nullptr && static_cast<int>(overrides->size()) != n_agents)
    throw std::invalid_argument("rollout_scenario: override count mismatch");

  const ModelView mv = bind_model(params, cfg, nullptr);
  const EmissionModel em = extract_emission(params, cfg);

  // Per-agent latents; every draw happens regardless of overrides so that an
  // override changes nothing else (common random numbers).
  std::vector<AgentLatents> latents(n_agents);
  std::vector<Tensor> styles(n_agents);
  const IntentionDist prior_pi = IntentionDist::uniform(cfg.num_intentions);
  for (int n = 0; n < n_agents; ++n) {
    RngStream rng(RngStream::derive({RngStream::hash_string(scenario.id),
                                     static_cast<std::uint64_t>(rollout_index),
                                     static_cast<std::uint64_t>(n), rcfg.seed}));
    StyleLatent b = sample_style(cfg.style_dim, rng);
    int z = sample_intention(prior_pi, rng);
    std::vector<double> nu(cfg.obs_dim);
    for (double& v : nu) v = rng.normal();
    if (overrides != nullptr) {
      const AgentOverride& ov = (*overrides)[n];
      if (ov.intention) z = *ov.intention;
      if (ov.style) b.value = *ov.style;
      if (ov.nu) nu = *ov.nu;
    }
    if (z < 0 || z >= cfg.num_intentions)
      throw std::invalid_argument("rollout_scenario: intention override out of range");
    latents[n].intention = z;
    latents[n].style = b.value;
    latents[n].nu = nu;
    styles[n] = Tensor(DenseArray::vec(b.value));
  }

  SceneTokens tokens = tokenize_scene(scenario.map, scenario.signals, n_agents,
                                      scenario.step_seconds, mv, cfg);
  for (const auto& step : scenario.history) append_step(tokens, step, mv, cfg);

  RolloutResult out;
  out.record.scenario_id = scenario.id;
  out.record.rollout_index = rollout_index;
  out.record.step_seconds = scenario.step_seconds;
  out.record.history = scenario.history;
  out.record.truth_future = scenario.future;
  out.record.map = scenario.map;
  out.record.signals = scenario.signals;
  out.record.agents = latents;

  std::vector<int> intentions(n_agents);
  for (int n = 0; n < n_agents; ++n) intentions[n] = latents[n].intention;

  std::vector<AgentState> current = scenario.history.back();
  std::vector<HeldAction> held(n_agents);

  for (int t = 0; t < horizon; ++t) {
    const int target = t_h + t;
    const bool decision = (t % rcfg.patch_size) == 0;
    std::vector<AgentState> sampled_step(n_agents);
    std::vector<RolloutStepStats> stats_step(n_agents);

    if (decision) {
      std::vector<LatentDist> opens(n_agents);
      for (int n = 0; n < n_agents; ++n)
        opens[n] =
            open_loop_predict(tokens, n, target, {intentions[n]}, mv, cfg, nullptr)[0];
      std::vector<LatentDist> closed =
          adaptive_refine(tokens, target, opens, styles, mv, cfg, nullptr);

      for (int n = 0; n < n_agents; ++n) {
        DiagGaussian prior(closed[n].mean.value().data, closed[n].var.value().data);
        const FullGaussian marg = marginal_predictive(prior, em);
        const std::vector<double> obs = sample_with_noise(marg, latents[n].nu);
        AgentState next = state_from_obs(obs, current[n], scenario.step_seconds, cfg);
        sampled_step[n] = next;
        stats_step[n].decision = true;
        stats_step[n].prior_mean = prior.mean;
        stats_step[n].prior_var = prior.var;
        if (rcfg.condition_on_truth && t < scenario.future_steps() &&
            scenario.future[t][n].valid) {
          stats_step[n].posterior_mean =
              condition_update(prior, em, obs_vector(scenario.future[t][n], cfg));
        }
        held[n] = HeldAction{next.x - current[n].x, next.y - current[n].y,
                             wrap_angle(next.heading - current[n].heading)};
      }
    } else {
      for (int n = 0; n < n_agents; ++n) {
        AgentState next = current[n];
        next.x += held[n].dx;
        next.y += held[n].dy;
        next.heading = wrap_angle(next.heading + held[n].dheading);
        next.speed = std::hypot(held[n].dx, held[n].dy) / scenario.step_seconds;
        next.valid = true;
        sampled_step[n] = next;
        stats_step[n].decision = false;
      }
    }

    out.record.sampled.push_back(sampled_step);
    out.stats.push_back(std::move(stats_step));

    // closed loop: extend the conditioning history (ground truth when teacher
    // forcing, otherwise the model's own samples)
    std::vector<AgentState> extend = sampled_step;
    if (rcfg.condition_on_truth && t < scenario.future_steps())
      extend = scenario.future[t];
    append_step(tokens, extend, mv, cfg);
    current = extend;
  }
  return out;
}

std::vector<RolloutResult> rollout_many(const Scenario& scenario,
                                        const ParamStore& params,
                                        const ModelConfig& cfg,
                                        const RolloutConfig& rcfg,
                                        const std::vector<AgentOverride>* overrides) {
  std::vector<RolloutResult> out;
  out.reserve(rcfg.num_rollouts);
  for (int r = 0; r < rcfg.num_rollouts; ++r)
    out.push_back(rollout_scenario(scenario, params, cfg, rcfg, r, overrides));
  return out;
}

// ---- synchronous-vs-asynchronous bound ------------------------------------

void AsyncBoundCase::validate() const {
  if (dynamics != "decay")
    throw std::invalid_argument("AsyncBoundCase: unknown dynamics " + dynamics);
  if (!(lipschitz_k > 0.0) || !(action_gap_m > 0.0))
    throw std::invalid_argument("AsyncBoundCase: K and M must be > 0");
  if (!(patch_tau > 0.0))
    throw std::invalid_argument("AsyncBoundCase: patch_tau must be > 0");
  if (decision_delay < 0.0 || decision_delay > patch_tau)
    throw std::invalid_argument("AsyncBoundCase: decision_delay must be in [0, tau]");
  if (x0.size() != u_sync.size())
    throw std::invalid_argument("AsyncBoundCase: state/action dimension mismatch");
  const double rate = decay_rate > 0.0 ? decay_rate : lipschitz_k;
  if (rate > lipschitz_k * (1.0 + 1e-12))
    throw std::runtime_error(
        "AsyncBoundCase: dynamics violate the declared Lipschitz constant");
}

namespace {

std::vector<double> decay_field(double rate, const std::vector<double>& x,
                                const std::vector<double>& u) {
  std::vector<double> dx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = rate * (u[i] - x[i]);
  return dx;
}

// Classic fixed-step RK4 with a piecewise-constant control switching at t_switch.
std::vector<double> integrate(double rate, std::vector<double> x, double tau,
                              double t_switch, const std::vector<double>& u_before,
                              const std::vector<double>& u_after, int substeps) {
  const double h = tau / substeps;
  const int n = static_cast<int>(x.size());
  for (int s = 0; s < substeps; ++s) {
    const double t0 = s * h;
    const auto& u = t0 + 0.5 * h < t_switch ? u_before : u_after;
    const std::vector<double> k1 = decay_field(rate, x, u);
    std::vector<double> tmp(n);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    const std::vector<double> k2 = decay_field(rate, tmp, u);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    const std::vector<double> k3 = decay_field(rate, tmp, u);
    for (int i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
    const std::vector<double> k4 = decay_field(rate, tmp, u);
    for (int i = 0; i < n; ++i)
      x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return x;
}

// Empirical Lipschitz estimate around the start state; reported, not ignored.
void check_lipschitz(double rate, double declared_k, const std::vector<double>& x0,
                     const std::vector<double>& u) {
  RngStream rng(0xB0D);
  const int n = static_cast<int>(x0.size());
  for (int probe = 0; probe < 64; ++probe) {
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = x0[i] + rng.normal();
      b[i] = x0[i] + rng.normal();
    }
    const std::vector<double> fa = decay_field(rate, a, u);
    const std::vector<double> fb = decay_field(rate, b, u);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      num += (fa[i] - fb[i]) * (fa[i] - fb[i]);
      den += (a[i] - b[i]) * (a[i] - b[i]);
    }
    if (den > 0.0 && std::sqrt(num / den) > declared_k * (1.0 + 1e-9))
      throw std::runtime_error(
          "async_bound_check: sampled states violate the declared Lipschitz constant");
  }
}

}  // namespace

std::vector<AsyncBoundRow> async_bound_check(const AsyncBoundCase& c,
                                             const std::vector<double>& taus) {
  c.validate();
  const double rate = c.decay_rate > 0.0 ? c.decay_rate : c.lipschitz_k;
  check_lipschitz(rate, c.lipschitz_k, c.x0, c.u_sync);

  // async action differs from the sync action by exactly M in norm
  std::vector<double> u_async = c.u_sync;
  u_async[0] -= c.action_gap_m;

  std::vector<AsyncBoundRow> rows;
  const double delay_fraction = c.decision_delay / c.patch_tau;
  for (double tau : taus) {
    if (!(tau > 0.0)) throw std::invalid_argument("async_bound_check: tau must be > 0");
    const int substeps = 1000;
    const double t_switch = delay_fraction * tau;
    const std::vector<double> x_sync =
        integrate(rate, c.x0, tau, tau + 1.0, c.u_sync, c.u_sync, substeps);
    const std::vector<double> x_async =
        integrate(rate, c.x0, tau, t_switch, c.u_sync, u_async, substeps);
    AsyncBoundRow row;
    row.tau = tau;
    double gap2 = 0.0;
    for (std::size_t i = 0; i < x_sync.size(); ++i)
      gap2 += (x_sync[i] - x_async[i]) * (x_sync[i] - x_async[i]);
    row.empirical_gap = std::sqrt(gap2);
    row.analytic_bound =
        c.lipschitz_k * c.action_gap_m * tau * std::exp(c.lipschitz_k * tau);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace niva
