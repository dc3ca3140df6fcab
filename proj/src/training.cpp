#include "niva/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace niva {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (warmup_steps < 1) throw std::invalid_argument("TrainConfig: warmup_steps must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("TrainConfig: dropout must be in [0, 1)");
  if (!(peak_lr > 0.0) || !(final_lr >= 0.0) || final_lr > peak_lr)
    throw std::invalid_argument("TrainConfig: bad learning rates");
  if (!(dirichlet_alpha > 0.0))
    throw std::invalid_argument("TrainConfig: dirichlet_alpha must be > 0");
}

double lr_at_step(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (step < 1) throw std::invalid_argument("lr_at_step: steps are 1-based");
  if (step <= cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  if (total_steps <= cfg.warmup_steps) return cfg.peak_lr;
  const double frac = static_cast<double>(step - cfg.warmup_steps) /
                      static_cast<double>(total_steps - cfg.warmup_steps);
  return cfg.final_lr +
         0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + std::cos(M_PI * std::min(frac, 1.0)));
}

RecognitionOutput recognize_style(const SceneTokens& tokens, int agent,
                                  int history_steps, const ModelView& mv,
                                  const ModelConfig& cfg, DropoutCtx* dropout) {
  const auto ref_opt = tokens.latest_pose(agent, history_steps);
  if (!ref_opt) throw std::runtime_error("recognize_style: empty trajectory");
  PosedObject ref = *ref_opt;
  ref.time = history_steps - 1;

  std::vector<Tensor> key_rows;
  for (int j = 0; j < tokens.steps(); ++j) {
    if (!tokens.obs_valid[agent][j]) continue;
    Tensor bias = positional_bias(rel_pose(ref, tokens.obs_pose[agent][j]), mv, cfg);
    key_rows.push_back(add(tokens.obs_tok[agent][j], bias));
  }
  if (key_rows.empty()) throw std::runtime_error("recognize_style: empty trajectory");
  Tensor keys = stack_rows(key_rows);
  Tensor q = temporal_stack({mv.recog_query}, keys, mv.recog_layers, cfg.num_heads,
                            dropout)[0];
  RecognitionOutput out;
  out.mean = linear_vec(q, mv.recog_mean_head);
  out.var = add_scalar(softplus(linear_vec(q, mv.recog_var_head)), cfg.var_floor);
  return out;
}

EmissionModel extract_emission(const ParamStore& params, const ModelConfig& cfg) {
  return EmissionModel(params.at("emission.w").value,
                       params.at("emission.b").value.data, cfg.emission_noise);
}

EStepResult e_step(const std::vector<Scenario>& batch, const ParamStore& params,
                   const ModelConfig& cfg, const DirichletState& dirich,
                   bool use_dirichlet) {
  const ModelView mv = bind_model(params, cfg, nullptr);
  const EmissionModel em = extract_emission(params, cfg);
  const int k_count = cfg.num_intentions;
  std::vector<int> all_k(k_count);
  for (int k = 0; k < k_count; ++k) all_k[k] = k;

  EStepResult result;
  result.agents.resize(batch.size());
  std::vector<std::vector<double>> phi_rows;

  for (std::size_t si = 0; si < batch.size(); ++si) {
    const Scenario& s = batch[si];
    SceneTokens tokens =
        tokenize_scene(s.map, s.signals, s.num_agents(), s.step_seconds, mv, cfg);
    for (const auto& step : s.history) append_step(tokens, step, mv, cfg);
    for (const auto& step : s.future) append_step(tokens, step, mv, cfg);

    const int t_h = s.history_steps(), t_p = s.future_steps();
    result.agents[si].resize(s.num_agents());
    for (int n = 0; n < s.num_agents(); ++n) {
      DenseArray log_marg = DenseArray::zeros({k_count, std::max(t_p, 1)});
      for (int t = 0; t < t_p; ++t) {
        if (!s.future[t][n].valid) continue;
        const auto dists =
            open_loop_predict(tokens, n, t_h + t, all_k, mv, cfg, nullptr);
        const std::vector<double> obs = obs_vector(s.future[t][n], cfg);
        for (int k = 0; k < k_count; ++k) {
          const DiagGaussian prior(dists[k].mean.value().data,
                                   dists[k].var.value().data);
          log_marg.at(k, t) = log_marginal_density(marginal_predictive(prior, em), obs);
        }
      }
      EStepAgent& ag = result.agents[si][n];
      ag.log_marg = log_marg;
      ag.phi = responsibilities(log_marg, dirich, use_dirichlet);
      int best = 0;
      for (int k = 1; k < k_count; ++k)
        if (ag.phi.probs[k] > ag.phi.probs[best]) best = k;
      ag.hard_intention = best;
      phi_rows.push_back(ag.phi.probs);
    }
  }

  if (use_dirichlet) {
    DenseArray phi;
    phi.shape = {static_cast<int>(phi_rows.size()), k_count};
    phi.data.reserve(phi_rows.size() * k_count);
    for (const auto& row : phi_rows)
      phi.data.insert(phi.data.end(), row.begin(), row.end());
    result.dirichlet = dirichlet_update(dirich, phi);
  } else {
    result.dirichlet = dirich;
  }
  return result;
}

double variational_free_energy(const std::vector<std::vector<EStepAgent>>& tables,
                               const std::vector<std::vector<IntentionDist>>& phi,
                               const DirichletState& dirich, bool use_dirichlet) {
  double energy = 0.0;
  std::vector<double> elog_pi;
  const int k_count = static_cast<int>(dirich.prior_concentration.size());
  if (use_dirichlet) {
    double total = 0.0;
    for (double a : dirich.concentration) total += a;
    const double psi_total = digamma(total);
    for (int k = 0; k < k_count; ++k)
      elog_pi.push_back(digamma(dirich.concentration[k]) - psi_total);
    energy += kl_dirichlet(dirich);
  } else {
    elog_pi.assign(k_count, -std::log(static_cast<double>(k_count)));
  }
  for (std::size_t si = 0; si < tables.size(); ++si)
    for (std::size_t n = 0; n < tables[si].size(); ++n) {
      const DenseArray& lm = tables[si][n].log_marg;
      const std::vector<double>& p = phi[si][n].probs;
      for (int k = 0; k < k_count; ++k) {
        double ell = 0.0;
        for (int t = 0; t < lm.cols(); ++t) ell += lm.at(k, t);
        if (p[k] > 0.0)
          energy += p[k] * (std::log(p[k]) - ell - elog_pi[k]);
      }
    }
  return energy;
}

namespace {

double kl_z_value(const IntentionDist& phi, const DirichletState& dirich,
                  bool use_dirichlet) {
  const int k_count = phi.size();
  double kl = 0.0;
  if (use_dirichlet) {
    double total = 0.0;
    for (double a : dirich.concentration) total += a;
    const double psi_total = digamma(total);
    for (int k = 0; k < k_count; ++k) {
      if (phi.probs[k] == 0.0) continue;
      kl += phi.probs[k] * (std::log(phi.probs[k]) -
                            (digamma(dirich.concentration[k]) - psi_total));
    }
  } else {
    for (int k = 0; k < k_count; ++k) {
      if (phi.probs[k] == 0.0) continue;
      kl += phi.probs[k] * std::log(phi.probs[k] * k_count);
    }
  }
  return kl;
}

Tensor kl_gaussian_std_tensor(const Tensor& mean, const Tensor& var, int dim) {
  Tensor terms = add(sub(add(dot(mean, mean), sum(var)), sum(log(var))),
                     Tensor(DenseArray::scalar(-static_cast<double>(dim))));
  return scale(terms, 0.5);
}

}  // namespace

LossBreakdown scenario_elbo_loss(const Scenario& scenario, const SceneTokens& tokens,
                                 const std::vector<EStepAgent>& estep,
                                 const DirichletState& dirich, const ModelView& mv,
                                 const ModelConfig& cfg, const TrainConfig& tcfg,
                                 std::uint64_t style_key, DropoutCtx* dropout) {
  const int n_agents = scenario.num_agents();
  const int t_h = scenario.history_steps();
  const int t_p = scenario.future_steps();
  if (t_p == 0) throw std::invalid_argument("scenario_elbo_loss: no ground-truth future");

  LossBreakdown out;
  Tensor kl_b_total(DenseArray::scalar(0.0));
  std::vector<Tensor> styles;
  styles.reserve(n_agents);
  for (int n = 0; n < n_agents; ++n) {
    RecognitionOutput q = recognize_style(tokens, n, t_h, mv, cfg, dropout);
    RngStream rng(RngStream::derive({style_key, static_cast<std::uint64_t>(n)}));
    DenseArray eta = DenseArray::zeros({cfg.style_dim});
    for (double& v : eta.data) v = rng.normal();
    styles.push_back(add(q.mean, mul(sqrt(q.var), Tensor(std::move(eta)))));
    kl_b_total = add(kl_b_total, kl_gaussian_std_tensor(q.mean, q.var, cfg.style_dim));
    out.kl_z += kl_z_value(estep[n].phi, dirich, tcfg.use_dirichlet);
  }

  std::vector<int> hard(n_agents);
  for (int n = 0; n < n_agents; ++n) hard[n] = estep[n].hard_intention;

  Tensor nll_total(DenseArray::scalar(0.0));
  const int k_count = cfg.num_intentions;
  for (int t = 0; t < t_p; ++t) {
    const int target = t_h + t;
    // open-loop priors: all intentions at once when the soft path needs them
    std::vector<std::vector<LatentDist>> opens_k(n_agents);
    std::vector<LatentDist> opens_star(n_agents);
    for (int n = 0; n < n_agents; ++n) {
      if (tcfg.soft_assignment) {
        std::vector<int> all_k(k_count);
        for (int k = 0; k < k_count; ++k) all_k[k] = k;
        opens_k[n] = open_loop_predict(tokens, n, target, all_k, mv, cfg, dropout);
        opens_star[n] = opens_k[n][hard[n]];
      } else {
        opens_star[n] =
            open_loop_predict(tokens, n, target, {hard[n]}, mv, cfg, dropout)[0];
      }
    }
    RefineTrace star_trace;
    std::vector<LatentDist> closed_star = adaptive_refine(
        tokens, target, opens_star, styles, mv, cfg, dropout, nullptr, &star_trace);

    std::vector<std::vector<LatentDist>> closed_k;
    if (tcfg.soft_assignment) {
      closed_k.resize(k_count);
      for (int k = 0; k < k_count; ++k) {
        std::vector<LatentDist> opens(n_agents);
        for (int n = 0; n < n_agents; ++n) opens[n] = opens_k[n][k];
        closed_k[k] = adaptive_refine(tokens, target, opens, styles, mv, cfg, dropout,
                                      &star_trace, nullptr);
      }
    }

    for (int n = 0; n < n_agents; ++n) {
      if (!scenario.future[t][n].valid) continue;
      const std::vector<double> obs = obs_vector(scenario.future[t][n], cfg);
      if (tcfg.soft_assignment) {
        for (int k = 0; k < k_count; ++k) {
          const double w = estep[n].phi.probs[k];
          if (w <= 0.0) continue;
          Tensor lp = log_marginal_op(closed_k[k][n].mean, closed_k[k][n].var,
                                      mv.emission.w, mv.emission.b, obs,
                                      cfg.emission_noise);
          nll_total = add(nll_total, scale(lp, -w));
        }
      } else {
        Tensor lp = log_marginal_op(closed_star[n].mean, closed_star[n].var,
                                    mv.emission.w, mv.emission.b, obs,
                                    cfg.emission_noise);
        nll_total = add(nll_total, scale(lp, -1.0));
      }
    }
  }

  out.nll = nll_total.scalar();
  out.kl_b = kl_b_total.scalar();
  out.total = add_scalar(add(nll_total, kl_b_total), out.kl_z);
  return out;
}

void AdamW::step(ParamStore& params, const std::vector<DenseArray>& grads, double lr,
                 double weight_decay) {
  auto& entries = params.entries();
  if (grads.size() != entries.size())
    throw std::invalid_argument("AdamW: gradient count mismatch");
  if (m_.empty()) {
    m_.resize(entries.size());
    v_.resize(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      m_[i] = DenseArray::zeros(entries[i].value.shape);
      v_[i] = DenseArray::zeros(entries[i].value.shape);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (e.frozen) continue;
    const bool has_grad = !grads[i].data.empty();
    for (std::size_t j = 0; j < e.value.data.size(); ++j) {
      const double g = has_grad ? grads[i].data[j] : 0.0;
      m_[i].data[j] = beta1_ * m_[i].data[j] + (1.0 - beta1_) * g;
      v_[i].data[j] = beta2_ * v_[i].data[j] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i].data[j] / bc1;
      const double vhat = v_[i].data[j] / bc2;
      e.value.data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
      if (e.decay) e.value.data[j] -= lr * weight_decay * e.value.data[j];
    }
  }
}

double clip_global_norm(std::vector<DenseArray>& grads, double max_norm) {
  double norm2 = 0.0;
  for (const DenseArray& g : grads)
    for (double v : g.data) norm2 += v * v;
  const double norm = std::sqrt(norm2);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (DenseArray& g : grads)
      for (double& v : g.data) v *= f;
  }
  return norm;
}

TrainResult train(const std::vector<Scenario>& dataset, const ModelConfig& mcfg,
                  const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const Scenario& s : dataset) {
    s.validate();
    if (s.future_steps() == 0)
      throw std::invalid_argument("train: scenario " + s.id + " has no future steps");
  }

  TrainResult out;
  out.model = mcfg;
  out.params = init_params(mcfg, tcfg.seed);
  out.dirichlet = DirichletState::symmetric(mcfg.num_intentions, tcfg.dirichlet_alpha);

  const int n = static_cast<int>(dataset.size());
  const int bs = tcfg.batch_size <= 0 ? n : std::min(tcfg.batch_size, n);
  const int n_batches = (n + bs - 1) / bs;
  const std::int64_t total_steps = static_cast<std::int64_t>(tcfg.epochs) * n_batches;

  std::vector<std::vector<IntentionDist>> prev_phi(n);
  for (int i = 0; i < n; ++i)
    prev_phi[i].assign(dataset[i].num_agents(),
                       IntentionDist::uniform(mcfg.num_intentions));
  DirichletState prev_dirich = out.dirichlet;

  AdamW opt;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    if (bs < n) {  // deterministic per-epoch shuffle for mini-batching
      RngStream shuffle_rng(RngStream::derive(
          {tcfg.seed, RngStream::hash_string("shuffle"), (std::uint64_t)epoch}));
      for (int i = n - 1; i > 0; --i)
        std::swap(order[i], order[(int)(shuffle_rng.uniform() * (i + 1))]);
    }
    for (int b = 0; b < n_batches; ++b) {
      ++step;
      std::vector<int> batch_idx(order.begin() + b * bs,
                                 order.begin() + std::min(n, (b + 1) * bs));
      std::vector<Scenario> batch;
      for (int i : batch_idx) batch.push_back(dataset[i]);

      EStepResult estep = e_step(batch, out.params, mcfg, out.dirichlet,
                                 tcfg.use_dirichlet);
      if (bs == n) {  // energies are comparable only on the full dataset
        std::vector<std::vector<IntentionDist>> phi_prev_batch, phi_new_batch;
        for (std::size_t bi = 0; bi < batch_idx.size(); ++bi) {
          phi_prev_batch.push_back(prev_phi[batch_idx[bi]]);
          std::vector<IntentionDist> row;
          for (const auto& ag : estep.agents[bi]) row.push_back(ag.phi);
          phi_new_batch.push_back(std::move(row));
        }
        EStepEnergy en;
        en.before = variational_free_energy(estep.agents, phi_prev_batch, prev_dirich,
                                            tcfg.use_dirichlet);
        en.after = variational_free_energy(estep.agents, phi_new_batch,
                                           estep.dirichlet, tcfg.use_dirichlet);
        out.estep_energies.push_back(en);
      }
      for (std::size_t bi = 0; bi < batch_idx.size(); ++bi) {
        prev_phi[batch_idx[bi]].clear();
        for (const auto& ag : estep.agents[bi]) prev_phi[batch_idx[bi]].push_back(ag.phi);
      }
      prev_dirich = estep.dirichlet;
      if (tcfg.use_dirichlet) out.dirichlet = estep.dirichlet;

      Tape tape;
      std::vector<std::pair<std::string, Tensor>> bound;
      ModelView mv = bind_model(out.params, mcfg, &tape, &bound);
      RngStream drop_rng(RngStream::derive(
          {tcfg.seed, RngStream::hash_string("dropout"), (std::uint64_t)step}));
      DropoutCtx drop{tcfg.dropout, &drop_rng};
      DropoutCtx* dropout = tcfg.dropout > 0.0 ? &drop : nullptr;

      Tensor loss(DenseArray::scalar(0.0));
      TraceRow row;
      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const Scenario& s = batch[bi];
        SceneTokens tokens =
            tokenize_scene(s.map, s.signals, s.num_agents(), s.step_seconds, mv, mcfg);
        for (const auto& st : s.history) append_step(tokens, st, mv, mcfg);
        for (const auto& st : s.future) append_step(tokens, st, mv, mcfg);
        const std::uint64_t style_key =
            RngStream::derive({tcfg.seed, RngStream::hash_string("style"),
                               (std::uint64_t)step, (std::uint64_t)batch_idx[bi]});
        LossBreakdown lb = scenario_elbo_loss(s, tokens, estep.agents[bi],
                                              out.dirichlet, mv, mcfg, tcfg,
                                              style_key, dropout);
        loss = add(loss, lb.total);
        row.nll += lb.nll;
        row.kl_z += lb.kl_z;
        row.kl_b += lb.kl_b;
      }
      loss = scale(loss, 1.0 / static_cast<double>(batch.size()));
      if (tcfg.use_dirichlet)
        loss = add_scalar(loss, kl_dirichlet(out.dirichlet));
      const double loss_value = loss.scalar();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train: non-finite loss at step " +
                                 std::to_string(step) + " (batch " + std::to_string(b) +
                                 " of epoch " + std::to_string(epoch) + ")");
      tape.backward(loss);

      std::vector<DenseArray> grads(bound.size());
      for (std::size_t i = 0; i < bound.size(); ++i) {
        if (out.params.entries()[i].name != bound[i].first)
          throw std::runtime_error("train: parameter order drift");
        if (!out.params.entries()[i].frozen && tape.has_grad(bound[i].second))
          grads[i] = tape.grad(bound[i].second);
      }
      clip_global_norm(grads, tcfg.grad_clip);
      const double lr = lr_at_step(tcfg, step, total_steps);
      opt.step(out.params, grads, lr, tcfg.weight_decay);

      row.step = static_cast<int>(step);
      row.lr = lr;
      row.loss = loss_value;
      row.nll /= batch.size();
      row.kl_z /= batch.size();
      row.kl_b /= batch.size();
      out.trace.push_back(row);
    }
  }
  return out;
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,lr,loss,kl_z,kl_b,nll\n";
  char buf[160];
  for (const TraceRow& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.lr,
                  r.loss, r.kl_z, r.kl_b, r.nll);
    out += buf;
  }
  return out;
}

Checkpoint make_checkpoint(const TrainResult& result) {
  Checkpoint ck;
  ck.format_version = 1;
  ck.config_json = result.model.to_json();
  ck.params = result.params;
  return ck;
}

}  // namespace niva
