// niva: command-line front end for the simulator pipeline.
//
// Subcommands: gen, train, sample, eval, gradcheck, oracle, bound, plot.
// Exit codes: 0 success, 1 usage, 2 file I/O, 3 validation or invariant
// violation, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "niva/rollout.hpp"
#include "niva/scenario_io.hpp"
#include "niva/training.hpp"

using namespace niva;
using nlohmann::json;

namespace {

constexpr int kExitIo = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

struct CliError {
  int code;
  std::string message;
};

// ---- config overrides ----------------------------------------------------

struct Configs {
  ModelConfig model;
  TrainConfig train;
  RolloutConfig rollout;
};

void apply_override(Configs& c, const std::string& key, const std::string& value) {
  const auto as_int = [&] { return std::stoi(value); };
  const auto as_double = [&] { return std::stod(value); };
  const auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw CliError{kExitValidation, "boolean override expects true/false: " + key};
  };
  const auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };

  static const std::map<std::string, std::function<void(Configs&)>> table = {
      {"model.model_dim", [&](Configs& c) { c.model.model_dim = as_int(); }},
      {"model.num_heads", [&](Configs& c) { c.model.num_heads = as_int(); }},
      {"model.style_dim", [&](Configs& c) { c.model.style_dim = as_int(); }},
      {"model.num_intentions", [&](Configs& c) { c.model.num_intentions = as_int(); }},
      {"model.fourier_features", [&](Configs& c) { c.model.fourier_features = as_int(); }},
      {"model.fourier_sigma", [&](Configs& c) { c.model.fourier_sigma = as_double(); }},
      {"model.n_blocks", [&](Configs& c) { c.model.n_blocks = as_int(); }},
      {"model.n_temporal_layers",
       [&](Configs& c) { c.model.n_temporal_layers = as_int(); }},
      {"model.n_map_nearest", [&](Configs& c) { c.model.n_map_nearest = as_int(); }},
      {"model.n_agent_nearest", [&](Configs& c) { c.model.n_agent_nearest = as_int(); }},
      {"model.ff_mult", [&](Configs& c) { c.model.ff_mult = as_int(); }},
      {"model.emission_noise", [&](Configs& c) { c.model.emission_noise = as_double(); }},
      {"train.epochs", [&](Configs& c) { c.train.epochs = as_int(); }},
      {"train.batch_size", [&](Configs& c) { c.train.batch_size = as_int(); }},
      {"train.peak_lr", [&](Configs& c) { c.train.peak_lr = as_double(); }},
      {"train.warmup_steps", [&](Configs& c) { c.train.warmup_steps = as_int(); }},
      {"train.final_lr", [&](Configs& c) { c.train.final_lr = as_double(); }},
      {"train.weight_decay", [&](Configs& c) { c.train.weight_decay = as_double(); }},
      {"train.dropout", [&](Configs& c) { c.train.dropout = as_double(); }},
      {"train.use_dirichlet", [&](Configs& c) { c.train.use_dirichlet = as_bool(); }},
      {"train.soft_assignment", [&](Configs& c) { c.train.soft_assignment = as_bool(); }},
      {"train.grad_clip", [&](Configs& c) { c.train.grad_clip = as_double(); }},
      {"train.seed", [&](Configs& c) { c.train.seed = as_u64(); }},
      {"rollout.horizon", [&](Configs& c) { c.rollout.horizon = as_int(); }},
      {"rollout.num_rollouts", [&](Configs& c) { c.rollout.num_rollouts = as_int(); }},
      {"rollout.patch_size", [&](Configs& c) { c.rollout.patch_size = as_int(); }},
      {"rollout.condition_on_truth",
       [&](Configs& c) { c.rollout.condition_on_truth = as_bool(); }},
      {"rollout.seed", [&](Configs& c) { c.rollout.seed = as_u64(); }},
  };
  auto it = table.find(key);
  if (it == table.end())
    throw CliError{kExitValidation, "unknown config key: " + key};
  it->second(c);
}

void apply_overrides(Configs& c, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw CliError{kExitValidation, "--set expects key=value, got: " + kv};
    apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

json train_config_json(const TrainConfig& t) {
  json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["peak_lr"] = t.peak_lr;
  j["warmup_steps"] = t.warmup_steps;
  j["final_lr"] = t.final_lr;
  j["weight_decay"] = t.weight_decay;
  j["dropout"] = t.dropout;
  j["use_dirichlet"] = t.use_dirichlet;
  j["soft_assignment"] = t.soft_assignment;
  j["grad_clip"] = t.grad_clip;
  j["seed"] = t.seed;
  return j;
}

json rollout_config_json(const RolloutConfig& r) {
  json j;
  j["horizon"] = r.horizon;
  j["num_rollouts"] = r.num_rollouts;
  j["patch_size"] = r.patch_size;
  j["condition_on_truth"] = r.condition_on_truth;
  j["seed"] = r.seed;
  return j;
}

void write_resolved_config(const std::string& out_path, const Configs& c,
                           const std::string& subcommand) {
  json j;
  j["subcommand"] = subcommand;
  j["model"] = json::parse(c.model.to_json());
  j["train"] = train_config_json(c.train);
  j["rollout"] = rollout_config_json(c.rollout);
  atomic_write_file(out_path + ".resolved.json", j.dump(2) + "\n");
}

std::vector<Scenario> load_scenarios(const std::string& path) {
  try {
    return read_scenarios(path);
  } catch (const std::runtime_error& e) {
    throw CliError{kExitIo, e.what()};
  }
}

// ---- subcommands ------------------------------------------------------

int cmd_gen(const std::string& kind, int n, std::uint64_t seed,
            const std::string& out) {
  auto data = generate_toy_dataset(toy_kind_from(kind), n, seed);
  write_scenarios(out, data);
  std::printf("wrote %d %s scenarios to %s\n", n, kind.c_str(), out.c_str());
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& out,
              const std::vector<std::string>& sets) {
  Configs c;
  apply_overrides(c, sets);
  const auto data = load_scenarios(data_path);
  TrainResult result;
  try {
    result = train(data, c.model, c.train);
  } catch (const std::runtime_error& e) {
    throw CliError{kExitNumeric, e.what()};
  }
  write_checkpoint(out, make_checkpoint(result));
  atomic_write_file(out + ".trace.csv", trace_to_csv(result.trace));
  write_resolved_config(out, c, "train");
  const double first = result.trace.empty() ? 0.0 : result.trace.front().loss;
  const double last = result.trace.empty() ? 0.0 : result.trace.back().loss;
  std::printf("trained %d steps on %zu scenarios: loss %.6g -> %.6g\n",
              result.trace.empty() ? 0 : result.trace.back().step, data.size(), first,
              last);
  std::printf("checkpoint: %s\ntrace: %s.trace.csv\n", out.c_str(), out.c_str());
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& data_path,
               int rollouts, const std::string& out, int intention,
               std::int64_t style_seed, const std::vector<std::string>& sets) {
  Checkpoint ck;
  try {
    ck = read_checkpoint(ckpt_path);
  } catch (const std::runtime_error& e) {
    throw CliError{kExitIo, e.what()};
  }
  Configs c;
  c.model = ModelConfig::from_json(ck.config_json);
  apply_overrides(c, sets);
  if (rollouts > 0) c.rollout.num_rollouts = rollouts;
  if (style_seed >= 0) c.rollout.seed = static_cast<std::uint64_t>(style_seed);

  const auto data = load_scenarios(data_path);
  std::vector<RolloutRecord> records;
  for (const Scenario& s : data) {
    std::vector<AgentOverride> overrides(s.num_agents());
    bool use_overrides = false;
    if (intention >= 0) {
      for (auto& ov : overrides) ov.intention = intention;
      use_overrides = true;
    }
    auto results = rollout_many(s, ck.params, c.model, c.rollout,
                                use_overrides ? &overrides : nullptr);
    for (auto& r : results) records.push_back(std::move(r.record));
  }
  write_rollouts(out, records);
  write_resolved_config(out, c, "sample");
  std::printf("wrote %zu rollouts (%d per scenario) to %s\n", records.size(),
              c.rollout.num_rollouts, out.c_str());
  return 0;
}

int cmd_eval(const std::string& rollouts_path, const std::string& truth_path,
             const std::string& out) {
  const auto records = [&] {
    try {
      return read_rollouts(rollouts_path);
    } catch (const std::runtime_error& e) {
      throw CliError{kExitIo, e.what()};
    }
  }();
  const auto truth = load_scenarios(truth_path);
  std::map<std::string, const Scenario*> by_id;
  for (const Scenario& s : truth) by_id[s.id] = &s;

  std::map<std::string, std::vector<const RolloutRecord*>> grouped;
  for (const RolloutRecord& r : records) grouped[r.scenario_id].push_back(&r);

  std::string csv = "scenario_id,num_rollouts,min_ade,collision_rate,offroad_rate\n";
  char buf[256];
  double ade_sum = 0.0, coll_sum = 0.0, off_sum = 0.0;
  int count = 0;
  for (const auto& [id, rs] : grouped) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw CliError{kExitValidation, "no ground truth for scenario " + id};
    std::vector<std::vector<std::vector<AgentState>>> trajectory_sets;
    double coll = 0.0, off = 0.0;
    for (const RolloutRecord* r : rs) {
      trajectory_sets.push_back(r->sampled);
      coll += collision_rate(r->sampled);
      off += offroad_rate(r->sampled, r->map);
    }
    const double ade = min_ade(trajectory_sets, it->second->future);
    coll /= rs.size();
    off /= rs.size();
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g\n", id.c_str(), rs.size(),
                  ade, coll, off);
    csv += buf;
    ade_sum += ade;
    coll_sum += coll;
    off_sum += off;
    ++count;
  }
  if (count == 0) throw CliError{kExitValidation, "no rollouts to evaluate"};
  std::snprintf(buf, sizeof buf, "ALL,%d,%.17g,%.17g,%.17g\n", count, ade_sum / count,
                coll_sum / count, off_sum / count);
  csv += buf;
  atomic_write_file(out, csv);
  std::printf("%s", csv.c_str());
  return 0;
}

// ---- verification subcommands ------------------------------------------

int cmd_gradcheck() {
  int failures = 0;
  const auto report = [&](const std::string& name, double err, double tol) {
    const bool ok = err <= tol;
    std::printf("%-34s max rel err %.3g  (tol %.1g)  %s\n", name.c_str(), err, tol,
                ok ? "ok" : "FAIL");
    if (!ok) ++failures;
  };

  report("matmul", grad_check_multi(
                       [](Tape&, const std::vector<Tensor>& xs) {
                         return dot(matmul(xs[0], xs[1]),
                                    Tensor(random_array({4, 3}, 2)));
                       },
                       {random_array({4, 5}, 0), random_array({5, 3}, 1)}),
         1e-5);
  report("layer_norm", grad_check_multi(
                           [](Tape&, const std::vector<Tensor>& xs) {
                             return dot(layer_norm(xs[0], xs[1], xs[2]),
                                        Tensor(random_array({2, 8}, 6)));
                           },
                           {random_array({2, 8}, 3), random_array({8}, 4),
                            random_array({8}, 5)}),
         1e-5);
  report("softmax", grad_check(
                        [](Tape&, const Tensor& x) {
                          return dot(softmax(x, 1), Tensor(random_array({3, 5}, 8)));
                        },
                        random_array({3, 5}, 7, 2.0)),
         1e-5);
  report("gelu+softplus",
         grad_check(
             [](Tape&, const Tensor& x) {
               return add(sum(gelu(x)), sum(softplus(x)));
             },
             random_array({12}, 9)),
         1e-5);
  {
    RngStream rng(10);
    std::vector<double> mean(4), var(4), bias(3), obs(3);
    for (auto* v : {&mean, &var, &bias, &obs})
      for (double& x : *v) x = rng.normal();
    for (double& v : var) v = 0.3 + std::abs(v);
    report("gaussian marginal log density",
           grad_check_multi(
               [&](Tape&, const std::vector<Tensor>& xs) {
                 return log_marginal_op(xs[0], xs[1], xs[2], xs[3], obs, 0.4);
               },
               {DenseArray::vec(mean), DenseArray::vec(var),
                random_array({3, 4}, 11), DenseArray::vec(bias)}),
           1e-5);
  }
  // end-to-end micro model, all parameters
  {
    ModelConfig cfg;
    cfg.model_dim = 16;
    cfg.num_heads = 2;
    cfg.style_dim = 4;
    cfg.num_intentions = 2;
    cfg.fourier_features = 6;
    cfg.n_temporal_layers = 1;
    cfg.map_resample_points = 4;
    cfg.kind_embed_dim = 4;
    ParamStore store = init_params(cfg, 12);
    RngStream jitter(13);
    for (auto& e : store.entries()) {
      if (e.frozen) continue;
      for (double& v : e.value.data) v += 0.3 * jitter.normal();
    }
    Scenario s = generate_toy_dataset(ToyKind::Merge, 1, 14)[0];
    s.future.resize(2);

    const auto loss_fn = [&](const ModelView& mv, Tape*) {
      SceneTokens tok = tokenize_scene(s.map, s.signals, s.num_agents(),
                                       s.step_seconds, mv, cfg);
      for (const auto& st : s.history) append_step(tok, st, mv, cfg);
      for (const auto& st : s.future) append_step(tok, st, mv, cfg);
      std::vector<Tensor> styles = {Tensor(random_array({cfg.style_dim}, 15)),
                                    Tensor(random_array({cfg.style_dim}, 16))};
      auto steps = niva_forward(tok, s.history_steps(), 2, {0, 1}, styles, mv, cfg,
                                nullptr);
      Tensor loss(DenseArray::scalar(0.0));
      for (int t = 0; t < 2; ++t)
        for (int n = 0; n < 2; ++n) {
          const std::vector<double> obs = obs_vector(s.future[t][n], cfg);
          loss = add(loss, scale(log_marginal_op(steps[t].closed[n].mean,
                                                 steps[t].closed[n].var, mv.emission.w,
                                                 mv.emission.b, obs,
                                                 cfg.emission_noise),
                                 -1.0));
        }
      return loss;
    };

    const double center = loss_fn(bind_model(store, cfg, nullptr), nullptr).scalar();
    const double norm = 0.01 / std::max(0.01, std::abs(center));
    Tape tape;
    std::vector<std::pair<std::string, Tensor>> bound;
    ModelView mv = bind_model(store, cfg, &tape, &bound);
    tape.backward(scale(loss_fn(mv, &tape), norm));
    double worst = 0.0;
    ParamStore probe = store;
    const double step = 1e-4;
    for (const auto& [name, tensor] : bound) {
      if (store.at(name).frozen) continue;
      const DenseArray ad = tape.grad(tensor);
      DenseArray& value = probe.at(name).value;
      for (std::size_t i = 0; i < value.data.size(); i += 11) {
        const double orig = value.data[i];
        value.data[i] = orig + step;
        const double up = norm * loss_fn(bind_model(probe, cfg, nullptr), nullptr).scalar();
        value.data[i] = orig - step;
        const double dn = norm * loss_fn(bind_model(probe, cfg, nullptr), nullptr).scalar();
        value.data[i] = orig;
        const double cd = (up - dn) / (2.0 * step);
        worst = std::max(worst, std::abs(ad.data[i] - cd) / (std::abs(cd) + 1e-8));
      }
    }
    report("end-to-end two-agent forward", worst, 1e-4);
  }
  if (failures > 0) throw CliError{kExitValidation, "gradient checks failed"};
  std::printf("all gradient checks passed\n");
  return 0;
}

// Brute-force marginal density by trapezoid integration (latent dim <= 2).
double quad_marginal(const DiagGaussian& prior, const EmissionModel& em,
                     const std::vector<double>& obs, int points = 1201) {
  const int n = prior.dim();
  const int m = em.obs_dim();
  const double e2 = em.noise_scale * em.noise_scale;
  const auto joint = [&](const std::vector<double>& s) {
    double lp = -0.5 * m * std::log(2.0 * M_PI * e2);
    for (int i = 0; i < n; ++i) {
      const double d = s[i] - prior.mean[i];
      lp += -0.5 * (d * d / prior.var[i] + std::log(2.0 * M_PI * prior.var[i]));
    }
    for (int i = 0; i < m; ++i) {
      double f = em.bias[i];
      for (int j = 0; j < n; ++j) f += em.weight.at(i, j) * s[j];
      lp += -0.5 * (obs[i] - f) * (obs[i] - f) / e2;
    }
    return std::exp(lp);
  };
  std::vector<double> lo(n), step(n);
  for (int i = 0; i < n; ++i) {
    const double sd = std::sqrt(prior.var[i]);
    lo[i] = prior.mean[i] - 10.0 * sd;
    step[i] = 20.0 * sd / (points - 1);
  }
  double total = 0.0;
  std::vector<double> s(n);
  if (n == 1) {
    for (int i = 0; i < points; ++i) {
      s[0] = lo[0] + i * step[0];
      total += ((i == 0 || i == points - 1) ? 0.5 : 1.0) * joint(s);
    }
    return total * step[0];
  }
  for (int i = 0; i < points; ++i) {
    s[0] = lo[0] + i * step[0];
    const double wi = (i == 0 || i == points - 1) ? 0.5 : 1.0;
    double row = 0.0;
    for (int j = 0; j < points; ++j) {
      s[1] = lo[1] + j * step[1];
      row += ((j == 0 || j == points - 1) ? 0.5 : 1.0) * joint(s);
    }
    total += wi * row;
  }
  return total * step[0] * step[1];
}

int cmd_oracle() {
  int failures = 0;
  const auto report = [&](const std::string& name, double err, double tol) {
    const bool ok = err <= tol;
    std::printf("%-34s max err %.3g  (tol %.1g)  %s\n", name.c_str(), err, tol,
                ok ? "ok" : "FAIL");
    if (!ok) ++failures;
  };
  RngStream rng(20);

  // Bayes identity on random cases
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int latent = 1 + (int)(rng.uniform() * 8);
    const int obs_dim = 1 + (int)(rng.uniform() * 8);
    std::vector<double> mean(latent), var(latent), bias(obs_dim), s(latent),
        o(obs_dim);
    for (double& v : mean) v = rng.normal();
    for (double& v : var) v = 0.2 + std::abs(rng.normal());
    for (double& v : bias) v = rng.normal();
    for (double& v : s) v = rng.normal();
    for (double& v : o) v = 2.0 * rng.normal();
    DenseArray w = DenseArray::zeros({obs_dim, latent});
    for (double& v : w.data) v = rng.normal();
    DiagGaussian prior(mean, var);
    EmissionModel em(w, bias, 0.2 + rng.uniform());
    const double lhs = joint_log_density(prior, em, s, o);
    const double rhs = log_marginal_density(marginal_predictive(prior, em), o) +
                       log_density(posterior(prior, em, o), s);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  report("Bayes identity (200 cases)", worst, 1e-8);

  // quadrature vs closed-form marginal
  worst = 0.0;
  for (int latent = 1; latent <= 2; ++latent) {
    std::vector<double> mean(latent), var(latent);
    for (double& v : mean) v = rng.normal();
    for (double& v : var) v = 0.3 + rng.uniform();
    DenseArray w = DenseArray::zeros({3, latent});
    for (double& v : w.data) v = rng.normal();
    std::vector<double> bias = {rng.normal(), rng.normal(), rng.normal()};
    DiagGaussian prior(mean, var);
    EmissionModel em(w, bias, 0.3 + 0.5 * rng.uniform());
    const FullGaussian marg = marginal_predictive(prior, em);
    for (int probe = 0; probe < 5; ++probe) {
      std::vector<double> nu = {0.5 * rng.normal(), 0.5 * rng.normal(),
                                0.5 * rng.normal()};
      const std::vector<double> o = sample_with_noise(marg, nu);
      const double closed = std::exp(log_marginal_density(marg, o));
      worst = std::max(worst, std::abs(closed - quad_marginal(prior, em, o)));
    }
  }
  report("marginal vs quadrature", worst, 1e-6);

  // E-step responsibilities vs explicit enumeration (K=2, T=3, 1-D latent)
  {
    EmissionModel em(DenseArray::matrix(2, 1, {0.9, -0.5}), {0.1, 0.2}, 0.7);
    DenseArray log_marg = DenseArray::zeros({2, 3});
    double lik[2] = {1.0, 1.0};
    for (int t = 0; t < 3; ++t) {
      std::vector<double> o = {rng.normal(), rng.normal()};
      for (int k = 0; k < 2; ++k) {
        DiagGaussian prior({rng.normal() + k}, {0.4 + rng.uniform()});
        const FullGaussian marg = marginal_predictive(prior, em);
        log_marg.at(k, t) = log_marginal_density(marg, o);
        lik[k] *= std::exp(log_marg.at(k, t));
      }
    }
    IntentionDist phi =
        responsibilities(log_marg, DirichletState::symmetric(2), false);
    const double z = lik[0] + lik[1];
    const double err = std::max(std::abs(phi.probs[0] - lik[0] / z),
                                std::abs(phi.probs[1] - lik[1] / z));
    report("E-step vs enumeration", err, 1e-10);

    DenseArray phi_rows = DenseArray::matrix(2, 2, {0.3, 0.7, 0.6, 0.4});
    DirichletState up = dirichlet_update(DirichletState::symmetric(2), phi_rows);
    report("Dirichlet update residual",
           std::abs(up.concentration[0] - 1.9) + std::abs(up.concentration[1] - 2.1),
           1e-15);
  }

  if (failures > 0) throw CliError{kExitValidation, "oracle checks failed"};
  std::printf("all oracle checks passed\n");
  return 0;
}

int cmd_bound(double k, double m, const std::string& tau_list) {
  AsyncBoundCase c;
  c.lipschitz_k = k;
  c.action_gap_m = m;
  std::vector<double> taus;
  std::stringstream ss(tau_list);
  std::string item;
  while (std::getline(ss, item, ',')) taus.push_back(std::stod(item));
  if (taus.empty()) throw CliError{kExitValidation, "empty --tau-list"};
  c.patch_tau = taus.front();
  c.decision_delay = 0.5 * c.patch_tau;

  auto rows = async_bound_check(c, taus);
  std::printf("%10s %16s %16s\n", "tau", "empirical_gap", "analytic_bound");
  bool ok = true;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& row : rows) {
    std::printf("%10.4f %16.9f %16.9f%s\n", row.tau, row.empirical_gap,
                row.analytic_bound,
                row.empirical_gap <= row.analytic_bound ? "" : "  VIOLATION");
    ok = ok && row.empirical_gap <= row.analytic_bound;
    ok = ok && row.empirical_gap <= prev + 1e-12;
    prev = row.empirical_gap;
  }
  if (!ok) throw CliError{kExitValidation, "bound violated"};
  std::printf("bound holds for all %zu patch sizes\n", rows.size());
  return 0;
}

// ---- plot ------------------------------------------------------------

const char* kIntentionPalette[6] = {"#d62728", "#1f77b4", "#2ca02c",
                                    "#ff7f0e", "#9467bd", "#8c564b"};

int cmd_plot(const std::string& rollouts_path, const std::string& out) {
  const auto records = [&] {
    try {
      return read_rollouts(rollouts_path);
    } catch (const std::runtime_error& e) {
      throw CliError{kExitIo, e.what()};
    }
  }();
  if (records.empty()) throw CliError{kExitValidation, "no rollouts to plot"};

  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  const auto grow = [&](double x, double y) {
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  };
  for (const auto& r : records) {
    for (const auto& f : r.map)
      for (const auto& p : f.points) grow(p[0], p[1]);
    for (const auto& step : r.sampled)
      for (const auto& a : step) grow(a.x, a.y);
  }
  const double pad = 5.0;
  min_x -= pad;
  min_y -= pad;
  max_x += pad;
  max_y += pad;
  const double scale = 4.0;  // 1 px = 0.25 m
  const int width = static_cast<int>((max_x - min_x) * scale);
  const int height = static_cast<int>((max_y - min_y) * scale);
  const auto px = [&](double x) { return (x - min_x) * scale; };
  const auto py = [&](double y) { return (max_y - y) * scale; };

  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" "
                "height=\"%d\" viewBox=\"0 0 %d %d\">\n",
                width, height, width, height);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const auto polyline = [&](const std::vector<std::array<double, 2>>& pts,
                            const char* style) {
    svg += "<polyline fill=\"none\" ";
    svg += style;
    svg += " points=\"";
    for (const auto& p : pts) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(p[0]), py(p[1]));
      svg += buf;
    }
    svg += "\"/>\n";
  };

  for (const auto& f : records.front().map) {
    const char* style = "stroke=\"#cccccc\" stroke-width=\"1\"";
    switch (f.kind) {
      case MapKind::LaneCenter: style = "stroke=\"#bbbbbb\" stroke-width=\"1.5\""; break;
      case MapKind::RoadEdge: style = "stroke=\"#444444\" stroke-width=\"2\""; break;
      case MapKind::Crosswalk:
        style = "stroke=\"#999999\" stroke-width=\"1\" stroke-dasharray=\"3,3\"";
        break;
      case MapKind::StopLine: style = "stroke=\"#aa3333\" stroke-width=\"2\""; break;
    }
    polyline(f.points, style);
  }

  // ground truth, dashed
  const auto& first = records.front();
  if (!first.truth_future.empty()) {
    for (std::size_t n = 0; n < first.truth_future[0].size(); ++n) {
      std::vector<std::array<double, 2>> pts;
      for (const auto& step : first.truth_future)
        if (step[n].valid) pts.push_back({step[n].x, step[n].y});
      if (pts.size() >= 2)
        polyline(pts,
                 "stroke=\"black\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"");
    }
  }

  for (const auto& r : records)
    for (std::size_t n = 0; n < r.agents.size(); ++n) {
      std::vector<std::array<double, 2>> pts;
      if (!r.history.empty()) {
        const auto& last = r.history.back()[n];
        if (last.valid) pts.push_back({last.x, last.y});
      }
      for (const auto& step : r.sampled)
        if (step[n].valid) pts.push_back({step[n].x, step[n].y});
      if (pts.size() < 2) continue;
      const char* color = kIntentionPalette[r.agents[n].intention % 6];
      std::snprintf(buf, sizeof buf, "stroke=\"%s\" stroke-width=\"1\" opacity=\"0.7\"",
                    color);
      polyline(pts, buf);
    }

  // legend: intention colors + truth
  int ly = 16;
  svg += "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  for (int k = 0; k < 6; ++k) {
    bool used = false;
    for (const auto& r : records)
      for (const auto& a : r.agents) used = used || (a.intention % 6) == k;
    if (!used) continue;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"10\" y1=\"%d\" x2=\"34\" y2=\"%d\" stroke=\"%s\" "
                  "stroke-width=\"2\"/><text x=\"40\" y=\"%d\">intention %d</text>\n",
                  ly, ly, kIntentionPalette[k], ly + 4, k);
    svg += buf;
    ly += 16;
  }
  std::snprintf(buf, sizeof buf,
                "<line x1=\"10\" y1=\"%d\" x2=\"34\" y2=\"%d\" stroke=\"black\" "
                "stroke-width=\"2\" stroke-dasharray=\"6,4\"/><text x=\"40\" "
                "y=\"%d\">ground truth</text>\n",
                ly, ly, ly + 4);
  svg += buf;
  svg += "</g>\n</svg>\n";

  atomic_write_file(out, svg);
  std::printf("wrote %s (%d x %d px, %zu rollouts)\n", out.c_str(), width, height,
              records.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"niva: hierarchical Bayesian multi-agent traffic simulator"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic scenario dataset");
  std::string gen_kind = "intersection-3exit", gen_out;
  int gen_n = 8;
  std::uint64_t gen_seed = 1;
  gen->add_option("--kind", gen_kind, "intersection-3exit | straight-road | merge");
  gen->add_option("--n", gen_n, "number of scenarios")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--out", gen_out, "output .jsonl path")->required();

  // train
  auto* tr = app.add_subcommand("train", "variational EM training");
  std::string tr_data, tr_out;
  std::vector<std::string> tr_sets;
  tr->add_option("--data", tr_data, "training scenarios (.jsonl)")->required();
  tr->add_option("--out", tr_out, "output checkpoint (.nivack)")->required();
  tr->add_option("--set", tr_sets, "config override key=value (repeatable)");

  // sample
  auto* sa = app.add_subcommand("sample", "closed-loop scenario sampling");
  std::string sa_ckpt, sa_data, sa_out;
  int sa_rollouts = 0, sa_intention = -1;
  std::int64_t sa_style_seed = -1;
  std::vector<std::string> sa_sets;
  sa->add_option("--ckpt", sa_ckpt, "trained checkpoint")->required();
  sa->add_option("--data", sa_data, "scenarios to roll out (.jsonl)")->required();
  sa->add_option("--rollouts", sa_rollouts, "parallel rollouts per scenario");
  sa->add_option("--out", sa_out, "output rollout file (.jsonl)")->required();
  sa->add_option("--intention", sa_intention, "override every agent's intention");
  sa->add_option("--style-seed", sa_style_seed, "seed for latent draws");
  sa->add_option("--set", sa_sets, "config override key=value (repeatable)");

  // eval
  auto* ev = app.add_subcommand("eval", "metrics against ground truth");
  std::string ev_rollouts, ev_truth, ev_out;
  ev->add_option("--rollouts", ev_rollouts)->required();
  ev->add_option("--truth", ev_truth)->required();
  ev->add_option("--out", ev_out, "metrics CSV")->required();

  // gradcheck / oracle
  app.add_subcommand("gradcheck", "finite-difference checks for every gradient");
  app.add_subcommand("oracle", "closed-form Gaussian and E-step oracles");

  // bound
  auto* bd = app.add_subcommand("bound", "synchronous-decision error bound");
  double bd_k = 1.0, bd_m = 0.5;
  std::string bd_taus = "1.0,0.5,0.25,0.1,0.05";
  bd->add_option("--k", bd_k, "Lipschitz constant");
  bd->add_option("--m", bd_m, "action-gap bound");
  bd->add_option("--tau-list", bd_taus, "comma-separated patch sizes (seconds)");

  // plot
  auto* pl = app.add_subcommand("plot", "render rollouts to SVG");
  std::string pl_rollouts, pl_out;
  pl->add_option("--rollouts", pl_rollouts)->required();
  pl->add_option("--out", pl_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(gen_kind, gen_n, gen_seed, gen_out);
    if (tr->parsed()) return cmd_train(tr_data, tr_out, tr_sets);
    if (sa->parsed())
      return cmd_sample(sa_ckpt, sa_data, sa_rollouts, sa_out, sa_intention,
                        sa_style_seed, sa_sets);
    if (ev->parsed()) return cmd_eval(ev_rollouts, ev_truth, ev_out);
    if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
    if (app.get_subcommand("oracle")->parsed()) return cmd_oracle();
    if (bd->parsed()) return cmd_bound(bd_k, bd_m, bd_taus);
    if (pl->parsed()) return cmd_plot(pl_rollouts, pl_out);
  } catch (const CliError& e) {
    std::fprintf(stderr, "error: %s\n", e.message.c_str());
    return e.code;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return 1;
}
