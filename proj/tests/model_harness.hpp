// Shared fixtures for model-level tests: a micro configuration small enough
// for exhaustive finite-difference checks, and a store-level gradient checker.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "niva/attention.hpp"
#include "niva/model.hpp"
#include "niva/scenario_io.hpp"

namespace harness {

inline niva::ModelConfig micro_config() {
  niva::ModelConfig cfg;
  cfg.model_dim = 16;
  cfg.num_heads = 2;
  cfg.style_dim = 4;
  cfg.num_intentions = 3;
  cfg.fourier_features = 6;
  cfg.n_blocks = 1;
  cfg.n_temporal_layers = 1;
  cfg.n_recognition_layers = 1;
  cfg.n_map_nearest = 4;
  cfg.n_agent_nearest = 2;
  cfg.map_resample_points = 4;
  cfg.kind_embed_dim = 4;
  cfg.ff_mult = 2;
  return cfg;
}

// Randomizes every non-frozen parameter (zero-initialized gates included) so
// gradients flow through all paths.
inline void randomize_params(niva::ParamStore& store, std::uint64_t key,
                             double scl = 0.3) {
  niva::RngStream rng(key);
  for (auto& e : store.entries()) {
    if (e.frozen) continue;
    for (double& v : e.value.data) v += scl * rng.normal();
  }
}

// Max relative finite-difference error over every (or a strided subset of)
// coordinate of every non-frozen parameter. `loss_fn` must be a pure function
// of the bound view. The objective is rescaled to a small fixed magnitude so
// that cancellation noise in f(x+h) - f(x-h) stays below the 1e-8 relative
// floor even for coordinates whose true gradient is zero.
inline double full_model_grad_check(
    const niva::ParamStore& store, const niva::ModelConfig& cfg,
    const std::function<niva::Tensor(const niva::ModelView&, niva::Tape*)>& loss_fn,
    int coord_stride = 1, double step = 1e-4) {
  using namespace niva;
  const double center = loss_fn(bind_model(store, cfg, nullptr), nullptr).scalar();
  const double norm = 0.01 / std::max(0.01, std::abs(center));

  Tape tape;
  std::vector<std::pair<std::string, Tensor>> bound;
  ModelView mv = bind_model(store, cfg, &tape, &bound);
  Tensor loss = scale(loss_fn(mv, &tape), norm);
  tape.backward(loss);

  const auto eval = [&](const ParamStore& probe) {
    ModelView view = bind_model(probe, cfg, nullptr);
    return norm * loss_fn(view, nullptr).scalar();
  };

  double worst = 0.0;
  ParamStore probe = store;
  for (const auto& [name, tensor] : bound) {
    if (store.at(name).frozen) continue;
    const DenseArray ad = tape.grad(tensor);
    DenseArray& value = probe.at(name).value;
    for (std::size_t i = 0; i < value.data.size(); i += coord_stride) {
      const double orig = value.data[i];
      value.data[i] = orig + step;
      const double up = eval(probe);
      value.data[i] = orig - step;
      const double dn = eval(probe);
      value.data[i] = orig;
      const double cd = (up - dn) / (2.0 * step);
      const double err = std::abs(ad.data[i] - cd) / (std::abs(cd) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Two-vehicle fixture scene with a short map, deterministic.
inline niva::Scenario two_agent_scene(std::uint64_t seed = 5) {
  auto data = niva::generate_toy_dataset(niva::ToyKind::Merge, 1, seed);
  return data[0];
}

inline niva::SceneTokens tokenize_full(const niva::Scenario& s,
                                       const niva::ModelView& mv,
                                       const niva::ModelConfig& cfg) {
  niva::SceneTokens tok = niva::tokenize_scene(s.map, s.signals, s.num_agents(),
                                               s.step_seconds, mv, cfg);
  for (const auto& step : s.history) niva::append_step(tok, step, mv, cfg);
  for (const auto& step : s.future) niva::append_step(tok, step, mv, cfg);
  return tok;
}

}  // namespace harness
