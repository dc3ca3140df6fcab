#pragma once

#include <array>
#include <string>
#include <vector>

#include "niva/checkpoint.hpp"
#include "niva/rng.hpp"
#include "niva/tensor.hpp"

namespace niva {

struct ModelConfig {
  int model_dim = 64;  // latent state dimension == feature dimension
  int num_heads = 4;
  int style_dim = 16;
  int num_intentions = 6;  // K
  int fourier_features = 32;
  double fourier_sigma = 1.0;
  int n_blocks = 1;
  int n_temporal_layers = 2;
  int n_recognition_layers = 1;
  int n_map_nearest = 64;
  int n_agent_nearest = 5;
  int map_resample_points = 16;
  int kind_embed_dim = 8;
  int ff_mult = 2;
  int obs_dim = 3;              // (x, y, heading)
  double emission_noise = 0.1;  // eps, fixed
  double obs_pos_scale = 0.1;   // meters -> model units for positions
  double var_floor = 1e-6;

  static ModelConfig desk_scale() { return ModelConfig{}; }
  static ModelConfig paper_scale();
  // The neighborhood that produced the best reported leaderboard entry.
  static std::array<int, 2> best_reported_neighborhood() { return {128, 5}; }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  void validate() const;
};

// ---- parameter views -----------------------------------------------------
// Thin bundles of tensors bound either as tape leaves (training) or as
// constants (inference / E-step).

struct LinearP {
  Tensor w;  // {in, out}
  Tensor b;  // {out}
};

struct MlpP {
  LinearP l0, l1;  // gelu in between
};

struct LayerNormP {
  Tensor gain, offset;
};

struct AttnP {
  LinearP q, v, o;
  Tensor k_w;  // no bias: a key-projection bias shifts every score equally
};

struct TemporalLayerP {
  LayerNormP ln_attn;
  AttnP attn;
  LayerNormP ln_ff;
  MlpP ff;
};

// Style-conditioned modulation: scale, shift, and a zero-initialized gate.
struct ModulationP {
  LinearP trunk;        // style_dim -> model_dim, gelu
  LinearP scale_head;   // alpha
  LinearP shift_head;   // beta
  LinearP gate_head;    // delta, zero-initialized
};

struct BlockP {
  ModulationP mod_map;
  AttnP map_attn;
  ModulationP mod_agent;
  AttnP agent_attn;
};

struct EncoderP {
  Tensor kind_emb;  // {num_kinds, kind_embed_dim}
  MlpP mlp;
};

struct ModelView {
  EncoderP enc_map, enc_agent, enc_signal;
  Tensor fourier;  // {m, 4}, frozen
  MlpP pos_bias;   // 2m -> model_dim
  Tensor intention_emb;  // {K, model_dim}
  std::vector<TemporalLayerP> temporal;
  LinearP open_mean_head;
  LinearP open_var_head;
  std::vector<BlockP> blocks;
  LinearP closed_var_head;
  LinearP emission;  // w {obs_dim, model_dim} (+ bias), noise from config
  Tensor recog_query;
  std::vector<TemporalLayerP> recog_layers;
  LinearP recog_mean_head;  // model_dim -> style_dim
  LinearP recog_var_head;
};

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);
// tape == nullptr binds constants (no gradient recording). When `bound` is
// given it receives every (name, tensor) pair in schema order.
ModelView bind_model(const ParamStore& store, const ModelConfig& cfg, Tape* tape,
                     std::vector<std::pair<std::string, Tensor>>* bound = nullptr);

// Forward helper shared by bind/init: y = x W + b for a row vector {in}.
Tensor linear_vec(const Tensor& x, const LinearP& p);
// Rows variant for {n, in} matrices.
Tensor linear_rows(const Tensor& x, const LinearP& p);
Tensor mlp_vec(const Tensor& x, const MlpP& p);
Tensor mlp_rows(const Tensor& x, const MlpP& p);

}  // namespace niva
