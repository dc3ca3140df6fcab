#pragma once

#include <optional>

#include "niva/encoders.hpp"
#include "niva/model.hpp"
#include "niva/scene.hpp"

namespace niva {

// Relative spacetime representation for a query-key pair.
struct RelPose {
  double distance = 0.0;      // ||d_ij||, meters
  double bearing = 0.0;       // angle between i's orientation and d_ij
  double heading_diff = 0.0;  // wrapped heading difference
  double time_diff = 0.0;     // steps
};

RelPose rel_pose(const PosedObject& i, const PosedObject& j);

// [cos(2 pi F x); sin(2 pi F x)] for a raw 4-vector (plain, frequencies frozen).
DenseArray fourier_features(const std::array<double, 4>& x, const DenseArray& freq);

// MLP over the Fourier mapping of a RelPose; added to keys and values.
Tensor positional_bias(const RelPose& r, const ModelView& mv, const ModelConfig& cfg);

struct DropoutCtx {
  double prob = 0.0;
  RngStream* rng = nullptr;
};
Tensor apply_dropout(const Tensor& x, DropoutCtx* ctx);

// Multi-head attention with a single query vector {d} over keys {J, d}.
// An empty key set yields an exact zero vector.
Tensor single_query_mha(const Tensor& q, const Tensor& keys, const AttnP& p,
                        int heads, DropoutCtx* dropout);

// Pre-norm residual cascade; all queries share one key set per layer.
std::vector<Tensor> temporal_stack(std::vector<Tensor> queries, const Tensor& keys,
                                   const std::vector<TemporalLayerP>& layers,
                                   int heads, DropoutCtx* dropout);

struct LatentDist {
  Tensor mean;  // {model_dim}
  Tensor var;   // {model_dim}, >= var_floor
};

// Encoded scene: static map/signal tokens plus per-agent per-step observation
// tokens, grown one step at a time so closed-loop rollouts can extend it.
struct SceneTokens {
  std::vector<Tensor> map_tok;
  std::vector<PosedObject> map_pose;
  int num_agents = 0;
  double step_seconds = 0.1;
  std::vector<std::vector<Tensor>> obs_tok;        // [agent][step]
  std::vector<std::vector<PosedObject>> obs_pose;  // time index = step
  std::vector<std::vector<bool>> obs_valid;
  std::vector<AgentState> prev_state;  // per agent, for heading rates
  std::vector<bool> has_prev;

  int steps() const { return num_agents == 0 ? 0 : static_cast<int>(obs_tok[0].size()); }
  std::optional<PosedObject> latest_pose(int agent, int before_step) const;
};

SceneTokens tokenize_scene(const std::vector<MapFeature>& map,
                           const std::vector<SignalState>& signals, int num_agents,
                           double step_seconds, const ModelView& mv,
                           const ModelConfig& cfg);
void append_step(SceneTokens& tokens, const std::vector<AgentState>& states,
                 const ModelView& mv, const ModelConfig& cfg);

// Open-loop prior for one agent at an absolute step (Q = intention embedding,
// K/V = past own observations + relative bias); one output per query intention.
std::vector<LatentDist> open_loop_predict(const SceneTokens& tokens, int agent,
                                          int target_step,
                                          const std::vector<int>& intentions,
                                          const ModelView& mv, const ModelConfig& cfg,
                                          DropoutCtx* dropout);

// Per-block means entering the agent-to-agent attention; lets one refinement
// pass borrow another pass's neighbor keys (phi-weighted training).
struct RefineTrace {
  std::vector<std::vector<Tensor>> block_inputs;  // [block][agent]
};

// Closed-loop refinement at one step: gated map-to-agent and agent-to-agent
// cross-attention with style-conditioned normalization. With zero-initialized
// gates the output means equal the inputs exactly.
std::vector<LatentDist> adaptive_refine(const SceneTokens& tokens, int target_step,
                                        const std::vector<LatentDist>& open,
                                        const std::vector<Tensor>& styles,
                                        const ModelView& mv, const ModelConfig& cfg,
                                        DropoutCtx* dropout,
                                        const RefineTrace* neighbor_trace = nullptr,
                                        RefineTrace* record = nullptr);

struct StepDists {
  std::vector<LatentDist> open;    // per agent
  std::vector<LatentDist> closed;  // per agent
};

// Teacher-forced forward over future steps (tokens must already contain the
// conditioning observations for every step).
std::vector<StepDists> niva_forward(const SceneTokens& tokens, int history_steps,
                                    int future_steps,
                                    const std::vector<int>& intentions,
                                    const std::vector<Tensor>& styles,
                                    const ModelView& mv, const ModelConfig& cfg,
                                    DropoutCtx* dropout);

// Scaled model-space observation vector (x, y scaled, heading raw).
std::vector<double> obs_vector(const AgentState& s, const ModelConfig& cfg);
AgentState state_from_obs(const std::vector<double>& o, const AgentState& prev,
                          double step_seconds, const ModelConfig& cfg);

}  // namespace niva
