#pragma once

#include <cstdint>

#include "niva/attention.hpp"
#include "niva/latent.hpp"
#include "niva/scenario_io.hpp"

namespace niva {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 0;  // 0 = full batch
  double peak_lr = 2e-4;
  int warmup_steps = 1000;
  double final_lr = 3e-7;
  double weight_decay = 0.01;  // linear-layer weights only
  double dropout = 0.1;
  bool use_dirichlet = false;
  bool soft_assignment = false;  // phi-weighted loss instead of argmax intention
  double grad_clip = 1.0;
  double dirichlet_alpha = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Linear warmup to peak_lr, then cosine decay to final_lr at the last step.
double lr_at_step(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps);

struct RecognitionOutput {
  Tensor mean;  // {style_dim}
  Tensor var;
};

// Temporal-attention aggregation of all history and future motion states,
// referenced to the last history step.
RecognitionOutput recognize_style(const SceneTokens& tokens, int agent,
                                  int history_steps, const ModelView& mv,
                                  const ModelConfig& cfg, DropoutCtx* dropout);

EmissionModel extract_emission(const ParamStore& params, const ModelConfig& cfg);

struct EStepAgent {
  IntentionDist phi;
  int hard_intention = 0;  // argmax_k phi, ties -> lowest k
  DenseArray log_marg;     // K x T_p open-loop log marginal likelihoods
};

struct EStepResult {
  std::vector<std::vector<EStepAgent>> agents;  // [scenario][agent]
  DirichletState dirichlet;                     // alpha' = alpha + sum phi
};

// Exact coordinate updates at fixed parameters; no dropout, no gradients.
EStepResult e_step(const std::vector<Scenario>& batch, const ParamStore& params,
                   const ModelConfig& cfg, const DirichletState& dirich,
                   bool use_dirichlet);

// Coordinate-ascent objective (up to theta-only constants) evaluated at a given
// assignment (phi, alpha') against fixed log-marginal tables.
double variational_free_energy(const std::vector<std::vector<EStepAgent>>& tables,
                               const std::vector<std::vector<IntentionDist>>& phi,
                               const DirichletState& dirich, bool use_dirichlet);

struct LossBreakdown {
  Tensor total;
  double nll = 0.0;
  double kl_z = 0.0;
  double kl_b = 0.0;
};

// Negative ELBO for one scenario. Responsibilities and alpha' enter detached;
// the expectation over the style latent uses one reparameterized sample per
// agent keyed by style_key.
LossBreakdown scenario_elbo_loss(const Scenario& scenario, const SceneTokens& tokens,
                                 const std::vector<EStepAgent>& estep,
                                 const DirichletState& dirich, const ModelView& mv,
                                 const ModelConfig& cfg, const TrainConfig& tcfg,
                                 std::uint64_t style_key, DropoutCtx* dropout);

class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // grads aligned with params.entries(); empty arrays mean zero gradient.
  // Decoupled weight decay applies only to entries flagged decay.
  void step(ParamStore& params, const std::vector<DenseArray>& grads, double lr,
            double weight_decay);

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<DenseArray> m_, v_;
};

struct TraceRow {
  int step = 0;
  double lr = 0.0, loss = 0.0, kl_z = 0.0, kl_b = 0.0, nll = 0.0;
};

struct EStepEnergy {
  double before = 0.0, after = 0.0;  // free energy around each exact E-step
};

struct TrainResult {
  ParamStore params;
  ModelConfig model;
  std::vector<TraceRow> trace;
  std::vector<EStepEnergy> estep_energies;
  DirichletState dirichlet;
};

TrainResult train(const std::vector<Scenario>& dataset, const ModelConfig& mcfg,
                  const TrainConfig& tcfg);

std::string trace_to_csv(const std::vector<TraceRow>& trace);
Checkpoint make_checkpoint(const TrainResult& result);
double clip_global_norm(std::vector<DenseArray>& grads, double max_norm);

}  // namespace niva
