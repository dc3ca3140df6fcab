#pragma once

#include <vector>

#include "niva/gaussian.hpp"
#include "niva/rng.hpp"
#include "niva/tensor.hpp"

namespace niva {

struct StyleLatent {
  enum class Source { PriorSample, RecognitionSample, Fixed };
  std::vector<double> value;
  Source source = Source::PriorSample;
};

// Length-K simplex vector; holds the categorical prior and q(z).
struct IntentionDist {
  std::vector<double> probs;

  IntentionDist() = default;
  explicit IntentionDist(std::vector<double> p);
  static IntentionDist uniform(int k);
  int size() const { return static_cast<int>(probs.size()); }
};

struct DirichletState {
  std::vector<double> concentration;        // alpha'
  std::vector<double> prior_concentration;  // alpha

  DirichletState() = default;
  DirichletState(std::vector<double> conc, std::vector<double> prior);
  static DirichletState symmetric(int k, double alpha = 1.0);
};

struct ArrivalModel {
  double rate = 1.0;
};

StyleLatent sample_style(int dim, RngStream& rng);
int sample_intention(const IntentionDist& d, RngStream& rng);
int sample_agent_count(const ArrivalModel& m, RngStream& rng);  // clamped to >= 1

// Optimal variational categorical from per-(k, t) log marginal likelihoods:
// softmax over k of sum_t log_marg[k][t], plus the digamma adjustment
// psi(alpha'_k) - psi(sum alpha') when the Dirichlet hierarchy is enabled.
IntentionDist responsibilities(const DenseArray& log_marg, const DirichletState& dirich,
                               bool use_dirichlet);

// alpha'_k = alpha_k + sum_n phi[n][k]; phi rows must be simplex vectors.
DirichletState dirichlet_update(const DirichletState& dirich, const DenseArray& phi);

double kl_gaussian_std(const DiagGaussian& q);
double kl_categorical(const IntentionDist& q, const IntentionDist& p);
double kl_dirichlet(const DirichletState& d);  // KL[Dir(alpha') || Dir(alpha)]

double digamma(double x);

}  // namespace niva
