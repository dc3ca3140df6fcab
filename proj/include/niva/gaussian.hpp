#pragma once

#include <vector>

#include "niva/tensor.hpp"

namespace niva {

// Diagonal Gaussian; the currency of all latent distributions.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> var;  // strictly positive, same length as mean

  DiagGaussian() = default;
  DiagGaussian(std::vector<double> m, std::vector<double> v);
  int dim() const { return static_cast<int>(mean.size()); }
};

// Linear map from latent state s to observation o: o = W s + bias + noise,
// noise ~ N(0, noise_scale^2 I).
struct EmissionModel {
  DenseArray weight;          // obs_dim x latent_dim
  std::vector<double> bias;   // obs_dim
  double noise_scale = 0.1;

  EmissionModel() = default;
  EmissionModel(DenseArray w, std::vector<double> b, double eps);
  int obs_dim() const { return weight.rows(); }
  int latent_dim() const { return weight.cols(); }
};

struct FullGaussian {
  std::vector<double> mean;
  DenseArray cov;   // symmetric positive definite
  DenseArray chol;  // cached lower-triangular factor, cov = chol * chol^T

  FullGaussian() = default;
  FullGaussian(std::vector<double> m, DenseArray c);  // factors on construction
  int dim() const { return static_cast<int>(mean.size()); }
};

// Marginal p(o) = N(W mu + bias, W diag(var) W^T + eps^2 I).
FullGaussian marginal_predictive(const DiagGaussian& prior, const EmissionModel& em);

// Posterior p(s | o) with covariance (diag(1/var) + W^T W / eps^2)^-1.
FullGaussian posterior(const DiagGaussian& prior, const EmissionModel& em,
                       const std::vector<double>& obs);

// log p(s) + log p(o | s).
double joint_log_density(const DiagGaussian& prior, const EmissionModel& em,
                         const std::vector<double>& s, const std::vector<double>& o);

double log_density(const FullGaussian& g, const std::vector<double>& x);
double log_marginal_density(const FullGaussian& marg, const std::vector<double>& o);

// mean + chol * nu; nu is a standard-normal draw made upstream.
std::vector<double> sample_with_noise(const FullGaussian& marg,
                                      const std::vector<double>& nu);

// Differentiable log marginal density for training: inputs are tape tensors
// (mu {d}, var {d}, weight {obs,d}, bias {obs}); obs and eps are constants.
Tensor log_marginal_op(const Tensor& mu, const Tensor& var, const Tensor& weight,
                       const Tensor& bias, const std::vector<double>& obs,
                       double eps);

// ---- small dense helpers (dims stay single digit in this project) -------
DenseArray cholesky(const DenseArray& a);                       // lower factor
std::vector<double> solve_lower(const DenseArray& l, std::vector<double> b);
std::vector<double> solve_upper_from_lower(const DenseArray& l, std::vector<double> b);
std::vector<double> chol_solve(const DenseArray& l, std::vector<double> b);
DenseArray chol_inverse(const DenseArray& l);
double chol_logdet(const DenseArray& l);
std::vector<double> matvec(const DenseArray& a, const std::vector<double>& x);
std::vector<double> matvec_t(const DenseArray& a, const std::vector<double>& x);

}  // namespace niva
