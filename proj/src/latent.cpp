#include "niva/latent.hpp"

#include <cmath>
#include <stdexcept>

namespace niva {

IntentionDist::IntentionDist(std::vector<double> p) : probs(std::move(p)) {
  double total = 0.0;
  for (double v : probs) {
    if (v < 0.0) throw std::invalid_argument("IntentionDist: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-10)
    throw std::invalid_argument("IntentionDist: probabilities must sum to 1");
}

IntentionDist IntentionDist::uniform(int k) {
  return IntentionDist(std::vector<double>(k, 1.0 / k));
}

DirichletState::DirichletState(std::vector<double> conc, std::vector<double> prior)
    : concentration(std::move(conc)), prior_concentration(std::move(prior)) {
  if (concentration.size() != prior_concentration.size())
    throw std::invalid_argument("DirichletState: length mismatch");
  for (double v : concentration)
    if (!(v > 0.0)) throw std::invalid_argument("DirichletState: entries must be > 0");
  for (double v : prior_concentration)
    if (!(v > 0.0)) throw std::invalid_argument("DirichletState: entries must be > 0");
}

DirichletState DirichletState::symmetric(int k, double alpha) {
  return DirichletState(std::vector<double>(k, alpha), std::vector<double>(k, alpha));
}

StyleLatent sample_style(int dim, RngStream& rng) {
  StyleLatent s;
  s.value.resize(dim);
  for (double& v : s.value) v = rng.normal();
  s.source = StyleLatent::Source::PriorSample;
  return s;
}

int sample_intention(const IntentionDist& d, RngStream& rng) {
  return rng.categorical(d.probs);
}

int sample_agent_count(const ArrivalModel& m, RngStream& rng) {
  return std::max(1, rng.poisson(m.rate));
}

double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: x must be > 0");
  double result = 0.0;
  while (x < 12.0) {  // recurrence onto the asymptotic range
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 -
                    inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return result;
}

IntentionDist responsibilities(const DenseArray& log_marg, const DirichletState& dirich,
                               bool use_dirichlet) {
  if (log_marg.ndim() != 2 || log_marg.rows() < 1)
    throw std::invalid_argument("responsibilities: log_marg must be K x T with K >= 1");
  if (!log_marg.finite())
    throw std::invalid_argument("responsibilities: non-finite log likelihood");
  const int k = log_marg.rows(), t = log_marg.cols();
  std::vector<double> logits(k, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < t; ++j) logits[i] += log_marg.at(i, j);
  if (use_dirichlet) {
    if (static_cast<int>(dirich.concentration.size()) != k)
      throw std::invalid_argument("responsibilities: Dirichlet size mismatch");
    double total = 0.0;
    for (double a : dirich.concentration) total += a;
    const double psi_total = digamma(total);
    for (int i = 0; i < k; ++i)
      logits[i] += digamma(dirich.concentration[i]) - psi_total;
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double denom = 0.0;
  std::vector<double> probs(k);
  for (int i = 0; i < k; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    denom += probs[i];
  }
  for (double& v : probs) v /= denom;
  IntentionDist out;
  out.probs = std::move(probs);  // already normalized; skip re-validation noise
  return out;
}

DirichletState dirichlet_update(const DirichletState& dirich, const DenseArray& phi) {
  const int k = static_cast<int>(dirich.prior_concentration.size());
  std::vector<double> conc = dirich.prior_concentration;
  if (phi.size() > 0) {
    if (phi.ndim() != 2 || phi.cols() != k)
      throw std::invalid_argument("dirichlet_update: phi must be N x K");
    for (int n = 0; n < phi.rows(); ++n) {
      double row = 0.0;
      for (int j = 0; j < k; ++j) {
        if (phi.at(n, j) < -1e-12)
          throw std::invalid_argument("dirichlet_update: negative responsibility");
        row += phi.at(n, j);
      }
      if (std::abs(row - 1.0) > 1e-8)
        throw std::invalid_argument("dirichlet_update: phi row is not a simplex vector");
      for (int j = 0; j < k; ++j) conc[j] += phi.at(n, j);
    }
  }
  return DirichletState(std::move(conc), dirich.prior_concentration);
}

double kl_gaussian_std(const DiagGaussian& q) {
  double kl = 0.0;
  for (int i = 0; i < q.dim(); ++i)
    kl += 0.5 * (q.mean[i] * q.mean[i] + q.var[i] - std::log(q.var[i]) - 1.0);
  return kl;
}

double kl_categorical(const IntentionDist& q, const IntentionDist& p) {
  if (q.size() != p.size())
    throw std::invalid_argument("kl_categorical: size mismatch");
  double kl = 0.0;
  for (int i = 0; i < q.size(); ++i) {
    if (q.probs[i] == 0.0) continue;  // 0 log 0 := 0
    if (p.probs[i] == 0.0)
      throw std::invalid_argument("kl_categorical: p has a zero where q is positive");
    kl += q.probs[i] * std::log(q.probs[i] / p.probs[i]);
  }
  return kl;
}

double kl_dirichlet(const DirichletState& d) {
  const int k = static_cast<int>(d.concentration.size());
  double sum_q = 0.0, sum_p = 0.0;
  for (int i = 0; i < k; ++i) {
    sum_q += d.concentration[i];
    sum_p += d.prior_concentration[i];
  }
  double kl = std::lgamma(sum_q) - std::lgamma(sum_p);
  const double psi_total = digamma(sum_q);
  for (int i = 0; i < k; ++i) {
    kl += std::lgamma(d.prior_concentration[i]) - std::lgamma(d.concentration[i]);
    kl += (d.concentration[i] - d.prior_concentration[i]) *
          (digamma(d.concentration[i]) - psi_total);
  }
  return kl;
}

}  // namespace niva
