#include "niva/gaussian.hpp"

#include <cmath>
#include <stdexcept>

namespace niva {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

// ---- small dense helpers ---------------------------------------------

DenseArray cholesky(const DenseArray& a) {
  const int n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("cholesky: not square");
  DenseArray l = DenseArray::zeros({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a.at(i, j);
      for (int k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (!(s > 0.0)) throw std::runtime_error("cholesky: matrix not positive definite");
        l.at(i, i) = std::sqrt(s);
      } else {
        l.at(i, j) = s / l.at(j, j);
      }
    }
  }
  return l;
}

std::vector<double> solve_lower(const DenseArray& l, std::vector<double> b) {
  const int n = l.rows();
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l.at(i, k) * b[k];
    b[i] = s / l.at(i, i);
  }
  return b;
}

std::vector<double> solve_upper_from_lower(const DenseArray& l, std::vector<double> b) {
  const int n = l.rows();
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= l.at(k, i) * b[k];
    b[i] = s / l.at(i, i);
  }
  return b;
}

std::vector<double> chol_solve(const DenseArray& l, std::vector<double> b) {
  return solve_upper_from_lower(l, solve_lower(l, std::move(b)));
}

DenseArray chol_inverse(const DenseArray& l) {
  const int n = l.rows();
  DenseArray inv = DenseArray::zeros({n, n});
  for (int j = 0; j < n; ++j) {
    std::vector<double> e(n, 0.0);
    e[j] = 1.0;
    std::vector<double> col = chol_solve(l, std::move(e));
    for (int i = 0; i < n; ++i) inv.at(i, j) = col[i];
  }
  // clean up roundoff asymmetry
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) {
      const double v = 0.5 * (inv.at(i, j) + inv.at(j, i));
      inv.at(i, j) = v;
      inv.at(j, i) = v;
    }
  return inv;
}

double chol_logdet(const DenseArray& l) {
  double s = 0.0;
  for (int i = 0; i < l.rows(); ++i) s += std::log(l.at(i, i));
  return 2.0 * s;
}

std::vector<double> matvec(const DenseArray& a, const std::vector<double>& x) {
  const int m = a.rows(), n = a.cols();
  if (static_cast<int>(x.size()) != n) throw std::invalid_argument("matvec: size mismatch");
  std::vector<double> y(m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y[i] += a.at(i, j) * x[j];
  return y;
}

std::vector<double> matvec_t(const DenseArray& a, const std::vector<double>& x) {
  const int m = a.rows(), n = a.cols();
  if (static_cast<int>(x.size()) != m) throw std::invalid_argument("matvec_t: size mismatch");
  std::vector<double> y(n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y[j] += a.at(i, j) * x[i];
  return y;
}

// ---- types ------------------------------------------------------------

DiagGaussian::DiagGaussian(std::vector<double> m, std::vector<double> v)
    : mean(std::move(m)), var(std::move(v)) {
  if (mean.size() != var.size())
    throw std::invalid_argument("DiagGaussian: mean/var length mismatch");
  for (double x : var)
    if (!(x > 0.0)) throw std::invalid_argument("DiagGaussian: variances must be > 0");
}

EmissionModel::EmissionModel(DenseArray w, std::vector<double> b, double eps)
    : weight(std::move(w)), bias(std::move(b)), noise_scale(eps) {
  if (weight.ndim() != 2) throw std::invalid_argument("EmissionModel: weight must be a matrix");
  if (static_cast<int>(bias.size()) != weight.rows())
    throw std::invalid_argument("EmissionModel: bias length mismatch");
  if (!(noise_scale > 0.0))
    throw std::invalid_argument("EmissionModel: noise_scale must be > 0");
  // One-time degeneracy check: the Gram matrix of the smaller side must be
  // positive definite, i.e. rank(weight) == min(obs_dim, latent_dim).
  const int m = weight.rows(), n = weight.cols();
  const int k = std::min(m, n);
  DenseArray gram = DenseArray::zeros({k, k});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double s = 0.0;
      if (m <= n) {
        for (int p = 0; p < n; ++p) s += weight.at(i, p) * weight.at(j, p);
      } else {
        for (int p = 0; p < m; ++p) s += weight.at(p, i) * weight.at(p, j);
      }
      gram.at(i, j) = s;
    }
  try {
    cholesky(gram);
  } catch (const std::runtime_error&) {
    throw std::invalid_argument("EmissionModel: weight is rank deficient");
  }
}

FullGaussian::FullGaussian(std::vector<double> m, DenseArray c)
    : mean(std::move(m)), cov(std::move(c)) {
  const int n = static_cast<int>(mean.size());
  if (cov.ndim() != 2 || cov.rows() != n || cov.cols() != n)
    throw std::invalid_argument("FullGaussian: cov shape mismatch");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j)
      if (std::abs(cov.at(i, j) - cov.at(j, i)) > 1e-10)
        throw std::invalid_argument("FullGaussian: cov not symmetric");
  chol = cholesky(cov);
}

// ---- operations --------------------------------------------------------

FullGaussian marginal_predictive(const DiagGaussian& prior, const EmissionModel& em) {
  if (prior.dim() != em.latent_dim())
    throw std::invalid_argument("marginal_predictive: dimension mismatch");
  const int m = em.obs_dim(), n = em.latent_dim();
  std::vector<double> mean = matvec(em.weight, prior.mean);
  for (int i = 0; i < m; ++i) mean[i] += em.bias[i];
  DenseArray cov = DenseArray::zeros({m, m});
  const double e2 = em.noise_scale * em.noise_scale;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = 0.0;
      for (int p = 0; p < n; ++p)
        s += em.weight.at(i, p) * prior.var[p] * em.weight.at(j, p);
      cov.at(i, j) = s;
      cov.at(j, i) = s;
    }
    cov.at(i, i) += e2;
  }
  return FullGaussian(std::move(mean), std::move(cov));
}

FullGaussian posterior(const DiagGaussian& prior, const EmissionModel& em,
                       const std::vector<double>& obs) {
  if (prior.dim() != em.latent_dim() ||
      static_cast<int>(obs.size()) != em.obs_dim())
    throw std::invalid_argument("posterior: dimension mismatch");
  for (double v : obs)
    if (!std::isfinite(v)) throw std::invalid_argument("posterior: obs not finite");
  const int m = em.obs_dim(), n = em.latent_dim();
  const double inv_e2 = 1.0 / (em.noise_scale * em.noise_scale);
  DenseArray prec = DenseArray::zeros({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      double s = 0.0;
      for (int p = 0; p < m; ++p) s += em.weight.at(p, i) * em.weight.at(p, j);
      s *= inv_e2;
      if (i == j) s += 1.0 / prior.var[i];
      prec.at(i, j) = s;
      prec.at(j, i) = s;
    }
  const DenseArray lp = cholesky(prec);
  std::vector<double> resid(m);
  for (int p = 0; p < m; ++p) resid[p] = (obs[p] - em.bias[p]) * inv_e2;
  std::vector<double> rhs = matvec_t(em.weight, resid);
  for (int i = 0; i < n; ++i) rhs[i] += prior.mean[i] / prior.var[i];
  std::vector<double> mean = chol_solve(lp, std::move(rhs));
  DenseArray cov = chol_inverse(lp);
  return FullGaussian(std::move(mean), std::move(cov));
}

double log_density(const FullGaussian& g, const std::vector<double>& x) {
  const int n = g.dim();
  if (static_cast<int>(x.size()) != n)
    throw std::invalid_argument("log_density: dimension mismatch");
  std::vector<double> r(n);
  for (int i = 0; i < n; ++i) r[i] = x[i] - g.mean[i];
  std::vector<double> z = solve_lower(g.chol, std::move(r));
  double q = 0.0;
  for (double v : z) q += v * v;
  return -0.5 * (q + chol_logdet(g.chol) + n * kLog2Pi);
}

double log_marginal_density(const FullGaussian& marg, const std::vector<double>& o) {
  return log_density(marg, o);
}

double joint_log_density(const DiagGaussian& prior, const EmissionModel& em,
                         const std::vector<double>& s, const std::vector<double>& o) {
  if (static_cast<int>(s.size()) != prior.dim() ||
      static_cast<int>(o.size()) != em.obs_dim())
    throw std::invalid_argument("joint_log_density: dimension mismatch");
  double lp = 0.0;
  for (int i = 0; i < prior.dim(); ++i) {
    const double d = s[i] - prior.mean[i];
    lp += -0.5 * (d * d / prior.var[i] + std::log(prior.var[i]) + kLog2Pi);
  }
  const std::vector<double> f = matvec(em.weight, s);
  const double e2 = em.noise_scale * em.noise_scale;
  for (int i = 0; i < em.obs_dim(); ++i) {
    const double d = o[i] - f[i] - em.bias[i];
    lp += -0.5 * (d * d / e2 + std::log(e2) + kLog2Pi);
  }
  return lp;
}

std::vector<double> sample_with_noise(const FullGaussian& marg,
                                      const std::vector<double>& nu) {
  const int n = marg.dim();
  if (static_cast<int>(nu.size()) != n)
    throw std::invalid_argument("sample_with_noise: nu dimension mismatch");
  std::vector<double> out = marg.mean;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) out[i] += marg.chol.at(i, j) * nu[j];
  return out;
}

// ---- differentiable marginal log density --------------------------------

Tensor log_marginal_op(const Tensor& mu, const Tensor& var, const Tensor& weight,
                       const Tensor& bias, const std::vector<double>& obs,
                       double eps) {
  Tape* tape = nullptr;
  for (const Tensor* t : {&mu, &var, &weight, &bias}) {
    if (t->tracked()) {
      if (tape != nullptr && tape != t->tape())
        throw std::invalid_argument("log_marginal_op: inputs on different tapes");
      tape = t->tape();
    }
  }
  const DenseArray& W = weight.value();
  const int m = W.rows(), n = W.cols();
  if (mu.size() != n || var.size() != n || bias.size() != m ||
      static_cast<int>(obs.size()) != m)
    throw std::invalid_argument("log_marginal_op: dimension mismatch");
  for (double v : var.value().data)
    if (!(v > 0.0)) throw std::domain_error("log_marginal_op: variances must be > 0");

  // Sigma = W diag(var) W^T + eps^2 I ; r = obs - (W mu + bias) ; a = Sigma^-1 r
  DenseArray cov = DenseArray::zeros({m, m});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = 0.0;
      for (int p = 0; p < n; ++p)
        s += W.at(i, p) * var.value().at(p) * W.at(j, p);
      cov.at(i, j) = s;
      cov.at(j, i) = s;
    }
    cov.at(i, i) += eps * eps;
  }
  const DenseArray L = cholesky(cov);
  std::vector<double> r(m);
  for (int i = 0; i < m; ++i) {
    double s = bias.value().at(i);
    for (int p = 0; p < n; ++p) s += W.at(i, p) * mu.value().at(p);
    r[i] = obs[i] - s;
  }
  const std::vector<double> alpha = chol_solve(L, r);
  double quad = 0.0;
  for (int i = 0; i < m; ++i) quad += r[i] * alpha[i];
  const double value = -0.5 * (quad + chol_logdet(L) + m * kLog2Pi);
  if (!std::isfinite(value))
    throw std::runtime_error("log_marginal_op: non-finite density");

  auto vjp = [mu, var, weight, L, alpha, m, n](const DenseArray& g) {
    const double gv = g.data[0];
    const DenseArray& W = weight.value();
    // G = d(logp)/d(Sigma) = (alpha alpha^T - Sigma^-1) / 2
    const DenseArray sigma_inv = chol_inverse(L);
    DenseArray G = DenseArray::zeros({m, m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        G.at(i, j) = 0.5 * (alpha[i] * alpha[j] - sigma_inv.at(i, j));

    DenseArray gmu = DenseArray::zeros({n});
    for (int p = 0; p < n; ++p) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += W.at(i, p) * alpha[i];
      gmu.at(p) = gv * s;
    }
    DenseArray gbias = DenseArray::zeros({m});
    for (int i = 0; i < m; ++i) gbias.at(i) = gv * alpha[i];

    DenseArray gvar = DenseArray::zeros({n});
    for (int p = 0; p < n; ++p) {
      double s = 0.0;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) s += W.at(i, p) * G.at(i, j) * W.at(j, p);
      gvar.at(p) = gv * s;
    }
    // dl/dW = alpha mu^T + 2 G W diag(var)
    DenseArray gw = DenseArray::zeros({m, n});
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < n; ++p) {
        double s = alpha[i] * mu.value().at(p);
        double gw2 = 0.0;
        for (int j = 0; j < m; ++j) gw2 += G.at(i, j) * W.at(j, p);
        s += 2.0 * gw2 * var.value().at(p);
        gw.at(i, p) = gv * s;
      }
    return std::vector<DenseArray>{std::move(gmu), std::move(gvar),
                                   std::move(gw), std::move(gbias)};
  };
  if (tape == nullptr) return Tensor(DenseArray::scalar(value));
  return tape->track(DenseArray::scalar(value), {mu, var, weight, bias}, vjp);
}

}  // namespace niva
