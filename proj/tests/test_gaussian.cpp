#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "niva/gaussian.hpp"
#include "niva/rng.hpp"
#include "oracles.hpp"

using namespace niva;

namespace {

struct RandomCase {
  DiagGaussian prior;
  EmissionModel em;
  std::vector<double> obs;
};

RandomCase make_case(RngStream& rng, int latent_dim, int obs_dim) {
  std::vector<double> mean(latent_dim), var(latent_dim);
  for (int i = 0; i < latent_dim; ++i) {
    mean[i] = rng.normal();
    var[i] = 0.2 + std::abs(rng.normal());
  }
  DenseArray w = DenseArray::zeros({obs_dim, latent_dim});
  for (double& v : w.data) v = rng.normal();
  std::vector<double> bias(obs_dim);
  for (double& v : bias) v = rng.normal();
  const double eps = 0.2 + 0.8 * rng.uniform();
  RandomCase c{DiagGaussian(mean, var), EmissionModel(w, bias, eps), {}};
  c.obs.resize(obs_dim);
  const FullGaussian marg = marginal_predictive(c.prior, c.em);
  std::vector<double> nu(obs_dim);
  for (double& v : nu) v = rng.normal();
  c.obs = sample_with_noise(marg, nu);
  return c;
}

DenseArray diag_matrix(const std::vector<double>& d) {
  DenseArray m = DenseArray::zeros({(int)d.size(), (int)d.size()});
  for (std::size_t i = 0; i < d.size(); ++i) m.at((int)i, (int)i) = d[i];
  return m;
}

}  // namespace

TEST_CASE("marginal by direct substitution") {
  DiagGaussian prior({1.0, 2.0}, {0.25, 0.25});
  EmissionModel em(DenseArray::identity(2), {0.0, 0.0}, 0.1);
  FullGaussian marg = marginal_predictive(prior, em);
  CHECK(marg.mean[0] == doctest::Approx(1.0));
  CHECK(marg.mean[1] == doctest::Approx(2.0));
  CHECK(marg.cov.at(0, 0) == doctest::Approx(0.26));
  CHECK(marg.cov.at(1, 1) == doctest::Approx(0.26));
  CHECK(marg.cov.at(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("marginal degenerate prior collapses to emission noise") {
  DiagGaussian prior({0.5, -0.5}, {1e-14, 1e-14});
  EmissionModel em(DenseArray::matrix(2, 2, {1, 2, 3, 4}), {0, 0}, 0.1);
  FullGaussian marg = marginal_predictive(prior, em);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(marg.cov.at(i, j) == doctest::Approx(i == j ? 0.01 : 0.0).epsilon(1e-9));
}

TEST_CASE("marginal density matches trapezoid quadrature") {
  RngStream rng(101);
  for (int latent = 1; latent <= 2; ++latent) {
    RandomCase c = make_case(rng, latent, 3);
    const FullGaussian marg = marginal_predictive(c.prior, c.em);
    for (int probe = 0; probe < 5; ++probe) {
      std::vector<double> o(3);
      std::vector<double> nu(3);
      for (double& v : nu) v = 0.7 * rng.normal();
      o = sample_with_noise(marg, nu);
      const double closed = std::exp(log_marginal_density(marg, o));
      const double quad = oracle::quad_marginal_density(c.prior, c.em, o);
      CHECK(std::abs(closed - quad) <= 1e-6);
    }
  }
}

TEST_CASE("posterior textbook scalar update") {
  DiagGaussian prior({0.0}, {1.0});
  EmissionModel em(DenseArray::matrix(1, 1, {1.0}), {0.0}, 1.0);
  FullGaussian post = posterior(prior, em, {2.0});
  CHECK(post.mean[0] == doctest::Approx(1.0));
  CHECK(post.cov.at(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("posterior with consistent observation keeps the prior mean") {
  RngStream rng(102);
  for (int trial = 0; trial < 20; ++trial) {
    RandomCase c = make_case(rng, 3, 2 + trial % 3);
    std::vector<double> obs = matvec(c.em.weight, c.prior.mean);
    for (int i = 0; i < c.em.obs_dim(); ++i) obs[i] += c.em.bias[i];
    FullGaussian post = posterior(c.prior, c.em, obs);
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(post.mean[i] - c.prior.mean[i]) <= 1e-10);
  }
}

TEST_CASE("posterior density matches Bayes-rule quadrature") {
  RngStream rng(103);
  RandomCase c = make_case(rng, 2, 3);
  const FullGaussian post = posterior(c.prior, c.em, c.obs);
  const double evidence = oracle::quad_marginal_density(c.prior, c.em, c.obs);
  for (int probe = 0; probe < 5; ++probe) {
    std::vector<double> nu(2);
    for (double& v : nu) v = 0.6 * rng.normal();
    const std::vector<double> s = sample_with_noise(post, nu);
    const double closed = std::exp(log_density(post, s));
    const double bayes =
        std::exp(joint_log_density(c.prior, c.em, s, c.obs)) / evidence;
    CHECK(std::abs(closed - bayes) <= 1e-6);
  }
}

TEST_CASE("joint log density at the mode and scalar closed form") {
  RngStream rng(104);
  RandomCase c = make_case(rng, 3, 2);
  std::vector<double> mode_obs = matvec(c.em.weight, c.prior.mean);
  for (int i = 0; i < 2; ++i) mode_obs[i] += c.em.bias[i];
  double joint = joint_log_density(c.prior, c.em, c.prior.mean, mode_obs);
  double prior_mode = 0.0;
  for (int i = 0; i < 3; ++i)
    prior_mode += -0.5 * std::log(2.0 * M_PI * c.prior.var[i]);
  const double e2 = c.em.noise_scale * c.em.noise_scale;
  const double lik_mode = -0.5 * 2 * std::log(2.0 * M_PI * e2);
  CHECK(joint == doctest::Approx(prior_mode + lik_mode).epsilon(1e-12));

  DiagGaussian p1({0.0}, {1.0});
  EmissionModel e1(DenseArray::matrix(1, 1, {1.0}), {0.0}, 1.0);
  CHECK(joint_log_density(p1, e1, {0.0}, {0.0}) ==
        doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-14));
}

TEST_CASE("Bayes self-consistency on 200 random parameterizations") {
  RngStream rng(105);
  for (int trial = 0; trial < 200; ++trial) {
    const int latent = 1 + (int)(rng.uniform() * 8);
    const int obs_dim = 1 + (int)(rng.uniform() * 8);
    RandomCase c = make_case(rng, latent, obs_dim);
    std::vector<double> s(latent);
    for (double& v : s) v = rng.normal();
    const FullGaussian marg = marginal_predictive(c.prior, c.em);
    const FullGaussian post = posterior(c.prior, c.em, c.obs);
    const double lhs = joint_log_density(c.prior, c.em, s, c.obs);
    const double rhs = log_marginal_density(marg, c.obs) + log_density(post, s);
    CHECK(std::abs(lhs - rhs) <= 1e-8);
  }
}

TEST_CASE("posterior contracts in observation space and in Loewner order") {
  RngStream rng(106);
  for (int trial = 0; trial < 200; ++trial) {
    const int latent = 1 + (int)(rng.uniform() * 4);
    const int obs_dim = 1 + (int)(rng.uniform() * 4);
    RandomCase c = make_case(rng, latent, obs_dim);
    const FullGaussian post = posterior(c.prior, c.em, c.obs);

    std::vector<double> prior_pred = matvec(c.em.weight, c.prior.mean);
    std::vector<double> post_pred = matvec(c.em.weight, post.mean);
    double prior_resid = 0.0, post_resid = 0.0;
    for (int i = 0; i < obs_dim; ++i) {
      prior_resid += std::pow(c.obs[i] - prior_pred[i] - c.em.bias[i], 2);
      post_resid += std::pow(c.obs[i] - post_pred[i] - c.em.bias[i], 2);
    }
    CHECK(post_resid <= prior_resid + 1e-12);

    DenseArray gap = diag_matrix(c.prior.var);
    for (int i = 0; i < latent; ++i)
      for (int j = 0; j < latent; ++j) gap.at(i, j) -= post.cov.at(i, j);
    for (double eig : oracle::jacobi_eigenvalues(gap)) CHECK(eig >= -1e-10);
  }
}

TEST_CASE("appendix-style general noise covariance specializes to eps^2 I") {
  RngStream rng(107);
  for (int trial = 0; trial < 40; ++trial) {
    const int latent = 1 + (int)(rng.uniform() * 3);
    const int obs_dim = 1 + (int)(rng.uniform() * 3);
    RandomCase c = make_case(rng, latent, obs_dim);
    const double e2 = c.em.noise_scale * c.em.noise_scale;
    DenseArray lmat = DenseArray::identity(obs_dim);
    for (int i = 0; i < obs_dim; ++i) lmat.at(i, i) = e2;

    const oracle::MeanCov marg = oracle::general_marginal(
        c.prior.mean, diag_matrix(c.prior.var), c.em.weight, c.em.bias, lmat);
    const FullGaussian closed = marginal_predictive(c.prior, c.em);
    for (int i = 0; i < obs_dim; ++i) {
      CHECK(marg.mean[i] == doctest::Approx(closed.mean[i]).epsilon(1e-12));
      for (int j = 0; j < obs_dim; ++j)
        CHECK(std::abs(marg.cov.at(i, j) - closed.cov.at(i, j)) <= 1e-12);
    }

    const oracle::MeanCov post_o = oracle::general_posterior(
        c.prior.mean, diag_matrix(c.prior.var), c.em.weight, c.em.bias, lmat, c.obs);
    const FullGaussian post = posterior(c.prior, c.em, c.obs);
    for (int i = 0; i < latent; ++i) {
      CHECK(std::abs(post_o.mean[i] - post.mean[i]) <= 1e-9);
      for (int j = 0; j < latent; ++j)
        CHECK(std::abs(post_o.cov.at(i, j) - post.cov.at(i, j)) <= 1e-9);
    }
  }
}

TEST_CASE("sampling: zero noise, identity factor, empirical covariance") {
  RngStream rng(108);
  RandomCase c = make_case(rng, 3, 3);
  const FullGaussian marg = marginal_predictive(c.prior, c.em);
  const std::vector<double> at_mean = sample_with_noise(marg, {0, 0, 0});
  for (int i = 0; i < 3; ++i) CHECK(at_mean[i] == marg.mean[i]);

  FullGaussian iso({1.0, -2.0}, DenseArray::identity(2));
  const std::vector<double> shifted = sample_with_noise(iso, {1.0, -1.0});
  CHECK(shifted[0] == doctest::Approx(2.0));
  CHECK(shifted[1] == doctest::Approx(-3.0));

  const int n = 100000;
  const int d = marg.dim();
  std::vector<double> sum(d, 0.0);
  DenseArray outer = DenseArray::zeros({d, d});
  for (int s = 0; s < n; ++s) {
    std::vector<double> nu(d);
    for (double& v : nu) v = rng.normal();
    const std::vector<double> x = sample_with_noise(marg, nu);
    for (int i = 0; i < d; ++i) {
      sum[i] += x[i];
      for (int j = 0; j < d; ++j) outer.at(i, j) += x[i] * x[j];
    }
  }
  double err2 = 0.0, ref2 = 0.0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const double emp = outer.at(i, j) / n - (sum[i] / n) * (sum[j] / n);
      err2 += std::pow(emp - marg.cov.at(i, j), 2);
      ref2 += std::pow(marg.cov.at(i, j), 2);
    }
  CHECK(std::sqrt(err2 / ref2) <= 0.05);
}

TEST_CASE("log marginal density closed forms") {
  for (int d = 1; d <= 4; ++d) {
    FullGaussian std_norm(std::vector<double>(d, 0.0), DenseArray::identity(d));
    CHECK(log_marginal_density(std_norm, std::vector<double>(d, 0.0)) ==
          doctest::Approx(-0.5 * d * std::log(2.0 * M_PI)).epsilon(1e-14));
  }
  RngStream rng(109);
  RandomCase c = make_case(rng, 2, 3);
  FullGaussian marg = marginal_predictive(c.prior, c.em);
  std::vector<double> shift = {100.0, -50.0, 7.0};
  FullGaussian moved = marg;
  std::vector<double> o = c.obs, o2 = c.obs;
  for (int i = 0; i < 3; ++i) {
    moved.mean[i] += shift[i];
    o2[i] += shift[i];
  }
  CHECK(log_marginal_density(marg, o) ==
        doctest::Approx(log_marginal_density(moved, o2)).epsilon(1e-12));
}

TEST_CASE("marginal covariance is symmetric positive definite") {
  RngStream rng(110);
  for (int trial = 0; trial < 100; ++trial) {
    RandomCase c = make_case(rng, 1 + trial % 6, 1 + (trial / 2) % 5);
    const FullGaussian marg = marginal_predictive(c.prior, c.em);  // ctor checks both
    CHECK(marg.chol.at(0, 0) > 0.0);
  }
}

TEST_CASE("emission model validation") {
  CHECK_THROWS_AS(EmissionModel(DenseArray::identity(2), {0.0, 0.0}, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(EmissionModel(DenseArray::matrix(2, 2, {1, 2, 2, 4}), {0, 0}, 0.1),
                  std::invalid_argument);  // rank 1
  CHECK_NOTHROW(EmissionModel(DenseArray::matrix(2, 3, {1, 0, 0, 0, 1, 0}), {0, 0}, 0.1));
}

TEST_CASE("differentiable marginal log density: value and gradients") {
  RngStream rng(111);
  RandomCase c = make_case(rng, 4, 3);
  const FullGaussian marg = marginal_predictive(c.prior, c.em);
  const double ref = log_marginal_density(marg, c.obs);

  DenseArray mu = DenseArray::vec(c.prior.mean);
  DenseArray var = DenseArray::vec(c.prior.var);
  DenseArray bias = DenseArray::vec(c.em.bias);
  const std::vector<double> obs = c.obs;
  const double eps = c.em.noise_scale;
  const DenseArray w = c.em.weight;

  {
    Tape tape;
    Tensor v = log_marginal_op(tape.leaf(mu), tape.leaf(var), tape.leaf(w),
                               tape.leaf(bias), obs, eps);
    CHECK(v.scalar() == doctest::Approx(ref).epsilon(1e-12));
  }

  const double err = grad_check_multi(
      [&](Tape&, const std::vector<Tensor>& xs) {
        return log_marginal_op(xs[0], xs[1], xs[2], xs[3], obs, eps);
      },
      {mu, var, w, bias});
  CHECK(err <= 1e-5);
}

TEST_CASE("degenerate inputs raise") {
  CHECK_THROWS(DiagGaussian({0.0}, {0.0}));
  CHECK_THROWS(DiagGaussian({0.0, 1.0}, {1.0}));
  DenseArray bad = DenseArray::matrix(2, 2, {1.0, 0.5, 0.4999, 1.0});
  bad.at(0, 1) = 0.5;
  bad.at(1, 0) = 0.49;
  CHECK_THROWS_AS(FullGaussian({0.0, 0.0}, bad), std::invalid_argument);
}
