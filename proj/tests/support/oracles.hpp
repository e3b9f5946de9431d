#pragma once

// Reference computations shared by the unit and acceptance tests. Each one
// is written from densities and plain loops, not from the library's own
// closed forms.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ibpd/model.hpp"
#include "ibpd/rng.hpp"

namespace oracle {

inline double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// E_q[log q(nu) - log p(nu)], q = Kumaraswamy(a,b) by inverse CDF, p = Beta.
inline double kl_kumaraswamy_beta(double a, double b, double alpha, double beta, std::size_t n,
                                  std::uint64_t seed) {
  ibpd::Rng rng(seed);
  const double lb = log_beta(alpha, beta);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const double nu = std::pow(1.0 - std::pow(1.0 - u, 1.0 / b), 1.0 / a);
    const double lq = std::log(a * b) + (a - 1) * std::log(nu) + (b - 1) * std::log1p(-std::pow(nu, a));
    const double lp = (alpha - 1) * std::log(nu) + (beta - 1) * std::log1p(-nu) - lb;
    acc += lq - lp;
  }
  return acc / static_cast<double>(n);
}

// E_q[log q(z) - log p(z)] for z ~ Bernoulli(q).
inline double kl_bernoulli(double q, double p, std::size_t n, std::uint64_t seed) {
  ibpd::Rng rng(seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += rng.uniform() < q ? std::log(q / p) : std::log((1 - q) / (1 - p));
  }
  return acc / static_cast<double>(n);
}

// E_q[log N(a; mu, s^2) - log N(a; 0, 1)] summed over dimensions.
inline double kl_gaussian_standard(const std::vector<double>& mu, const std::vector<double>& log_var,
                                   std::size_t n, std::uint64_t seed) {
  ibpd::Rng rng(seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < mu.size(); ++k) {
      const double sd = std::exp(0.5 * log_var[k]);
      const double e = rng.normal();
      const double a = mu[k] + sd * e;
      acc += -0.5 * e * e - std::log(sd) + 0.5 * a * a;
    }
  }
  return acc / static_cast<double>(n);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Negative ELBO of one example under a cIBP-VAE by joint sampling of
// (nu, Z, A) from the variational posterior and evaluating
// log q(nu) + log q(Z|nu) + log q(A) - log p(nu) - log p(Z|nu) - log p(A) - log p(x|Z,A,y)
// from densities. Only the encoder outputs and decoder means come from the model.
inline double neg_elbo_cibp(const ibpd::Model& model, const std::vector<double>& x, int label,
                            std::size_t n, std::uint64_t seed, std::size_t chunk = 50000) {
  using namespace ibpd;
  NoGradGuard ng;
  const auto& cfg = model.config();
  const std::size_t K = cfg.K(), D = cfg.input_dim, T = cfg.task_classes;
  const Tensor xt = Tensor::from({1, D}, x);
  const EncoderOutputs enc = model.encode(xt);
  const auto kp = model.stick_posterior();
  std::vector<double> a(K), b(K), d(K), mu(K), lv(K);
  for (std::size_t k = 0; k < K; ++k) {
    a[k] = kp.a[k];
    b[k] = kp.b[k];
    d[k] = (*enc.d_logits)[k];
    mu[k] = enc.mu[k];
    lv[k] = enc.log_var[k];
  }
  const double alpha = cfg.ibp.alpha, beta = cfg.ibp.beta;
  const double lb = log_beta(alpha, beta);
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    std::vector<double> yc(m * K), yt(m * T, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double log_ratio = 0.0;
      double log_pi = 0.0;
      yt[i * T + static_cast<std::size_t>(label)] = 1.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double u = rng.uniform();
        const double nu = std::pow(1.0 - std::pow(1.0 - u, 1.0 / b[k]), 1.0 / a[k]);
        log_ratio += std::log(a[k] * b[k]) + (a[k] - 1) * std::log(nu) +
                     (b[k] - 1) * std::log1p(-std::pow(nu, a[k]));
        log_ratio -= (alpha - 1) * std::log(nu) + (beta - 1) * std::log1p(-nu) - lb;
        log_pi += std::log(nu);
        const double pi = std::exp(log_pi);
        const double q = sigmoid(std::log(pi) - std::log1p(-pi) + d[k]);
        const bool z = rng.uniform() < q;
        log_ratio += z ? std::log(q) - std::log(pi) : std::log1p(-q) - std::log1p(-pi);
        const double sd = std::exp(0.5 * lv[k]);
        const double e = rng.normal();
        const double av = mu[k] + sd * e;
        log_ratio += -0.5 * e * e - std::log(sd) + 0.5 * av * av;
        yc[i * K + k] = z ? av : 0.0;
      }
      total += log_ratio;
    }
    const Tensor mean = model.decode(Tensor::from({m, K}, yc), Tensor::from({m, T}, yt));
    for (std::size_t i = 0; i < m; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        const double r = x[j] - mean[i * D + j];
        sq += r * r;
      }
      total += 0.5 * sq + 0.5 * static_cast<double>(D) * std::log(2.0 * M_PI);
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace oracle
