#include "ibpd/ibp_prior.hpp"

#include <algorithm>
#include <cmath>

namespace ibpd {

void IBPConfig::validate() const {
  if (!(alpha > 0) || !(beta > 0)) throw ConfigError("IBP alpha and beta must be positive");
  if (K < 1) throw ConfigError("IBP truncation K must be at least 1");
}

Tensor sticks_to_pi(const Tensor& nu) {
  for (double v : nu.data()) {
    if (!(v > 0.0 && v < 1.0)) {
      throw DomainError("stick weight outside (0,1): " + std::to_string(v));
    }
  }
  return exp(cumsum(log(nu)));
}

PriorDraw sample_prior(const IBPConfig& cfg, std::size_t n, Rng& rng) {
  cfg.validate();
  if (n < 1) throw DomainError("sample_prior needs n >= 1");
  std::vector<double> nu(cfg.K);
  for (double& v : nu) {
    // Beta draws can round to exactly 0 or 1 for extreme shapes.
    v = std::clamp(rng.beta(cfg.alpha, cfg.beta), 1e-300, std::nextafter(1.0, 0.0));
  }
  NoGradGuard no_grad;
  Tensor nu_t = Tensor::from({cfg.K}, std::move(nu));
  Tensor pi = sticks_to_pi(nu_t);
  std::vector<double> z(n * cfg.K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < cfg.K; ++k) z[i * cfg.K + k] = rng.bernoulli(pi[k]) ? 1.0 : 0.0;
  }
  return {{std::move(nu_t), std::move(pi)}, Tensor::from({n, cfg.K}, std::move(z))};
}

double expected_active(const IBPConfig& cfg) {
  cfg.validate();
  // E[pi_k] = prod_i E[nu_i] because the sticks are independent.
  const double r = cfg.alpha / (cfg.alpha + cfg.beta);
  double total = 0.0, term = 1.0;
  for (std::size_t k = 1; k <= cfg.K; ++k) {
    term *= r;
    total += term;
  }
  return total;
}

}  // namespace ibpd
