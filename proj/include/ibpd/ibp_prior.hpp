#pragma once

#include <vector>

#include "ibpd/rng.hpp"
#include "ibpd/tensor.hpp"

namespace ibpd {

struct IBPConfig {
  double alpha = 10.0;  // prior concentration (expected active features as K grows)
  double beta = 1.0;
  std::size_t K = 50;   // truncation level

  void validate() const;
};

struct StickState {
  Tensor nu;  // [K] in (0,1)
  Tensor pi;  // [K], pi_k = prod_{i<=k} nu_i
};

/// Cumulative stick products, computed as exp(cumsum(log nu)). Differentiable.
Tensor sticks_to_pi(const Tensor& nu);

struct PriorDraw {
  StickState sticks;
  Tensor Z;  // [n x K], 0/1
};

/// Simulates the truncated stick-breaking prior: nu_k ~ Beta(alpha, beta),
/// pi = sticks_to_pi(nu), Z_nk ~ Bernoulli(pi_k). Not differentiable.
PriorDraw sample_prior(const IBPConfig& cfg, std::size_t n, Rng& rng);

/// E[sum_k Z_nk] = sum_{k=1..K} (alpha / (alpha + beta))^k.
double expected_active(const IBPConfig& cfg);

}  // namespace ibpd
