#pragma once

#include "ibpd/tensor.hpp"

namespace ibpd {

// Bounds used to keep logs finite: uniform noise is clamped to
// (kNoiseClamp, 1 - kNoiseClamp) and probabilities to [kProbClamp, 1 - kProbClamp].
inline constexpr double kNoiseClamp = 1e-7;
inline constexpr double kProbClamp = 1e-7;
inline constexpr double kEulerGamma = 0.57721566490153286061;
inline constexpr int kDefaultKlTerms = 10;

/// Variational family for the stick weights. Both tensors have shape [K] and
/// must be strictly positive (the model obtains them through softplus).
struct KumaraswamyParams {
  Tensor a;
  Tensor b;
  KumaraswamyParams(Tensor a_, Tensor b_);
};

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
  BetaParams(double alpha_, double beta_);
};

struct DiagGaussianParams {
  Tensor mu;       // [n x K]
  Tensor log_var;  // [n x K]
};

struct BernoulliLogits {
  Tensor logits;
  double temperature = 0.5;
};

/// Inverse-CDF draw nu = (1 - (1-u)^(1/b))^(1/a); differentiable in a and b.
/// `u` must broadcast against the parameters.
Tensor kumaraswamy_sample(const KumaraswamyParams& q, const Tensor& u);

/// KL(Kumaraswamy(a,b) || Beta(alpha,beta)) per stick, shape [K]. The
/// expectation of log(1-nu) under the Kumaraswamy has no closed form; it is
/// replaced by its Taylor series truncated after `terms` terms, which only
/// contributes when beta != 1.
Tensor kl_kumaraswamy_beta(const KumaraswamyParams& q, const BetaParams& p,
                           int terms = kDefaultKlTerms);

/// Binary Concrete sample sigmoid((logits + log u - log(1-u)) / temperature).
/// With `hard`, the forward value is the 0/1 threshold of the soft sample at
/// 0.5 and the gradient is that of the soft sample (straight-through).
Tensor relaxed_bernoulli_sample(const BernoulliLogits& b, const Tensor& u, bool hard);

/// Elementwise KL(Bernoulli(q) || Bernoulli(p)) after clamping both.
Tensor kl_bernoulli(const Tensor& q_prob, const Tensor& p_prob);

/// mu + exp(log_var / 2) * eps.
Tensor gaussian_sample(const DiagGaussianParams& g, const Tensor& eps);

/// KL(N(mu, sigma^2) || N(0, I)) summed over the last axis: shape [n] for
/// [n x K] inputs.
Tensor kl_gaussian_standard(const DiagGaussianParams& g);

// Plain-double helpers shared by samplers and analytic moments.
double log_beta_fn(double a, double b);
// Analytic mean of Kumaraswamy(a,b): b * B(1 + 1/a, b).
double kumaraswamy_mean(double a, double b);

}  // namespace ibpd
