#include "ibpd/distributions.hpp"

#include <algorithm>
#include <cmath>

namespace ibpd {

namespace {

void require_positive(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!(v > 0)) throw DomainError(std::string(what) + " must be strictly positive");
  }
}

Tensor clamped_noise(const Tensor& u) {
  std::vector<double> v(u.data().begin(), u.data().end());
  for (double& x : v) x = std::clamp(x, kNoiseClamp, 1.0 - kNoiseClamp);
  return Tensor::from(u.shape(), std::move(v));
}

}  // namespace

KumaraswamyParams::KumaraswamyParams(Tensor a_, Tensor b_) : a(std::move(a_)), b(std::move(b_)) {
  if (a.shape() != b.shape()) {
    throw DimensionError("Kumaraswamy a/b shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  require_positive(a, "Kumaraswamy a");
  require_positive(b, "Kumaraswamy b");
}

BetaParams::BetaParams(double alpha_, double beta_) : alpha(alpha_), beta(beta_) {
  if (!(alpha > 0) || !(beta > 0)) throw DomainError("Beta parameters must be positive");
}

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

double kumaraswamy_mean(double a, double b) { return b * std::exp(log_beta_fn(1.0 + 1.0 / a, b)); }

Tensor kumaraswamy_sample(const KumaraswamyParams& q, const Tensor& u) {
  const Tensor uc = clamped_noise(u);
  std::vector<double> l(uc.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = std::log1p(-uc[i]);
  const Tensor log_one_minus_u = Tensor::from(uc.shape(), std::move(l));
  // (1-u)^(1/b) in log space, then the outer power.
  const Tensor t = exp(log_one_minus_u / q.b);
  const Tensor nu = pow(clamp(1.0 - t, 1e-300, 1.0), 1.0 / q.a);
  return clamp(nu, kNoiseClamp, 1.0 - kNoiseClamp);
}

Tensor kl_kumaraswamy_beta(const KumaraswamyParams& q, const BetaParams& p, int terms) {
  if (terms < 1) throw DomainError("kl_kumaraswamy_beta needs at least one series term");
  const Tensor& a = q.a;
  const Tensor& b = q.b;
  const double alpha = p.alpha;
  const double beta = p.beta;

  Tensor kl = ((a - alpha) / a) * (-kEulerGamma - digamma(b) - 1.0 / b) + log(a * b) +
              log_beta_fn(alpha, beta) - (b - 1.0) / b;
  if (beta != 1.0) {
    const Tensor ab = a * b;
    const Tensor lgb = lgamma(b);
    Tensor series = Tensor::zeros(a.shape());
    for (int m = 1; m <= terms; ++m) {
      const Tensor m_over_a = static_cast<double>(m) / a;
      const Tensor beta_fn = exp(lgamma(m_over_a) + lgb - lgamma(m_over_a + b));
      series = series + beta_fn / (static_cast<double>(m) + ab);
    }
    kl = kl + (beta - 1.0) * b * series;
  }
  return kl;
}

Tensor relaxed_bernoulli_sample(const BernoulliLogits& b, const Tensor& u, bool hard) {
  if (!(b.temperature > 0)) throw DomainError("relaxed Bernoulli temperature must be positive");
  const Tensor uc = clamped_noise(u);
  std::vector<double> l(uc.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = std::log(uc[i]) - std::log1p(-uc[i]);
  const Tensor logistic = Tensor::from(uc.shape(), std::move(l));
  const Tensor soft = sigmoid((b.logits + logistic) / b.temperature);
  if (!hard) return soft;
  std::vector<double> h(soft.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = soft[i] > 0.5 ? 1.0 : 0.0;
  return straight_through(soft, Tensor::from(soft.shape(), std::move(h)));
}

Tensor kl_bernoulli(const Tensor& q_prob, const Tensor& p_prob) {
  const Tensor q = clamp(q_prob, kProbClamp, 1.0 - kProbClamp);
  const Tensor p = clamp(p_prob, kProbClamp, 1.0 - kProbClamp);
  return q * (log(q) - log(p)) + (1.0 - q) * (log(1.0 - q) - log(1.0 - p));
}

Tensor gaussian_sample(const DiagGaussianParams& g, const Tensor& eps) {
  if (eps.shape() != g.mu.shape()) {
    throw DimensionError("gaussian noise shape " + shape_str(eps.shape()) + " != mean shape " +
                         shape_str(g.mu.shape()));
  }
  return g.mu + exp(0.5 * g.log_var) * eps;
}

Tensor kl_gaussian_standard(const DiagGaussianParams& g) {
  const Tensor per_dim = 0.5 * (g.mu * g.mu + exp(g.log_var) - g.log_var - 1.0);
  return sum(per_dim, -1);
}

}  // namespace ibpd
