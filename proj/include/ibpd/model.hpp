#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibpd/distributions.hpp"
#include "ibpd/ibp_prior.hpp"
#include "ibpd/rng.hpp"
#include "ibpd/tensor.hpp"

namespace ibpd {

enum class ModelKind { cibp_vae, cvae, classifier };
enum class Likelihood { gaussian_fixed_var, bernoulli };
// How the global stick probability pi_k and the per-example evidence d(x)
// combine into q(z_nk = 1).
enum class ZFusion { logit_add, multiplicative };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::cibp_vae;
  std::size_t input_dim = 1320;
  std::size_t task_classes = 10;
  IBPConfig ibp;  // ibp.K is the truncation level and the width of A
  std::vector<std::size_t> confounder_hidden{256, 256};
  std::vector<std::size_t> task_hidden{256, 256};
  std::vector<std::size_t> decoder_hidden{256, 256};
  Likelihood likelihood = Likelihood::gaussian_fixed_var;
  ZFusion fusion = ZFusion::logit_add;
  double zeta = 10.0;
  double temperature = 0.5;

  std::size_t K() const { return ibp.K; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const IBPConfig& c);
void from_json(const nlohmann::json& j, IBPConfig& c);

struct Parameter {
  std::string name;
  Tensor value;
};

struct EncoderOutputs {
  std::optional<Tensor> d_logits;  // [n x K]; absent for the c-VAE
  Tensor mu;                       // [n x K]
  Tensor log_var;                  // [n x K]
  Tensor task_logits;              // [n x T]
};

// Pre-drawn randomness for one minibatch.
struct NoiseBundle {
  Tensor nu_uniform;  // [K], one global stick draw per batch
  Tensor z_uniform;   // [n x K]
  Tensor a_normal;    // [n x K]

  static NoiseBundle draw(Rng& rng, std::size_t n, std::size_t K);
};

struct LatentSample {
  std::optional<Tensor> nu;      // [K]
  std::optional<Tensor> pi;      // [K]
  std::optional<Tensor> z_prob;  // [n x K], q(z = 1 | nu, x)
  std::optional<Tensor> Z;       // [n x K]
  Tensor A;                      // [n x K]
  Tensor y_c;                    // [n x K] = Z * A (or A for the c-VAE)
};

struct Batch {
  Tensor x;                 // [n x input_dim]
  std::vector<int> labels;  // n task labels in [0, T)
};

// Per-batch objective pieces. The scalar tensors `total` and `neg_elbo` are
// per-example averages; the doubles are sums over the batch, with the stick
// KL already multiplied by the batch fraction.
struct LossBreakdown {
  Tensor total;
  Tensor neg_elbo;
  double recon = 0.0;
  double stick_kl = 0.0;
  double bernoulli_kl = 0.0;
  double gaussian_kl = 0.0;
  double ce = 0.0;  // sum of per-example cross-entropies
  std::size_t batch_size = 0;
};

Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

/// logit(q) = logit(pi_k) + d_logits (or the multiplicative gate variant).
Tensor posterior_z_logits(const Tensor& pi, const Tensor& d_logits,
                          ZFusion fusion = ZFusion::logit_add);

/// Mean softmax cross-entropy of logits [n x T] against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  // Deep copy: parameter storage is not shared with the original.
  Model clone() const;
  void set_temperature(double t);
  void set_zeta(double zeta);
  ModelKind kind() const { return cfg_.kind; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;
  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  bool has_param(const std::string& name) const;
  void zero_grad();

  EncoderOutputs encode(const Tensor& x) const;
  // Penultimate activations of the task trunk (the y_t representation).
  Tensor task_features(const Tensor& x) const;
  KumaraswamyParams stick_posterior() const;
  LatentSample sample_latent(const EncoderOutputs& enc, const NoiseBundle& noise, bool hard) const;
  // Decoder pre-activation [n x input_dim].
  Tensor decode_logits(const Tensor& y_c, const Tensor& y_t) const;
  // Reconstruction parameters: Gaussian means or Bernoulli probabilities.
  Tensor decode(const Tensor& y_c, const Tensor& y_t) const;
  // Per-example negative log-likelihood [n].
  Tensor reconstruction_nll(const Tensor& x, const Tensor& decoder_logits) const;

  /// Negative ELBO of a batch. batch_fraction = batch size / dataset size
  /// scales the single global stick KL so that per-batch contributions sum to
  /// the full-dataset term over an epoch.
  LossBreakdown elbo(const Batch& batch, const NoiseBundle& noise, double batch_fraction,
                     bool hard = false) const;
  /// elbo + zeta * mean cross-entropy (cross-entropy alone for the classifier).
  LossBreakdown supervised_loss(const Batch& batch, const NoiseBundle& noise,
                                double batch_fraction, bool hard = false) const;

 private:
  LossBreakdown elbo_from(const Batch& batch, const EncoderOutputs& enc, const NoiseBundle& noise,
                          double batch_fraction, bool hard) const;
  Tensor mlp(const std::string& prefix, std::size_t layers, const Tensor& x, bool use_tanh) const;
  Tensor linear(const std::string& prefix, const Tensor& x) const;
  void add_linear(const std::string& prefix, std::size_t in, std::size_t out,
                  std::uint64_t seed, double weight_scale = 1.0);
  void add_param(const std::string& name, Tensor value);
  void check_input(const Tensor& x) const;

  ModelConfig cfg_;
  std::vector<Parameter> params_;
};

Model build_cibp_vae(ModelConfig cfg, std::uint64_t init_seed);
Model build_cvae_baseline(ModelConfig cfg, std::uint64_t init_seed);
Model build_classifier_baseline(ModelConfig cfg, std::uint64_t init_seed);

double inverse_softplus(double y);

}  // namespace ibpd
