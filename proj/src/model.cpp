#include "ibpd/model.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace ibpd {

namespace {

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const char* likelihood_name(Likelihood l) {
  return l == Likelihood::bernoulli ? "bernoulli" : "gaussian_fixed_var";
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::cibp_vae: return "cibp-vae";
    case ModelKind::cvae: return "c-vae";
    case ModelKind::classifier: return "classifier";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "cibp-vae") return ModelKind::cibp_vae;
  if (s == "c-vae") return ModelKind::cvae;
  if (s == "classifier") return ModelKind::classifier;
  throw ConfigError("unknown model kind '" + s + "' (expected cibp-vae|c-vae|classifier)");
}

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

void ModelConfig::validate() const {
  ibp.validate();
  if (input_dim == 0 || task_classes == 0) throw ConfigError("model dimensions must be positive");
  for (const auto* sizes : {&confounder_hidden, &task_hidden, &decoder_hidden}) {
    if (sizes->empty()) throw ConfigError("every network needs at least one hidden layer");
    for (std::size_t h : *sizes) {
      if (h == 0) throw ConfigError("hidden layer widths must be positive");
    }
  }
  if (!(zeta >= 0)) throw ConfigError("zeta must be non-negative");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
}

void to_json(nlohmann::json& j, const IBPConfig& c) {
  j = {{"alpha", c.alpha}, {"beta", c.beta}, {"K", c.K}};
}

void from_json(const nlohmann::json& j, IBPConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.K = j.value("K", c.K);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"kind", to_string(c.kind)},
       {"input_dim", c.input_dim},
       {"task_classes", c.task_classes},
       {"ibp", c.ibp},
       {"confounder_hidden", c.confounder_hidden},
       {"task_hidden", c.task_hidden},
       {"decoder_hidden", c.decoder_hidden},
       {"likelihood", likelihood_name(c.likelihood)},
       {"fusion", c.fusion == ZFusion::logit_add ? "logit_add" : "multiplicative"},
       {"zeta", c.zeta},
       {"temperature", c.temperature}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("kind")) c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  c.input_dim = j.value("input_dim", c.input_dim);
  c.task_classes = j.value("task_classes", c.task_classes);
  if (j.contains("ibp")) c.ibp = j.at("ibp").get<IBPConfig>();
  c.confounder_hidden = j.value("confounder_hidden", c.confounder_hidden);
  c.task_hidden = j.value("task_hidden", c.task_hidden);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  if (j.contains("likelihood")) {
    const auto s = j.at("likelihood").get<std::string>();
    if (s == "bernoulli") {
      c.likelihood = Likelihood::bernoulli;
    } else if (s == "gaussian_fixed_var") {
      c.likelihood = Likelihood::gaussian_fixed_var;
    } else {
      throw ConfigError("unknown likelihood '" + s + "'");
    }
  }
  if (j.contains("fusion")) {
    const auto s = j.at("fusion").get<std::string>();
    if (s == "logit_add") {
      c.fusion = ZFusion::logit_add;
    } else if (s == "multiplicative") {
      c.fusion = ZFusion::multiplicative;
    } else {
      throw ConfigError("unknown fusion '" + s + "'");
    }
  }
  c.zeta = j.value("zeta", c.zeta);
  c.temperature = j.value("temperature", c.temperature);
}

NoiseBundle NoiseBundle::draw(Rng& rng, std::size_t n, std::size_t K) {
  NoiseBundle nb;
  nb.nu_uniform = rng.uniform_tensor({K});
  nb.z_uniform = rng.uniform_tensor({n, K});
  nb.a_normal = rng.normal_tensor({n, K});
  return nb;
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DomainError("label " + std::to_string(labels[i]) + " outside [0," +
                        std::to_string(classes) + ")");
    }
    v[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor::from({labels.size(), classes}, std::move(v));
}

Tensor posterior_z_logits(const Tensor& pi, const Tensor& d_logits, ZFusion fusion) {
  const Tensor p = clamp(pi, kProbClamp, 1.0 - kProbClamp);
  if (fusion == ZFusion::logit_add) return (log(p) - log(1.0 - p)) + d_logits;
  const Tensor q = clamp(p * sigmoid(d_logits), kProbClamp, 1.0 - kProbClamp);
  return log(q) - log(1.0 - q);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.dim() != 2 || logits.rows() != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const Tensor picked = sum(one_hot(labels, logits.cols()) * log_softmax(logits), -1);
  return -mean(picked);
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t D = cfg_.input_dim;
  const std::size_t K = cfg_.K();
  const std::size_t T = cfg_.task_classes;

  // Task trunk first so baselines built from the same seed share it exactly.
  std::size_t in = D;
  for (std::size_t l = 0; l < cfg_.task_hidden.size(); ++l) {
    add_linear("task/layer" + std::to_string(l), in, cfg_.task_hidden[l], init_seed);
    in = cfg_.task_hidden[l];
  }
  add_linear("task/logits", in, T, init_seed);
  if (cfg_.kind == ModelKind::classifier) return;

  in = D;
  for (std::size_t l = 0; l < cfg_.confounder_hidden.size(); ++l) {
    add_linear("confounder/layer" + std::to_string(l), in, cfg_.confounder_hidden[l], init_seed);
    in = cfg_.confounder_hidden[l];
  }
  add_linear("confounder/mu", in, K, init_seed);
  add_linear("confounder/log_var", in, K, init_seed, 0.1);
  if (cfg_.kind == ModelKind::cibp_vae) add_linear("confounder/d_logits", in, K, init_seed, 0.1);

  in = K + T;
  for (std::size_t l = 0; l < cfg_.decoder_hidden.size(); ++l) {
    add_linear("decoder/layer" + std::to_string(l), in, cfg_.decoder_hidden[l], init_seed);
    in = cfg_.decoder_hidden[l];
  }
  add_linear("decoder/out", in, D, init_seed);

  if (cfg_.kind == ModelKind::cibp_vae) {
    // Start the stick posterior at the prior's shape parameters.
    add_param("sticks/raw_a", Tensor::full({K}, inverse_softplus(cfg_.ibp.alpha), true));
    add_param("sticks/raw_b", Tensor::full({K}, inverse_softplus(cfg_.ibp.beta), true));
  }
}

Model Model::clone() const {
  Model out(*this);
  for (auto& p : out.params_) p.value = p.value.clone();
  return out;
}

void Model::set_temperature(double t) {
  if (!(t > 0)) throw ConfigError("temperature must be positive");
  cfg_.temperature = t;
}

void Model::set_zeta(double zeta) {
  if (!(zeta >= 0)) throw ConfigError("zeta must be non-negative");
  cfg_.zeta = zeta;
}

void Model::add_param(const std::string& name, Tensor value) {
  if (has_param(name)) throw ConfigError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  params_.push_back({name, std::move(value)});
}

void Model::add_linear(const std::string& prefix, std::size_t in, std::size_t out,
                       std::uint64_t seed, double weight_scale) {
  // Glorot-uniform weights from a stream keyed by the parameter name.
  Rng rng(fnv1a(prefix + "/weight", seed));
  const double limit = weight_scale * std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * limit;
  add_param(prefix + "/weight", Tensor::from({in, out}, std::move(w)));
  add_param(prefix + "/bias", Tensor::zeros({out}));
}

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

bool Model::has_param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

const Tensor& Model::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw ConfigError("no parameter named " + name);
}

Tensor& Model::param(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).param(name));
}

void Model::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void Model::check_input(const Tensor& x) const {
  if (x.dim() != 2 || x.cols() != cfg_.input_dim) {
    throw DimensionError("model expects input of width " + std::to_string(cfg_.input_dim) +
                         ", got shape " + shape_str(x.shape()));
  }
}

Tensor Model::linear(const std::string& prefix, const Tensor& x) const {
  return matmul(x, param(prefix + "/weight")) + param(prefix + "/bias");
}

Tensor Model::mlp(const std::string& prefix, std::size_t layers, const Tensor& x,
                  bool use_tanh) const {
  Tensor h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = linear(prefix + "/layer" + std::to_string(l), h);
    h = use_tanh ? tanh(h) : relu(h);
  }
  return h;
}

Tensor Model::task_features(const Tensor& x) const {
  check_input(x);
  return mlp("task", cfg_.task_hidden.size(), x, false);
}

EncoderOutputs Model::encode(const Tensor& x) const {
  check_input(x);
  EncoderOutputs out;
  out.task_logits = linear("task/logits", task_features(x));
  if (cfg_.kind == ModelKind::classifier) return out;
  const Tensor h = mlp("confounder", cfg_.confounder_hidden.size(), x, true);
  out.mu = linear("confounder/mu", h);
  out.log_var = linear("confounder/log_var", h);
  if (cfg_.kind == ModelKind::cibp_vae) out.d_logits = linear("confounder/d_logits", h);
  return out;
}

KumaraswamyParams Model::stick_posterior() const {
  if (cfg_.kind != ModelKind::cibp_vae) throw ConfigError("model has no stick posterior");
  return {softplus(param("sticks/raw_a")), softplus(param("sticks/raw_b"))};
}

LatentSample Model::sample_latent(const EncoderOutputs& enc, const NoiseBundle& noise,
                                  bool hard) const {
  if (cfg_.kind == ModelKind::classifier) throw ConfigError("classifier has no latent space");
  LatentSample s;
  s.A = gaussian_sample({enc.mu, enc.log_var}, noise.a_normal);
  if (cfg_.kind == ModelKind::cvae) {
    s.y_c = s.A;
    return s;
  }
  // One global stick draw, shared by every row of the batch.
  const Tensor nu = kumaraswamy_sample(stick_posterior(), noise.nu_uniform);
  const Tensor pi = sticks_to_pi(nu);
  const Tensor logits = posterior_z_logits(pi, *enc.d_logits, cfg_.fusion);
  s.nu = nu;
  s.pi = pi;
  s.z_prob = sigmoid(logits);
  s.Z = relaxed_bernoulli_sample({logits, cfg_.temperature}, noise.z_uniform, hard);
  s.y_c = *s.Z * s.A;
  return s;
}

Tensor Model::decode_logits(const Tensor& y_c, const Tensor& y_t) const {
  if (cfg_.kind == ModelKind::classifier) throw ConfigError("classifier has no decoder");
  if (y_c.dim() != 2 || y_c.cols() != cfg_.K() || y_t.dim() != 2 ||
      y_t.cols() != cfg_.task_classes || y_t.rows() != y_c.rows()) {
    throw DimensionError("decoder expects [n x " + std::to_string(cfg_.K()) + "] and [n x " +
                         std::to_string(cfg_.task_classes) + "], got " + shape_str(y_c.shape()) +
                         " and " + shape_str(y_t.shape()));
  }
  const Tensor h = mlp("decoder", cfg_.decoder_hidden.size(), concat_last({y_c, y_t}), true);
  return linear("decoder/out", h);
}

Tensor Model::decode(const Tensor& y_c, const Tensor& y_t) const {
  const Tensor logits = decode_logits(y_c, y_t);
  return cfg_.likelihood == Likelihood::bernoulli ? sigmoid(logits) : logits;
}

Tensor Model::reconstruction_nll(const Tensor& x, const Tensor& decoder_logits) const {
  if (cfg_.likelihood == Likelihood::bernoulli) {
    // -log Bernoulli(x | sigmoid(l)) = softplus(l) - x l, valid for x in [0,1].
    return sum(softplus(decoder_logits) - x * decoder_logits, -1);
  }
  const double log_norm = 0.5 * static_cast<double>(cfg_.input_dim) * std::log(2.0 * std::numbers::pi);
  const Tensor diff = x - decoder_logits;
  return 0.5 * sum(diff * diff, -1) + log_norm;
}

LossBreakdown Model::elbo(const Batch& batch, const NoiseBundle& noise, double batch_fraction,
                         bool hard) const {
  return elbo_from(batch, encode(batch.x), noise, batch_fraction, hard);
}

LossBreakdown Model::elbo_from(const Batch& batch, const EncoderOutputs& enc,
                               const NoiseBundle& noise, double batch_fraction, bool hard) const {
  if (cfg_.kind == ModelKind::classifier) throw ConfigError("classifier has no ELBO");
  if (batch.labels.size() != batch.x.rows()) throw DimensionError("batch labels/rows mismatch");
  const std::size_t n = batch.x.rows();
  const LatentSample lat = sample_latent(enc, noise, hard);
  const Tensor recon = reconstruction_nll(batch.x, decode_logits(lat.y_c, one_hot(batch.labels, cfg_.task_classes)));
  const Tensor gkl = kl_gaussian_standard({enc.mu, enc.log_var});

  LossBreakdown out;
  out.batch_size = n;
  Tensor per_example_sum = sum(recon + gkl);
  out.recon = sum(recon).item();
  out.gaussian_kl = sum(gkl).item();
  if (cfg_.kind == ModelKind::cibp_vae) {
    const Tensor bkl = sum(kl_bernoulli(*lat.z_prob, *lat.pi));
    const Tensor stick = batch_fraction *
                         sum(kl_kumaraswamy_beta(stick_posterior(), {cfg_.ibp.alpha, cfg_.ibp.beta}));
    out.bernoulli_kl = bkl.item();
    out.stick_kl = stick.item();
    per_example_sum = per_example_sum + bkl + stick;
  }
  out.neg_elbo = per_example_sum / static_cast<double>(n);
  out.total = out.neg_elbo;
  return out;
}

LossBreakdown Model::supervised_loss(const Batch& batch, const NoiseBundle& noise,
                                     double batch_fraction, bool hard) const {
  if (cfg_.kind == ModelKind::classifier) {
    LossBreakdown out;
    out.batch_size = batch.x.rows();
    const Tensor ce = cross_entropy(encode(batch.x).task_logits, batch.labels);
    out.ce = ce.item() * static_cast<double>(out.batch_size);
    out.total = ce;
    out.neg_elbo = Tensor::scalar(0.0);
    return out;
  }
  const EncoderOutputs enc = encode(batch.x);
  LossBreakdown out = elbo_from(batch, enc, noise, batch_fraction, hard);
  const Tensor ce = cross_entropy(enc.task_logits, batch.labels);
  out.ce = ce.item() * static_cast<double>(out.batch_size);
  if (cfg_.zeta != 0.0) out.total = out.neg_elbo + cfg_.zeta * ce;
  return out;
}

Model build_cibp_vae(ModelConfig cfg, std::uint64_t init_seed) {
  cfg.kind = ModelKind::cibp_vae;
  return Model(std::move(cfg), init_seed);
}

Model build_cvae_baseline(ModelConfig cfg, std::uint64_t init_seed) {
  cfg.kind = ModelKind::cvae;
  return Model(std::move(cfg), init_seed);
}

Model build_classifier_baseline(ModelConfig cfg, std::uint64_t init_seed) {
  cfg.kind = ModelKind::classifier;
  return Model(std::move(cfg), init_seed);
}

}  // namespace ibpd
