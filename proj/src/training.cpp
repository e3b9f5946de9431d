#include "ibpd/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "binary_io.hpp"

namespace ibpd {

double TemperatureSchedule::at(std::size_t epoch, std::size_t epochs) const {
  if (epochs <= 1) return start;
  const double f = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return start + (end - start) * f;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || epochs == 0 || batch_size == 0) {
    throw ConfigError("learning_rate, epochs and batch_size must be positive");
  }
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0)) {
    throw ConfigError("Adam betas must lie in [0,1) and epsilon must be positive");
  }
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (!(temperature.start > 0) || !(temperature.end > 0)) {
    throw ConfigError("temperatures must be positive");
  }
  if (zeta && !(*zeta >= 0)) throw ConfigError("zeta must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"temperature_start", c.temperature.start},
       {"temperature_end", c.temperature.end},
       {"clip_norm", c.clip_norm},
       {"eval_seed", c.eval_seed}};
  j["zeta"] = c.zeta ? nlohmann::json(*c.zeta) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.temperature.start = j.value("temperature_start", c.temperature.start);
  c.temperature.end = j.value("temperature_end", c.temperature.end);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.eval_seed = j.value("eval_seed", c.eval_seed);
  if (j.contains("zeta")) {
    if (j.at("zeta").is_null()) {
      c.zeta.reset();
    } else {
      c.zeta = j.at("zeta").get<double>();
    }
  }
}

void write_report_csv(std::ostream& os, const TrainReport& report) {
  os << "epoch,loss,recon,stick_kl,bernoulli_kl,gaussian_kl,ce,val_accuracy,val_neg_elbo,"
        "val_active_mean,temperature,clipped_steps\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& e : report.epochs) {
    os << e.epoch << ',' << num(e.loss) << ',' << num(e.recon) << ',' << num(e.stick_kl) << ','
       << num(e.bernoulli_kl) << ',' << num(e.gaussian_kl) << ',' << num(e.ce) << ','
       << num(e.val_accuracy) << ',' << num(e.val_neg_elbo) << ',' << num(e.val_active_mean) << ','
       << num(e.temperature) << ',' << e.clipped_steps << '\n';
  }
}

// ---------------------------------------------------------------------------
// Optimizer

double clip_gradients(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.value.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params) {
      for (double& g : p.value.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

void adam_step(std::vector<Parameter>& params, AdamState& state, const TrainConfig& cfg) {
  for (auto& p : params) {
    // Parameters outside the loss graph get a zero gradient.
    for (double g : p.value.mutable_grad()) {
      if (!std::isfinite(g)) throw TrainingAborted("non-finite gradient in parameter " + p.name);
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].value.size(), 0.0);
      state.v[i].assign(params[i].value.size(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.mutable_data();
    const auto g = params[i].value.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      w[j] -= cfg.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace

EvalMetrics evaluate(const Model& model, std::span<const LabeledExample> examples,
                     std::uint64_t seed, std::size_t chunk) {
  EvalMetrics out;
  out.n = examples.size();
  if (examples.empty()) return out;
  if (chunk == 0) throw ConfigError("evaluation chunk must be positive");
  NoGradGuard no_grad;
  Rng rng(seed);
  const std::size_t K = model.config().K();
  const bool latent = model.kind() != ModelKind::classifier;
  const double N = static_cast<double>(examples.size());
  std::size_t correct = 0;
  double elbo_sum = 0.0, active_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, examples.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = make_batch(examples, idx);
    const EncoderOutputs enc = model.encode(batch.x);
    const auto logits = enc.task_logits.data();
    const std::size_t T = enc.task_logits.cols();
    for (std::size_t r = 0; r < n; ++r) {
      if (static_cast<int>(argmax_row(logits.subspan(r * T, T))) == batch.labels[r]) ++correct;
    }
    if (!latent) continue;
    const NoiseBundle noise = NoiseBundle::draw(rng, n, K);
    const LossBreakdown lb = model.elbo(batch, noise, static_cast<double>(n) / N, true);
    elbo_sum += lb.neg_elbo.item() * static_cast<double>(n);
    if (model.kind() == ModelKind::cibp_vae) {
      const LatentSample lat = model.sample_latent(enc, noise, true);
      for (double z : lat.Z->data()) active_sum += z;
    }
  }
  out.accuracy = static_cast<double>(correct) / N;
  if (latent) out.neg_elbo = elbo_sum / N;
  if (model.kind() == ModelKind::cibp_vae) out.active_mean = active_sum / N;
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const Model& init, const SplitSet& splits, const TrainConfig& cfg) {
  cfg.validate();
  if (splits.train.empty()) throw ConfigError("training split is empty");
  if (!splits.example_level && !subjects_disjoint(splits)) {
    throw ConfigError("splits share subjects");
  }
  Model model = init.clone();
  if (cfg.zeta) model.set_zeta(*cfg.zeta);
  TrainResult result{model.clone(), {}, false, {}};

  Rng root(cfg.seed);
  Rng shuffle_rng = root.split();
  Rng noise_rng = root.split();
  AdamState adam;
  const std::size_t N = splits.train.size();
  const std::size_t K = model.config().K();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  bool have_best = false;
  double best_neg_elbo = 0.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.temperature = cfg.temperature.at(epoch, cfg.epochs);
    if (model.kind() == ModelKind::cibp_vae) model.set_temperature(rec.temperature);
    shuffle_rng.shuffle(order);
    try {
      for (std::size_t start = 0; start < N; start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, N - start);
        const Batch batch = make_batch(splits.train, std::span(order).subspan(start, n));
        const NoiseBundle noise = NoiseBundle::draw(noise_rng, n, K);
        const LossBreakdown lb = model.supervised_loss(batch, noise, static_cast<double>(n) / N);
        const double loss = lb.total.item();
        if (!std::isfinite(loss)) throw TrainingAborted("non-finite loss at epoch " + std::to_string(rec.epoch));
        model.zero_grad();
        lb.total.backward();
        if (clip_gradients(model.parameters(), cfg.clip_norm) > cfg.clip_norm) ++rec.clipped_steps;
        adam_step(model.parameters(), adam, cfg);
        rec.loss += loss * static_cast<double>(n);
        rec.recon += lb.recon;
        rec.stick_kl += lb.stick_kl;
        rec.bernoulli_kl += lb.bernoulli_kl;
        rec.gaussian_kl += lb.gaussian_kl;
        rec.ce += lb.ce;
      }
    } catch (const TrainingAborted& e) {
      result.aborted = true;
      result.diagnostic = e.what();
    } catch (const NumericError& e) {
      result.aborted = true;
      result.diagnostic = std::string("numeric failure at epoch ") + std::to_string(rec.epoch) + ": " + e.what();
    }
    if (result.aborted) break;

    const double dn = static_cast<double>(N);
    for (double* v : {&rec.loss, &rec.recon, &rec.stick_kl, &rec.bernoulli_kl, &rec.gaussian_kl, &rec.ce}) {
      *v /= dn;
    }
    if (!splits.validation.empty()) {
      const EvalMetrics m = evaluate(model, splits.validation, cfg.eval_seed);
      rec.val_accuracy = m.accuracy;
      rec.val_neg_elbo = m.neg_elbo.value_or(0.0);
      rec.val_active_mean = m.active_mean.value_or(0.0);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(rec);
    // Ties on accuracy go to the lower validation negative ELBO.
    const bool better = rec.val_accuracy > result.report.best_val_accuracy ||
                        (rec.val_accuracy == result.report.best_val_accuracy &&
                         rec.val_neg_elbo <= best_neg_elbo);
    if (!have_best || better) {
      best_neg_elbo = rec.val_neg_elbo;
      have_best = true;
      result.report.best_epoch = rec.epoch;
      result.report.best_val_accuracy = rec.val_accuracy;
      result.model = model.clone();
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointMagic = "IBPDCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 8);
  io::put_u32(os, kCheckpointVersion);
  io::put_bytes(os, nlohmann::json(model.config()).dump());
  io::put_u64(os, model.parameters().size());
  for (const auto& p : model.parameters()) {
    io::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    io::put_u32(os, static_cast<std::uint32_t>(p.value.dim()));
    for (std::size_t d : p.value.shape()) io::put_u64(os, d);
    for (double v : p.value.data()) io::put_f64(os, v);
  }
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  const std::string what = "checkpoint " + path.string();
  io::Reader r(is, what);
  r.expect_magic(kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(r.bytes(1u << 20)).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": bad config block: " + e.what());
  }
  Model model(cfg, 0);
  const std::uint64_t count = r.u64();
  if (count != model.parameters().size()) {
    throw FormatError(what + ": expected " + std::to_string(model.parameters().size()) +
                      " parameters, found " + std::to_string(count));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    if (len > 4096) throw FormatError(what + ": parameter name too long");
    std::string name(len, '\0');
    for (auto& c : name) c = static_cast<char>(r.u8());
    if (!model.has_param(name)) throw FormatError(what + ": unknown parameter " + name);
    Tensor& t = model.param(name);
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != t.shape()) {
      throw FormatError(what + ": parameter " + name + " has shape " + shape_str(shape) +
                        ", expected " + shape_str(t.shape()));
    }
    for (double& v : t.mutable_data()) v = r.f64();
  }
  r.expect_end();
  return model;
}

}  // namespace ibpd
