#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibpd/datasets.hpp"
#include "ibpd/model.hpp"

namespace ibpd {

// Relaxation temperature, linearly interpolated from `start` (first epoch) to
// `end` (last epoch). Equal values give a constant schedule.
struct TemperatureSchedule {
  double start = 0.5;
  double end = 0.5;
  double at(std::size_t epoch, std::size_t epochs) const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Overrides ModelConfig::zeta when set.
  std::optional<double> zeta;
  TemperatureSchedule temperature;
  double clip_norm = 10.0;
  // Seed for the hard latent draws used in validation.
  std::uint64_t eval_seed = 1234;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Per-epoch training record. Loss terms are per-example means over the epoch.
struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double recon = 0.0;
  double stick_kl = 0.0;
  double bernoulli_kl = 0.0;
  double gaussian_kl = 0.0;
  double ce = 0.0;
  double val_accuracy = 0.0;
  double val_neg_elbo = 0.0;
  double val_active_mean = 0.0;
  double temperature = 0.0;
  std::size_t clipped_steps = 0;
  double seconds = 0.0;  // wall clock; excluded from the CSV
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch completed
  double best_val_accuracy = 0.0;
};

/// Columns: epoch,loss,recon,stick_kl,bernoulli_kl,gaussian_kl,ce,
/// val_accuracy,val_neg_elbo,val_active_mean,temperature,clipped_steps.
/// Doubles are printed with 17 significant digits.
void write_report_csv(std::ostream& os, const TrainReport& report);

class TrainingAborted : public Error {
 public:
  explicit TrainingAborted(const std::string& msg) : Error(msg) {}
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One Adam update of every parameter from its accumulated gradient.
/// Throws TrainingAborted naming the first parameter with a non-finite
/// gradient; in that case no parameter is modified.
void adam_step(std::vector<Parameter>& params, AdamState& state, const TrainConfig& cfg);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(std::vector<Parameter>& params, double max_norm);

struct EvalMetrics {
  double accuracy = 0.0;
  std::optional<double> neg_elbo;     // mean per example; absent for the classifier
  std::optional<double> active_mean;  // mean row sum of hard Z; cIBP-VAE only
  std::size_t n = 0;
};

/// Frozen-model metrics with hard latent samples drawn from `seed`. Argmax
/// ties resolve to the lowest class index.
EvalMetrics evaluate(const Model& model, std::span<const LabeledExample> examples,
                     std::uint64_t seed, std::size_t chunk = 256);

struct TrainResult {
  Model model;  // best-validation-accuracy epoch (or the last good state)
  TrainReport report;
  bool aborted = false;
  std::string diagnostic;
};

/// Minibatch training of `init` (which is copied, not modified). Each step
/// draws one global stick sample for the batch plus per-example noise.
TrainResult train(const Model& init, const SplitSet& splits, const TrainConfig& cfg);

// Checkpoints ----------------------------------------------------------------

/// "IBPDCKPT", u32 version, u64-length-prefixed model config JSON, u64
/// parameter count, then per parameter: u32 name length, name, u32 rank, u64
/// dims, little-endian float64 values.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace ibpd
