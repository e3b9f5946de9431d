#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ibpd/datasets.hpp"
#include "ibpd/model.hpp"

namespace ibpd {

// Representations ------------------------------------------------------------

struct Representations {
  Tensor y_t;              // [n x trunk width], penultimate task-trunk activations
  Tensor y_c;              // [n x K], Z * A with hard Z (A alone for the c-VAE)
  std::optional<Tensor> Z; // [n x K], cIBP-VAE only
  std::uint64_t seed = 0;
};

Representations extract_representations(const Model& model, std::span<const LabeledExample> examples,
                                        std::uint64_t seed, std::size_t chunk = 256);

// Probes ---------------------------------------------------------------------

struct ProbeConfig {
  // Fraction of rows used to fit the probe; the rest are scored.
  double fit_fraction = 0.7;
  std::uint64_t seed = 0;
  std::size_t max_iters = 500;
  double learning_rate = 0.05;
  double l2 = 1e-4;
  double tolerance = 1e-7;  // relative change of the fit loss that counts as converged
  bool nonlinear = false;   // one hidden relu layer instead of a linear map
  std::size_t hidden = 64;
};

/// Fits a softmax probe on (fit_x, fit_y) with standardized features and
/// returns its accuracy on (eval_x, eval_y). Targets may be any integers; they
/// are remapped to the classes present in fit_y, and evaluation rows whose
/// target never appears in fit_y count as errors.
double probe_fit_eval(const Tensor& fit_x, const std::vector<int>& fit_y, const Tensor& eval_x,
                      const std::vector<int>& eval_y, const ProbeConfig& cfg);

/// Seeded fit/eval partition of the rows followed by probe_fit_eval.
double probe_accuracy(const Tensor& x, const std::vector<int>& y, const ProbeConfig& cfg);

struct ProbeReport {
  // accuracy[rep][target]: rep 0 = y_t, 1 = y_c; target 0 = task, 1 = confounder.
  std::array<std::array<double, 2>, 2> accuracy{};
  std::array<double, 2> chance{};  // 1 / number of distinct target values
  std::array<std::size_t, 2> classes{};
  std::uint64_t seed = 0;

  double at(int rep, int target) const { return accuracy[rep][target]; }
};

ProbeReport probe(const Representations& reps, const std::vector<int>& task_targets,
                  const std::vector<int>& confounder_targets, const ProbeConfig& cfg);

// Reconstruction -------------------------------------------------------------

struct ReconBreakdown {
  double whole = 0.0;                     // over every example and coordinate
  std::optional<double> region_all;       // artifact region, all examples
  std::optional<double> region_clean;     // artifact region, artifact_flag == false
  std::optional<double> region_artifact;  // artifact region, artifact_flag == true
  std::size_t n_clean = 0;
  std::size_t n_artifact = 0;
};

/// Mean squared errors of `recon` against `x` (both [n x D]).
ReconBreakdown recon_breakdown(const Tensor& x, const Tensor& recon, const std::vector<bool>& flags,
                               std::span<const std::size_t> region);

/// Reconstructs every example (hard latents from `seed`, decoder conditioned
/// on the true task label) and scores it.
ReconBreakdown recon_breakdown(const Model& model, std::span<const LabeledExample> examples,
                               std::span<const std::size_t> region, std::uint64_t seed);

// Binary feature statistics -----------------------------------------------------

struct GroupActivity {
  std::size_t n = 0;
  double mean = 0.0;
  std::size_t mode = 0;              // ties resolve to the smaller count
  std::vector<std::size_t> histogram; // histogram[c] = examples with c active units
};

struct ActiveFeatureStats {
  std::array<GroupActivity, 2> group;  // indexed by flag
  GroupActivity overall;
};

ActiveFeatureStats active_feature_stats(const Tensor& Z, const std::vector<bool>& flags);

struct TriggerUnitReport {
  std::vector<double> rate0;          // activation rate per unit, flag == false
  std::vector<double> rate1;          // flag == true
  std::vector<double> gap;            // |rate1 - rate0|
  std::vector<std::size_t> ranking;   // all units, gap descending, index ascending on ties
  std::vector<std::size_t> selected;  // gap >= threshold, in ranking order
  double threshold = 0.9;
};

TriggerUnitReport find_triggering_units(const Tensor& Z, const std::vector<bool>& flags,
                                        double gap_threshold = 0.9);

// Generation -----------------------------------------------------------------

struct UnitOp {
  std::size_t unit = 0;
  bool on = false;
};

/// Ops that move each selected unit to the state it usually has in the
/// flag == false group (off when the unit fires for flagged examples).
std::vector<UnitOp> neutralizing_ops(const TriggerUnitReport& report);
std::vector<UnitOp> all_off_ops(std::size_t K);

/// Encodes x, draws hard latents from `seed`, overwrites the listed Z entries
/// and decodes. The decoder's task input is the one-hot of `labels` when
/// given, otherwise of the model's own predictions. Returns decoder means.
Tensor ablate_generate(const Model& model, const Tensor& x, const std::vector<UnitOp>& ops,
                       std::uint64_t seed, const std::optional<std::vector<int>>& labels = std::nullopt);

Tensor reconstruct(const Model& model, const Tensor& x, std::uint64_t seed,
                   const std::optional<std::vector<int>>& labels = std::nullopt);

/// decode(y_c of x_style, predicted task of x_task), row by row.
Tensor swap_representations(const Model& model, const Tensor& x_style, const Tensor& x_task,
                            std::uint64_t seed);

/// Grid of outputs for every (style, task) pair, style-major: row
/// s * n_task + t combines style source s with task source t.
Tensor swap_grid(const Model& model, const Tensor& style_sources, const Tensor& task_sources,
                 std::uint64_t seed);

std::vector<int> predict_labels(const Model& model, const Tensor& x);

// Color ----------------------------------------------------------------------

/// Planar RGB image of width 2352: the largest mean absolute difference
/// between any two channels. Zero for gray images.
double channel_dominance(std::span<const double> rgb);
/// Index of the channel with the largest mean intensity.
int dominant_channel(std::span<const double> rgb);
/// q-quantile (linear interpolation) of the values.
double quantile(std::vector<double> values, double q);

}  // namespace ibpd
