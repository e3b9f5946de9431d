#include "ibpd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "ibpd/training.hpp"

namespace ibpd {

namespace {

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
  const std::size_t c = m.cols();
  const auto d = m.data();
  std::vector<double> out(idx.size() * c);
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(&d[idx[r] * c], c, &out[r * c]);
  return Tensor::from({idx.size(), c}, std::move(out));
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  std::size_t n = 0, c = parts.at(0).cols();
  for (const auto& p : parts) n += p.rows();
  std::vector<double> out;
  out.reserve(n * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor::from({n, c}, std::move(out));
}

void check_binary_matrix(const Tensor& Z, std::size_t n_flags) {
  if (Z.dim() != 2) throw DimensionError("Z must be a matrix, got " + shape_str(Z.shape()));
  if (Z.rows() != n_flags) throw DimensionError("Z rows and group flags differ in length");
  for (double z : Z.data()) {
    if (z != 0.0 && z != 1.0) throw DomainError("Z must be binary");
  }
}

Tensor decoder_mean(const Model& model, const Tensor& y_c, const std::vector<int>& labels) {
  return model.decode(y_c, one_hot(labels, model.config().task_classes));
}

}  // namespace

Representations extract_representations(const Model& model, std::span<const LabeledExample> examples,
                                        std::uint64_t seed, std::size_t chunk) {
  if (model.kind() == ModelKind::classifier) throw ConfigError("classifier has no confounder code");
  if (examples.empty()) throw DimensionError("no examples to encode");
  NoGradGuard no_grad;
  Rng rng(seed);
  std::vector<Tensor> yt, yc, zs;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, examples.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = make_batch(examples, idx).x;
    const EncoderOutputs enc = model.encode(x);
    const LatentSample lat = model.sample_latent(enc, NoiseBundle::draw(rng, n, model.config().K()), true);
    yt.push_back(model.task_features(x));
    yc.push_back(lat.y_c);
    if (lat.Z) zs.push_back(*lat.Z);
  }
  Representations out{stack_rows(yt), stack_rows(yc), std::nullopt, seed};
  if (!zs.empty()) out.Z = stack_rows(zs);
  return out;
}

// ---------------------------------------------------------------------------
// Probes

double probe_fit_eval(const Tensor& fit_x, const std::vector<int>& fit_y, const Tensor& eval_x,
                      const std::vector<int>& eval_y, const ProbeConfig& cfg) {
  if (fit_x.dim() != 2 || eval_x.dim() != 2 || fit_x.cols() != eval_x.cols()) {
    throw DimensionError("probe features must be matrices of equal width");
  }
  if (fit_x.rows() != fit_y.size() || eval_x.rows() != eval_y.size()) {
    throw DimensionError("probe targets and rows differ in length");
  }
  if (eval_y.empty()) throw DimensionError("empty probe evaluation set");
  std::map<int, int> classes;
  for (int y : fit_y) classes.emplace(y, 0);
  if (classes.size() < 2) throw DomainError("probe target has a single class");
  int next = 0;
  for (auto& [k, v] : classes) v = next++;
  std::vector<int> fit_mapped(fit_y.size());
  for (std::size_t i = 0; i < fit_y.size(); ++i) fit_mapped[i] = classes.at(fit_y[i]);

  const std::size_t n = fit_x.rows(), d = fit_x.cols(), C = classes.size();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  const auto fx = fit_x.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += fx[i * d + j];
  }
  for (auto& m : mu) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) sd[j] += (fx[i * d + j] - mu[j]) * (fx[i * d + j] - mu[j]);
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n));
  auto standardize = [&](const Tensor& x) {
    std::vector<double> v(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        v[i * d + j] = sd[j] > 1e-12 ? (v[i * d + j] - mu[j]) / sd[j] : 0.0;
      }
    }
    return Tensor::from(x.shape(), std::move(v));
  };
  const Tensor xs = standardize(fit_x);
  const Tensor xe = standardize(eval_x);

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  auto init = [&](std::size_t in, std::size_t out) {
    std::vector<double> w(in * out);
    const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * lim;
    return Tensor::from({in, out}, std::move(w), true);
  };
  std::vector<Parameter> params;
  const std::size_t width = cfg.nonlinear ? cfg.hidden : d;
  if (cfg.nonlinear) {
    params.push_back({"hidden/weight", init(d, cfg.hidden)});
    params.push_back({"hidden/bias", Tensor::zeros({cfg.hidden}, true)});
  }
  params.push_back({"out/weight", init(width, C)});
  params.push_back({"out/bias", Tensor::zeros({C}, true)});
  auto forward = [&](const Tensor& x) {
    Tensor h = x;
    if (cfg.nonlinear) h = relu(matmul(h, params[0].value) + params[1].value);
    return matmul(h, params[params.size() - 2].value) + params.back().value;
  };

  NoGradGuard recording(true);
  TrainConfig opt;
  opt.learning_rate = cfg.learning_rate;
  AdamState state;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    Tensor loss = cross_entropy(forward(xs), fit_mapped);
    for (const auto& p : params) {
      if (p.name.ends_with("weight")) loss = loss + cfg.l2 * sum(p.value * p.value);
    }
    for (auto& p : params) p.value.zero_grad();
    loss.backward();
    adam_step(params, state, opt);
    const double l = loss.item();
    if (std::abs(prev - l) <= cfg.tolerance * std::max(1.0, std::abs(l))) break;
    prev = l;
  }

  NoGradGuard no_grad;
  const Tensor logits = forward(xe);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_y.size(); ++i) {
    const auto it = classes.find(eval_y[i]);
    if (it == classes.end()) continue;
    if (static_cast<int>(argmax(logits.data().subspan(i * C, C))) == it->second) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval_y.size());
}

double probe_accuracy(const Tensor& x, const std::vector<int>& y, const ProbeConfig& cfg) {
  if (x.dim() != 2 || x.rows() != y.size()) throw DimensionError("probe rows and targets differ");
  if (!(cfg.fit_fraction > 0 && cfg.fit_fraction < 1)) throw ConfigError("fit_fraction must lie in (0,1)");
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  rng.shuffle(order);
  const auto n_fit = static_cast<std::size_t>(std::llround(cfg.fit_fraction * static_cast<double>(y.size())));
  if (n_fit == 0 || n_fit >= y.size()) throw DimensionError("too few rows to probe");
  const std::span<const std::size_t> fit(order.data(), n_fit);
  const std::span<const std::size_t> ev(order.data() + n_fit, order.size() - n_fit);
  std::vector<int> fy, ey;
  for (std::size_t i : fit) fy.push_back(y[i]);
  for (std::size_t i : ev) ey.push_back(y[i]);
  return probe_fit_eval(gather_rows(x, fit), fy, gather_rows(x, ev), ey, cfg);
}

ProbeReport probe(const Representations& reps, const std::vector<int>& task_targets,
                  const std::vector<int>& confounder_targets, const ProbeConfig& cfg) {
  ProbeReport out;
  out.seed = cfg.seed;
  const std::array<const Tensor*, 2> inputs{&reps.y_t, &reps.y_c};
  const std::array<const std::vector<int>*, 2> targets{&task_targets, &confounder_targets};
  for (int t = 0; t < 2; ++t) {
    std::set<int> distinct(targets[t]->begin(), targets[t]->end());
    out.classes[t] = distinct.size();
    out.chance[t] = 1.0 / static_cast<double>(distinct.size());
    for (int r = 0; r < 2; ++r) out.accuracy[r][t] = probe_accuracy(*inputs[r], *targets[t], cfg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction

ReconBreakdown recon_breakdown(const Tensor& x, const Tensor& recon, const std::vector<bool>& flags,
                               std::span<const std::size_t> region) {
  if (x.shape() != recon.shape() || x.dim() != 2) {
    throw DimensionError("recon_breakdown: shapes " + shape_str(x.shape()) + " and " + shape_str(recon.shape()));
  }
  if (flags.size() != x.rows()) throw DimensionError("recon_breakdown: flag count mismatch");
  const std::size_t n = x.rows(), D = x.cols();
  for (std::size_t i : region) {
    if (i >= D) throw DimensionError("artifact region index out of range");
  }
  const auto a = x.data(), b = recon.data();
  ReconBreakdown out;
  double whole = 0.0;
  std::array<double, 2> reg{0.0, 0.0};
  std::array<std::size_t, 2> count{0, 0};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < D; ++j) {
      const double e = a[r * D + j] - b[r * D + j];
      whole += e * e;
    }
    double s = 0.0;
    for (std::size_t j : region) {
      const double e = a[r * D + j] - b[r * D + j];
      s += e * e;
    }
    reg[flags[r]] += s;
    ++count[flags[r]];
  }
  out.whole = whole / static_cast<double>(n * D);
  out.n_clean = count[0];
  out.n_artifact = count[1];
  if (!region.empty()) {
    const double w = static_cast<double>(region.size());
    out.region_all = (reg[0] + reg[1]) / (w * static_cast<double>(n));
    if (count[0]) out.region_clean = reg[0] / (w * static_cast<double>(count[0]));
    if (count[1]) out.region_artifact = reg[1] / (w * static_cast<double>(count[1]));
  }
  return out;
}

ReconBreakdown recon_breakdown(const Model& model, std::span<const LabeledExample> examples,
                               std::span<const std::size_t> region, std::uint64_t seed) {
  const Batch batch = make_batch(examples);
  std::vector<bool> flags;
  for (const auto& e : examples) flags.push_back(e.artifact_flag);
  return recon_breakdown(batch.x, reconstruct(model, batch.x, seed, batch.labels), flags, region);
}

// ---------------------------------------------------------------------------
// Binary feature statistics

ActiveFeatureStats active_feature_stats(const Tensor& Z, const std::vector<bool>& flags) {
  check_binary_matrix(Z, flags.size());
  const std::size_t K = Z.cols();
  ActiveFeatureStats out;
  for (auto* g : {&out.group[0], &out.group[1], &out.overall}) g->histogram.assign(K + 1, 0);
  const auto z = Z.data();
  for (std::size_t r = 0; r < Z.rows(); ++r) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < K; ++k) c += z[r * K + k] != 0.0;
    for (auto* g : {&out.group[flags[r]], &out.overall}) {
      ++g->histogram[c];
      ++g->n;
      g->mean += static_cast<double>(c);
    }
  }
  for (auto* g : {&out.group[0], &out.group[1], &out.overall}) {
    if (g->n) g->mean /= static_cast<double>(g->n);
    g->mode = static_cast<std::size_t>(
        std::max_element(g->histogram.begin(), g->histogram.end()) - g->histogram.begin());
  }
  return out;
}

TriggerUnitReport find_triggering_units(const Tensor& Z, const std::vector<bool>& flags,
                                        double gap_threshold) {
  check_binary_matrix(Z, flags.size());
  const std::size_t K = Z.cols();
  std::array<std::size_t, 2> n{0, 0};
  for (bool f : flags) ++n[f];
  if (n[0] == 0 || n[1] == 0) throw DomainError("find_triggering_units needs both groups non-empty");
  TriggerUnitReport out;
  out.threshold = gap_threshold;
  out.rate0.assign(K, 0.0);
  out.rate1.assign(K, 0.0);
  const auto z = Z.data();
  for (std::size_t r = 0; r < Z.rows(); ++r) {
    auto& rate = flags[r] ? out.rate1 : out.rate0;
    for (std::size_t k = 0; k < K; ++k) rate[k] += z[r * K + k];
  }
  for (std::size_t k = 0; k < K; ++k) {
    out.rate0[k] /= static_cast<double>(n[0]);
    out.rate1[k] /= static_cast<double>(n[1]);
    out.gap.push_back(std::abs(out.rate1[k] - out.rate0[k]));
  }
  out.ranking.resize(K);
  std::iota(out.ranking.begin(), out.ranking.end(), 0);
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return out.gap[a] > out.gap[b]; });
  for (std::size_t k : out.ranking) {
    if (out.gap[k] >= gap_threshold) out.selected.push_back(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

std::vector<UnitOp> neutralizing_ops(const TriggerUnitReport& report) {
  std::vector<UnitOp> ops;
  for (std::size_t k : report.selected) ops.push_back({k, report.rate0[k] > report.rate1[k]});
  return ops;
}

std::vector<UnitOp> all_off_ops(std::size_t K) {
  std::vector<UnitOp> ops;
  for (std::size_t k = 0; k < K; ++k) ops.push_back({k, false});
  return ops;
}

std::vector<int> predict_labels(const Model& model, const Tensor& x) {
  NoGradGuard no_grad;
  const Tensor logits = model.encode(x).task_logits;
  const std::size_t T = logits.cols();
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = static_cast<int>(argmax(logits.data().subspan(r * T, T)));
  }
  return out;
}

Tensor ablate_generate(const Model& model, const Tensor& x, const std::vector<UnitOp>& ops,
                       std::uint64_t seed, const std::optional<std::vector<int>>& labels) {
  if (model.kind() == ModelKind::classifier) throw ConfigError("classifier cannot generate");
  const std::size_t K = model.config().K();
  for (const auto& op : ops) {
    if (op.unit >= K) {
      throw DimensionError("unit " + std::to_string(op.unit) + " out of range for K=" + std::to_string(K));
    }
  }
  if (!ops.empty() && model.kind() != ModelKind::cibp_vae) {
    throw ConfigError("unit ablation needs a model with binary features");
  }
  NoGradGuard no_grad;
  const EncoderOutputs enc = model.encode(x);
  Rng rng(seed);
  const LatentSample lat = model.sample_latent(enc, NoiseBundle::draw(rng, x.rows(), K), true);
  Tensor y_c = lat.y_c;
  if (!ops.empty()) {
    std::vector<double> z(lat.Z->data().begin(), lat.Z->data().end());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (const auto& op : ops) z[r * K + op.unit] = op.on ? 1.0 : 0.0;
    }
    y_c = Tensor::from(lat.Z->shape(), std::move(z)) * lat.A;
  }
  if (labels && labels->size() != x.rows()) throw DimensionError("label count mismatch");
  return decoder_mean(model, y_c, labels ? *labels : predict_labels(model, x));
}

Tensor reconstruct(const Model& model, const Tensor& x, std::uint64_t seed,
                   const std::optional<std::vector<int>>& labels) {
  return ablate_generate(model, x, {}, seed, labels);
}

Tensor swap_representations(const Model& model, const Tensor& x_style, const Tensor& x_task,
                            std::uint64_t seed) {
  if (model.kind() == ModelKind::classifier) throw ConfigError("classifier cannot generate");
  if (x_style.shape() != x_task.shape()) throw DimensionError("swap sources differ in shape");
  NoGradGuard no_grad;
  const EncoderOutputs enc = model.encode(x_style);
  Rng rng(seed);
  const LatentSample lat = model.sample_latent(enc, NoiseBundle::draw(rng, x_style.rows(), model.config().K()), true);
  return decoder_mean(model, lat.y_c, predict_labels(model, x_task));
}

Tensor swap_grid(const Model& model, const Tensor& style_sources, const Tensor& task_sources,
                 std::uint64_t seed) {
  const std::size_t S = style_sources.rows(), T = task_sources.rows();
  std::vector<std::size_t> si, ti;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      si.push_back(s);
      ti.push_back(t);
    }
  }
  // Each style source keeps a single latent draw across its row of the grid.
  NoGradGuard no_grad;
  const EncoderOutputs enc = model.encode(style_sources);
  Rng rng(seed);
  const LatentSample lat = model.sample_latent(enc, NoiseBundle::draw(rng, S, model.config().K()), true);
  const std::vector<int> task_labels = predict_labels(model, task_sources);
  std::vector<int> labels;
  for (std::size_t t : ti) labels.push_back(task_labels[t]);
  return decoder_mean(model, gather_rows(lat.y_c, si), labels);
}

// ---------------------------------------------------------------------------
// Color

double channel_dominance(std::span<const double> rgb) {
  if (rgb.size() != kColorDigitDim) throw DimensionError("channel_dominance expects 2352 values");
  std::array<double, 3> d{0.0, 0.0, 0.0};  // RG, RB, GB
  for (std::size_t i = 0; i < kDigitPixels; ++i) {
    const double r = rgb[i], g = rgb[kDigitPixels + i], b = rgb[2 * kDigitPixels + i];
    d[0] += std::abs(r - g);
    d[1] += std::abs(r - b);
    d[2] += std::abs(g - b);
  }
  return *std::max_element(d.begin(), d.end()) / static_cast<double>(kDigitPixels);
}

int dominant_channel(std::span<const double> rgb) {
  if (rgb.size() != kColorDigitDim) throw DimensionError("dominant_channel expects 2352 values");
  std::array<double, 3> s{0.0, 0.0, 0.0};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < kDigitPixels; ++i) s[c] += rgb[c * kDigitPixels + i];
  }
  return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DimensionError("quantile of an empty set");
  if (!(q >= 0 && q <= 1)) throw DomainError("quantile level must lie in [0,1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace ibpd
