#include "ibpd/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ibpd/analysis.hpp"
#include "ibpd/datasets.hpp"
#include "ibpd/export.hpp"
#include "ibpd/training.hpp"

extern char** environ;

namespace ibpd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json convert_like(const json& like, const std::string& key, const std::string& text) {
  try {
    if (like.is_string()) return text;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("");
    }
    if (like.is_number_unsigned()) {
      if (text.empty() || text[0] == '-') throw ConfigError("");
      std::size_t pos = 0;
      const auto v = std::stoull(text, &pos);
      if (pos != text.size()) throw ConfigError("");
      return v;
    }
    if (like.is_number()) {
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (pos != text.size()) throw ConfigError("");
      return v;
    }
    // Arrays, objects and nulls take JSON text.
    return json::parse(text);
  } catch (const std::exception&) {
    throw ConfigError("bad value '" + text + "' for " + key);
  }
}

void merge_checked(json& dst, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config " + (path.empty() ? "document" : path) + " must be an object");
  for (const auto& [k, v] : patch.items()) {
    const std::string key = path.empty() ? k : path + "." + k;
    if (!dst.contains(k)) throw ConfigError("unknown config key " + key);
    if (dst[k].is_object() && !dst[k].empty()) {
      merge_checked(dst[k], v, key);
    } else {
      dst[k] = v;
    }
  }
}

struct Context {
  json cfg;
  fs::path out_dir;
  std::ostream& out;
  std::ostream& err;
};

fs::path dataset_path(const Context& c) {
  const auto s = c.cfg["dataset"].get<std::string>();
  return s.empty() ? c.out_dir / "dataset.bin" : fs::path(s);
}

fs::path checkpoint_path(const Context& c) {
  const auto s = c.cfg["checkpoint"].get<std::string>();
  return s.empty() ? c.out_dir / "model.ckpt" : fs::path(s);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << text;
  if (!os) throw Error("failed writing " + p.string());
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// ---------------------------------------------------------------------------
// Data

struct LoadedData {
  std::vector<LabeledExample> examples;
  json header;
  SplitSet splits;
  std::size_t task_classes = 0;
  std::vector<std::size_t> artifact_region;
};

LoadedData load_data(const Context& c) {
  const fs::path p = dataset_path(c);
  if (!fs::exists(p)) throw Error("dataset file not found: " + p.string() + " (run `ibpd generate` first)");
  LoadedData d;
  d.examples = load_dataset(p, &d.header);
  if (d.examples.empty()) throw Error("dataset " + p.string() + " is empty");
  d.task_classes = d.header.value("task_classes", std::size_t{0});
  for (const auto& e : d.examples) {
    d.task_classes = std::max(d.task_classes, static_cast<std::size_t>(e.task_label) + 1);
  }
  if (d.header.value("preset", std::string()) == "synth-ecg") {
    d.artifact_region = d.header.at("data").get<SynthEcgConfig>().artifact_region();
  }
  std::set<int> subjects;
  for (const auto& e : d.examples) subjects.insert(e.subject_id);
  const auto fr = c.cfg["split"]["fractions"].get<std::vector<double>>();
  if (fr.size() != 3) throw ConfigError("split.fractions needs three values");
  d.splits = split_by_subject(d.examples, {fr[0], fr[1], fr[2]}, c.cfg["split"]["seed"].get<std::uint64_t>(),
                              subjects.size() < 3);
  return d;
}

std::span<const LabeledExample> analysis_split(const Context& c, const LoadedData& d) {
  const auto which = c.cfg["analysis"]["split"].get<std::string>();
  if (which == "train") return d.splits.train;
  if (which == "validation") return d.splits.validation;
  if (which == "test") return d.splits.test;
  throw ConfigError("analysis.split must be train, validation or test");
}

Model load_model_for(const Context& c, const LoadedData& d) {
  Model m = load_checkpoint(checkpoint_path(c));
  const std::size_t width = d.examples[0].x.size();
  if (m.config().input_dim != width) {
    throw Error("checkpoint input_dim " + std::to_string(m.config().input_dim) +
                " does not match dataset width " + std::to_string(width));
  }
  if (m.config().task_classes != d.task_classes) {
    throw Error("checkpoint has " + std::to_string(m.config().task_classes) + " task classes, dataset has " +
                std::to_string(d.task_classes));
  }
  const auto K = c.cfg["model"]["ibp"]["K"].get<std::size_t>();
  if (m.config().K() != K) {
    throw Error("checkpoint K=" + std::to_string(m.config().K()) + " differs from configured model.ibp.K=" +
                std::to_string(K));
  }
  return m;
}

bool is_color_image(std::size_t width) { return width == kColorDigitDim; }

Image as_image(std::span<const double> v) {
  if (v.size() == kColorDigitDim) return image_from_values(v, kDigitSide, kDigitSide, 3);
  if (v.size() == kDigitPixels) return image_from_values(v, kDigitSide, kDigitSide, 1);
  throw DimensionError("not an image of known size");
}

void write_matrix_csv(const fs::path& p, const Tensor& m, const std::vector<std::string>& row_names) {
  std::ofstream os(p);
  if (!os) throw Error("cannot write " + p.string());
  CsvWriter w(os);
  std::vector<std::string> header{"row"};
  for (std::size_t j = 0; j < m.cols(); ++j) header.push_back("v" + std::to_string(j));
  w.row(header);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<std::string> f{row_names.at(r)};
    for (std::size_t j = 0; j < m.cols(); ++j) f.push_back(csv_number(m.data()[r * m.cols() + j]));
    w.row(f);
  }
}

// Images go to a tiled PPM/PGM; signals to one SVG per row.
void export_rows(const fs::path& stem, const std::vector<std::pair<std::string, Tensor>>& blocks,
                 std::size_t cols) {
  const std::size_t width = blocks.at(0).second.cols();
  if (is_color_image(width) || width == kDigitPixels) {
    std::vector<Image> tiles;
    for (const auto& [name, t] : blocks) {
      for (std::size_t r = 0; r < t.rows(); ++r) tiles.push_back(as_image(t.data().subspan(r * width, width)));
    }
    const std::size_t rows = tiles.size() / cols;
    write_pnm(stem.string() + (is_color_image(width) ? ".ppm" : ".pgm"), tile_images(tiles, rows, cols));
    return;
  }
  for (std::size_t r = 0; r < blocks[0].second.rows(); ++r) {
    std::vector<Series> series;
    for (const auto& [name, t] : blocks) {
      const auto row = t.data().subspan(r * width, width);
      series.push_back({name, {row.begin(), row.end()}});
    }
    write_svg_plot(stem.string() + "_" + std::to_string(r) + ".svg", series, stem.filename().string());
  }
}

Tensor head_rows(std::span<const LabeledExample> ex, std::size_t n, std::vector<int>* labels = nullptr) {
  n = std::min(n, ex.size());
  const Batch b = make_batch(ex.subspan(0, n));
  if (labels) *labels = b.labels;
  return b.x;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(Context& c) {
  const auto preset = c.cfg["preset"].get<std::string>();
  std::vector<LabeledExample> examples;
  json header{{"preset", preset}};
  if (preset == "synth-ecg") {
    const auto dc = c.cfg["data"].get<SynthEcgConfig>();
    examples = synth_ecg_generate(dc);
    header["data"] = dc;
    header["task_classes"] = dc.task_classes;
  } else if (preset == "colored-digits") {
    const json& dg = c.cfg["digits"];
    const fs::path dir = dg["mnist_dir"].get<std::string>();
    const fs::path img = dir / "train-images-idx3-ubyte", lab = dir / "train-labels-idx1-ubyte";
    const auto n_images = dg["n_images"].get<std::size_t>();
    Tensor images;
    std::vector<int> labels;
    if (!dir.empty() && fs::exists(img) && fs::exists(lab)) {
      Tensor all = idx_read_images(img);
      labels = idx_read_labels(lab);
      if (labels.size() != all.shape()[0]) throw FormatError("MNIST image and label counts differ");
      const std::size_t n = std::min(n_images, labels.size());
      labels.resize(n);
      images = Tensor::from({n, kDigitSide, kDigitSide},
                            std::vector<double>(all.data().begin(), all.data().begin() + static_cast<std::ptrdiff_t>(n * kDigitPixels)));
      header["source"] = "mnist";
    } else {
      c.err << "warning: MNIST IDX files not found in '" << dir.string()
            << "'; using the built-in synthetic 10-glyph set\n";
      std::tie(images, labels) = synth_glyphs(n_images, dg["glyph_seed"].get<std::uint64_t>());
      header["source"] = "synthetic-glyphs";
    }
    ColorizeConfig cc;
    cc.colored_fraction = dg["colored_fraction"].get<double>();
    cc.seed = dg["seed"].get<std::uint64_t>();
    examples = colorize_digits(images, labels, cc);
    header["digits"] = dg;
    header["task_classes"] = 10;
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected synth-ecg|colored-digits)");
  }
  fs::create_directories(c.out_dir);
  const fs::path p = dataset_path(c);
  save_dataset(p, examples, header);

  std::size_t flagged = 0;
  for (const auto& e : examples) flagged += e.artifact_flag;
  // Output locations do not change the data, so they stay out of the hash.
  json hashed = c.cfg;
  for (const char* k : {"out", "dataset", "checkpoint"}) hashed.erase(k);
  const std::string resolved = hashed.dump(2);
  json manifest{{"preset", preset},
                {"dataset", p.filename().string()},
                {"examples", examples.size()},
                {"input_dim", examples.empty() ? 0 : examples[0].x.size()},
                {"config_hash_fnv1a64", hex64(fnv1a64(resolved))},
                {"flagged_fraction", examples.empty() ? 0.0 : static_cast<double>(flagged) / static_cast<double>(examples.size())},
                {"timestamp_utc", utc_timestamp()}};
  if (preset == "synth-ecg") {
    manifest["seed"] = c.cfg["data"]["seed"];
    manifest["artifact_fraction"] = c.cfg["data"]["artifact_fraction"];
  } else {
    manifest["seed"] = c.cfg["digits"]["seed"];
    manifest["colored_fraction"] = c.cfg["digits"]["colored_fraction"];
    manifest["source"] = header["source"];
  }
  write_text(c.out_dir / "manifest.json", manifest.dump(2) + "\n");
  c.out << "wrote " << examples.size() << " examples to " << p.string() << "\n";
  return kExitOk;
}

int cmd_train(Context& c) {
  LoadedData d = load_data(c);
  ModelConfig mc = c.cfg["model"].get<ModelConfig>();
  mc.input_dim = d.examples[0].x.size();
  mc.task_classes = d.task_classes;
  const auto tc = c.cfg["train"].get<TrainConfig>();
  const Model init(mc, c.cfg["model_seed"].get<std::uint64_t>());
  TrainResult r = train(init, d.splits, tc);
  fs::create_directories(c.out_dir);
  save_checkpoint(r.model, checkpoint_path(c));
  {
    std::ofstream os(c.out_dir / "report.csv");
    write_report_csv(os, r.report);
  }
  json summary{{"model", to_string(mc.kind)},
               {"best_epoch", r.report.best_epoch},
               {"best_val_accuracy", r.report.best_val_accuracy},
               {"epochs_completed", r.report.epochs.size()},
               {"aborted", r.aborted},
               {"diagnostic", r.diagnostic},
               {"parameter_count", r.model.parameter_count()}};
  if (r.aborted) {
    // The data that broke training would break evaluation too.
    summary["timestamp_utc"] = utc_timestamp();
    write_text(c.out_dir / "summary.json", summary.dump(2) + "\n");
    c.err << "error: training aborted: " << r.diagnostic << " (last good checkpoint kept)\n";
    return kExitRuntime;
  }
  const EvalMetrics test = evaluate(r.model, d.splits.test, tc.eval_seed);
  summary["test_accuracy"] = test.accuracy;
  if (test.neg_elbo) summary["test_neg_elbo"] = *test.neg_elbo;
  if (test.active_mean) summary["test_active_mean"] = *test.active_mean;
  summary["timestamp_utc"] = utc_timestamp();
  write_text(c.out_dir / "summary.json", summary.dump(2) + "\n");
  double seconds = 0.0;
  for (const auto& e : r.report.epochs) seconds += e.seconds;
  c.out << to_string(mc.kind) << ": " << r.report.epochs.size() << " epochs in " << seconds << " s, best epoch "
        << r.report.best_epoch << ", test accuracy " << test.accuracy << "\n";
  return kExitOk;
}

std::vector<int> confounder_targets(std::span<const LabeledExample> ex) {
  std::set<int> subjects;
  for (const auto& e : ex) subjects.insert(e.subject_id);
  std::vector<int> y;
  for (const auto& e : ex) y.push_back(subjects.size() > 1 ? e.subject_id : e.color_id.value_or(e.artifact_flag));
  return y;
}

int cmd_probe(Context& c) {
  const LoadedData d = load_data(c);
  const Model m = load_model_for(c, d);
  const json& a = c.cfg["analysis"];
  // Subject-disjoint splits leave no overlap between training and test
  // subjects, so probes are fit and scored on a partition of the training split.
  const auto reps = extract_representations(m, d.splits.train, a["seed"].get<std::uint64_t>());
  std::vector<int> task;
  for (const auto& e : d.splits.train) task.push_back(e.task_label);
  ProbeConfig pc;
  pc.seed = a["probe_seed"].get<std::uint64_t>();
  pc.nonlinear = a["probe_nonlinear"].get<bool>();
  const ProbeReport pr = probe(reps, task, confounder_targets(d.splits.train), pc);
  fs::create_directories(c.out_dir);
  std::ofstream os(c.out_dir / "probe.csv");
  CsvWriter w(os);
  w.row({"representation", "task", "confounder"});
  w.row({"y_t", csv_number(pr.at(0, 0)), csv_number(pr.at(0, 1))});
  w.row({"y_c", csv_number(pr.at(1, 0)), csv_number(pr.at(1, 1))});
  w.row({"random", csv_number(pr.chance[0]), csv_number(pr.chance[1])});
  c.out << "probe: y_t->task " << pr.at(0, 0) << ", y_c->task " << pr.at(1, 0) << ", y_t->confounder "
        << pr.at(0, 1) << ", y_c->confounder " << pr.at(1, 1) << "\n";
  return kExitOk;
}

int cmd_recon(Context& c) {
  const LoadedData d = load_data(c);
  const Model m = load_model_for(c, d);
  const auto ex = analysis_split(c, d);
  const auto seed = c.cfg["analysis"]["seed"].get<std::uint64_t>();
  const ReconBreakdown rb = recon_breakdown(m, ex, d.artifact_region, seed);
  fs::create_directories(c.out_dir);
  {
    std::ofstream os(c.out_dir / "recon.csv");
    CsvWriter w(os);
    auto opt = [](const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); };
    w.row({"model", "whole", "region_all", "region_non_stimulus", "region_stimulus", "n_non_stimulus", "n_stimulus"});
    w.row({to_string(m.kind()), csv_number(rb.whole), opt(rb.region_all), opt(rb.region_clean),
           opt(rb.region_artifact), std::to_string(rb.n_clean), std::to_string(rb.n_artifact)});
  }
  std::vector<int> labels;
  const Tensor x = head_rows(ex, c.cfg["analysis"]["n_examples"].get<std::size_t>(), &labels);
  const Tensor rec = reconstruct(m, x, seed, labels);
  export_rows(c.out_dir / "recon", {{"input", x}, {"reconstruction", rec}}, x.rows());
  c.out << "recon: whole " << rb.whole << "\n";
  return kExitOk;
}

Tensor hard_z(const Context& c, const Model& m, std::span<const LabeledExample> ex) {
  const auto reps = extract_representations(m, ex, c.cfg["analysis"]["seed"].get<std::uint64_t>());
  if (!reps.Z) throw ConfigError("model " + to_string(m.kind()) + " has no binary features");
  return *reps.Z;
}

std::vector<bool> flags_of(std::span<const LabeledExample> ex) {
  std::vector<bool> f;
  for (const auto& e : ex) f.push_back(e.artifact_flag);
  return f;
}

int cmd_features(Context& c) {
  const LoadedData d = load_data(c);
  const Model m = load_model_for(c, d);
  const auto ex = analysis_split(c, d);
  const ActiveFeatureStats st = active_feature_stats(hard_z(c, m, ex), flags_of(ex));
  fs::create_directories(c.out_dir);
  std::ofstream os(c.out_dir / "features.csv");
  CsvWriter w(os);
  w.row({"group", "n", "mean_active", "mode_active"});
  const std::array<std::pair<const char*, const GroupActivity*>, 3> groups{
      {{"unflagged", &st.group[0]}, {"flagged", &st.group[1]}, {"all", &st.overall}}};
  for (const auto& [name, g] : groups) {
    w.row({name, std::to_string(g->n), csv_number(g->mean), std::to_string(g->mode)});
  }
  std::ofstream hs(c.out_dir / "features_histogram.csv");
  CsvWriter hw(hs);
  hw.row({"active_count", "unflagged", "flagged"});
  for (std::size_t k = 0; k < st.overall.histogram.size(); ++k) {
    hw.row({std::to_string(k), std::to_string(st.group[0].histogram[k]), std::to_string(st.group[1].histogram[k])});
  }
  c.out << "features: mode unflagged " << st.group[0].mode << ", flagged " << st.group[1].mode << "\n";
  return kExitOk;
}

TriggerUnitReport trigger_report(const Context& c, const Model& m, std::span<const LabeledExample> ex) {
  return find_triggering_units(hard_z(c, m, ex), flags_of(ex), c.cfg["analysis"]["gap_threshold"].get<double>());
}

int cmd_trigger(Context& c) {
  const LoadedData d = load_data(c);
  const Model m = load_model_for(c, d);
  const TriggerUnitReport tr = trigger_report(c, m, analysis_split(c, d));
  fs::create_directories(c.out_dir);
  std::ofstream os(c.out_dir / "trigger.csv");
  CsvWriter w(os);
  w.row({"rank", "unit", "rate_unflagged", "rate_flagged", "gap", "selected"});
  for (std::size_t i = 0; i < tr.ranking.size(); ++i) {
    const std::size_t k = tr.ranking[i];
    w.row({std::to_string(i), std::to_string(k), csv_number(tr.rate0[k]), csv_number(tr.rate1[k]),
           csv_number(tr.gap[k]), tr.gap[k] >= tr.threshold ? "1" : "0"});
  }
  c.out << "trigger: " << tr.selected.size() << " unit(s) at gap >= " << tr.threshold << "\n";
  return kExitOk;
}

int cmd_ablate(Context& c) {
  const LoadedData d = load_data(c);
  const Model m = load_model_for(c, d);
  const auto ex = analysis_split(c, d);
  const json& a = c.cfg["analysis"];
  const auto units = a["units"].get<std::string>();
  std::vector<UnitOp> ops;
  if (units == "all-off") {
    ops = all_off_ops(m.config().K());
  } else if (units == "trigger") {
    ops = neutralizing_ops(trigger_report(c, m, ex));
    if (ops.empty()) c.err << "warning: no triggering unit reaches the gap threshold; output equals reconstruction\n";
  } else {
    std::stringstream ss(units);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        ops.push_back({static_cast<std::size_t>(std::stoul(tok)), false});
      } catch (const std::exception&) {
        throw ConfigError("analysis.units must be all-off, trigger or a comma-separated unit list");
      }
    }
  }
  // Flagged examples first: those are the ones ablation should change.
  std::vector<LabeledExample> chosen;
  for (const auto& e : ex) {
    if (e.artifact_flag) chosen.push_back(e);
  }
  for (const auto& e : ex) {
    if (!e.artifact_flag) chosen.push_back(e);
  }
  const Tensor x = head_rows(chosen, a["n_examples"].get<std::size_t>());
  const auto seed = a["seed"].get<std::uint64_t>();
  const Tensor gen = ablate_generate(m, x, ops, seed);
  const Tensor rec = reconstruct(m, x, seed);
  fs::create_directories(c.out_dir);
  std::vector<std::string> names;
  for (std::size_t r = 0; r < x.rows(); ++r) names.push_back("example" + std::to_string(r));
  write_matrix_csv(c.out_dir / "ablate.csv", gen, names);
  export_rows(c.out_dir / "ablate", {{"input", x}, {"reconstruction", rec}, {"ablated", gen}}, x.rows());
  c.out << "ablate: " << ops.size() << " unit op(s) on " << x.rows() << " example(s)\n";
  return kExitOk;
}

int cmd_swap(Context& c) {
  const LoadedData d = load_data(c);
  const Model m = load_model_for(c, d);
  const auto ex = analysis_split(c, d);
  const auto grid = c.cfg["analysis"]["grid"].get<std::string>();
  std::size_t n_task = 0, n_style = 0;
  char sep = 0;
  std::istringstream gs(grid);
  if (!(gs >> n_task >> sep >> n_style) || sep != 'x' || n_task == 0 || n_style == 0) {
    throw ConfigError("analysis.grid must look like 10x4");
  }
  // Task sources: first example of each label in turn. Style sources: one per
  // color when colors exist, otherwise one per subject, then anything.
  std::vector<LabeledExample> tasks, styles;
  std::set<int> seen_label, seen_style;
  for (const auto& e : ex) {
    if (tasks.size() < n_task && seen_label.insert(e.task_label).second) tasks.push_back(e);
  }
  for (const auto& e : ex) {
    const int key = e.color_id ? *e.color_id : e.subject_id * 2 + e.artifact_flag;
    if (styles.size() < n_style && seen_style.insert(key).second) styles.push_back(e);
  }
  for (std::size_t i = 0; tasks.size() < n_task && i < ex.size(); ++i) tasks.push_back(ex[i]);
  for (std::size_t i = 0; styles.size() < n_style && i < ex.size(); ++i) styles.push_back(ex[i]);
  if (tasks.size() < n_task || styles.size() < n_style) throw Error("not enough examples for the swap grid");
  const Tensor out = swap_grid(m, make_batch(styles).x, make_batch(tasks).x, c.cfg["analysis"]["seed"].get<std::uint64_t>());
  fs::create_directories(c.out_dir);
  std::vector<std::string> names;
  for (std::size_t s = 0; s < n_style; ++s) {
    for (std::size_t t = 0; t < n_task; ++t) names.push_back("style" + std::to_string(s) + "_task" + std::to_string(t));
  }
  write_matrix_csv(c.out_dir / "swap.csv", out, names);
  const std::size_t width = out.cols();
  if (is_color_image(width) || width == kDigitPixels) {
    std::vector<Image> tiles;
    for (std::size_t r = 0; r < out.rows(); ++r) tiles.push_back(as_image(out.data().subspan(r * width, width)));
    write_pnm(c.out_dir / (is_color_image(width) ? "swap.ppm" : "swap.pgm"), tile_images(tiles, n_style, n_task));
  } else {
    std::vector<Series> series;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      const auto row = out.data().subspan(r * width, width);
      series.push_back({names[r], {row.begin(), row.end()}});
    }
    write_svg_plot(c.out_dir / "swap.svg", series, "swap grid");
  }
  c.out << "swap: " << n_style << " x " << n_task << " grid\n";
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

json default_run_config() {
  ModelConfig mc;
  TrainConfig tc;
  return json{
      {"preset", "synth-ecg"},
      {"out", "ibpd-out"},
      {"dataset", ""},
      {"checkpoint", ""},
      {"model_seed", 0},
      {"data", SynthEcgConfig{}},
      {"digits",
       {{"mnist_dir", ""}, {"n_images", 6000}, {"colored_fraction", 0.75}, {"seed", 11}, {"glyph_seed", 5}}},
      {"split", {{"fractions", {0.6, 0.2, 0.2}}, {"seed", 1}}},
      {"model", mc},
      {"train", tc},
      {"analysis",
       {{"seed", 9},
        {"probe_seed", 0},
        {"probe_nonlinear", false},
        {"gap_threshold", 0.9},
        {"split", "test"},
        {"n_examples", 8},
        {"units", "trigger"},
        {"grid", "10x4"}}}};
}

void set_config_value(json& cfg, const std::string& dotted_key, const std::string& value) {
  json* node = &cfg;
  std::string part;
  std::stringstream ss(dotted_key);
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty config key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("unknown config key " + dotted_key);
    node = &(*node)[parts[i]];
  }
  if (!node->is_object() || !node->contains(parts.back())) throw ConfigError("unknown config key " + dotted_key);
  json& slot = (*node)[parts.back()];
  if (slot.is_object() && !slot.empty()) throw ConfigError(dotted_key + " is a section, not a value");
  slot = convert_like(slot, dotted_key, value);
}

void apply_env_overrides(json& cfg, const std::vector<std::pair<std::string, std::string>>& env) {
  for (const auto& [name, value] : env) {
    if (name.rfind("IBPD_", 0) != 0) continue;
    std::string key = name.substr(5);
    for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const auto us = key.find('_');
    if (us != std::string::npos && cfg.contains(key.substr(0, us)) && cfg[key.substr(0, us)].is_object()) {
      key[us] = '.';
    }
    set_config_value(cfg, key, value);
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Disentangling task and confounding factors with an IBP-VAE", "ibpd"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate", "write a synthetic dataset (presets synth-ecg, colored-digits)"},
      {"train", "train cibp-vae, c-vae or classifier"},
      {"probe", "linear probes of y_t and y_c"},
      {"recon", "reconstruction error breakdown"},
      {"features", "active binary feature counts per group"},
      {"trigger", "binary units that track the flagged group"},
      {"ablate", "generate with binary units switched off"},
      {"swap", "combine y_c and y_t from different examples"}};
  std::string config_file;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_file, "JSON config file");
    sub->allow_extras();
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  CLI::App* sub = app.get_subcommands().at(0);
  const std::string command = sub->get_name();

  json cfg = default_run_config();
  try {
    if (!config_file.empty()) {
      std::ifstream is(config_file);
      if (!is) throw UsageError("cannot read config file " + config_file);
      json patch;
      try {
        patch = json::parse(is);
      } catch (const json::exception& e) {
        throw UsageError("config file " + config_file + " is not valid JSON: " + e.what());
      }
      merge_checked(cfg, patch, "");
    }
    std::vector<std::pair<std::string, std::string>> env;
    for (char** e = environ; e && *e; ++e) {
      const std::string kv = *e;
      const auto eq = kv.find('=');
      if (eq != std::string::npos) env.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    apply_env_overrides(cfg, env);

    const std::map<std::string, std::string> aliases{
        {"preset", "preset"},       {"model", "model.kind"},          {"mnist-dir", "digits.mnist_dir"},
        {"units", "analysis.units"}, {"grid", "analysis.grid"},        {"out", "out"},
        {"dataset", "dataset"},     {"checkpoint", "checkpoint"},     {"epochs", "train.epochs"}};
    const auto rest = sub->remaining();
    for (std::size_t i = 0; i < rest.size(); ++i) {
      std::string key = rest[i];
      if (key.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + key + "'");
      key = key.substr(2);
      std::string value;
      if (const auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= rest.size()) throw UsageError("option --" + key + " needs a value");
        value = rest[++i];
      }
      if (key == "seed") {
        if (command == "generate") {
          set_config_value(cfg, cfg["preset"] == "colored-digits" ? "digits.seed" : "data.seed", value);
        } else if (command == "train") {
          set_config_value(cfg, "train.seed", value);
        } else {
          set_config_value(cfg, "analysis.seed", value);
        }
        continue;
      }
      const auto it = aliases.find(key);
      set_config_value(cfg, it != aliases.end() ? it->second : key, value);
    }
    // Validate sections early so bad values are usage errors.
    cfg["data"].get<SynthEcgConfig>().validate();
    cfg["model"].get<ModelConfig>().validate();
    cfg["train"].get<TrainConfig>().validate();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  Context c{cfg, fs::path(cfg["out"].get<std::string>()), out, err};
  try {
    fs::create_directories(c.out_dir);
    write_text(c.out_dir / ("config." + command + ".json"), cfg.dump(2) + "\n");
    if (command == "generate") return cmd_generate(c);
    if (command == "train") return cmd_train(c);
    if (command == "probe") return cmd_probe(c);
    if (command == "recon") return cmd_recon(c);
    if (command == "features") return cmd_features(c);
    if (command == "trigger") return cmd_trigger(c);
    if (command == "ablate") return cmd_ablate(c);
    if (command == "swap") return cmd_swap(c);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace ibpd
