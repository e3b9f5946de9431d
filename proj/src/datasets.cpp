#include "ibpd/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "binary_io.hpp"

namespace ibpd {

// ---------------------------------------------------------------------------
// Synthetic ECG

void SynthEcgConfig::validate() const {
  if (n_subjects == 0 || beats_per_subject == 0 || n_leads == 0 || samples_per_lead == 0 ||
      task_classes == 0) {
    throw ConfigError("synthetic ECG counts must be positive");
  }
  if (!(artifact_fraction >= 0.0 && artifact_fraction <= 1.0)) {
    throw ConfigError("artifact_fraction must lie in [0,1]");
  }
  if (!(noise_std >= 0.0) || !(subject_morphology_scale >= 0.0)) {
    throw ConfigError("noise_std and subject_morphology_scale must be non-negative");
  }
}

std::vector<std::size_t> SynthEcgConfig::artifact_region() const {
  std::vector<std::size_t> idx;
  const std::size_t start = artifact_position == ArtifactPosition::prepend ? 0 : samples_per_lead;
  for (std::size_t l = 0; l < n_leads; ++l) {
    for (std::size_t t = 0; t < artifact_width; ++t) idx.push_back(l * lead_length() + start + t);
  }
  return idx;
}

void to_json(nlohmann::json& j, const SynthEcgConfig& c) {
  j = {{"n_subjects", c.n_subjects},
       {"beats_per_subject", c.beats_per_subject},
       {"n_leads", c.n_leads},
       {"samples_per_lead", c.samples_per_lead},
       {"task_classes", c.task_classes},
       {"artifact_width", c.artifact_width},
       {"artifact_fraction", c.artifact_fraction},
       {"artifact_amplitude", c.artifact_amplitude},
       {"artifact_position", c.artifact_position == ArtifactPosition::prepend ? "prepend" : "append"},
       {"subject_morphology_scale", c.subject_morphology_scale},
       {"noise_std", c.noise_std},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthEcgConfig& c) {
  c.n_subjects = j.value("n_subjects", c.n_subjects);
  c.beats_per_subject = j.value("beats_per_subject", c.beats_per_subject);
  c.n_leads = j.value("n_leads", c.n_leads);
  c.samples_per_lead = j.value("samples_per_lead", c.samples_per_lead);
  c.task_classes = j.value("task_classes", c.task_classes);
  c.artifact_width = j.value("artifact_width", c.artifact_width);
  c.artifact_fraction = j.value("artifact_fraction", c.artifact_fraction);
  c.artifact_amplitude = j.value("artifact_amplitude", c.artifact_amplitude);
  if (j.contains("artifact_position")) {
    const auto s = j.at("artifact_position").get<std::string>();
    if (s == "prepend") {
      c.artifact_position = ArtifactPosition::prepend;
    } else if (s == "append") {
      c.artifact_position = ArtifactPosition::append;
    } else {
      throw ConfigError("artifact_position must be prepend or append");
    }
  }
  c.subject_morphology_scale = j.value("subject_morphology_scale", c.subject_morphology_scale);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.seed = j.value("seed", c.seed);
}

namespace {

double bump(double t, double center, double width) {
  const double z = (t - center) / width;
  return std::exp(-0.5 * z * z);
}

struct LeadShape {
  double main_amp, main_center, main_width;
  double tail_amp, tail_center, tail_width;
  double eval(double t) const {
    return main_amp * bump(t, main_center, main_width) + tail_amp * bump(t, tail_center, tail_width);
  }
};

struct SubjectMorphology {
  std::vector<double> gain, offset, wave_amp;
  double wave_center = 50.0;
  double wave_width = 6.0;
};

double signed_uniform(Rng& rng, double lo, double hi) {
  const double mag = lo + (hi - lo) * rng.uniform();
  return rng.uniform() < 0.5 ? -mag : mag;
}

}  // namespace

std::vector<LabeledExample> synth_ecg_generate(const SynthEcgConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng template_rng = root.split();
  Rng subject_rng = root.split();
  Rng beat_rng = root.split();

  const double len = static_cast<double>(cfg.samples_per_lead);
  const double spacing = 0.36 * len / static_cast<double>(std::max<std::size_t>(cfg.task_classes, 1));
  // Class templates. Every lead keeps one polarity across classes; a class is
  // identified by the timing of the main deflection together with its
  // per-lead amplitude pattern and a broad tail wave.
  std::vector<double> polarity(cfg.n_leads);
  for (auto& p : polarity) p = template_rng.uniform() < 0.5 ? -1.0 : 1.0;
  std::vector<std::vector<LeadShape>> templates(cfg.task_classes);
  for (std::size_t c = 0; c < cfg.task_classes; ++c) {
    for (std::size_t l = 0; l < cfg.n_leads; ++l) {
      LeadShape s;
      s.main_amp = polarity[l] * (0.4 + 0.6 * template_rng.uniform());
      s.main_center = 0.25 * len + spacing * static_cast<double>(c);
      s.main_width = 0.04 * len;
      s.tail_amp = signed_uniform(template_rng, 0.15, 0.35);
      s.tail_center = 0.8 * len;
      s.tail_width = 0.08 * len;
      templates[c].push_back(s);
    }
  }

  const double m = cfg.subject_morphology_scale;
  std::vector<SubjectMorphology> subjects(cfg.n_subjects);
  for (auto& s : subjects) {
    for (std::size_t l = 0; l < cfg.n_leads; ++l) {
      s.gain.push_back(1.0 + 0.25 * m * subject_rng.normal());
      s.offset.push_back(0.25 * m * subject_rng.normal());
      s.wave_amp.push_back(0.6 * m * subject_rng.normal());
    }
    s.wave_center = len * (0.1 + 0.8 * subject_rng.uniform());
    s.wave_width = 0.04 * len + 0.04 * len * subject_rng.uniform();
  }

  const std::size_t L = cfg.lead_length();
  const std::size_t sig_start = cfg.artifact_position == ArtifactPosition::prepend ? cfg.artifact_width : 0;
  const std::size_t art_start = cfg.artifact_position == ArtifactPosition::prepend ? 0 : cfg.samples_per_lead;
  std::vector<LabeledExample> out;
  out.reserve(cfg.n_subjects * cfg.beats_per_subject);
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const SubjectMorphology& morph = subjects[s];
    for (std::size_t b = 0; b < cfg.beats_per_subject; ++b) {
      LabeledExample ex;
      ex.subject_id = static_cast<int>(s);
      ex.task_label = static_cast<int>(beat_rng.index(cfg.task_classes));
      ex.artifact_flag = beat_rng.uniform() < cfg.artifact_fraction;
      ex.x.assign(cfg.input_dim(), 0.0);
      const double shift = 3.0 * (beat_rng.uniform() - 0.5);
      const double scale = 1.0 + 0.05 * beat_rng.normal();
      const auto& tmpl = templates[static_cast<std::size_t>(ex.task_label)];
      for (std::size_t l = 0; l < cfg.n_leads; ++l) {
        double* lead = &ex.x[l * L];
        for (std::size_t t = 0; t < cfg.samples_per_lead; ++t) {
          const double tt = static_cast<double>(t) - shift;
          const double v = morph.gain[l] * scale * tmpl[l].eval(tt) + morph.offset[l] +
                           morph.wave_amp[l] * bump(tt, morph.wave_center, morph.wave_width) +
                           cfg.noise_std * beat_rng.normal();
          lead[sig_start + t] = v;
        }
        if (ex.artifact_flag) {
          for (std::size_t t = 0; t < cfg.artifact_width; ++t) lead[art_start + t] = cfg.artifact_amplitude;
        }
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Colored digits

std::vector<LabeledExample> colorize_digits(const Tensor& images, const std::vector<int>& labels,
                                            const ColorizeConfig& cfg) {
  if (images.dim() != 3 || images.shape()[1] != kDigitSide || images.shape()[2] != kDigitSide) {
    throw DimensionError("colorize_digits expects [n x 28 x 28], got " + shape_str(images.shape()));
  }
  const std::size_t n = images.shape()[0];
  if (labels.size() != n) throw DimensionError("colorize_digits: label count mismatch");
  if (!(cfg.colored_fraction >= 0.0 && cfg.colored_fraction <= 1.0)) {
    throw ConfigError("colored_fraction must lie in [0,1]");
  }
  for (double v : images.data()) {
    if (v < 0.0 || v > 1.0) throw DomainError("pixel value outside [0,1]: " + std::to_string(v));
  }
  Rng rng(cfg.seed);
  std::vector<LabeledExample> out;
  out.reserve(n);
  const auto px = images.data();
  for (std::size_t i = 0; i < n; ++i) {
    LabeledExample ex;
    ex.task_label = labels[i];
    ex.subject_id = 0;
    int color = 0;
    if (rng.uniform() < cfg.colored_fraction) color = 1 + static_cast<int>(rng.index(3));
    ex.color_id = color;
    ex.artifact_flag = color != static_cast<int>(Color::white);
    ex.x.assign(kColorDigitDim, 0.0);
    const double* gray = &px[i * kDigitPixels];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      if (color == 0 || static_cast<std::size_t>(color) == ch + 1) {
        std::copy_n(gray, kDigitPixels, &ex.x[ch * kDigitPixels]);
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

// Seven-segment layout in a unit box, y pointing down.
struct Segment {
  double x0, y0, x1, y1;
};

constexpr std::array<Segment, 7> kSegments{{
    {0.0, 0.0, 1.0, 0.0},  // a: top
    {1.0, 0.0, 1.0, 0.5},  // b: upper right
    {1.0, 0.5, 1.0, 1.0},  // c: lower right
    {0.0, 1.0, 1.0, 1.0},  // d: bottom
    {0.0, 0.5, 0.0, 1.0},  // e: lower left
    {0.0, 0.0, 0.0, 0.5},  // f: upper left
    {0.0, 0.5, 1.0, 0.5},  // g: middle
}};

constexpr std::array<const char*, 10> kDigitSegments{
    "abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"};

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = ax + t * dx - px, cy = ay + t * dy - py;
  return std::sqrt(cx * cx + cy * cy);
}

}  // namespace

std::pair<Tensor, std::vector<int>> synth_glyphs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> px(n * kDigitPixels, 0.0);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(rng.index(10));
    labels[i] = digit;
    const double width = 9.0 + 4.0 * rng.uniform();
    const double height = 16.0 + 4.0 * rng.uniform();
    const double slant = 0.35 * (rng.uniform() - 0.3);
    const double cx = 14.0 + 2.0 * (rng.uniform() - 0.5) * 2.0;
    const double cy = 14.0 + 2.0 * (rng.uniform() - 0.5) * 2.0;
    const double stroke = 1.0 + 1.2 * rng.uniform();
    std::vector<Segment> segs;
    for (const char* s = kDigitSegments[static_cast<std::size_t>(digit)]; *s; ++s) {
      const Segment& u = kSegments[static_cast<std::size_t>(*s - 'a')];
      auto map = [&](double ux, double uy, double& ox, double& oy) {
        oy = cy + (uy - 0.5) * height;
        ox = cx + (ux - 0.5) * width - slant * (oy - cy);
      };
      Segment g{};
      map(u.x0, u.y0, g.x0, g.y0);
      map(u.x1, u.y1, g.x1, g.y1);
      segs.push_back(g);
    }
    for (std::size_t r = 0; r < kDigitSide; ++r) {
      for (std::size_t c = 0; c < kDigitSide; ++c) {
        const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
        double d = std::numeric_limits<double>::infinity();
        for (const auto& g : segs) d = std::min(d, segment_distance(x, y, g.x0, g.y0, g.x1, g.y1));
        px[i * kDigitPixels + r * kDigitSide + c] = std::clamp(stroke + 0.5 - d, 0.0, 1.0);
      }
    }
  }
  return {Tensor::from({n, kDigitSide, kDigitSide}, std::move(px)), std::move(labels)};
}

// ---------------------------------------------------------------------------
// IDX

IdxArray idx_read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IdxError(IdxError::Kind::io, "cannot open IDX file " + path.string());
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)),
                                      std::istreambuf_iterator<char>());
  auto be32 = [&](std::size_t off) {
    return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
           (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
  };
  if (buf.size() < 4) throw IdxError(IdxError::Kind::truncated, "IDX header truncated: " + path.string());
  IdxArray arr;
  arr.magic = be32(0);
  std::size_t ndim = 0;
  if (arr.magic == kIdxImageMagic) {
    ndim = 3;
  } else if (arr.magic == kIdxLabelMagic) {
    ndim = 1;
  } else {
    throw IdxError(IdxError::Kind::bad_magic, "unsupported IDX magic in " + path.string());
  }
  if (buf.size() < 4 + 4 * ndim) {
    throw IdxError(IdxError::Kind::truncated, "IDX dimensions truncated: " + path.string());
  }
  std::size_t total = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    const std::size_t dim = be32(4 + 4 * d);
    if (dim != 0 && total > std::numeric_limits<std::size_t>::max() / dim) {
      throw IdxError(IdxError::Kind::dimension_overflow, "IDX dimension product overflows");
    }
    total *= dim;
    arr.dims.push_back(dim);
  }
  const std::size_t header = 4 + 4 * ndim;
  if (total > (std::size_t{1} << 40)) {
    throw IdxError(IdxError::Kind::dimension_overflow, "IDX payload size implausible");
  }
  if (buf.size() - header < total) {
    throw IdxError(IdxError::Kind::truncated, "IDX payload truncated: " + path.string());
  }
  arr.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(header),
                   buf.begin() + static_cast<std::ptrdiff_t>(header + total));
  return arr;
}

void idx_write(const std::filesystem::path& path, const IdxArray& array) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IdxError(IdxError::Kind::io, "cannot write IDX file " + path.string());
  auto put_be32 = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) os.put(static_cast<char>((v >> s) & 0xff));
  };
  put_be32(array.magic);
  for (std::size_t d : array.dims) put_be32(static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(array.bytes.data()),
           static_cast<std::streamsize>(array.bytes.size()));
}

Tensor idx_read_images(const std::filesystem::path& path) {
  const IdxArray arr = idx_read(path);
  if (arr.magic != kIdxImageMagic) {
    throw IdxError(IdxError::Kind::bad_magic, "expected an IDX image file: " + path.string());
  }
  std::vector<double> v(arr.bytes.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(arr.bytes[i]) / 255.0;
  return Tensor::from({arr.dims[0], arr.dims[1], arr.dims[2]}, std::move(v));
}

std::vector<int> idx_read_labels(const std::filesystem::path& path) {
  const IdxArray arr = idx_read(path);
  if (arr.magic != kIdxLabelMagic) {
    throw IdxError(IdxError::Kind::bad_magic, "expected an IDX label file: " + path.string());
  }
  return {arr.bytes.begin(), arr.bytes.end()};
}

// ---------------------------------------------------------------------------
// Splits

SplitSet split_by_subject(const std::vector<LabeledExample>& examples,
                          std::array<double, 3> fractions, std::uint64_t seed, bool example_level) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  Rng rng(seed);
  SplitSet out;
  out.example_level = example_level;
  auto counts_for = [&](std::size_t units) {
    const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(units)));
    const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(units)));
    if (n_train + n_val > units) throw ConfigError("split fractions exceed available units");
    return std::array<std::size_t, 3>{n_train, n_val, units - n_train - n_val};
  };
  if (example_level) {
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const auto c = counts_for(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto& dst = i < c[0] ? out.train : i < c[0] + c[1] ? out.validation : out.test;
      dst.push_back(examples[order[i]]);
    }
    return out;
  }
  std::set<int> ids;
  for (const auto& ex : examples) ids.insert(ex.subject_id);
  std::vector<int> subjects(ids.begin(), ids.end());
  if (subjects.size() < 3) {
    throw ConfigError("need at least 3 subjects for a three-way split, got " +
                      std::to_string(subjects.size()));
  }
  rng.shuffle(subjects);
  const auto c = counts_for(subjects.size());
  std::map<int, int> assignment;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    assignment[subjects[i]] = i < c[0] ? 0 : i < c[0] + c[1] ? 1 : 2;
  }
  for (const auto& ex : examples) {
    const int a = assignment.at(ex.subject_id);
    (a == 0 ? out.train : a == 1 ? out.validation : out.test).push_back(ex);
  }
  return out;
}

bool subjects_disjoint(const SplitSet& s) {
  auto ids = [](const std::vector<LabeledExample>& v) {
    std::set<int> out;
    for (const auto& e : v) out.insert(e.subject_id);
    return out;
  };
  const auto a = ids(s.train), b = ids(s.validation), c = ids(s.test);
  for (int id : a) {
    if (b.count(id) || c.count(id)) return false;
  }
  for (int id : b) {
    if (c.count(id)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Conversion and persistence

Batch make_batch(std::span<const LabeledExample> examples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("empty batch");
  const std::size_t dim = examples[indices[0]].x.size();
  std::vector<double> x(indices.size() * dim);
  std::vector<int> labels(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& ex = examples[indices[r]];
    if (ex.x.size() != dim) throw DimensionError("examples of different widths in one batch");
    std::copy(ex.x.begin(), ex.x.end(), &x[r * dim]);
    labels[r] = ex.task_label;
  }
  return {Tensor::from({indices.size(), dim}, std::move(x)), std::move(labels)};
}

Batch make_batch(std::span<const LabeledExample> examples) {
  std::vector<std::size_t> idx(examples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(examples, idx);
}

Tensor stack_inputs(std::span<const LabeledExample> examples) { return make_batch(examples).x; }

namespace {
constexpr const char* kDatasetMagic = "IBPDDATA";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const std::filesystem::path& path, const std::vector<LabeledExample>& examples,
                  const nlohmann::json& header) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write dataset file " + path.string());
  const std::size_t width = examples.empty() ? 0 : examples[0].x.size();
  os.write(kDatasetMagic, 8);
  io::put_u32(os, kDatasetVersion);
  io::put_bytes(os, header.dump());
  io::put_u64(os, examples.size());
  io::put_u64(os, width);
  for (const auto& ex : examples) {
    if (ex.x.size() != width) throw DimensionError("dataset examples differ in width");
    io::put_u32(os, static_cast<std::uint32_t>(ex.task_label));
    io::put_u32(os, static_cast<std::uint32_t>(ex.subject_id));
    os.put(ex.artifact_flag ? 1 : 0);
    os.put(static_cast<char>(ex.color_id ? *ex.color_id : -1));
    for (double v : ex.x) io::put_f64(os, v);
  }
  if (!os) throw Error("failed writing dataset file " + path.string());
}

std::vector<LabeledExample> load_dataset(const std::filesystem::path& path, nlohmann::json* header) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open dataset file " + path.string());
  io::Reader r(is, "dataset " + path.string());
  r.expect_magic(kDatasetMagic);
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("dataset " + path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::string text = r.bytes(1u << 24);
  if (header) *header = nlohmann::json::parse(text);
  const std::uint64_t n = r.u64();
  const std::uint64_t width = r.u64();
  if (width > (1u << 24) || n > (1ull << 32)) throw FormatError("dataset header sizes implausible");
  std::vector<LabeledExample> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    LabeledExample ex;
    ex.task_label = static_cast<std::int32_t>(r.u32());
    ex.subject_id = static_cast<std::int32_t>(r.u32());
    ex.artifact_flag = r.u8() != 0;
    const auto color = static_cast<std::int8_t>(r.u8());
    if (color >= 0) ex.color_id = color;
    ex.x.resize(width);
    for (auto& v : ex.x) v = r.f64();
    out.push_back(std::move(ex));
  }
  r.expect_end();
  return out;
}

}  // namespace ibpd
