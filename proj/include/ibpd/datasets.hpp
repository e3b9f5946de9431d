#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibpd/model.hpp"
#include "ibpd/rng.hpp"

namespace ibpd {

enum class Color : int { white = 0, red = 1, green = 2, blue = 3 };

struct LabeledExample {
  std::vector<double> x;
  int task_label = 0;
  int subject_id = 0;
  bool artifact_flag = false;
  std::optional<int> color_id;  // Color, for colored-digit data
};

struct SplitSet {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> validation;
  std::vector<LabeledExample> test;
  // True when examples, not subjects, were partitioned (data without subjects).
  bool example_level = false;
};

enum class ArtifactPosition { prepend, append };

struct SynthEcgConfig {
  std::size_t n_subjects = 10;
  std::size_t beats_per_subject = 400;
  std::size_t n_leads = 12;
  std::size_t samples_per_lead = 100;
  std::size_t task_classes = 10;
  std::size_t artifact_width = 10;
  double artifact_fraction = 0.5;
  // Stimulus height relative to the class-template peak amplitude (1.0).
  double artifact_amplitude = 5.0;
  ArtifactPosition artifact_position = ArtifactPosition::prepend;
  double subject_morphology_scale = 1.0;
  double noise_std = 0.1;
  std::uint64_t seed = 7;

  std::size_t lead_length() const { return artifact_width + samples_per_lead; }
  std::size_t input_dim() const { return n_leads * lead_length(); }
  // Flat indices of the stimulus window in every lead.
  std::vector<std::size_t> artifact_region() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const SynthEcgConfig& c);
void from_json(const nlohmann::json& j, SynthEcgConfig& c);

/// Beats for every subject. Each beat is the class template of its task label
/// distorted by the subject's morphology (per-lead gain, offset and a
/// subject-specific wave), plus Gaussian noise. A random `artifact_fraction`
/// of beats get a rectangular stimulus block of `artifact_width` samples per
/// lead; the rest get zeros in the same window.
std::vector<LabeledExample> synth_ecg_generate(const SynthEcgConfig& cfg);

inline constexpr std::size_t kDigitSide = 28;
inline constexpr std::size_t kDigitPixels = kDigitSide * kDigitSide;
inline constexpr std::size_t kColorDigitDim = 3 * kDigitPixels;

struct ColorizeConfig {
  double colored_fraction = 0.75;  // white with probability 1 - colored_fraction
  std::uint64_t seed = 11;
};

/// Grayscale images [n x 28 x 28] in [0,1] to planar RGB examples of width
/// 2352 (channel-major: R plane, G plane, B plane). White images copy the
/// gray plane into all channels; red/green/blue place it in one channel.
/// artifact_flag marks colored (non-white) images.
std::vector<LabeledExample> colorize_digits(const Tensor& images, const std::vector<int>& labels,
                                            const ColorizeConfig& cfg);

/// Fallback digit source: ten seven-segment glyphs rendered with random
/// slant, scale, shift and stroke width. Returns ([n x 28 x 28], labels).
std::pair<Tensor, std::vector<int>> synth_glyphs(std::size_t n, std::uint64_t seed);

// IDX (MNIST) files ---------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

class IdxError : public FormatError {
 public:
  enum class Kind { bad_magic, truncated, dimension_overflow, io };
  IdxError(Kind kind, const std::string& msg) : FormatError(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;
};

IdxArray idx_read(const std::filesystem::path& path);
void idx_write(const std::filesystem::path& path, const IdxArray& array);
// Image file -> [n x rows x cols] scaled by 1/255.
Tensor idx_read_images(const std::filesystem::path& path);
std::vector<int> idx_read_labels(const std::filesystem::path& path);

// Splitting ------------------------------------------------------------------

/// Shuffles subjects (not examples) and assigns each one wholly to a split.
/// With `example_level`, individual examples are shuffled and partitioned
/// instead (for data without subject structure).
SplitSet split_by_subject(const std::vector<LabeledExample>& examples,
                          std::array<double, 3> fractions, std::uint64_t seed,
                          bool example_level = false);

bool subjects_disjoint(const SplitSet& s);

// Conversion and persistence -------------------------------------------------

Batch make_batch(std::span<const LabeledExample> examples, std::span<const std::size_t> indices);
Batch make_batch(std::span<const LabeledExample> examples);
Tensor stack_inputs(std::span<const LabeledExample> examples);

/// Container: "IBPDDATA", u32 version, u64-length-prefixed JSON header, u64
/// count, u64 width, then per example i32 task label, i32 subject id, u8
/// artifact flag, i8 color id (-1 when absent), width little-endian float64.
void save_dataset(const std::filesystem::path& path, const std::vector<LabeledExample>& examples,
                  const nlohmann::json& header);
std::vector<LabeledExample> load_dataset(const std::filesystem::path& path,
                                         nlohmann::json* header = nullptr);

}  // namespace ibpd
