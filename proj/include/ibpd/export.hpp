#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ibpd/errors.hpp"

namespace ibpd {

// CSV ------------------------------------------------------------------------

/// RFC-4180 field: quoted when it contains a comma, quote, CR or LF, with
/// embedded quotes doubled.
std::string csv_field(const std::string& s);
/// Shortest round-trippable text for a double ("%.17g").
std::string csv_number(double v);

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}
  void row(const std::vector<std::string>& fields);

 private:
  std::ostream& os_;
};

// Images -----------------------------------------------------------------------

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;       // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // row-major, channels interleaved
};

/// Values in [0,1] (clamped) to 8-bit pixels, rounding to nearest. With
/// three channels the input is planar (R plane, G plane, B plane).
Image image_from_values(std::span<const double> values, std::size_t width, std::size_t height,
                        std::size_t channels);

/// Tiles equally sized images into a rows x cols grid, row-major, with
/// `pad` black pixels between tiles.
Image tile_images(const std::vector<Image>& tiles, std::size_t rows, std::size_t cols,
                  std::size_t pad = 1);

/// Binary PGM (P5) for 1 channel, PPM (P6) for 3 channels; maxval 255.
void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);

// Plots -------------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> values;
};

/// Line plot with one polyline per series, x = sample index. All series share
/// the y range; a constant range is padded so lines stay inside the frame.
void write_svg_plot(const std::filesystem::path& path, const std::vector<Series>& series,
                    const std::string& title, double width = 800.0, double height = 300.0);

}  // namespace ibpd
