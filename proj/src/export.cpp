#include "ibpd/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace ibpd {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os_ << ',';
    os_ << csv_field(fields[i]);
  }
  os_ << '\n';
}

// ---------------------------------------------------------------------------

Image image_from_values(std::span<const double> values, std::size_t width, std::size_t height,
                        std::size_t channels) {
  if (channels != 1 && channels != 3) throw DimensionError("images have 1 or 3 channels");
  const std::size_t plane = width * height;
  if (values.size() != plane * channels) {
    throw DimensionError("image_from_values: expected " + std::to_string(plane * channels) +
                         " values, got " + std::to_string(values.size()));
  }
  Image img{width, height, channels, std::vector<std::uint8_t>(plane * channels)};
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = std::clamp(values[c * plane + p], 0.0, 1.0);
      img.pixels[p * channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

Image tile_images(const std::vector<Image>& tiles, std::size_t rows, std::size_t cols, std::size_t pad) {
  if (tiles.size() != rows * cols || tiles.empty()) throw DimensionError("tile count must equal rows * cols");
  const Image& t0 = tiles[0];
  for (const auto& t : tiles) {
    if (t.width != t0.width || t.height != t0.height || t.channels != t0.channels) {
      throw DimensionError("tiles differ in size");
    }
  }
  Image out;
  out.channels = t0.channels;
  out.width = cols * t0.width + (cols - 1) * pad;
  out.height = rows * t0.height + (rows - 1) * pad;
  out.pixels.assign(out.width * out.height * out.channels, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Image& t = tiles[r * cols + c];
      const std::size_t x0 = c * (t0.width + pad), y0 = r * (t0.height + pad);
      for (std::size_t y = 0; y < t.height; ++y) {
        std::copy_n(&t.pixels[y * t.width * t.channels], t.width * t.channels,
                    &out.pixels[((y0 + y) * out.width + x0) * out.channels]);
      }
    }
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DimensionError("images have 1 or 3 channels");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw DimensionError("image pixel buffer has the wrong size");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
  if (!os) throw Error("failed writing " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::string magic;
  is >> magic;
  Image img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw FormatError(path.string() + ": not a binary PGM/PPM file");
  }
  auto next_int = [&]() {
    while (is >> std::ws && is.peek() == '#') is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    long v = -1;
    if (!(is >> v) || v < 0) throw FormatError(path.string() + ": bad header");
    return static_cast<std::size_t>(v);
  };
  img.width = next_int();
  img.height = next_int();
  if (next_int() != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  is.get();  // single whitespace before the raster
  img.pixels.resize(img.width * img.height * img.channels);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw FormatError(path.string() + ": truncated raster");
  }
  return img;
}

// ---------------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000", "#aec7e8"};

}  // namespace

void write_svg_plot(const std::filesystem::path& path, const std::vector<Series>& series,
                    const std::string& title, double width, double height) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t longest = 0;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) throw DomainError("cannot plot non-finite values");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    longest = std::max(longest, s.values.size());
  }
  if (longest == 0) throw DimensionError("nothing to plot");
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double margin = 30.0;
  const double pw = width - 2 * margin, ph = height - 2 * margin;
  const double dx = longest > 1 ? pw / static_cast<double>(longest - 1) : 0.0;

  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  char buf[64];
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
     << "<text x=\"" << margin << "\" y=\"" << margin * 0.6 << "\" font-size=\"12\">" << xml_escape(title)
     << "</text>\n"
     << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#999\"/>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    os << "<polyline fill=\"none\" stroke-width=\"1\" stroke=\"" << kPalette[i % std::size(kPalette)]
       << "\" data-name=\"" << xml_escape(s.name) << "\" points=\"";
    for (std::size_t t = 0; t < s.values.size(); ++t) {
      const double x = margin + dx * static_cast<double>(t);
      const double y = margin + ph * (hi - s.values[t]) / (hi - lo);
      std::snprintf(buf, sizeof buf, "%s%.3f,%.3f", t ? " " : "", x, y);
      os << buf;
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  if (!os) throw Error("failed writing " + path.string());
}

}  // namespace ibpd
