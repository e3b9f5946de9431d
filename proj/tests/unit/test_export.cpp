#include <doctest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ibpd/export.hpp"

using namespace ibpd;
namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ibpd_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::pair<double, double>> parse_points(const std::string& s) {
  std::vector<std::pair<double, double>> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    const auto comma = tok.find(',');
    out.emplace_back(std::stod(tok.substr(0, comma)), std::stod(tok.substr(comma + 1)));
  }
  return out;
}

}  // namespace

TEST_CASE("csv quoting") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_field("two\nlines") == "\"two\nlines\"");
  CHECK(csv_field("") == "");
  std::ostringstream os;
  CsvWriter w(os);
  w.row({"x", "y,z"});
  w.row({"1"});
  CHECK(os.str() == "x,\"y,z\"\n1\n");
}

TEST_CASE("csv numbers round-trip exactly") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) CHECK(std::stod(csv_number(v)) == v);
  CHECK(csv_number(1.0) == "1");
}

TEST_CASE("PPM and PGM round trip") {
  const fs::path dir = temp_dir("pnm");
  // Planar RGB 2x2: R plane, G plane, B plane.
  const std::vector<double> planar{1, 0, 0, 0.5, 0, 1, 0, 0.5, 0, 0, 1, 0.5};
  const Image rgb = image_from_values(planar, 2, 2, 3);
  CHECK(rgb.pixels == std::vector<std::uint8_t>{255, 0, 0, 0, 255, 0, 0, 0, 255, 128, 128, 128});
  write_pnm(dir / "a.ppm", rgb);
  const Image back = read_pnm(dir / "a.ppm");
  CHECK(back.width == 2);
  CHECK(back.height == 2);
  CHECK(back.channels == 3);
  CHECK(back.pixels == rgb.pixels);

  const Image gray = image_from_values(std::vector<double>{-1.0, 0.2, 2.0}, 3, 1, 1);
  CHECK(gray.pixels == std::vector<std::uint8_t>{0, 51, 255});
  write_pnm(dir / "g.pgm", gray);
  CHECK(read_pnm(dir / "g.pgm").pixels == gray.pixels);

  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS(read_pnm(dir / "bad.ppm"), FormatError);
  std::ofstream(dir / "short.ppm", std::ios::binary) << "P6\n2 2\n255\nabc";
  CHECK_THROWS_AS(read_pnm(dir / "short.ppm"), FormatError);
  CHECK_THROWS_AS(image_from_values(planar, 2, 2, 1), DimensionError);
}

TEST_CASE("tiling places tiles row-major with padding") {
  std::vector<Image> tiles;
  for (std::uint8_t v = 1; v <= 6; ++v) tiles.push_back({2, 1, 1, {v, v}});
  const Image t = tile_images(tiles, 2, 3, 1);
  CHECK(t.width == 8);
  CHECK(t.height == 3);
  CHECK(t.pixels[0] == 1);
  CHECK(t.pixels[2] == 0);  // padding column
  CHECK(t.pixels[3] == 2);
  CHECK(t.pixels[8] == 0);  // padding row
  CHECK(t.pixels[2 * 8 + 6] == 6);
  CHECK_THROWS_AS(tile_images(tiles, 2, 2), DimensionError);
}

TEST_CASE("svg plot is well-formed xml with one polyline per series") {
  const fs::path dir = temp_dir("svg");
  write_svg_plot(dir / "p.svg", {{"input", {0, 1, 4, 9}}, {"recon <&>", {1, 1, 1, 1}}}, "beat 3 & friends");
  pt::ptree tree;
  REQUIRE_NOTHROW(pt::read_xml((dir / "p.svg").string(), tree));
  const pt::ptree& svg = tree.get_child("svg");
  std::vector<std::string> names;
  std::vector<std::vector<std::pair<double, double>>> lines;
  for (const auto& [tag, node] : svg) {
    if (tag != "polyline") continue;
    names.push_back(node.get<std::string>("<xmlattr>.data-name"));
    lines.push_back(parse_points(node.get<std::string>("<xmlattr>.points")));
  }
  REQUIRE(lines.size() == 2);
  CHECK(names[1] == "recon <&>");
  CHECK(svg.get<std::string>("text") == "beat 3 & friends");
  CHECK(lines[0].size() == 4);
  // Larger values sit higher (smaller y).
  CHECK(lines[0][3].second < lines[0][0].second);
  CHECK(lines[0][1].first > lines[0][0].first);
}

TEST_CASE("svg plot of a constant series is a horizontal line inside the frame") {
  const fs::path dir = temp_dir("svg_const");
  write_svg_plot(dir / "c.svg", {{"flat", {2.0, 2.0, 2.0}}}, "flat", 400, 200);
  pt::ptree tree;
  pt::read_xml((dir / "c.svg").string(), tree);
  const auto pts = parse_points(tree.get<std::string>("svg.polyline.<xmlattr>.points"));
  REQUIRE(pts.size() == 3);
  for (const auto& p : pts) {
    CHECK(p.second == pts[0].second);
    CHECK(p.second > 0.0);
    CHECK(p.second < 200.0);
  }
  CHECK_THROWS_AS(write_svg_plot(dir / "n.svg", {{"bad", {1.0, std::nan("")}}}, "x"), DomainError);
  CHECK_THROWS_AS(write_svg_plot(dir / "e.svg", {{"empty", {}}}, "x"), DimensionError);
}
