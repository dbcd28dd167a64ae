#pragma once

// Artifact output: full-precision CSV tables, PNG heatmaps over the coarse
// source grid (always paired with a CSV of the same values), and a flat
// key = value config reader.

#include <png.h>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsrec/errors.hpp"
#include "sparsrec/fem.hpp"

namespace sparsrec::io {

namespace fs = std::filesystem;

/// Row-oriented CSV writer; doubles are written with 17 significant digits.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : path_(path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path);
    if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path.string());
    out_ << std::setprecision(17);
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
    columns_ = header.size();
  }

  template <typename... Ts>
  void row(const Ts&... values) {
    static_assert(sizeof...(Ts) > 0);
    if (sizeof...(Ts) != columns_) throw std::invalid_argument("CsvWriter: row width does not match header");
    std::size_t i = 0;
    ((out_ << (i++ ? "," : "") << cell(values)), ...);
    out_ << '\n';
  }

  const fs::path& path() const { return path_; }

 private:
  template <typename T>
  static const T& cell(const T& v) { return v; }
  static int cell(bool v) { return v ? 1 : 0; }

  fs::path path_;
  std::ofstream out_;
  std::size_t columns_ = 0;
};

using Rgb = std::array<unsigned char, 3>;

/// Fixed sequential colormap (viridis anchors, linear interpolation), t in [0,1].
inline Rgb colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 9> anchors{{{68, 1, 84},
                                                                 {71, 44, 122},
                                                                 {59, 81, 139},
                                                                 {44, 113, 142},
                                                                 {33, 144, 141},
                                                                 {39, 173, 129},
                                                                 {92, 200, 99},
                                                                 {170, 220, 50},
                                                                 {253, 231, 37}}};
  if (!std::isfinite(t)) t = 0.0;
  t = std::clamp(t, 0.0, 1.0) * (anchors.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), anchors.size() - 2);
  const double f = t - static_cast<double>(i);
  Rgb c{};
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<unsigned char>(std::lround(anchors[i][k] + f * (anchors[i + 1][k] - anchors[i][k])));
  return c;
}

/// Writes an RGB image, row 0 at the top.
inline void write_png(const fs::path& path, int width, int height, const std::vector<Rgb>& pixels) {
  sparsrec::detail::require(width > 0 && height > 0, "write_png: empty image");
  sparsrec::detail::require(pixels.size() == static_cast<std::size_t>(width) * height, "write_png: pixel count");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("write_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng error while writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(3 * static_cast<std::size_t>(width));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      for (int k = 0; k < 3; ++k) row[3 * x + k] = pixels[static_cast<std::size_t>(y) * width + x][k];
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// Coarse-grid field as <stem>.csv (index,<value>,cell_x,cell_y) and
/// <stem>.png.  In 2D the image has y pointing up; 1D fields are a strip.
inline void write_heatmap(const fs::path& stem, const fem::SourceBasis& basis, const Eigen::VectorXd& values,
                          const std::string& value_name = "value", int pixels_per_cell = 16) {
  sparsrec::detail::require(values.size() == basis.size(), "write_heatmap: value count does not match the basis");
  {
    CsvWriter csv(fs::path(stem.string() + ".csv"), {"index", value_name, "cell_x", "cell_y"});
    for (int i = 0; i < basis.size(); ++i) {
      const auto c = basis.coarse_coords(i);
      csv.row(i, values[i], c[0], c[1]);
    }
  }
  const int nx = basis.coarse_cells_per_side;
  const int ny = basis.dim == 2 ? nx : 1;
  const int width = nx * pixels_per_cell;
  const int height = basis.dim == 2 ? ny * pixels_per_cell : 2 * pixels_per_cell;
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<Rgb> pixels(static_cast<std::size_t>(width) * height);
  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px) {
      const int cx = px / pixels_per_cell;
      const int cy = basis.dim == 2 ? ny - 1 - py / pixels_per_cell : 0;
      pixels[static_cast<std::size_t>(py) * width + px] = colormap((values[basis.coarse_index(cx, cy)] - lo) / span);
    }
  write_png(fs::path(stem.string() + ".png"), width, height, pixels);
}

/// Reads `key = value` lines; '#' starts a comment, blank lines are skipped.
inline std::map<std::string, std::string> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_config: cannot open " + path.string());
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

/// Splits on commas and parses each item as a double.
inline std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (item.find_first_not_of(" \t", used) != std::string::npos)
      throw std::invalid_argument("parse_doubles: trailing characters in '" + item + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace sparsrec::io
