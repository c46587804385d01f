#pragma once

// Figure output: RGB canvases written through libpng, with JSON sidecars that
// record the intensity scales and legends (the images carry no text).

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lcae/detection.hpp"
#include "lcae/embedding.hpp"
#include "lcae/evaluation.hpp"

namespace lcae::io {

using Rgb = std::array<std::uint8_t, 3>;

struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Canvas(int w, int h, Rgb fill = {255, 255, 255}) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb.begin() + i);
  }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
  }

  void fill_rect(int x0, int y0, int w, int h, Rgb c) {
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) set(x, y, c);
    }
  }

  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void dot(int cx, int cy, int r, Rgb c) {
    for (int y = -r; y <= r; ++y) {
      for (int x = -r; x <= r; ++x) {
        if (x * x + y * y <= r * r) set(cx + x, cy + y, c);
      }
    }
  }
};

inline void write_png(const Canvas& canvas, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IngestionError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    std::fclose(fp);
    throw IngestionError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IngestionError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(canvas.width), static_cast<png_uint_32>(canvas.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < canvas.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(canvas.rgb.data() + static_cast<std::size_t>(y) * canvas.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

struct Scale {
  double lo = 0.0;
  double hi = 1.0;

  double unit(double v) const { return hi > lo ? std::clamp((v - lo) / (hi - lo), 0.0, 1.0) : 0.0; }
};

inline Scale min_max(std::span<const float> v) {
  if (v.empty()) return {};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

inline Rgb gray(double t) {
  const auto g = static_cast<std::uint8_t>(std::lround(255.0 * t));
  return {g, g, g};
}

// Black -> purple -> orange -> pale yellow.
inline Rgb heat(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{{0, 0, 4}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9},
                                                                {252, 255, 164}}};
  const double x = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(x), stops.size() - 2);
  const double f = x - static_cast<double>(i);
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = static_cast<std::uint8_t>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  return out;
}

inline void draw_tile(Canvas& cv, int x0, int y0, int rows, int cols, std::span<const float> v, const Scale& s,
                      int zoom, Rgb (*colormap)(double)) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      cv.fill_rect(x0 + c * zoom, y0 + r * zoom, zoom, zoom, colormap(s.unit(v[static_cast<std::size_t>(r * cols + c)])));
    }
  }
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Min-max scaled heat map; the scale goes to `<path>.json`.
inline void write_heatmap(const ResidualMap& r, const std::filesystem::path& path, int zoom = 8) {
  const Scale s = min_max(r.scores);
  Canvas cv(r.cols * zoom, r.rows * zoom);
  draw_tile(cv, 0, 0, r.rows, r.cols, r.scores, s, zoom, heat);
  write_png(cv, path);
  write_json({{"min", s.lo}, {"max", s.hi}, {"colormap", "heat"}}, path.string() + ".json");
}

// original | reconstruction | residual | ground truth
inline void write_panel(const Detection& d, const Mask& truth, const std::filesystem::path& path, int zoom = 4) {
  const int rows = d.image.rows, cols = d.image.cols, gap = 4;
  Canvas cv(4 * cols * zoom + 5 * gap, rows * zoom + 2 * gap, {255, 255, 255});
  std::vector<float> both(d.image.pixels);
  both.insert(both.end(), d.reconstruction.pixels.begin(), d.reconstruction.pixels.end());
  const Scale intensity = min_max(both);
  const Scale residual = min_max(d.residual.scores);
  std::vector<float> mask(truth.bits.begin(), truth.bits.end());
  const int step = cols * zoom + gap;
  draw_tile(cv, gap, gap, rows, cols, d.image.pixels, intensity, zoom, gray);
  draw_tile(cv, gap + step, gap, rows, cols, d.reconstruction.pixels, intensity, zoom, gray);
  draw_tile(cv, gap + 2 * step, gap, rows, cols, d.residual.scores, residual, zoom, heat);
  draw_tile(cv, gap + 3 * step, gap, rows, cols, mask, Scale{0.0, 1.0}, zoom, gray);
  write_png(cv, path);
  write_json({{"tiles", {"original", "reconstruction", "residual", "ground_truth"}},
              {"intensity_scale", {intensity.lo, intensity.hi}},
              {"residual_scale", {residual.lo, residual.hi}}},
             path.string() + ".json");
}

inline Rgb palette(std::size_t i) {
  static constexpr std::array<Rgb, 8> colors{{{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                              {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}}};
  return colors[i % colors.size()];
}

inline void draw_axes(Canvas& cv, int m, int size) {
  const Rgb axis{0, 0, 0}, grid{225, 225, 225};
  for (int k = 1; k < 10; ++k) {
    const int p = m + k * size / 10;
    cv.line(p, m, p, m + size, grid);
    cv.line(m, p, m + size, p, grid);
  }
  cv.line(m, m + size, m + size, m + size, axis);
  cv.line(m, m, m, m + size, axis);
  cv.line(m + size, m, m + size, m + size, axis);
  cv.line(m, m, m + size, m, axis);
}

// All curves on one unit square; the legend (name, colour, AUC) goes to `<path>.json`.
inline void write_roc_plot(const std::vector<std::pair<std::string, RocResult>>& curves,
                           const std::filesystem::path& path, int size = 480) {
  const int m = 24;
  Canvas cv(size + 2 * m, size + 2 * m);
  draw_axes(cv, m, size);
  cv.line(m, m + size, m + size, m, {160, 160, 160});
  nlohmann::json legend = nlohmann::json::array();
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& r = curves[k].second;
    const Rgb col = palette(k);
    int px = m, py = m + size;
    for (std::size_t i = 0; i < r.tpr.size(); ++i) {
      const int x = m + static_cast<int>(std::lround(r.fpr[i] * size));
      const int y = m + size - static_cast<int>(std::lround(r.tpr[i] * size));
      if (x == px && y == py) continue;
      cv.line(px, py, x, y, col);
      cv.line(px, py - 1, x, y - 1, col);
      px = x;
      py = y;
    }
    legend.push_back({{"name", curves[k].first}, {"rgb", col}, {"auc", r.auc}});
  }
  write_png(cv, path);
  write_json({{"x", "false positive rate"}, {"y", "true positive rate"}, {"curves", legend}}, path.string() + ".json");
}

inline void write_embedding_scatter(const EmbeddingTable& t, const std::filesystem::path& path, int size = 480) {
  const int m = 16;
  Canvas cv(size + 2 * m, size + 2 * m);
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (const auto& p : t.projection) {
    for (int d = 0; d < 2; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  }
  const auto colour = [](LatentLabel l) -> Rgb {
    switch (l) {
      case LatentLabel::healthy: return {214, 39, 40};
      case LatentLabel::anomalous: return {31, 119, 180};
      case LatentLabel::prior: return {44, 160, 44};
    }
    return {0, 0, 0};
  };
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& p = t.projection[i];
    const double ux = hi[0] > lo[0] ? (p[0] - lo[0]) / (hi[0] - lo[0]) : 0.5;
    const double uy = hi[1] > lo[1] ? (p[1] - lo[1]) / (hi[1] - lo[1]) : 0.5;
    cv.dot(m + static_cast<int>(std::lround(ux * size)), m + size - static_cast<int>(std::lround(uy * size)), 2,
           colour(t.labels[i]));
  }
  write_png(cv, path);
  write_json({{"healthy", colour(LatentLabel::healthy)},
              {"anomalous", colour(LatentLabel::anomalous)},
              {"prior", colour(LatentLabel::prior)},
              {"x_range", {lo[0], hi[0]}},
              {"y_range", {lo[1], hi[1]}}},
             path.string() + ".json");
}

}  // namespace lcae::io
