#pragma once

// Result rows, loss curves and SVG figures. Numbers are printed with %.17g so
// files are byte-identical for identical inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "pflow/errors.hpp"
#include "pflow/tensor.hpp"

namespace pflow {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct ResultRow {
  std::string dataset;
  std::string model;
  std::string metric;
  std::string measure;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "dataset,model,metric,measure,value,seed,config_hash\n";
  for (const auto& r : rows) {
    out << csv_field(r.dataset) << ',' << csv_field(r.model) << ',' << csv_field(r.metric) << ','
        << csv_field(r.measure) << ',' << format_double(r.value) << ',' << r.seed << ',' << r.config_hash << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossPoint>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "step,loss\n";
  for (const auto& p : curve) out << p.step << ',' << format_double(p.loss) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------

/// Hand-written SVG with a fixed 600x600 viewport.
class SvgCanvas {
 public:
  static constexpr double kSize = 600.0;

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
             "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\" stroke-width=\"0.5\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill, double opacity = 1.0) {
    body_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" + fill +
             "\" fill-opacity=\"" + num(opacity) + "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width, double opacity = 1.0) {
    body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\" stroke-opacity=\"" + num(opacity) + "\"/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 10.0) {
    std::string esc;
    for (char c : s) {
      if (c == '<') esc += "&lt;";
      else if (c == '>') esc += "&gt;";
      else if (c == '&') esc += "&amp;";
      else esc += c;
    }
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" + num(size) +
             "\">" + esc + "</text>\n";
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n"
        << "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n"
        << body_ << "</svg>\n";
    if (!out) throw IoError("write failed for '" + path + "'");
  }

 private:
  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }
  std::string body_;
};

struct ScatterPanel {
  std::string title;
  Tensor points;  // n x 2
};

/// Grid of square scatter panels; every panel shows [-extent, extent]^2 with
/// equal axis scaling.
inline void write_scatter_grid(const std::string& path, const std::vector<std::vector<ScatterPanel>>& grid,
                               double extent, std::size_t max_points = 2000) {
  std::size_t cols = 1;
  for (const auto& row : grid) cols = std::max(cols, row.size());
  const std::size_t rows = std::max<std::size_t>(1, grid.size());
  const double cell = SvgCanvas::kSize / static_cast<double>(std::max(rows, cols));
  const double pad = 14.0;
  SvgCanvas svg;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t c = 0; c < grid[r].size(); ++c) {
      const auto& panel = grid[r][c];
      const double x0 = static_cast<double>(c) * cell, y0 = static_cast<double>(r) * cell;
      const double inner = cell - pad;
      svg.rect(x0 + 2, y0 + pad - 2, inner - 4, inner - 4, "none", "#999999");
      svg.text(x0 + 4, y0 + pad - 4, panel.title, 9.0);
      const double s = (inner - 4) / (2.0 * extent);
      const std::size_t n = std::min(max_points, panel.points.rows());
      for (std::size_t i = 0; i < n; ++i) {
        const double px = panel.points(i, 0), py = panel.points(i, 1);
        if (std::abs(px) > extent || std::abs(py) > extent) continue;
        svg.circle(x0 + 2 + (px + extent) * s, y0 + pad - 2 + (extent - py) * s, 0.9, "#1f4e9c", 0.5);
      }
    }
  }
  svg.save(path);
}

}  // namespace pflow
