#pragma once

// Minimal static SVG line charts and heatmaps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace tscdreamer::exp {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct HeatmapPanel {
  std::string label;
  std::vector<double> times;               // column labels
  std::vector<std::vector<double>> cells;  // [link][time]
};

namespace svg_detail {

inline std::string escape(const std::string& s) {
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors[i % 8];
}

// White → yellow → red → dark red.
inline std::string heat(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double stops[4][3] = {{255, 255, 255}, {255, 220, 90}, {220, 40, 30}, {90, 0, 20}};
  const double pos = t * 3.0;
  const int i = std::min(2, static_cast<int>(pos));
  const double f = pos - i;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(stops[i][0] + f * (stops[i + 1][0] - stops[i][0])),
                static_cast<int>(stops[i][1] + f * (stops[i + 1][1] - stops[i][1])),
                static_cast<int>(stops[i][2] + f * (stops[i + 1][2] - stops[i][2])));
  return buf;
}

}  // namespace svg_detail

inline std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  const std::vector<Series>& series) {
  using namespace svg_detail;
  const double W = 720, H = 420, L = 90, R = 160, T = 40, B = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto sx = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << px(sx(xv)) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << px(sy(yv) + 4) << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << px(sy(yv)) << "\" x2=\"" << W - R << "\" y2=\"" << px(sy(yv))
      << "\" stroke=\"#dddddd\"/>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  o << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << (T + H - B) / 2 << ")\">"
    << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    o << "<polyline fill=\"none\" stroke=\"" << palette(k) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << px(sx(s.x[i])) << ',' << px(sy(s.y[i])) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (k + 1) << "\" fill=\"" << palette(k) << "\">" << escape(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Panels stacked vertically on one shared colour scale.
inline std::string heatmap_svg(const std::string& title, const std::vector<HeatmapPanel>& panels) {
  using namespace svg_detail;
  const double cell_w = 5, cell_h = 16, L = 80, T = 40, gap = 40, right = 120;
  std::size_t cols = 0, rows = 0;
  double vmax = 0.0;
  for (const auto& p : panels) {
    rows = std::max(rows, p.cells.size());
    for (const auto& r : p.cells) {
      cols = std::max(cols, r.size());
      for (double v : r) vmax = std::max(vmax, v);
    }
  }
  if (vmax <= 0.0) vmax = 1.0;
  const double panel_h = rows * cell_h + gap;
  const double W = L + cols * cell_w + right, H = T + panels.size() * panel_h + 20;

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const double top = T + p * panel_h;
    o << "<text x=\"" << L << "\" y=\"" << top + 12 << "\">" << escape(panels[p].label) << "</text>\n";
    for (std::size_t r = 0; r < panels[p].cells.size(); ++r) {
      const double y = top + 18 + r * cell_h;
      o << "<text x=\"" << L - 6 << "\" y=\"" << y + cell_h - 4 << "\" text-anchor=\"end\">link " << r << "</text>\n";
      for (std::size_t c = 0; c < panels[p].cells[r].size(); ++c)
        o << "<rect x=\"" << px(L + c * cell_w) << "\" y=\"" << px(y) << "\" width=\"" << cell_w << "\" height=\"" << cell_h
          << "\" fill=\"" << heat(panels[p].cells[r][c] / vmax) << "\"/>\n";
    }
  }
  const double lx = L + cols * cell_w + 30;
  for (int k = 0; k <= 10; ++k)
    o << "<rect x=\"" << lx << "\" y=\"" << px(T + 18 + (10 - k) * 12) << "\" width=\"14\" height=\"12\" fill=\"" << heat(k / 10.0)
      << "\"/>\n";
  o << "<text x=\"" << lx + 20 << "\" y=\"" << T + 28 << "\">" << num(vmax) << "</text>\n";
  o << "<text x=\"" << lx + 20 << "\" y=\"" << T + 18 + 10 * 12 + 10 << "\">0</text>\n";
  o << "<text x=\"" << lx << "\" y=\"" << T + 12 << "\">queue (veh)</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace tscdreamer::exp
