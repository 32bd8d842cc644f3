#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "salab/error.hpp"

// Minimal SVG line plots. Output depends only on the inputs.

namespace salab {

struct Curve {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title;
  std::string x_label = "k";
  std::string y_label;
  bool log_y = false;
  int width = 720;
  int height = 440;
};

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string svg_escape(const std::string& s) {
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

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

}  // namespace detail

inline std::string render_svg(const std::vector<Curve>& curves, const PlotOptions& opt = {}) {
  if (curves.empty()) throw Error("plot: no curves to draw");
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  auto ty = [&](double y) { return opt.log_y ? std::log10(y) : y; };
  for (const auto& c : curves) {
    if (c.x.size() != c.y.size()) throw DimensionError("plot: curve `" + c.label + "` has mismatched x and y");
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      if (!std::isfinite(c.x[i]) || !std::isfinite(c.y[i])) continue;
      if (opt.log_y && !(c.y[i] > 0.0)) continue;
      xmin = std::min(xmin, c.x[i]);
      xmax = std::max(xmax, c.x[i]);
      ymin = std::min(ymin, ty(c.y[i]));
      ymax = std::max(ymax, ty(c.y[i]));
    }
  }
  if (!(xmin <= xmax)) xmin = 0.0, xmax = 1.0;
  if (!(ymin <= ymax)) ymin = 0.0, ymax = 1.0;
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;

  const double left = 70, right = 160, top = 36, bottom = 50;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (ty(y) - ymin) / (ymax - ymin)) * ph; };
  using detail::svg_num;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opt.title.empty())
    os << "<text x=\"" << svg_num(left + pw / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
       << detail::svg_escape(opt.title) << "</text>\n";
  os << "<rect x=\"" << svg_num(left) << "\" y=\"" << svg_num(top) << "\" width=\"" << svg_num(pw) << "\" height=\""
     << svg_num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = xmin + (xmax - xmin) * i / 4.0;
    double fy = ymin + (ymax - ymin) * i / 4.0;
    double gx = left + pw * i / 4.0, gy = top + ph * (1.0 - i / 4.0);
    os << "<text x=\"" << svg_num(gx) << "\" y=\"" << svg_num(top + ph + 16) << "\" text-anchor=\"middle\">"
       << detail::tick_label(fx) << "</text>\n";
    os << "<text x=\"" << svg_num(left - 6) << "\" y=\"" << svg_num(gy + 4) << "\" text-anchor=\"end\">"
       << detail::tick_label(opt.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  os << "<text x=\"" << svg_num(left + pw / 2) << "\" y=\"" << svg_num(opt.height - 10.0)
     << "\" text-anchor=\"middle\">" << detail::svg_escape(opt.x_label) << "</text>\n";
  if (!opt.y_label.empty())
    os << "<text x=\"14\" y=\"" << svg_num(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << svg_num(top + ph / 2) << ")\">" << detail::svg_escape(opt.y_label) << (opt.log_y ? " (log)" : "")
       << "</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    os << "<polyline fill=\"none\" stroke=\"" << detail::palette(c) << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < curves[c].x.size(); ++i) {
      double x = curves[c].x[i], y = curves[c].y[i];
      if (!std::isfinite(x) || !std::isfinite(y) || (opt.log_y && !(y > 0.0))) continue;
      os << (first ? "" : " ") << svg_num(px(x)) << ',' << svg_num(py(y));
      first = false;
    }
    os << "\"/>\n";
    double ly = top + 14.0 + 18.0 * static_cast<double>(c);
    os << "<line x1=\"" << svg_num(left + pw + 10) << "\" y1=\"" << svg_num(ly - 4) << "\" x2=\"" << svg_num(left + pw + 30)
       << "\" y2=\"" << svg_num(ly - 4) << "\" stroke=\"" << detail::palette(c) << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << svg_num(left + pw + 34) << "\" y=\"" << svg_num(ly) << "\">"
       << detail::svg_escape(curves[c].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void emit_plot(const std::vector<Curve>& curves, const std::string& path, const PlotOptions& opt = {}) {
  std::string svg = render_svg(curves, opt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("plot: cannot write " + path);
  f << svg;
  if (!f) throw IoError("plot: write failed for " + path);
}

}  // namespace salab
