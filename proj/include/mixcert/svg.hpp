#pragma once

// Minimal self-contained SVG line charts for curve CSVs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace mixcert {

struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct SvgChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;  // symlog-style: x -> log10(1 + x)
  std::vector<SvgSeries> series;
};

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '&') out += "&amp;";
    else out += ch;
  }
  return out;
}

}  // namespace detail

inline std::string render_svg(const SvgChart& chart) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  const double width = 640, height = 420, left = 60, right = 170, top = 40, bottom = 50;
  auto tx = [&](double x) { return chart.log_x ? std::log10(1.0 + std::max(0.0, x)) : x; };

  double x_min = INFINITY, x_max = -INFINITY;
  for (const auto& s : chart.series) {
    for (double x : s.x) {
      if (!std::isfinite(x)) continue;
      x_min = std::min(x_min, tx(x));
      x_max = std::max(x_max, tx(x));
    }
  }
  if (!(x_min < x_max)) {
    x_min = std::isfinite(x_min) ? x_min - 0.5 : 0.0;
    x_max = x_min + 1.0;
  }
  const double pw = width - left - right;
  const double ph = height - top - bottom;
  auto px = [&](double x) { return left + (tx(x) - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::svg_num(width) + "\" height=\"" +
         detail::svg_num(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + detail::svg_num(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         detail::svg_escape(chart.title) + "</text>\n";
  out += "<rect x=\"" + detail::svg_num(left) + "\" y=\"" + detail::svg_num(top) + "\" width=\"" +
         detail::svg_num(pw) + "\" height=\"" + detail::svg_num(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double y = k / 5.0;
    out += "<text x=\"" + detail::svg_num(left - 6) + "\" y=\"" + detail::svg_num(py(y) + 4) +
           "\" text-anchor=\"end\">" + detail::svg_num(y) + "</text>\n";
  }
  out += "<text x=\"" + detail::svg_num(left) + "\" y=\"" + detail::svg_num(height - bottom + 18) + "\">" +
         detail::svg_num(x_min) + "</text>\n";
  out += "<text x=\"" + detail::svg_num(left + pw) + "\" y=\"" + detail::svg_num(height - bottom + 18) +
         "\" text-anchor=\"end\">" + detail::svg_num(x_max) + "</text>\n";
  out += "<text x=\"" + detail::svg_num(left + pw / 2) + "\" y=\"" + detail::svg_num(height - 12) +
         "\" text-anchor=\"middle\">" + detail::svg_escape(chart.x_label) +
         (chart.log_x ? " (log10(1+x))" : "") + "</text>\n";
  out += "<text transform=\"translate(16," + detail::svg_num(top + ph / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + detail::svg_escape(chart.y_label) + "</text>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const SvgSeries& s = chart.series[k];
    const char* color = palette[k % 8];
    std::string pts;
    for (std::size_t j = 0; j < s.x.size() && j < s.y.size(); ++j) {
      if (!std::isfinite(s.x[j]) || !std::isfinite(s.y[j])) continue;
      pts += detail::svg_num(px(s.x[j])) + "," + detail::svg_num(py(s.y[j])) + " ";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts +
           "\"/>\n";
    const double ly = top + 14.0 + 18.0 * static_cast<double>(k);
    out += "<line x1=\"" + detail::svg_num(width - right + 10) + "\" y1=\"" + detail::svg_num(ly - 4) +
           "\" x2=\"" + detail::svg_num(width - right + 30) + "\" y2=\"" + detail::svg_num(ly - 4) +
           "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + detail::svg_num(width - right + 34) + "\" y=\"" + detail::svg_num(ly) + "\">" +
           detail::svg_escape(s.name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace mixcert
