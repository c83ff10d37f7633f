#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace guidelab {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static line chart. Output depends only on the data, so identical inputs
/// give identical files.
struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::vector<Series> series;
};

namespace detail {

inline std::string fmt(double v, const char* f = "%.2f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
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

}  // namespace detail

inline std::string render_svg(const LinePlot& p) {
  using detail::fmt;
  constexpr double W = 640, H = 400, L = 70, R = 170, T = 40, B = 50;
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  auto ty = [&](double v) { return p.log_y ? std::log10(v) : v; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : p.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double y = ty(s.y[i]);
      if (!std::isfinite(s.x[i]) || !std::isfinite(y)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W, "%.0f") +
         "\" height=\"" + fmt(H, "%.0f") + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(W / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         detail::xml_escape(p.title) + "</text>\n";
  out += "<rect x=\"" + fmt(L) + "\" y=\"" + fmt(T) + "\" width=\"" + fmt(W - L - R) +
         "\" height=\"" + fmt(H - T - B) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    out += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(H - B + 15) +
           "\" text-anchor=\"middle\">" + fmt(xv, "%.3g") + "</text>\n";
    const double label = p.log_y ? std::pow(10.0, yv) : yv;
    out += "<text x=\"" + fmt(L - 5) + "\" y=\"" + fmt(py(yv) + 4) +
           "\" text-anchor=\"end\">" + fmt(label, "%.3g") + "</text>\n";
  }
  out += "<text x=\"" + fmt(L + (W - L - R) / 2) + "\" y=\"" + fmt(H - 12) +
         "\" text-anchor=\"middle\">" + detail::xml_escape(p.x_label) + "</text>\n";
  out += "<text x=\"15\" y=\"" + fmt(T + (H - T - B) / 2) +
         "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " +
         fmt(T + (H - T - B) / 2) + ")\">" + detail::xml_escape(p.y_label) +
         (p.log_y ? " (log)" : "") + "</text>\n";

  for (std::size_t s = 0; s < p.series.size(); ++s) {
    const auto& ser = p.series[s];
    const char* colour = palette[s % 8];
    std::string pts;
    auto flush = [&] {
      if (!pts.empty()) {
        out += "<polyline fill=\"none\" stroke=\"" + std::string(colour) +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
      }
      pts.clear();
    };
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      const double y = ty(ser.y[i]);
      if (!std::isfinite(ser.x[i]) || !std::isfinite(y)) {
        flush();
        continue;
      }
      pts += (pts.empty() ? "" : " ") + fmt(px(ser.x[i])) + "," + fmt(py(y));
    }
    flush();
    const double ly = T + 15 + 16.0 * static_cast<double>(s);
    out += "<line x1=\"" + fmt(W - R + 10) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" +
           fmt(W - R + 30) + "\" y2=\"" + fmt(ly - 4) + "\" stroke=\"" + colour +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(W - R + 35) + "\" y=\"" + fmt(ly) + "\">" +
           detail::xml_escape(ser.name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace guidelab
