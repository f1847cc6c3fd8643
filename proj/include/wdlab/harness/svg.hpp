// Copyright (c) 2026 The wdlab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Minimal static SVG line plots for logged series.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "wdlab/error.hpp"

namespace wdlab::harness::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title;
  std::string x_label = "epoch";
  std::string y_label;
  bool log_y = false;
  int width = 640;
  int height = 400;
};

namespace detail {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

/// Renders the series into one SVG document. Non-finite points (and
/// non-positive points on a log axis) are skipped and split the line.
inline std::string line_plot(const std::vector<Series>& series, const PlotOptions& opt) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  const auto usable = [&](double y) { return std::isfinite(y) && (!opt.log_y || y > 0.0); };
  const auto ty = [&](double y) { return opt.log_y ? std::log10(y) : y; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw StructuralError("svg: series '" + s.name + "' has mismatched lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !usable(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x0 == x1) x1 = x0 + 1;
  if (y0 == y1) y0 -= 0.5, y1 += 0.5;
  const double left = 70, right = 150, top = 30, bottom = 45;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;
  const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return top + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << detail::escape(opt.title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0;
    const double fy = y0 + (y1 - y0) * t / 4.0;
    const double label_y = opt.log_y ? std::pow(10.0, fy) : fy;
    os << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 15 << "\" text-anchor=\"middle\">" << detail::num(fx)
       << "</text>\n";
    const double yy = top + (1.0 - (fy - y0) / (y1 - y0)) * ph;
    os << "<text x=\"" << left - 5 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">" << detail::num(label_y)
       << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << opt.height - 8 << "\" text-anchor=\"middle\">"
     << detail::escape(opt.x_label) << "</text>\n";
  os << "<text x=\"14\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 14 " << top + ph / 2
     << ")\" text-anchor=\"middle\">" << detail::escape(opt.y_label + (opt.log_y ? " (log)" : "")) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = colors[k % (sizeof colors / sizeof *colors)];
    std::string path;
    bool pen = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !usable(s.y[i])) {
        pen = false;
        continue;
      }
      path += (pen ? " L" : " M") + detail::num(px(s.x[i])) + " " + detail::num(py(s.y[i]));
      pen = true;
    }
    if (!path.empty()) {
      os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    }
    const double ly = top + 12 + 16.0 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\">" << detail::escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_line_plot(const std::string& path, const std::vector<Series>& series, const PlotOptions& opt) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write " + path);
  out << line_plot(series, opt);
}

}  // namespace wdlab::harness::svg
