#include "guidefree/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace guidefree {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v, const char* pattern = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += ch;
    }
  }
  return out;
}

double nice_step(double range, int target) {
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  const double nice = r < 1.5 ? 1.0 : r < 3.0 ? 2.0 : r < 7.0 ? 5.0 : 10.0;
  return nice * mag;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.04 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  Range rx;
  Range ry;
  for (const auto& s : spec.series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        rx.add(s.x[i]);
        ry.add(s.y[i]);
      }
    }
  }
  rx.finish();
  ry.finish();
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - rx.lo) / (rx.hi - rx.lo) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - ry.lo) / (ry.hi - ry.lo)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(spec.title)
    << "</text>\n";
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#333\"/>\n";

  const double sx = nice_step(rx.hi - rx.lo, 6);
  for (double t = std::ceil(rx.lo / sx) * sx; t <= rx.hi; t += sx) {
    const double v = std::abs(t) < 1e-12 * sx ? 0.0 : t;
    o << "<line x1=\"" << fmt(px(v)) << "\" y1=\"" << kTop + ph << "\" x2=\"" << fmt(px(v)) << "\" y2=\""
      << kTop + ph + 5 << "\" stroke=\"#333\"/>";
    o << "<text x=\"" << fmt(px(v)) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">" << fmt(v, "%g")
      << "</text>\n";
  }
  const double sy = nice_step(ry.hi - ry.lo, 6);
  for (double t = std::ceil(ry.lo / sy) * sy; t <= ry.hi; t += sy) {
    const double v = std::abs(t) < 1e-12 * sy ? 0.0 : t;
    o << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << fmt(py(v)) << "\" x2=\"" << kLeft << "\" y2=\"" << fmt(py(v))
      << "\" stroke=\"#333\"/>";
    o << "<text x=\"" << kLeft - 8 << "\" y=\"" << fmt(py(v) + 4) << "\" text-anchor=\"end\">" << fmt(v, "%g")
      << "</text>\n";
  }
  o << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
    << escape(spec.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << kTop + ph / 2 << ")\">" << escape(spec.y_label) << "</text>\n";

  const double radius = spec.small_markers ? 1.2 : 3.0;
  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const auto& s = spec.series[k];
    const char* color = kPalette[k % (sizeof kPalette / sizeof kPalette[0])];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    if (s.line && n > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
      for (std::size_t i = 0; i < n; ++i) {
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i])) << ' ';
      }
      o << "\"/>\n";
    }
    if (s.markers || !s.line) {
      o << "<g fill=\"" << color << "\"" << (spec.small_markers ? " fill-opacity=\"0.5\"" : "") << ">\n";
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        o << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i])) << "\" r=\"" << radius << "\"/>\n";
      }
      o << "</g>\n";
    }
  }

  std::size_t labeled = 0;
  for (const auto& s : spec.series) labeled += s.label.empty() ? 0 : 1;
  if (labeled > 1) {
    double y = kTop + 14;
    for (std::size_t k = 0; k < spec.series.size(); ++k) {
      if (spec.series[k].label.empty()) continue;
      const char* color = kPalette[k % (sizeof kPalette / sizeof kPalette[0])];
      o << "<rect x=\"" << kLeft + pw - 150 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\"" << color
        << "\"/><text x=\"" << kLeft + pw - 132 << "\" y=\"" << y + 1 << "\">" << escape(spec.series[k].label)
        << "</text>\n";
      y += 18;
    }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace guidefree
