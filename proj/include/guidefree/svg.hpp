#pragma once

#include <string>
#include <vector>

namespace guidefree {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool line = true;
  bool markers = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  bool small_markers = false;  // dense scatter clouds
};

/// Standalone SVG document: axes with ticks, one polyline and/or circle
/// set per series, legend when more than one series is labeled. Non-finite
/// points are skipped. Output depends only on the input.
std::string render_svg(const PlotSpec& spec);

}  // namespace guidefree
