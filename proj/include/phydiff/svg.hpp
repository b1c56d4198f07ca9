#pragma once

#include <string>
#include <vector>

namespace phydiff {

struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct SvgChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;  // non-positive values are dropped on a log axis
  std::vector<SvgSeries> series;
};

// Self-contained SVG line chart with axes, ticks and a legend.
std::string render_svg(const SvgChart& chart);
void write_svg(const SvgChart& chart, const std::string& path);

}  // namespace phydiff
