#pragma once

#include <string>
#include <vector>

namespace drbd::cli {

struct Series {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<double> y;  // one value per x tick, all > 0
};

/// Self-contained SVG line chart with categorical x ticks and a log10 y
/// axis. Output depends only on the arguments.
std::string line_plot_svg(const std::string& title, const std::string& y_label, const std::vector<std::string>& x_ticks,
                          const std::vector<Series>& series);

}  // namespace drbd::cli
