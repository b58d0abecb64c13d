#pragma once
// Minimal static SVG line charts.

#include <string>
#include <vector>

namespace pasr {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool markers = false;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, int width = 640, int height = 400);

std::string xml_escape(const std::string& s);

}  // namespace pasr
