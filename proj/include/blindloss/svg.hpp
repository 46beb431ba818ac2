#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace blindloss {

struct SvgSeries {
    std::string label;
    std::vector<double> values;
};

// Self-contained SVG line chart (one polyline per series, shared x index).
void svg_line_chart(const std::filesystem::path& path, const std::string& title,
                    const std::vector<SvgSeries>& series);

// Self-contained SVG bar chart; NaN values are drawn as empty slots.
void svg_bar_chart(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::string>& labels, const std::vector<double>& values);

}  // namespace blindloss
