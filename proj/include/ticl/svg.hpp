#pragma once

#include <string>
#include <vector>

namespace ticl {

struct ChartSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

/// Minimal line chart, no external plotting dependency. CSV stays canonical;
/// these are for eyeballing runs.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<ChartSeries>& series);

std::string heatmap_svg(const std::string& title, const std::string& x_label,
                        const std::string& y_label,
                        const std::vector<std::vector<double>>& grid);

} // namespace ticl
