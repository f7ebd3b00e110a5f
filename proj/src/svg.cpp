#include "ticl/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ticl {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 64;
constexpr int kMarginRight = 24;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 48;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

} // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<ChartSeries>& series) {
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const ChartSeries& s : series) {
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!any) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                any = true;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto px = [&](double x) { return kMarginLeft + (x - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double y) { return kMarginTop + (1.0 - (y - ymin) / (ymax - ymin)) * plot_h; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
       << "\" height=\"" << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">"
       << title << "</text>\n";
    os << "<rect x=\"" << kMarginLeft << "\" y=\"" << kMarginTop << "\" width=\"" << plot_w
       << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#444\"/>\n";
    // axis extremes
    os << "<text x=\"" << kMarginLeft << "\" y=\"" << kHeight - kMarginBottom + 16
       << "\" text-anchor=\"middle\">" << num(xmin) << "</text>\n";
    os << "<text x=\"" << kMarginLeft + plot_w << "\" y=\"" << kHeight - kMarginBottom + 16
       << "\" text-anchor=\"middle\">" << num(xmax) << "</text>\n";
    os << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << py(ymin) + 4
       << "\" text-anchor=\"end\">" << num(ymin) << "</text>\n";
    os << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << py(ymax) + 4
       << "\" text-anchor=\"end\">" << num(ymax) << "</text>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    os << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << kHeight / 2 << ")\">" << y_label << "</text>\n";
    if (ymin < 0.0 && ymax > 0.0) {
        os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << py(0) << "\" x2=\""
           << kMarginLeft + plot_w << "\" y2=\"" << py(0)
           << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (size_t si = 0; si < series.size(); ++si) {
        const ChartSeries& s = series[si];
        const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i) {
            os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        }
        os << "\"/>\n";
        for (size_t i = 0; i < s.x.size(); ++i) {
            os << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
               << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        os << "<text x=\"" << kMarginLeft + 10 << "\" y=\"" << kMarginTop + 16 + 16 * si
           << "\" fill=\"" << color << "\">" << s.name << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string heatmap_svg(const std::string& title, const std::string& x_label,
                        const std::string& y_label,
                        const std::vector<std::vector<double>>& grid) {
    const size_t n = grid.size();
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    double vmin = 0.0, vmax = 1.0;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
       << "\" height=\"" << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">"
       << title << "</text>\n";
    if (n == 0) {
        os << "</svg>\n";
        return os.str();
    }
    const double cw = plot_w / static_cast<double>(n);
    const double ch = plot_h / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {     // token (column)
        for (size_t j = 0; j < n; ++j) { // task data (row)
            const double v = std::clamp((grid[i][j] - vmin) / (vmax - vmin), 0.0, 1.0);
            const int r = static_cast<int>(255 * v);
            const int b = static_cast<int>(255 * (1.0 - v));
            const double x = kMarginLeft + cw * static_cast<double>(i);
            const double y = kMarginTop + ch * static_cast<double>(j);
            char color[16];
            std::snprintf(color, sizeof(color), "#%02x40%02x", r, b);
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cw)
               << "\" height=\"" << num(ch) << "\" fill=\"" << color << "\"/>\n";
            char label[16];
            std::snprintf(label, sizeof(label), "%.2f", grid[i][j]);
            os << "<text x=\"" << num(x + cw / 2) << "\" y=\"" << num(y + ch / 2 + 4)
               << "\" text-anchor=\"middle\" fill=\"white\">" << label << "</text>\n";
        }
        os << "<text x=\"" << num(kMarginLeft + cw * (static_cast<double>(i) + 0.5)) << "\" y=\""
           << kHeight - kMarginBottom + 16 << "\" text-anchor=\"middle\">" << i + 1 << "</text>\n";
        os << "<text x=\"" << kMarginLeft - 10 << "\" y=\""
           << num(kMarginTop + ch * (static_cast<double>(i) + 0.5) + 4)
           << "\" text-anchor=\"end\">" << i + 1 << "</text>\n";
    }
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    os << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << kHeight / 2 << ")\">" << y_label << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

} // namespace ticl
