#include "blindloss/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace blindloss {

namespace {

constexpr int kWidth = 860;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 150;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 40;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

}  // namespace

void svg_line_chart(const std::filesystem::path& path, const std::string& title,
                    const std::vector<SvgSeries>& series) {
    double lo = 0, hi = 1;
    std::size_t n = 0;
    bool first = true;
    for (const SvgSeries& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            if (!std::isfinite(v)) continue;
            if (first) {
                lo = hi = v;
                first = false;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;

    std::ofstream out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << title << "</text>\n";
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
        << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
        << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << kMarginTop + 10
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(hi) << "</text>\n";
    out << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << kHeight - kMarginBottom
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(lo) << "</text>\n";

    int color = 0;
    int legend_y = kMarginTop + 10;
    for (const SvgSeries& s : series) {
        const char* c = kColors[color % 6];
        out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            if (!std::isfinite(s.values[i])) continue;
            const double x =
                kMarginLeft + plot_w * (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5);
            const double y =
                kHeight - kMarginBottom - plot_h * (s.values[i] - lo) / (hi - lo);
            out << fmt(x) << ',' << fmt(y) << ' ';
        }
        out << "\"/>\n";
        out << "<rect x=\"" << kWidth - kMarginRight + 10 << "\" y=\"" << legend_y - 9
            << "\" width=\"12\" height=\"12\" fill=\"" << c << "\"/>\n";
        out << "<text x=\"" << kWidth - kMarginRight + 28 << "\" y=\"" << legend_y + 2
            << "\" font-size=\"12\">" << s.label << "</text>\n";
        legend_y += 20;
        ++color;
    }
    out << "</svg>\n";
}

void svg_bar_chart(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::string>& labels, const std::vector<double>& values) {
    double hi = 0;
    for (double v : values)
        if (std::isfinite(v)) hi = std::max(hi, v);
    if (hi <= 0) hi = 1.0;
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    const std::size_t n = std::max<std::size_t>(1, values.size());
    const double slot = plot_w / static_cast<double>(n);

    std::ofstream out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << title << "</text>\n";
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
        << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom
        << "\" stroke=\"black\"/>\n";

    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = kMarginLeft + slot * static_cast<double>(i) + slot * 0.15;
        if (std::isfinite(values[i])) {
            const double bar_h = plot_h * values[i] / hi;
            out << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(kHeight - kMarginBottom - bar_h)
                << "\" width=\"" << fmt(slot * 0.7) << "\" height=\"" << fmt(bar_h)
                << "\" fill=\"#1f77b4\"/>\n";
            out << "<text x=\"" << fmt(x + slot * 0.35) << "\" y=\""
                << fmt(kHeight - kMarginBottom - bar_h - 4)
                << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(values[i]) << "</text>\n";
        }
        if (i < labels.size())
            out << "<text x=\"" << fmt(x + slot * 0.35) << "\" y=\"" << kHeight - kMarginBottom + 14
                << "\" text-anchor=\"middle\" font-size=\"11\">" << labels[i] << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace blindloss
