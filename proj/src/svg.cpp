#include "dyncap/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dyncap::svg {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void include(double v) {
        if (!std::isfinite(v)) {
            return;
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bool valid() const { return lo <= hi; }
    // Widens degenerate or tight ranges so points never sit on the frame.
    void pad() {
        if (lo == hi) {
            lo -= 1.0;
            hi += 1.0;
        }
        const double margin = 0.05 * (hi - lo);
        lo -= margin;
        hi += margin;
    }
};

}  // namespace

std::string line_chart(const ChartSpec& spec, const std::vector<Series>& series) {
    Range xr;
    Range yr;
    for (const Series& s : series) {
        for (const auto& [x, y] : s.points) {
            if (std::isfinite(x) && std::isfinite(y)) {
                xr.include(x);
                yr.include(y);
            }
        }
    }
    if (!xr.valid() || !yr.valid()) {
        throw std::invalid_argument("line_chart: no finite data point to plot");
    }
    if (spec.identity_diagonal) {
        const double lo = std::min(xr.lo, yr.lo);
        const double hi = std::max(xr.hi, yr.hi);
        xr.include(lo);
        xr.include(hi);
        yr.include(lo);
        yr.include(hi);
    }
    xr.pad();
    yr.pad();

    const double left = 64.0;
    const double right = static_cast<double>(spec.width) - 16.0;
    const double top = 40.0;
    const double bottom = static_cast<double>(spec.height) - 48.0;
    const auto px = [&](double x) {
        return left + (x - xr.lo) / (xr.hi - xr.lo) * (right - left);
    };
    const auto py = [&](double y) {
        return bottom - (y - yr.lo) / (yr.hi - yr.lo) * (bottom - top);
    };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << spec.width
       << "\" height=\"" << spec.height << "\" viewBox=\"0 0 " << spec.width << " "
       << spec.height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << (spec.width / 2) << "\" y=\"22\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"15\">" << spec.title << "</text>\n";

    // Frame and tick marks.
    os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\""
       << num(right - left) << "\" height=\"" << num(bottom - top)
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    const int ticks = 5;
    for (int i = 0; i <= ticks; ++i) {
        const double fx = xr.lo + (xr.hi - xr.lo) * i / ticks;
        const double gx = px(fx);
        os << "<line x1=\"" << num(gx) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(gx)
           << "\" y2=\"" << num(bottom + 5) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << num(gx) << "\" y=\"" << num(bottom + 18)
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(fx)
           << "</text>\n";
        const double fy = yr.lo + (yr.hi - yr.lo) * i / ticks;
        const double gy = py(fy);
        os << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(gy) << "\" x2=\"" << num(left)
           << "\" y2=\"" << num(gy) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << num(left - 8) << "\" y=\"" << num(gy + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(fy)
           << "</text>\n";
    }
    os << "<text x=\"" << ((left + right) / 2) << "\" y=\"" << (spec.height - 10)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << spec.x_label
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << ((top + bottom) / 2)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
       << "transform=\"rotate(-90 16 " << num((top + bottom) / 2) << ")\">" << spec.y_label
       << "</text>\n";

    if (spec.identity_diagonal) {
        const double lo = std::max(xr.lo, yr.lo);
        const double hi = std::min(xr.hi, yr.hi);
        os << "<line x1=\"" << num(px(lo)) << "\" y1=\"" << num(py(lo)) << "\" x2=\""
           << num(px(hi)) << "\" y2=\"" << num(py(hi))
           << "\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>\n";
    }

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % kPaletteSize];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : series[s].points) {
            os << num(px(x)) << "," << num(py(y)) << " ";
        }
        os << "\"/>\n";
        for (const auto& [x, y] : series[s].points) {
            os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y))
               << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
    }

    // Legend, top-right inside the frame.
    const double lx = right - 150.0;
    double ly = top + 14.0;
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % kPaletteSize];
        os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(lx + 24)
           << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << num(lx + 30) << "\" y=\"" << num(ly)
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << series[s].label << "</text>\n";
        ly += 16.0;
    }

    os << "</svg>\n";
    return os.str();
}

}  // namespace dyncap::svg
