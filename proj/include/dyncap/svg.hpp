#pragma once

#include <string>
#include <utility>
#include <vector>

namespace dyncap::svg {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

struct ChartSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    int width = 640;
    int height = 480;
    // Draws the y = x reference as a gray dashed line across the data range.
    bool identity_diagonal = false;
};

// Static SVG 1.1 line chart: axes with ticks, one polyline per series, a
// legend, and optionally the identity diagonal. Output is deterministic for
// identical inputs. Throws std::invalid_argument when no finite point exists.
std::string line_chart(const ChartSpec& spec, const std::vector<Series>& series);

}  // namespace dyncap::svg
