#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace phaselab {

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (beta, value); beta > 0
};

// Numeric label carried into the SVG as data-key / data-value so it can be
// checked against the JSON artifact it came from.
struct PlotAnnotation {
    std::string key;
    double value = 0.0;
    std::string text;
};

struct PlotSpec {
    std::string title;
    std::string y_label;
    std::vector<PlotSeries> series;
    std::optional<std::pair<double, double>> band;  // shaded beta interval
    std::vector<PlotAnnotation> annotations;
    std::vector<std::string> notes;
};

inline constexpr int kPlotWidth = 800;
inline constexpr int kPlotHeight = 500;

// Fixed 800x500 canvas, log-scale x, linear y.
std::string render_plot(const PlotSpec& spec);

}  // namespace phaselab
