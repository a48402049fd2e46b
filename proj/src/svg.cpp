#include "phaselab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "phaselab/run_log.hpp"

namespace phaselab {
namespace {

constexpr double kLeft = 80, kRight = 170, kTop = 50, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fx(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

std::string render_plot(const PlotSpec& spec) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = 0.0, ymax = 0.0;
    bool any = false;
    for (const auto& s : spec.series) {
        for (const auto& [x, y] : s.points) {
            if (!(x > 0.0) || !std::isfinite(y)) continue;
            any = true;
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (spec.band) {
        xmin = std::min(xmin, spec.band->first);
        xmax = std::max(xmax, spec.band->second);
    }
    if (!std::isfinite(xmin)) {
        xmin = 1e-3;
        xmax = 1e-1;
    }
    double lx0 = std::log10(xmin), lx1 = std::log10(xmax);
    if (lx1 - lx0 < 1e-9) {
        lx0 -= 0.5;
        lx1 += 0.5;
    }
    const double pad_x = 0.04 * (lx1 - lx0);
    lx0 -= pad_x;
    lx1 += pad_x;
    if (ymax - ymin < 1e-12) {
        ymin -= 1.0;
        ymax += 1.0;
    }
    const double pad_y = 0.08 * (ymax - ymin);
    ymin -= pad_y;
    ymax += pad_y;

    const double pw = kPlotWidth - kLeft - kRight;
    const double ph = kPlotHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (std::log10(x) - lx0) / (lx1 - lx0) * pw; };
    auto py = [&](double y) { return kTop + (ymax - y) / (ymax - ymin) * ph; };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kPlotWidth) + "\" height=\"" +
           std::to_string(kPlotHeight) + "\" viewBox=\"0 0 " + std::to_string(kPlotWidth) + " " +
           std::to_string(kPlotHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + fx(kPlotWidth / 2.0) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + escape(spec.title) +
           "</text>\n";

    if (spec.band) {
        const double x0 = px(spec.band->first), x1 = px(spec.band->second);
        const double w = std::max(x1 - x0, 4.0);
        out += "<rect class=\"pocket-band\" x=\"" + fx(x1 - x0 < 4.0 ? x0 - 2.0 : x0) + "\" y=\"" + fx(kTop) + "\" width=\"" +
               fx(w) + "\" height=\"" + fx(ph) + "\" fill=\"#f2c14e\" fill-opacity=\"0.3\"/>\n";
    }

    // Axes, decade ticks and the zero line.
    out += "<rect x=\"" + fx(kLeft) + "\" y=\"" + fx(kTop) + "\" width=\"" + fx(pw) + "\" height=\"" + fx(ph) +
           "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int e = static_cast<int>(std::ceil(lx0)); e <= static_cast<int>(std::floor(lx1)); ++e) {
        const double v = std::pow(10.0, e);
        const double x = px(v);
        out += "<line x1=\"" + fx(x) + "\" y1=\"" + fx(kTop + ph) + "\" x2=\"" + fx(x) + "\" y2=\"" + fx(kTop + ph + 5) +
               "\" stroke=\"#333\"/>\n";
        out += "<text x=\"" + fx(x) + "\" y=\"" + fx(kTop + ph + 18) + "\" text-anchor=\"middle\">" + tick_label(v) + "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double v = ymin + (ymax - ymin) * i / 4.0;
        out += "<text x=\"" + fx(kLeft - 6) + "\" y=\"" + fx(py(v) + 4) + "\" text-anchor=\"end\">" + tick_label(std::round(v * 1e4) / 1e4) +
               "</text>\n";
    }
    if (ymin < 0.0 && ymax > 0.0) {
        out += "<line x1=\"" + fx(kLeft) + "\" y1=\"" + fx(py(0.0)) + "\" x2=\"" + fx(kLeft + pw) + "\" y2=\"" + fx(py(0.0)) +
               "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    }
    out += "<text x=\"" + fx(kLeft + pw / 2) + "\" y=\"" + fx(kPlotHeight - 18.0) + "\" text-anchor=\"middle\">beta (log scale)</text>\n";
    out += "<text x=\"18\" y=\"" + fx(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " + fx(kTop + ph / 2) +
           ")\">" + escape(spec.y_label) + "</text>\n";

    for (std::size_t si = 0; si < spec.series.size(); ++si) {
        const auto& s = spec.series[si];
        const char* color = kPalette[si % std::size(kPalette)];
        std::string path;
        for (const auto& [x, y] : s.points) {
            if (!(x > 0.0) || !std::isfinite(y)) continue;
            path += (path.empty() ? "M" : " L") + fx(px(x)) + " " + fx(py(y));
        }
        if (!path.empty()) {
            out += "<path class=\"series\" data-label=\"" + escape(s.label) + "\" d=\"" + path + "\" fill=\"none\" stroke=\"" +
                   color + "\" stroke-width=\"2\"/>\n";
        }
        for (const auto& [x, y] : s.points) {
            if (!(x > 0.0) || !std::isfinite(y)) continue;
            out += "<circle cx=\"" + fx(px(x)) + "\" cy=\"" + fx(py(y)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
        }
        const double ly = kTop + 14 + 18.0 * static_cast<double>(si);
        out += "<line x1=\"" + fx(kLeft + pw + 14) + "\" y1=\"" + fx(ly - 4) + "\" x2=\"" + fx(kLeft + pw + 34) + "\" y2=\"" +
               fx(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + fx(kLeft + pw + 40) + "\" y=\"" + fx(ly) + "\">" + escape(s.label) + "</text>\n";
    }

    double ty = kTop + 14 + 18.0 * static_cast<double>(spec.series.size()) + 16;
    for (const auto& a : spec.annotations) {
        out += "<text class=\"annotation\" data-key=\"" + escape(a.key) + "\" data-value=\"" + format9(a.value) + "\" x=\"" +
               fx(kLeft + pw + 14) + "\" y=\"" + fx(ty) + "\">" + escape(a.text) + "</text>\n";
        ty += 18;
    }
    for (std::size_t i = 0; i < spec.notes.size(); ++i) {
        out += "<text class=\"note\" x=\"" + fx(kLeft + 10) + "\" y=\"" + fx(kTop + 20 + 16.0 * static_cast<double>(i)) + "\">" +
               escape(spec.notes[i]) + "</text>\n";
    }
    if (!any) {
        out += "<text class=\"note\" x=\"" + fx(kLeft + pw / 2) + "\" y=\"" + fx(kTop + ph / 2) +
               "\" text-anchor=\"middle\">no data</text>\n";
    }
    out += "</svg>\n";
    return out;
}

}  // namespace phaselab
