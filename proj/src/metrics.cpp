#include "phaselab/metrics.hpp"

#include <cmath>

namespace phaselab {

PhaseSeries::PhaseSeries(std::vector<PhasePoint> points) : points_(std::move(points)) {
    for (std::size_t i = 0; i < points_.size(); ++i) {
        if (!std::isfinite(points_[i].beta)) throw StatsError("phase series: non-finite beta");
        if (i > 0 && !(points_[i].beta > points_[i - 1].beta)) {
            throw StatsError("phase series: beta must be strictly increasing");
        }
    }
}

namespace {

std::vector<PhasePoint> zip(std::span<const double> betas, std::span<const double> values) {
    if (betas.size() != values.size()) throw StatsError("phase series: betas and values differ in length");
    std::vector<PhasePoint> pts;
    pts.reserve(betas.size());
    for (std::size_t i = 0; i < betas.size(); ++i) pts.push_back({betas[i], values[i]});
    return pts;
}

}  // namespace

PhaseSeries::PhaseSeries(std::span<const double> betas, std::span<const double> values)
    : PhaseSeries(zip(betas, values)) {}

PhaseSeries PhaseSeries::negated() const {
    auto pts = points_;
    for (auto& p : pts) p.value = -p.value;
    return PhaseSeries(std::move(pts));
}

double roughness(std::span<const double> trace) {
    if (trace.size() < 2) throw StatsError("roughness: trace needs at least 2 steps");
    double sum = 0.0;
    for (std::size_t t = 1; t < trace.size(); ++t) sum += std::abs(trace[t] - trace[t - 1]);
    return sum / static_cast<double>(trace.size() - 1);
}

PocketReport detect_pocket(const PhaseSeries& series) {
    if (series.size() < 2) throw StatsError("detect_pocket: series needs at least 2 points");
    PocketReport r;
    for (const auto& p : series.points()) {
        if (p.value > 0.0) r.positive_points.push_back(p.beta);
    }
    if (r.positive_points.empty()) return r;
    const double lo = r.positive_points.front();
    const double hi = r.positive_points.back();
    r.band = std::make_pair(lo, hi);
    r.contiguous = true;
    for (const auto& p : series.points()) {
        if (p.beta >= lo && p.beta <= hi && !(p.value > 0.0)) r.contiguous = false;
    }
    return r;
}

CollapseReport detect_collapse(const PhaseSeries& series) {
    if (series.size() < 2) throw StatsError("detect_collapse: series needs at least 2 points");
    const auto& pts = series.points();
    std::optional<CollapseReport> best;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        if (!(pts[i].value > 0.0)) continue;
        const double drop = (pts[i].value - pts[i + 1].value) / pts[i].value;
        if (!best || drop > best->relative_drop) best = CollapseReport{pts[i].beta, pts[i + 1].beta, drop, false};
    }
    if (!best) throw StatsError("detect_collapse: no positive value to drop from");
    best->is_collapse = best->relative_drop > 0.0;
    return *best;
}

double seed_variance(std::span<const double> values) { return sample_variance(values); }

}  // namespace phaselab
