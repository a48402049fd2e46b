#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "phaselab/stats.hpp"

namespace phaselab {

struct PhasePoint {
    double beta = 0.0;
    double value = 0.0;
};

// (beta, value) pairs with strictly increasing beta.
class PhaseSeries {
public:
    PhaseSeries() = default;
    explicit PhaseSeries(std::vector<PhasePoint> points);
    PhaseSeries(std::span<const double> betas, std::span<const double> values);

    const std::vector<PhasePoint>& points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    PhaseSeries negated() const;

private:
    std::vector<PhasePoint> points_;
};

// Mean absolute stepwise change. Throws StatsError for fewer than 2 values.
double roughness(std::span<const double> trace);

struct PocketReport {
    std::vector<double> positive_points;
    std::optional<std::pair<double, double>> band;
    // No non-positive grid point inside the band; false for an empty pocket.
    bool contiguous = false;

    bool empty() const { return positive_points.empty(); }
};

// Pocket = grid points with value strictly > 0.
PocketReport detect_pocket(const PhaseSeries& series);

struct CollapseReport {
    double beta_from = 0.0;
    double beta_to = 0.0;
    double relative_drop = 0.0;
    bool is_collapse = false;  // relative_drop > 0
};

// Largest relative drop (v_i − v_{i+1}) / v_i over adjacent pairs with v_i > 0;
// ties go to the smaller beta. Throws StatsError when no v_i > 0.
CollapseReport detect_collapse(const PhaseSeries& series);

// Sample variance across seeds. Throws StatsError for n < 2.
double seed_variance(std::span<const double> values);

}  // namespace phaselab
