#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

namespace phaselab {

class StatsError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Regularized incomplete beta I_x(a, b), continued fraction with modified Lentz.
double regularized_incomplete_beta(double a, double b, double x);

// Two-sided tail probability P(|T| >= |t|) for Student-t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

double mean(std::span<const double> xs);

// Sample variance (n − 1 denominator). Throws for n < 2.
double sample_variance(std::span<const double> xs);

struct Correlation {
    double r = 0.0;
    double p = 1.0;
    std::size_t n = 0;
};

// Pearson r with a two-sided p from r·sqrt((n−2)/(1−r²)) ~ t(n−2).
// Throws StatsError for n < 3, unequal lengths or a constant input.
Correlation pearson(std::span<const double> x, std::span<const double> y);

struct PairedStats {
    std::size_t n = 0;
    double mean_diff = 0.0;
    double t = 0.0;
    double p_t = 1.0;
    double d_z = 0.0;
    double p_wilcoxon = 1.0;
    bool degenerate = false;      // zero spread in the differences
    bool insufficient_n = false;  // n < 2
};

// Paired t (df n−1), Cohen's d_z and exact two-sided Wilcoxon signed-rank on d = a − b.
PairedStats paired_tests(std::span<const double> a, std::span<const double> b);

// Exact two-sided Wilcoxon signed-rank p. Zero differences are dropped and
// tied magnitudes share their average rank. n <= 20 enumerates all 2^n sign
// assignments; larger n uses the equivalent rank-sum convolution.
double wilcoxon_signed_rank_p(std::span<const double> diffs);

}  // namespace phaselab
