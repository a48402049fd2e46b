#include "phaselab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace phaselab {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

// Magnitude ranks doubled so tied (average) ranks stay integral.
std::vector<std::int64_t> doubled_ranks(const std::vector<double>& mags) {
    const std::size_t n = mags.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return mags[i] < mags[j]; });
    std::vector<std::int64_t> rank2(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && mags[order[j]] == mags[order[i]]) ++j;
        // ranks i+1 .. j share (i+1+j)/2; doubled: i+1+j
        for (std::size_t k = i; k < j; ++k) rank2[order[k]] = static_cast<std::int64_t>(i + 1 + j);
        i = j;
    }
    return rank2;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw StatsError("incomplete beta: a and b must be > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) throw StatsError("student t: df must be > 0");
    if (std::isnan(t)) return kNaN;
    if (std::isinf(t)) return 0.0;
    return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

double mean(std::span<const double> xs) {
    if (xs.empty()) throw StatsError("mean of empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) throw StatsError("sample variance needs n >= 2");
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return ss / static_cast<double>(xs.size() - 1);
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw StatsError("pearson: inputs differ in length");
    const std::size_t n = x.size();
    if (n < 3) throw StatsError("pearson: needs n >= 3");
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw StatsError("pearson: constant input, r undefined");
    Correlation c;
    c.n = n;
    c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double df = static_cast<double>(n - 2);
    if (std::abs(c.r) >= 1.0) {
        c.p = 0.0;
    } else {
        const double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
        c.p = student_t_two_sided_p(t, df);
    }
    return c;
}

double wilcoxon_signed_rank_p(std::span<const double> diffs) {
    std::vector<double> mags;
    std::vector<bool> positive;
    for (double d : diffs) {
        if (std::isnan(d)) throw StatsError("wilcoxon: NaN difference");
        if (d == 0.0) continue;
        mags.push_back(std::abs(d));
        positive.push_back(d > 0.0);
    }
    const std::size_t n = mags.size();
    if (n == 0) return 1.0;
    const auto rank2 = doubled_ranks(mags);
    const std::int64_t total = std::accumulate(rank2.begin(), rank2.end(), std::int64_t{0});
    std::int64_t observed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (positive[i]) observed += rank2[i];
    }
    // |2 W - total| is the doubled distance from the null mean.
    const std::int64_t obs_dev = std::llabs(2 * observed - total);

    if (n <= 20) {
        std::uint64_t extreme = 0;
        const std::uint64_t count = std::uint64_t{1} << n;
        for (std::uint64_t mask = 0; mask < count; ++mask) {
            std::int64_t w = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask & (std::uint64_t{1} << i)) w += rank2[i];
            }
            if (std::llabs(2 * w - total) >= obs_dev) ++extreme;
        }
        return static_cast<double>(extreme) / static_cast<double>(count);
    }

    // Null distribution of the doubled positive-rank sum by convolution.
    std::vector<long double> ways(static_cast<std::size_t>(total) + 1, 0.0L);
    ways[0] = 1.0L;
    std::int64_t reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::int64_t s = reach; s >= 0; --s) {
            if (ways[static_cast<std::size_t>(s)] != 0.0L) ways[static_cast<std::size_t>(s + rank2[i])] += ways[static_cast<std::size_t>(s)];
        }
        reach += rank2[i];
    }
    long double extreme = 0.0L;
    for (std::int64_t s = 0; s <= total; ++s) {
        if (std::llabs(2 * s - total) >= obs_dev) extreme += ways[static_cast<std::size_t>(s)];
    }
    return static_cast<double>(extreme / std::ldexp(1.0L, static_cast<int>(n)));
}

PairedStats paired_tests(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw StatsError("paired_tests: inputs differ in length");
    PairedStats s;
    s.n = a.size();
    std::vector<double> d(s.n);
    for (std::size_t i = 0; i < s.n; ++i) d[i] = a[i] - b[i];
    if (s.n < 2) {
        s.insufficient_n = true;
        s.mean_diff = s.n == 1 ? d[0] : kNaN;
        s.t = s.p_t = s.d_z = kNaN;
        s.p_wilcoxon = s.n == 1 ? wilcoxon_signed_rank_p(d) : kNaN;
        return s;
    }
    s.mean_diff = mean(d);
    s.p_wilcoxon = wilcoxon_signed_rank_p(d);
    const double sd = std::sqrt(sample_variance(d));
    if (sd == 0.0) {
        s.degenerate = true;
        if (s.mean_diff == 0.0) {
            s.t = kNaN;
            s.d_z = 0.0;
            s.p_t = 1.0;
        } else {
            s.t = std::copysign(std::numeric_limits<double>::infinity(), s.mean_diff);
            s.d_z = s.t;
            s.p_t = 0.0;
        }
        return s;
    }
    s.d_z = s.mean_diff / sd;
    s.t = s.d_z * std::sqrt(static_cast<double>(s.n));
    s.p_t = student_t_two_sided_p(s.t, static_cast<double>(s.n - 1));
    return s;
}

}  // namespace phaselab
