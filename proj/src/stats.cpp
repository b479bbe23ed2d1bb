#include "uat/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "uat/common.hpp"

namespace uat::stats {

double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double mean(std::span<const double> xs) {
    require(!xs.empty(), "mean: empty sample");
    double s = 0.0;
    for (double x : xs) {
        s += x;
    }
    return s / static_cast<double>(xs.size());
}

double binomial_stderr(double p, std::size_t n) {
    require(n > 0, "binomial_stderr: n must be positive");
    return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(n));
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    require(xs.size() == ys.size() && xs.size() >= 2, "pearson: need two equal-length samples of size >= 2");
    const double mx = mean(xs);
    const double my = mean(ys);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        return 0.0;
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

LinearFit least_squares(std::span<const double> xs, std::span<const double> ys) {
    require(xs.size() == ys.size() && xs.size() >= 2, "least_squares: need at least two points");
    const double mx = mean(xs);
    const double my = mean(ys);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    require(sxx > 0.0, "least_squares: x values are all equal");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}

namespace {

// Kolmogorov distribution survival function Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²).
double kolmogorov_survival(double lambda) {
    if (lambda < 1e-3) {
        return 1.0;
    }
    double sum = 0.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-16) {
            break;
        }
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    require(!a.empty() && !b.empty(), "ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = na * nb / (na + nb);
    const double sq = std::sqrt(ne);
    KsResult r;
    r.statistic = d;
    r.p_value = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d);
    return r;
}

}  // namespace uat::stats
