#pragma once

#include <span>
#include <vector>

namespace uat::stats {

/// Standard normal CDF, accurate in both tails (erfc form).
double normal_cdf(double z);

double mean(std::span<const double> xs);

/// Standard error of the mean of a Bernoulli estimate p from n draws.
double binomial_stderr(double p, std::size_t n);

/// Pearson correlation; 0 when either sample has zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Ordinary least squares fit y ≈ slope·x + intercept. Needs two distinct x values.
LinearFit least_squares(std::span<const double> xs, std::span<const double> ys);

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

}  // namespace uat::stats
