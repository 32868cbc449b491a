#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace rangecap {

/// Neumaier-compensated running sum; the result depends only on the order of add() calls.
class CompensatedSum {
public:
    void add(double v);
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

double compensated_sum(std::span<const double> x);

struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double variance = 0.0;  // unbiased
    double skewness = 0.0;  // g1, 0 when the variance vanishes
    double excess_kurtosis = 0.0;  // g2, 0 when the variance vanishes

    double std_dev() const;
    /// Standard error of the mean.
    double mean_se() const;
};

Moments moments(std::span<const double> x);
/// sample mean of x^k.
double raw_moment(std::span<const double> x, int k);

struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

/// Leave-one-out jackknife of stat(x).
Estimate jackknife(std::span<const double> x, const std::function<double(std::span<const double>)>& stat);
/// Jackknife of the unbiased variance, O(n).
Estimate jackknife_variance(std::span<const double> x);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double intercept_se = 0.0;
};

/// Ordinary least squares; standard errors from the residual variance (0 when n = 2).
LinearFit ols(std::span<const double> x, std::span<const double> y);
/// Weighted least squares with weights 1 / se^2; standard errors from the
/// weights. Falls back to ols when any se is 0.
LinearFit weighted_ols(std::span<const double> x, std::span<const double> y, std::span<const double> se);

/// Anderson-Darling A^2 of x against N(mean, sd) with both fitted from x.
double anderson_darling_normal(std::span<const double> x);

struct BootstrapTest {
    double statistic = 0.0;
    double p_value = 1.0;
    std::uint64_t replicates = 0;
};

/// A^2 with p-value from B Gaussian samples of the same size, each refitted.
/// Replicate b draws from the stream (seed, bootstrap, b).
BootstrapTest anderson_darling_bootstrap(std::span<const double> x, std::uint64_t B, std::uint64_t seed,
                                         int workers = 1);

struct ChiSquareResult {
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
    std::size_t bins = 0;
};

/// Homogeneity test of two count vectors over the same categories. Categories
/// whose pooled expected count is below min_expected in either sample are
/// merged into one bin, which is folded into the smallest remaining bin if it
/// is still too small.
ChiSquareResult chi_square_two_sample(std::span<const double> a, std::span<const double> b, double min_expected = 5.0);

struct Histogram {
    std::vector<double> edges;  // bins + 1
    std::vector<std::uint64_t> counts;
};

Histogram histogram(std::span<const double> x, int bins);

struct QQPoint {
    double theoretical = 0.0;
    double sample = 0.0;
};

/// Standardised order statistics against normal quantiles at (i - 0.375) / (n + 0.25).
std::vector<QQPoint> normal_qq(std::span<const double> x);

double normal_quantile(double p);

}  // namespace rangecap
