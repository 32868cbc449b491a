#include <doctest.h>

#include <cmath>
#include <vector>

#include "rangecap/core.hpp"
#include "rangecap/rng.hpp"
#include "rangecap/stats.hpp"

using namespace rangecap;

namespace {

const std::vector<double> kSample{0.3, -1.2, 2.5, 0.7, 0.1, -0.4, 1.9, -2.2, 0.05, 0.8, 3.1, -0.9};

std::vector<double> normal_sample(std::uint64_t seed, std::size_t n) {
    RngStream rng(seed, StreamTag::test, 0);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    return x;
}

}  // namespace

TEST_CASE("compensated summation") {
    std::vector<double> x{1.0};
    for (int i = 0; i < 1000; ++i) x.push_back(1e-16);
    CHECK(compensated_sum(x) == doctest::Approx(1.0 + 1e-13).epsilon(1e-15));
    CompensatedSum s;
    s.add(1e16);
    s.add(1.0);
    s.add(-1e16);
    CHECK(s.value() == 1.0);
}

TEST_CASE("moments of a fixed sample") {
    const auto m = moments(kSample);
    double mean = 0.0;
    for (double v : kSample) mean += v;
    mean /= 12.0;
    double ss = 0.0;
    for (double v : kSample) ss += (v - mean) * (v - mean);
    CHECK(m.n == 12);
    CHECK(m.mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(m.variance == doctest::Approx(ss / 11.0).epsilon(1e-14));
    // Population (biased) shape coefficients, as computed by scipy.stats.skew / kurtosis.
    CHECK(m.skewness == doctest::Approx(0.21555765567549717).epsilon(1e-12));
    CHECK(m.excess_kurtosis == doctest::Approx(-0.6457044417751994).epsilon(1e-12));
    CHECK(m.mean_se() == doctest::Approx(std::sqrt(ss / 11.0 / 12.0)).epsilon(1e-14));
    CHECK(raw_moment(kSample, 2) == doctest::Approx((ss + 12.0 * mean * mean) / 12.0).epsilon(1e-14));

    const std::vector<double> flat(5, 2.0);
    const auto c = moments(flat);
    CHECK(c.variance == 0.0);
    CHECK(c.skewness == 0.0);
    CHECK(c.excess_kurtosis == 0.0);
}

TEST_CASE("jackknife") {
    // For the mean the jackknife standard error is the usual one.
    const auto mean_stat = [](std::span<const double> y) {
        double s = 0.0;
        for (double v : y) s += v;
        return s / static_cast<double>(y.size());
    };
    const auto j = jackknife(kSample, mean_stat);
    CHECK(j.value == doctest::Approx(moments(kSample).mean).epsilon(1e-13));
    CHECK(j.se == doctest::Approx(moments(kSample).mean_se()).epsilon(1e-12));

    // Closed-form variance jackknife against the generic one.
    const auto var_stat = [](std::span<const double> y) { return moments(y).variance; };
    const auto x = normal_sample(3, 200);
    const auto g = jackknife(x, var_stat);
    const auto f = jackknife_variance(x);
    CHECK(f.value == doctest::Approx(g.value).epsilon(1e-10));
    CHECK(f.se == doctest::Approx(g.se).epsilon(1e-8));
    CHECK_THROWS_AS(jackknife_variance(std::vector<double>{1.0, 2.0}), DomainError);
}

TEST_CASE("least squares") {
    const std::vector<double> x{0, 1, 2, 3, 4}, y{1, 3, 5, 7, 9};
    const auto f = ols(x, y);
    CHECK(f.slope == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(f.intercept == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(f.slope_se == doctest::Approx(0.0).epsilon(1e-12));

    // y = 1 + x + e with e = (1, -1, -1, 1): slope 1 exactly, residual variance 4/2.
    const std::vector<double> x2{0, 1, 2, 3}, y2{2, 1, 2, 5};
    const auto g = ols(x2, y2);
    CHECK(g.slope == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(g.intercept == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(g.slope_se == doctest::Approx(std::sqrt(2.0 / 5.0)).epsilon(1e-12));

    // Weighted fit: an outlier with a huge standard error barely moves the line.
    const std::vector<double> xw{0, 1, 2, 3, 4}, yw{0, 1, 2, 3, 100}, se{1, 1, 1, 1, 1e6};
    CHECK(weighted_ols(xw, yw, se).slope == doctest::Approx(1.0).epsilon(1e-6));
    const std::vector<double> ones(5, 1.0);
    CHECK(weighted_ols(xw, yw, ones).slope == doctest::Approx(ols(xw, yw).slope).epsilon(1e-13));
}

TEST_CASE("Anderson-Darling statistic") {
    CHECK(anderson_darling_normal(kSample) == doctest::Approx(0.1883842249985257).epsilon(1e-10));
    CHECK_THROWS_AS(anderson_darling_normal(std::vector<double>{1.0, 1.0, 1.0}), DomainError);
}

TEST_CASE("Anderson-Darling bootstrap: power and calibration") {
    const auto gauss = normal_sample(5, 2000);
    CHECK(anderson_darling_bootstrap(gauss, 999, 1).p_value > 0.01);

    RngStream rng(6, StreamTag::test, 1);
    std::vector<double> expo(2000);
    for (auto& v : expo) v = -std::log(rng.uniform_open());
    const auto e = anderson_darling_bootstrap(expo, 2000, 1);
    CHECK(e.p_value < 0.001);
    CHECK(e.p_value == doctest::Approx(1.0 / 2001.0));

    // Under the null the p-value is roughly uniform.
    int below = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        const auto x = normal_sample(1000 + static_cast<std::uint64_t>(t), 100);
        below += anderson_darling_bootstrap(x, 199, 2).p_value <= 0.1 ? 1 : 0;
    }
    CHECK(std::abs(below - 0.1 * trials) < 4.0 * std::sqrt(trials * 0.09));

    // Deterministic for a given seed regardless of worker count.
    const auto a = anderson_darling_bootstrap(gauss, 300, 9, 1);
    const auto b = anderson_darling_bootstrap(gauss, 300, 9, 3);
    CHECK(a.p_value == b.p_value);
}

TEST_CASE("two-sample chi-square") {
    const std::vector<double> a{30, 12, 45, 9, 3}, b{25, 20, 40, 11, 2};
    const auto r = chi_square_two_sample(a, b);
    // The last cell is pooled into the smallest remaining cell; reference from scipy's contingency test.
    CHECK(r.bins == 4);
    CHECK(r.dof == 3.0);
    CHECK(r.statistic == doctest::Approx(2.7836586866151407).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(0.4261970577819536).epsilon(1e-10));

    const auto same = chi_square_two_sample(a, a);
    CHECK(same.statistic == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(same.p_value == doctest::Approx(1.0));
    CHECK_THROWS_AS(chi_square_two_sample(a, std::vector<double>{1, 2}), DomainError);
}

TEST_CASE("histogram and QQ data") {
    const auto x = normal_sample(8, 1000);
    const auto h = histogram(x, 40);
    REQUIRE(h.edges.size() == 41);
    std::uint64_t total = 0;
    for (auto c : h.counts) total += c;
    CHECK(total == 1000);
    const auto qq = normal_qq(x);
    REQUIRE(qq.size() == 1000);
    for (std::size_t i = 1; i < qq.size(); ++i) {
        REQUIRE(qq[i].theoretical > qq[i - 1].theoretical);
        REQUIRE(qq[i].sample >= qq[i - 1].sample);
    }
    CHECK(qq.front().theoretical == doctest::Approx(normal_quantile(0.625 / 1000.25)));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
}

TEST_CASE("standard errors shrink like M^{-1/2}") {
    const auto small = moments(normal_sample(10, 1000)).mean_se();
    const auto large = moments(normal_sample(11, 16000)).mean_se();
    CHECK(small / large == doctest::Approx(4.0).epsilon(0.05));
}
