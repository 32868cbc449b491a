#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "rangecap/special.hpp"
#include "rangecap/walk_models.hpp"

using namespace rangecap;

namespace {

Site site1(std::int64_t x) {
    Site s;
    s[0] = x;
    return s;
}

// P(Z_k = 0) for the simple walk in Z^3: split the k steps between the first
// axis and the remaining plane; the planar walk returns with probability
// (C(m, m/2) 2^-m)^2.
std::vector<double> simple3_return_probs(int K) {
    std::vector<double> lf(static_cast<std::size_t>(K) + 1, 0.0);
    for (int i = 1; i <= K; ++i) lf[static_cast<std::size_t>(i)] = lf[static_cast<std::size_t>(i - 1)] + std::log(i);
    auto lbinom = [&](int n, int k) {
        return lf[static_cast<std::size_t>(n)] - lf[static_cast<std::size_t>(k)] - lf[static_cast<std::size_t>(n - k)];
    };
    auto lp1 = [&](int m) { return lbinom(m, m / 2) - m * std::log(2.0); };
    std::vector<double> out(static_cast<std::size_t>(K) + 1, 0.0);
    for (int k = 0; k <= K; k += 2) {
        double s = 0.0;
        for (int j = 0; j <= k; j += 2) {
            const int m = k - j;
            s += std::exp(lbinom(k, j) + j * std::log(1.0 / 3.0) + m * std::log(2.0 / 3.0) + lp1(j) + 2.0 * lp1(m));
        }
        out[static_cast<std::size_t>(k)] = s;
    }
    return out;
}

double sibuya_recurrence_pmf(double gamma, int k) {
    double p = gamma;
    for (int i = 1; i < k; ++i) p *= (i - gamma) / (i + 1);
    return p;
}

}  // namespace

TEST_CASE("model validation") {
    CHECK_THROWS_AS(simple_walk(0), DomainError);
    CHECK_THROWS_AS(simple_walk(kMaxDim + 1), DomainError);
    CHECK_THROWS_AS(subordinate_walk(3, 0.0, 0.1), DomainError);
    CHECK_THROWS_AS(subordinate_walk(3, 2.5, 0.1), DomainError);
    CHECK_THROWS_AS(subordinate_walk(3, 0.8, 1.0), DomainError);
    CHECK(subordinate_walk(3, 0.8, 0.02).transient());
    CHECK_FALSE(subordinate_walk(1, 1.5, 0.1).transient());
    CHECK(loop_free_model(subordinate_walk(3, 0.8, 0.02)).loop_prob() == 0.0);
    CHECK(loop_inserted_model(subordinate_walk(3, 0.8, 0.02)).loop_prob() == 0.02);
    CHECK_THROWS_AS(loop_free_model(loop_free_model(simple_walk(3))), DomainError);
}

TEST_CASE("checked site arithmetic") {
    Site big;
    big[0] = std::numeric_limits<std::int64_t>::max();
    CHECK_THROWS_AS(checked_add(big, site1(1)), ResourceError);
    Site small;
    small[1] = std::numeric_limits<std::int64_t>::min();
    CHECK_THROWS_AS(checked_sub(small, Site::unit(1)), ResourceError);
    CHECK(checked_add(site1(2), site1(-5)) == site1(-3));
}

TEST_CASE("Sibuya pmf follows the recurrence p_{k+1} = p_k (k - gamma) / (k + 1)") {
    for (double g : {0.3, 0.4, 0.55, 0.8}) {
        CHECK(sibuya_pmf(g, 1) == doctest::Approx(g).epsilon(1e-15));
        for (int k : {2, 3, 10, 100, 1000, 20000}) {
            CHECK(sibuya_pmf(g, static_cast<std::uint64_t>(k)) == doctest::Approx(sibuya_recurrence_pmf(g, k)).epsilon(1e-11));
        }
        double mass = 0.0;
        for (std::uint64_t k = 1; k <= 500; ++k) mass += sibuya_pmf(g, k);
        CHECK(mass + sibuya_tail(g, 500) == doctest::Approx(1.0).epsilon(1e-13));
    }
    CHECK(sibuya_pmf(0.5, 2) == doctest::Approx(0.125));
}

TEST_CASE("Sibuya tail beyond the table matches the direct product") {
    const double g = 0.4;
    long double prod = 1.0L;
    std::uint64_t k = 0;
    for (std::uint64_t target : {std::uint64_t{70000}, std::uint64_t{300000}}) {
        for (; k < target; ++k) prod *= 1.0L - static_cast<long double>(g) / static_cast<long double>(k + 1);
        CHECK(sibuya_tail(g, target) == doctest::Approx(static_cast<double>(prod)).epsilon(1e-10));
    }
}

TEST_CASE("Sibuya sampler matches the pmf (chi-square) and the far tail") {
    const double g = 0.4;
    const auto sub = sibuya_for(g);
    RngStream rng(21, StreamTag::test, 0);
    const int n = 1000000, bins = 30;
    std::vector<double> counts(bins + 1, 0.0);
    double far20 = 0.0, far30 = 0.0;
    for (int i = 0; i < n; ++i) {
        const std::uint64_t k = sub->sample(rng);
        REQUIRE(k >= 1);
        counts[std::min<std::uint64_t>(k, bins + 1) - 1] += 1.0;
        if (k > (std::uint64_t{1} << 20)) far20 += 1.0;
        if (k > (std::uint64_t{1} << 30)) far30 += 1.0;
    }
    double chi = 0.0, below = 0.0;
    for (int k = 1; k <= bins; ++k) {
        const double p = sibuya_recurrence_pmf(g, k);
        below += p;
        const double e = n * p;
        chi += (counts[static_cast<std::size_t>(k - 1)] - e) * (counts[static_cast<std::size_t>(k - 1)] - e) / e;
    }
    const double e_tail = n * (1.0 - below);
    chi += (counts[bins] - e_tail) * (counts[bins] - e_tail) / e_tail;
    CHECK(chi_square_sf(chi, bins) > 1e-3);

    for (auto [count, k] : {std::pair{far20, std::uint64_t{1} << 20}, std::pair{far30, std::uint64_t{1} << 30}}) {
        const double p = sibuya_tail(g, k);
        CHECK(std::abs(count - n * p) < 5.0 * std::sqrt(n * p));
    }
}

TEST_CASE("binomial sampler: inversion and rejection branches") {
    RngStream rng(3, StreamTag::test, 1);
    for (auto [n, p] : {std::pair{std::uint64_t{20}, 0.3}, std::pair{std::uint64_t{500}, 0.5}, std::pair{std::uint64_t{5000}, 0.07}}) {
        const int draws = 200000;
        std::vector<double> counts(n + 1, 0.0);
        for (int i = 0; i < draws; ++i) {
            const auto k = binomial_sample(rng, n, p);
            REQUIRE(k <= n);
            counts[k] += 1.0;
        }
        // Chi-square with cells pooled until expected >= 20.
        double chi = 0.0, e_acc = 0.0, o_acc = 0.0;
        int cells = 0;
        for (std::uint64_t k = 0; k <= n; ++k) {
            const double lp = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                              (n - k) * std::log1p(-p);
            e_acc += draws * std::exp(lp);
            o_acc += counts[k];
            if (e_acc >= 20.0 || k == n) {
                chi += (o_acc - e_acc) * (o_acc - e_acc) / e_acc;
                ++cells;
                e_acc = o_acc = 0.0;
            }
        }
        INFO("n=" << n << " p=" << p);
        CHECK(chi_square_sf(chi, cells - 1) > 1e-3);
    }
    CHECK(binomial_sample(rng, 0, 0.5) == 0);
    CHECK(binomial_sample(rng, 10, 0.0) == 0);
    CHECK(binomial_sample(rng, 10, 1.0) == 10);
}

TEST_CASE("simple walk displacement: parity, l1 bound and variance") {
    RngStream rng(4, StreamTag::test, 2);
    for (double k : {0.0, 1.0, 2.0, 7.0, 64.0, 1000.0}) {
        for (int i = 0; i < 2000; ++i) {
            const Site x = simple_walk_displacement(rng, k, 3);
            std::int64_t l1 = 0;
            for (int j = 0; j < 3; ++j) l1 += std::abs(x[j]);
            REQUIRE(l1 <= static_cast<std::int64_t>(k));
            REQUIRE((static_cast<std::int64_t>(k) - l1) % 2 == 0);
        }
    }
    const double k = 1e6;
    const int draws = 50000;
    double s2 = 0.0;
    for (int i = 0; i < draws; ++i) {
        const Site x = simple_walk_displacement(rng, k, 4);
        s2 += static_cast<double>(x[2]) * static_cast<double>(x[2]);
    }
    CHECK(std::abs(s2 / draws / (k / 4.0) - 1.0) < 5.0 * std::sqrt(2.0 / draws));
    const Site huge = simple_walk_displacement(rng, 1e18, 3);
    CHECK(std::abs(static_cast<double>(huge[0])) < 1e11);
}

TEST_CASE("loop probability: series oracle and Monte Carlo") {
    // p = sum_k f(k) P(Z_k = 0) with f the Sibuya(alpha/2) pmf.
    const int K = 3000;
    const auto ret = simple3_return_probs(K);
    for (double alpha : {0.8, 1.0, 1.1}) {
        const double g = alpha / 2.0;
        double series = 0.0;
        for (int k = 2; k <= K; k += 2) series += sibuya_pmf(g, static_cast<std::uint64_t>(k)) * ret[static_cast<std::size_t>(k)];
        const double bound = sibuya_tail(g, K) * ret[static_cast<std::size_t>(K)];
        INFO("alpha=" << alpha);
        CHECK(std::abs(loop_probability(3, alpha) - series) <= bound + 1e-9);
    }

    for (auto [d, alpha] : {std::pair{3, 0.8}, std::pair{5, 1.6}}) {
        const WalkModel m = subordinate_walk(d, alpha);
        RngStream rng(9, StreamTag::test, static_cast<std::uint64_t>(d));
        const int draws = 10000000;
        int zeros = 0;
        for (int i = 0; i < draws; ++i) zeros += subordinate_increment(rng, m) == Site{} ? 1 : 0;
        const double p = m.base_loop_prob;
        INFO("d=" << d << " alpha=" << alpha << " p=" << p << " freq=" << static_cast<double>(zeros) / draws);
        CHECK(std::abs(zeros - draws * p) < 4.0 * std::sqrt(draws * p * (1.0 - p)));
    }
}

TEST_CASE("subordinate increments are symmetric") {
    const WalkModel m = subordinate_walk(3, 0.8, 0.0249);
    RngStream rng(12, StreamTag::test, 3);
    const int draws = 400000;
    int pos = 0, neg = 0;
    for (int i = 0; i < draws; ++i) {
        const Site x = subordinate_increment(rng, m);
        pos += x[1] > 0;
        neg += x[1] < 0;
    }
    CHECK(std::abs(pos - neg) < 5.0 * std::sqrt(static_cast<double>(pos + neg)));
}

TEST_CASE("derived step samplers") {
    const WalkModel base = subordinate_walk(3, 0.8);
    const double p = base.base_loop_prob;
    RngStream rng(13, StreamTag::test, 4);
    const StepSampler free(loop_free_model(base));
    for (int i = 0; i < 200000; ++i) REQUIRE_FALSE(free.step(rng) == Site{});
    const StepSampler ins(loop_inserted_model(base));
    const int draws = 1000000;
    int zeros = 0;
    for (int i = 0; i < draws; ++i) zeros += ins.step(rng) == Site{} ? 1 : 0;
    CHECK(std::abs(zeros - draws * p) < 4.0 * std::sqrt(draws * p * (1.0 - p)));
}

TEST_CASE("geometric draws have mean p / (1 - p)") {
    RngStream rng(14, StreamTag::test, 5);
    const double p = 0.3;
    const int draws = 400000;
    double s = 0.0;
    for (int i = 0; i < draws; ++i) s += static_cast<double>(geometric_sample(rng, p));
    const double mean = p / (1.0 - p), var = p / ((1.0 - p) * (1.0 - p));
    CHECK(std::abs(s / draws - mean) < 5.0 * std::sqrt(var / draws));
    CHECK(geometric_sample(rng, 0.0) == 0);
}

TEST_CASE("paths are reproducible and start at the origin") {
    const WalkModel m = subordinate_walk(3, 0.8, 0.0249);
    RngStream a(1, StreamTag::path, 17), b(1, StreamTag::path, 17);
    const auto pa = sample_path(m, 500, a);
    const auto pb = sample_path(m, 500, b);
    CHECK(pa.positions == pb.positions);
    CHECK(pa.horizon() == 500);
    CHECK(pa[0] == Site{});
    CHECK_THROWS_AS(sample_path(m, kMaxHorizon + 1, a), ResourceError);
}

TEST_CASE("loop insertion: hand example") {
    LatticePath tilde;
    tilde.d = 1;
    tilde.positions = {site1(0), site1(1), site1(2)};
    const auto [hat, rec] = insert_loops(tilde, std::vector<std::uint64_t>{1, 0, 2});
    const std::vector<Site> expect{site1(0), site1(0), site1(1), site1(2), site1(2), site1(2)};
    CHECK(hat.positions == expect);
    CHECK(rec.N == std::vector<std::uint64_t>{1, 1, 3});
    CHECK(rec.interval(1).first > rec.interval(1).second);
    CHECK(rec.interval(2) == std::pair<std::uint64_t, std::uint64_t>{4, 5});
}

TEST_CASE("loop insertion rejects paths with loops") {
    LatticePath tilde;
    tilde.d = 1;
    tilde.positions = {site1(0), site1(0), site1(1)};
    CHECK_THROWS_AS(insert_loops(tilde, std::vector<std::uint64_t>{0, 0, 0}), DomainError);
}

TEST_CASE("loop insertion invariants on random paths") {
    const WalkModel base = subordinate_walk(3, 0.8);
    const StepSampler free(loop_free_model(base));
    for (std::uint64_t i = 0; i < 100; ++i) {
        RngStream r1(2, StreamTag::loop_free_path, i), r2(2, StreamTag::loops, i);
        const auto tilde = sample_path(free, 200, r1);
        const auto [hat, rec] = insert_loops(tilde, 0.3, r2);
        REQUIRE(hat.horizon() == 200 + rec.N[200]);
        std::vector<Site> stripped{hat[0]};
        for (std::size_t k = 1; k < hat.positions.size(); ++k) {
            if (hat[k] != hat[k - 1]) stripped.push_back(hat[k]);
        }
        REQUIRE(stripped == tilde.positions);
        for (std::size_t k = 0; k <= 200; ++k) {
            REQUIRE(hat[k + rec.N[k]] == tilde[k]);
            REQUIRE(hat[k + rec.before(k)] == tilde[k]);
        }
    }
}

TEST_CASE("two-step displacement law in d = 3 (chi-square)") {
    // P(0) = 1/6, P(+-2 e_j) = 1/36, P(+-e_i +- e_j) = 1/18 for i != j.
    RngStream rng(15, StreamTag::test, 6);
    const int draws = 360000;
    std::map<Site, double> counts;
    for (int i = 0; i < draws; ++i) counts[simple_walk_displacement(rng, 2.0, 3)] += 1.0;
    REQUIRE(counts.size() == 19);
    double chi = 0.0;
    for (const auto& [x, c] : counts) {
        int nz = 0;
        for (int j = 0; j < 3; ++j) nz += x[j] != 0;
        const double p = nz == 0 ? 1.0 / 6.0 : (nz == 1 ? 1.0 / 36.0 : 1.0 / 18.0);
        chi += (c - draws * p) * (c - draws * p) / (draws * p);
    }
    CHECK(chi_square_sf(chi, 18) > 1e-3);
}

TEST_CASE("displacement variance on both sides of the direct-stepping cutoff") {
    RngStream rng(16, StreamTag::test, 7);
    for (double k : {3.0, 48.0, 49.0, 5000.0}) {
        const int draws = 100000;
        double s2 = 0.0, s4 = 0.0;
        for (int i = 0; i < draws; ++i) {
            const double x = static_cast<double>(simple_walk_displacement(rng, k, 5)[3]);
            s2 += x * x;
            s4 += x * x * x * x;
        }
        const double v = k / 5.0;
        INFO("k=" << k);
        CHECK(std::abs(s2 / draws - v) < 5.0 * std::sqrt((s4 / draws - v * v) / draws));
    }
}
