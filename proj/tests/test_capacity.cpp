#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "rangecap/capacity.hpp"
#include "rangecap/green.hpp"

using namespace rangecap;

namespace {

Site site3(std::int64_t a, std::int64_t b, std::int64_t c) {
    Site s;
    s[0] = a;
    s[1] = b;
    s[2] = c;
    return s;
}

const WalkModel& model() {
    static const WalkModel m = subordinate_walk(3, 0.8);
    return m;
}

const GreenTable& table() {
    static const GreenTable t = build_green_table(model(), 16);
    return t;
}

std::vector<Site> random_set(RngStream& rng, int size, int spread) {
    std::set<Site> s;
    while (static_cast<int>(s.size()) < size) {
        Site x;
        for (int j = 0; j < 3; ++j) {
            x[j] = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(2 * spread + 1)) - spread;
        }
        s.insert(x);
    }
    return {s.begin(), s.end()};
}

}  // namespace

TEST_CASE("capacity of small sets in closed form") {
    const auto& t = table();
    CHECK(capacity_value(std::vector<Site>{}, t) == 0.0);
    CHECK(capacity_value(std::vector<Site>{site3(4, -2, 7)}, t) == doctest::Approx(1.0 / t.origin()).epsilon(1e-14));
    const std::vector<Site> pair{Site{}, site3(1, 0, 0)};
    const double g1 = t.at(site3(1, 0, 0));
    CHECK(capacity_value(pair, t) == doctest::Approx(2.0 / (t.origin() + g1)).epsilon(1e-13));
    // Three collinear points by Cramer's rule on the 3x3 system with a symmetric solution.
    const std::vector<Site> three{site3(-1, 0, 0), Site{}, site3(1, 0, 0)};
    const double g0 = t.origin(), g2 = t.at(site3(2, 0, 0));
    // e_end (g0 + g2) + e_mid g1 = 1 and 2 e_end g1 + e_mid g0 = 1.
    const double det = (g0 + g2) * g0 - 2.0 * g1 * g1;
    const double e_end = (g0 - g1) / det, e_mid = ((g0 + g2) - 2.0 * g1) / det;
    CHECK(capacity_value(three, t) == doctest::Approx(2.0 * e_end + e_mid).epsilon(1e-12));
}

TEST_CASE("capacity properties on random sets") {
    const auto& t = table();
    RngStream rng(101, StreamTag::test, 0);
    for (int trial = 0; trial < 60; ++trial) {
        const auto a = random_set(rng, 1 + static_cast<int>(rng.next_u64() % 40), 6);
        const auto [est, eq] = capacity_exact(a, t);
        REQUIRE(est.residual <= 1e-8 * static_cast<double>(a.size()));
        for (double e : eq.escape) {
            REQUIRE(e >= 0.0);
            REQUIRE(e <= 1.0);
        }
        double sum = 0.0;
        for (double e : eq.escape) sum += e;
        REQUIRE(est.value == doctest::Approx(sum).epsilon(1e-12));
        REQUIRE(est.value <= static_cast<double>(a.size()) / t.origin() + 1e-12);
        REQUIRE(est.value >= 1.0 / t.origin() - 1e-12);

        // Translation invariance.
        std::vector<Site> shifted;
        for (const auto& x : a) shifted.push_back(checked_add(x, site3(3, -7, 2)));
        REQUIRE(capacity_value(shifted, t) == doctest::Approx(est.value).epsilon(1e-10));

        // Monotone under inclusion.
        std::vector<Site> bigger = a;
        for (const auto& x : random_set(rng, 5, 6)) {
            if (std::find(bigger.begin(), bigger.end(), x) == bigger.end()) bigger.push_back(x);
        }
        REQUIRE(capacity_value(bigger, t) >= est.value - 1e-12);
        std::vector<Site> smaller(a.begin(), a.begin() + static_cast<std::ptrdiff_t>((a.size() + 1) / 2));
        REQUIRE(capacity_value(smaller, t) <= est.value + 1e-12);
    }
}

TEST_CASE("conjugate gradient agrees with Cholesky") {
    const auto& t = table();
    RngStream rng(102, StreamTag::test, 0);
    SolverOptions cg;
    cg.direct_limit = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = random_set(rng, 50 + static_cast<int>(rng.next_u64() % 100), 8);
        const auto [d, eq_d] = capacity_exact(a, t);
        const auto [c, eq_c] = capacity_exact(a, t, cg);
        CHECK(eq_c.iterations > 0);
        CHECK(eq_d.iterations == 0);
        CHECK(c.value == doctest::Approx(d.value).epsilon(1e-8));
        for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(eq_c.escape[i] - eq_d.escape[i]) < 1e-8);
    }
}

TEST_CASE("variational characterisation: (nu(A))^2 / energy <= Cap with equality at e") {
    const auto& t = table();
    RngStream rng(103, StreamTag::test, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_set(rng, 2 + static_cast<int>(rng.next_u64() % 20), 5);
        const auto [est, eq] = capacity_exact(a, t);
        CHECK(est.value * est.value / green_energy(t, a, eq.escape) == doctest::Approx(est.value).epsilon(1e-10));
        for (int k = 0; k < 50; ++k) {
            std::vector<double> nu(a.size());
            double mass = 0.0;
            for (auto& v : nu) {
                v = rng.uniform();
                mass += v;
            }
            REQUIRE(mass * mass / green_energy(t, a, nu) <= est.value * (1.0 + 1e-10));
        }
    }
}

TEST_CASE("green_sum is symmetric and additive") {
    const auto& t = table();
    RngStream rng(104, StreamTag::test, 0);
    const auto a = random_set(rng, 10, 5), b = random_set(rng, 7, 5);
    CHECK(green_sum(t, a, b) == doctest::Approx(green_sum(t, b, a)).epsilon(1e-14));
    const std::vector<Site> a1(a.begin(), a.begin() + 4), a2(a.begin() + 4, a.end());
    CHECK(green_sum(t, a, b) == doctest::Approx(green_sum(t, a1, b) + green_sum(t, a2, b)).epsilon(1e-13));
    const std::vector<Site> o{Site{}};
    CHECK(green_sum(t, o, o) == t.origin());
}

TEST_CASE("escape probabilities by simulation") {
    const auto& t = table();
    const std::vector<Site> single{Site{}};
    EscapeOptions opt;
    const auto e = escape_prob_mc(single, Site{}, model(), opt, 40000, 7);
    INFO("escape " << e.value << " +- " << e.std_error << " horizon " << e.horizon);
    CHECK(std::abs(e.value - 1.0 / t.origin()) < 4.0 * e.std_error + 2e-3);

    CHECK(escape_prob_fixed(single, Site{}, model(), 0, 100, 7).value == 1.0);
    double prev = 1.0;
    for (std::uint64_t h : {1, 4, 32, 256}) {
        const double v = escape_prob_fixed(single, Site{}, model(), h, 20000, 7).value;
        CHECK(v <= prev);
        prev = v;
    }
    CHECK_THROWS_AS(escape_prob_mc(single, site3(1, 0, 0), model(), opt, 10, 1), DomainError);
}

TEST_CASE("capacity by simulation: distant points add") {
    const auto& t = table();
    const std::vector<Site> far{Site{}, site3(5000, 0, 0)};
    EscapeOptions opt;
    const auto mc = capacity_mc(far, model(), opt, 20000, 11);
    CHECK(std::abs(mc.value - 2.0 / t.origin()) < 4.0 * mc.std_error + 5e-3);
    // The exact value uses the far field for the cross term.
    CHECK(capacity_value(far, t) == doctest::Approx(2.0 / (t.origin() + t.far_field(site3(5000, 0, 0)))).epsilon(1e-12));
}

TEST_CASE("occupation lower bound") {
    const auto& t = table();
    LatticePath constant;
    constant.d = 3;
    constant.positions.assign(6, Site{});
    CHECK(occupation_lower_bound(constant, t).value == doctest::Approx(1.0 / t.origin()).epsilon(1e-14));

    LatticePath alt;
    alt.d = 3;
    for (int k = 0; k <= 8; ++k) alt.positions.push_back(k % 2 ? site3(1, 0, 0) : Site{});
    CHECK(occupation_lower_bound(alt, t).value ==
          doctest::Approx(2.0 / (t.origin() + t.at(site3(1, 0, 0)))).epsilon(1e-13));
    CHECK_THROWS_AS(occupation_lower_bound(alt, 0, t), DomainError);

    for (std::uint64_t i = 0; i < 20; ++i) {
        RngStream rng(5, StreamTag::path, i);
        const auto path = sample_path(model(), 300, rng);
        std::set<Site> range(path.positions.begin() + 1, path.positions.end());
        const std::vector<Site> r(range.begin(), range.end());
        REQUIRE(occupation_lower_bound(path, t).value <= capacity_value(r, t) * (1.0 + 1e-12));
    }
}

TEST_CASE("decomposition inequalities") {
    const auto& t = table();
    RngStream rng(105, StreamTag::test, 0);
    const auto a = random_set(rng, 12, 4);
    const auto same = check_decomposition(a, a, t);
    CHECK(same.upper_slack == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(same.lower_slack >= -1e-10);

    for (int trial = 0; trial < 100; ++trial) {
        const auto x = random_set(rng, 1 + static_cast<int>(rng.next_u64() % 25), 4);
        const auto y = random_set(rng, 1 + static_cast<int>(rng.next_u64() % 25), 4);
        const auto r = check_decomposition(x, y, t);
        REQUIRE(r.ok(1e-8));
        REQUIRE(r.cap_union >= std::max(r.cap_a, r.cap_b) - 1e-10);
    }
}
