#include <doctest.h>

#include <cmath>
#include <set>

#include "rangecap/rng.hpp"

using namespace rangecap;

TEST_CASE("philox4x32-10 known-answer vectors") {
    using C = std::array<std::uint32_t, 4>;
    using K = std::array<std::uint32_t, 2>;
    CHECK(philox4x32(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}) ==
          C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}) ==
          C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are pure functions of seed, tag and index") {
    RngStream a(7, StreamTag::path, 3), b(7, StreamTag::path, 3);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
    CHECK(a.position() == 1000);

    RngStream c(7, StreamTag::path, 4), d(7, StreamTag::escape, 3), e(8, StreamTag::path, 3);
    RngStream ref(7, StreamTag::path, 3);
    const auto r = ref.next_u64();
    CHECK(c.next_u64() != r);
    CHECK(d.next_u64() != r);
    CHECK(e.next_u64() != r);
}

TEST_CASE("copying a stream forks an identical sequence") {
    RngStream a(1, StreamTag::test, 0);
    a.next_u64();
    a.normal();
    RngStream b = a;
    for (int i = 0; i < 100; ++i) {
        REQUIRE(a.uniform() == b.uniform());
        REQUIRE(a.normal() == b.normal());
    }
}

TEST_CASE("uniform and normal draws have the right moments") {
    RngStream rng(11, StreamTag::test, 0);
    const int n = 1000000;
    double s = 0.0, s2 = 0.0, lo = 1.0, hi = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform_open();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        s += u;
        s2 += u * u;
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    const double mean = s / n;
    CHECK(std::abs(mean - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / n));
    CHECK(std::abs(s2 / n - mean * mean - 1.0 / 12.0) < 1e-3);
    CHECK(lo < 1e-5);
    CHECK(hi > 1.0 - 1e-5);

    double z = 0.0, z2 = 0.0, z4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        z += v;
        z2 += v * v;
        z4 += v * v * v * v;
    }
    CHECK(std::abs(z / n) < 5.0 / std::sqrt(n));
    CHECK(std::abs(z2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(z4 / n - 3.0) < 5.0 * std::sqrt(96.0 / n));
}

TEST_CASE("distinct indices give distinct first words") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 10000; ++i) seen.insert(RngStream(5, StreamTag::path, i).next_u64());
    CHECK(seen.size() == 10000);
}

TEST_CASE("splitmix64 reference values") {
    // Successive outputs of the reference generator started from state 0.
    CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
    CHECK(splitmix64(0x9e3779b97f4a7c15ULL) == 0x6e789e6aa1b965f4ULL);
}
