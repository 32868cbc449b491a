#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace rangecap {

inline constexpr int kMaxDim = 6;

// Error taxonomy. The CLI maps these onto exit codes.
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A point of Z^d, d <= kMaxDim. Unused trailing coordinates stay zero so
/// that equality and hashing do not need to know d.
struct Site {
    std::array<std::int64_t, kMaxDim> c{};

    static Site origin() { return Site{}; }
    static Site unit(int axis, std::int64_t sign = 1) {
        Site s;
        s.c[static_cast<std::size_t>(axis)] = sign;
        return s;
    }

    std::int64_t& operator[](int i) { return c[static_cast<std::size_t>(i)]; }
    std::int64_t operator[](int i) const { return c[static_cast<std::size_t>(i)]; }

    friend bool operator==(const Site&, const Site&) = default;
    friend auto operator<=>(const Site&, const Site&) = default;
};

/// a + b with overflow detection on every coordinate.
Site checked_add(const Site& a, const Site& b);
/// a - b with overflow detection on every coordinate.
Site checked_sub(const Site& a, const Site& b);
Site negate(const Site& a);

/// Sup norm over the first d coordinates.
std::int64_t sup_norm(const Site& s, int d);
/// Squared Euclidean norm as a double (exact up to 2^53).
double norm2(const Site& s, int d);

struct SiteHash {
    std::size_t operator()(const Site& s) const noexcept {
        std::uint64_t h = 0x9e3779b97f4a7c15ULL;
        for (auto v : s.c) {
            h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
            h *= 0xbf58476d1ce4e5b9ULL;
        }
        return static_cast<std::size_t>(h ^ (h >> 31));
    }
};

std::string to_string(const Site& s, int d);

/// Allocation budget in bytes (RANGECAP_MAX_MEM, default 4 GiB).
std::size_t memory_budget();
/// Throws ResourceError when `bytes` exceeds the budget.
void check_allocation(std::size_t bytes, const std::string& what);

/// Prints "warning: msg" to stderr (serialised across threads).
void log_warning(const std::string& msg);
/// Number of warnings emitted so far in this process.
std::uint64_t warning_count();

}  // namespace rangecap
