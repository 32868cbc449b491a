#include "rangecap/core.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>

namespace rangecap {

Site checked_add(const Site& a, const Site& b) {
    Site r;
    for (std::size_t i = 0; i < a.c.size(); ++i) {
        if (__builtin_add_overflow(a.c[i], b.c[i], &r.c[i])) {
            throw ResourceError("lattice coordinate overflow");
        }
    }
    return r;
}

Site checked_sub(const Site& a, const Site& b) {
    Site r;
    for (std::size_t i = 0; i < a.c.size(); ++i) {
        if (__builtin_sub_overflow(a.c[i], b.c[i], &r.c[i])) {
            throw ResourceError("lattice coordinate overflow");
        }
    }
    return r;
}

Site negate(const Site& a) {
    return checked_sub(Site{}, a);
}

std::int64_t sup_norm(const Site& s, int d) {
    std::int64_t m = 0;
    for (int i = 0; i < d; ++i) {
        const std::int64_t v = s[i] < 0 ? -s[i] : s[i];
        if (v > m) m = v;
    }
    return m;
}

double norm2(const Site& s, int d) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
        const double v = static_cast<double>(s[i]);
        acc += v * v;
    }
    return acc;
}

std::string to_string(const Site& s, int d) {
    std::ostringstream os;
    for (int i = 0; i < d; ++i) {
        if (i) os << ' ';
        os << s[i];
    }
    return os.str();
}

std::size_t memory_budget() {
    if (const char* env = std::getenv("RANGECAP_MAX_MEM")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::size_t{4} << 30;
}

void check_allocation(std::size_t bytes, const std::string& what) {
    if (bytes > memory_budget()) {
        throw ResourceError(what + ": allocation of " + std::to_string(bytes) +
                            " bytes exceeds RANGECAP_MAX_MEM budget of " + std::to_string(memory_budget()));
    }
}

namespace {
std::mutex warn_mu;
std::atomic<std::uint64_t> warn_count{0};
}  // namespace

void log_warning(const std::string& msg) {
    ++warn_count;
    std::lock_guard<std::mutex> lock(warn_mu);
    std::cerr << "warning: " << msg << '\n';
}

std::uint64_t warning_count() {
    return warn_count.load();
}

}  // namespace rangecap
