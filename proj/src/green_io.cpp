#include "rangecap/green_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace rangecap {

namespace {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
}

class Writer {
public:
    template <class T>
    void put(T v) {
        v = to_little(v);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<char> data) : buf_(std::move(data)) {}
    template <class T>
    T get() {
        if (pos_ + sizeof(T) > buf_.size()) throw DomainError("GRNT file truncated");
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(v);
    }
    std::size_t remaining() const { return buf_.size() - pos_; }
    std::size_t position() const { return pos_; }
    void seek(std::size_t p) { pos_ = p; }

private:
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_green_table(const GreenTable& table, const std::string& path) {
    const WalkModel& m = table.model();
    const GreenMethodSpec& spec = table.method();
    Writer meta;
    meta.put<std::uint8_t>(static_cast<std::uint8_t>(spec.method));
    meta.put<std::uint8_t>(static_cast<std::uint8_t>(m.derived));
    meta.put<double>(m.base_loop_prob);
    meta.put<std::uint32_t>(static_cast<std::uint32_t>(spec.grid_n));
    meta.put<std::uint64_t>(spec.series_k);
    meta.put<std::uint64_t>(spec.mc_paths);
    meta.put<std::uint64_t>(spec.mc_horizon);
    meta.put<std::uint64_t>(spec.mc_seed);
    meta.put<double>(spec.step);
    meta.put<double>(table.error_estimate());
    meta.put<double>(table.far_mismatch());
    meta.put<std::uint8_t>(table.standard_errors().empty() ? 0 : 1);

    Writer w;
    w.raw("GRNT", 4);
    w.put<std::uint32_t>(kGreenFormatVersion);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(m.kind));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(m.d));
    w.put<double>(m.alpha);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(table.radius()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.bytes().size()));
    w.raw(meta.bytes().data(), meta.bytes().size());
    for (double v : table.values()) w.put<double>(v);
    w.put<double>(table.far_constant());
    w.put<double>(table.far_exponent());
    for (double v : table.standard_errors()) w.put<double>(v);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ResourceError("cannot open " + path + " for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw ResourceError("write failed: " + path);
}

GreenTable load_green_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ResourceError("cannot open " + path);
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 4 || std::memcmp(data.data(), "GRNT", 4) != 0) throw DomainError(path + ": not a GRNT file");
    Reader r(std::move(data));
    r.seek(4);
    const auto version = r.get<std::uint32_t>();
    if (version != kGreenFormatVersion) throw DomainError(path + ": unsupported GRNT version");
    WalkModel m;
    const auto kind = r.get<std::uint8_t>();
    if (kind > 1) throw DomainError(path + ": unknown model kind");
    m.kind = static_cast<WalkKind>(kind);
    m.d = r.get<std::uint16_t>();
    m.alpha = r.get<double>();
    const auto radius = r.get<std::uint32_t>();
    const auto meta_len = r.get<std::uint32_t>();
    const std::size_t meta_start = r.position();
    GreenMethodSpec spec;
    const auto method = r.get<std::uint8_t>();
    if (method > 3) throw DomainError(path + ": unknown Green method");
    spec.method = static_cast<GreenMethod>(method);
    const auto derived = r.get<std::uint8_t>();
    if (derived > 2) throw DomainError(path + ": unknown model derivation");
    m.derived = static_cast<Derivation>(derived);
    m.base_loop_prob = r.get<double>();
    spec.grid_n = static_cast<int>(r.get<std::uint32_t>());
    spec.series_k = r.get<std::uint64_t>();
    spec.mc_paths = r.get<std::uint64_t>();
    spec.mc_horizon = r.get<std::uint64_t>();
    spec.mc_seed = r.get<std::uint64_t>();
    spec.step = r.get<double>();
    const double error = r.get<double>();
    const double mismatch = r.get<double>();
    const bool has_se = r.get<std::uint8_t>() != 0;
    r.seek(meta_start + meta_len);
    m.validate();

    SortedKeyIndex index(m.d, static_cast<int>(radius));
    check_allocation(index.size() * sizeof(double), "Green table");
    std::vector<double> values(index.size());
    for (auto& v : values) v = r.get<double>();
    const double far_c = r.get<double>();
    const double far_exp = r.get<double>();
    if (std::abs(far_exp - (m.alpha - m.d)) > 1e-12) throw DomainError(path + ": far-field exponent mismatch");
    std::vector<double> se;
    if (has_se) {
        se.resize(index.size());
        for (auto& v : se) v = r.get<double>();
    }
    if (r.remaining() != 0) throw DomainError(path + ": trailing bytes");
    GreenTable table(m, static_cast<int>(radius), spec, std::move(values));
    table.set_standard_errors(std::move(se));
    table.set_error_estimate(error);
    table.set_far_constant(far_c);
    table.set_far_mismatch(mismatch);
    return table;
}

}  // namespace rangecap
