#pragma once
// Lookup-table arithmetic for formats of at most 8 bits.
//
// Three tables replace arithmetic on the input format:
//   inv  1/|a|            2^(b-1) entries, input-format codes
//   mul  |a| * |b|        2^(b-1) x 2^(b-1) entries, output-format codes
//   add  a + |b|          2^b x 2^(b-1) entries, output-format codes
// Signs are restored outside the tables: products by sign xor, sums by the
// three-way case split that always leaves at least one non-negative operand.
//
// NaN signs: mul follows the sign xor, add is negative only when both operands
// are negative, recip and promote keep the operand's sign.

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "microscaling/minifloat.hpp"

namespace microscaling {

class LutSet {
public:
    static constexpr char magic[7] = "MXLUT1";

    /// Throws spec_too_wide when the input exceeds 8 bits or the output 16.
    static LutSet build(const FloatSpec& in, const FloatSpec& out) {
        LutSet t(in, out);
        const std::size_t half = t.half();
        const std::size_t full = std::size_t{1} << in.width();
        const FloatSpec out_r = out.with_rounding(in.rounding());
        const auto& dec = decode_table(in);
        const auto pos_nan = static_cast<std::uint16_t>(nan_code(out));

        t.inv_.resize(half);
        for (std::size_t a = 0; a < half; ++a) {
            const double x = dec[a];
            code_t r;
            if (std::isnan(x)) r = nan_code(in);
            else if (x == 0.0) r = inf_code(in);
            else if (std::isinf(x)) r = 0;
            else r = encode(1.0 / x, in);
            t.inv_[a] = static_cast<std::uint8_t>(r);
        }

        t.mul_.resize(half * half);
        bool exact = true;
        for (std::size_t a = 0; a < half; ++a)
            for (std::size_t b = 0; b < half; ++b) {
                const double x = dec[a], y = dec[b];
                std::uint16_t r;
                if (std::isnan(x) || std::isnan(y) || (x == 0.0 && std::isinf(y)) || (std::isinf(x) && y == 0.0)) {
                    r = pos_nan;
                } else {
                    const double p = x * y;
                    r = static_cast<std::uint16_t>(encode(p, out_r));
                    if (std::isfinite(p) && decode(r, out) != p) exact = false;
                }
                t.mul_[a * half + b] = r;
            }
        t.promotion_exact_ = exact;

        t.add_.resize(full * half);
        for (std::size_t a = 0; a < full; ++a)
            for (std::size_t b = 0; b < half; ++b) {
                const double x = dec[a], y = dec[b];
                const double s = x + y;  // exact: every sum of two 8-bit values fits a double
                t.add_[a * half + b] = std::isnan(s) ? pos_nan : static_cast<std::uint16_t>(encode(s, out_r));
            }
        return t;
    }

    const FloatSpec& in_spec() const { return in_; }
    const FloatSpec& out_spec() const { return out_; }

    /// False when some product of two inputs does not fit the output format
    /// exactly (PromotionTooNarrow, a warning: the tables remain usable).
    bool promotion_exact() const { return promotion_exact_; }

    code_t mul(code_t a, code_t b) const {
        const code_t ma = magnitude(a, in_), mb = magnitude(b, in_);
        const bool neg = sign_of(a, in_) != sign_of(b, in_);
        return mul_[ma * half() + mb] | (neg ? out_.sign_mask() : 0);
    }

    code_t add(code_t a, code_t b) const {
        const bool na = sign_of(a, in_), nb = sign_of(b, in_);
        if (na && nb) return add_[magnitude(a, in_) * half() + magnitude(b, in_)] ^ out_.sign_mask();
        if (nb) return add_[b * half() + a];
        return add_[a * half() + magnitude(b, in_)];
    }

    /// Result in the input format.
    code_t recip(code_t a) const {
        return inv_[magnitude(a, in_)] | (sign_of(a, in_) ? in_.sign_mask() : 0);
    }

    code_t div(code_t a, code_t b) const {
        const code_t r = recip(b);
        return mul(a, r);
    }

    code_t promote(code_t a) const { return mul(a, one_); }

    std::size_t inv_bytes() const { return inv_.size() * sizeof(inv_[0]); }
    std::size_t mul_bytes() const { return mul_.size() * sizeof(mul_[0]); }
    std::size_t add_bytes() const { return add_.size() * sizeof(add_[0]); }

    void dump(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw mx_error(errc::bad_file, "cannot write " + path);
        f.write(magic, 6);
        write_spec(f, in_);
        write_spec(f, out_);
        f.write(reinterpret_cast<const char*>(inv_.data()), static_cast<std::streamsize>(inv_.size()));
        write_u16(f, mul_);
        write_u16(f, add_);
        if (!f) throw mx_error(errc::bad_file, "short write to " + path);
    }

    static LutSet load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw mx_error(errc::bad_file, "cannot open " + path);
        char m[6];
        if (!f.read(m, 6) || std::memcmp(m, magic, 6) != 0) throw mx_error(errc::bad_file, path + ": bad magic");
        const FloatSpec in = read_spec(f, path), out = read_spec(f, path);
        LutSet t(in, out);
        t.inv_.resize(t.half());
        t.mul_.resize(t.half() * t.half());
        t.add_.resize((std::size_t{1} << in.width()) * t.half());
        if (!f.read(reinterpret_cast<char*>(t.inv_.data()), static_cast<std::streamsize>(t.inv_.size())) ||
            !read_u16(f, t.mul_) || !read_u16(f, t.add_))
            throw mx_error(errc::bad_file, path + ": truncated tables");
        if (f.peek() != std::char_traits<char>::eof()) throw mx_error(errc::bad_file, path + ": trailing bytes");
        t.promotion_exact_ = true;
        const auto& dec = decode_table(in);
        for (std::size_t a = 0; a < t.half(); ++a)
            for (std::size_t b = 0; b < t.half(); ++b) {
                const double p = dec[a] * dec[b];
                if (std::isfinite(p) && decode(t.mul_[a * t.half() + b], out) != p) t.promotion_exact_ = false;
            }
        return t;
    }

private:
    LutSet(const FloatSpec& in, const FloatSpec& out) : in_(in), out_(out) {
        if (in.width() > 8) throw mx_error(errc::spec_too_wide, "lookup tables need an input of <= 8 bits, got " + in.name());
        if (out.width() > 16)
            throw mx_error(errc::spec_too_wide, "lookup tables need an output of <= 16 bits, got " + out.name());
        one_ = encode(1.0, in);
    }

    std::size_t half() const { return std::size_t{1} << (in_.width() - 1); }

    static void write_spec(std::ostream& f, const FloatSpec& s) {
        const char b[6] = {static_cast<char>(s.exp_bits()), static_cast<char>(s.man_bits()), static_cast<char>(s.denorm()),
                           static_cast<char>(s.reserved_top()), static_cast<char>(s.rounding()),
                           static_cast<char>(s.overflow())};
        f.write(b, 6);
    }

    static FloatSpec read_spec(std::istream& f, const std::string& path) {
        unsigned char b[6];
        if (!f.read(reinterpret_cast<char*>(b), 6)) throw mx_error(errc::bad_file, path + ": truncated header");
        if (b[4] > 2 || b[5] > 1) throw mx_error(errc::bad_file, path + ": bad policy byte");
        try {
            return FloatSpec(b[0], b[1], b[2] != 0, b[3] != 0, static_cast<Rounding>(b[4]), static_cast<Overflow>(b[5]));
        } catch (const mx_error&) {
            throw mx_error(errc::bad_file, path + ": invalid format in header");
        }
    }

    static void write_u16(std::ostream& f, const std::vector<std::uint16_t>& v) {
        std::vector<unsigned char> bytes(v.size() * 2);
        for (std::size_t i = 0; i < v.size(); ++i) {
            bytes[2 * i] = static_cast<unsigned char>(v[i] & 0xFF);
            bytes[2 * i + 1] = static_cast<unsigned char>(v[i] >> 8);
        }
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }

    static bool read_u16(std::istream& f, std::vector<std::uint16_t>& v) {
        std::vector<unsigned char> bytes(v.size() * 2);
        if (!f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) return false;
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
        return true;
    }

    FloatSpec in_, out_;
    code_t one_ = 0;
    bool promotion_exact_ = true;
    std::vector<std::uint8_t> inv_;
    std::vector<std::uint16_t> mul_;
    std::vector<std::uint16_t> add_;
};

/// Process-wide tables, built once per (input, output) pair on first use.
/// The returned reference stays valid for the life of the process.
inline const LutSet& shared_luts(const FloatSpec& in, const FloatSpec& out) {
    using Key = std::tuple<detail::EncodingKey, Rounding, Overflow, detail::EncodingKey, Overflow>;
    static std::mutex mutex;
    static std::map<Key, std::unique_ptr<const LutSet>> cache;
    const Key key{detail::encoding_key(in), in.rounding(), in.overflow(), detail::encoding_key(out), out.overflow()};
    std::lock_guard lock(mutex);
    auto& slot = cache[key];
    if (!slot) slot = std::make_unique<const LutSet>(LutSet::build(in, out));
    return *slot;
}

/// MX_LUT_DISABLE=1 forces the arithmetic path everywhere tables would be used.
inline bool luts_disabled() {
    const char* v = std::getenv("MX_LUT_DISABLE");
    return v != nullptr && std::string_view(v) == "1";
}

}  // namespace microscaling
