#pragma once
// Software-defined small floating point formats.
//
// A format is described at run time by a FloatSpec (exponent bits, mantissa
// bits, subnormal support, whether the top exponent code is reserved for
// infinities/NaN, rounding and overflow policy). Codes are the raw bit
// patterns, held in the low 1+E+M bits of a 32-bit word.
//
// Every conversion goes through an exact integer representation, so a 64-bit
// double is a sufficient carrier: all formats in scope have E <= 8, M <= 23.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "microscaling/error.hpp"

namespace microscaling {

using code_t = std::uint32_t;

enum class Rounding : std::uint8_t { ties_to_away, ties_to_even, truncate };
enum class Overflow : std::uint8_t { to_infinity, saturate };
enum class FloatClass : std::uint8_t { zero, subnormal, normal, infinity, nan };

inline std::string_view to_string(Rounding r) {
    switch (r) {
        case Rounding::ties_to_away: return "nearest-away";
        case Rounding::ties_to_even: return "nearest-even";
        case Rounding::truncate: return "truncate";
    }
    return "?";
}

inline Rounding parse_rounding(std::string_view s) {
    if (s == "nearest-away") return Rounding::ties_to_away;
    if (s == "nearest-even") return Rounding::ties_to_even;
    if (s == "truncate") return Rounding::truncate;
    throw mx_error(errc::unknown_format, "unknown rounding policy '" + std::string(s) + "'");
}

inline std::string_view to_string(FloatClass c) {
    switch (c) {
        case FloatClass::zero: return "Zero";
        case FloatClass::subnormal: return "Subnormal";
        case FloatClass::normal: return "Normal";
        case FloatClass::infinity: return "Infinity";
        case FloatClass::nan: return "NaN";
    }
    return "?";
}

class FloatSpec {
public:
    /// Throws mx_error(invalid_spec) unless 2 <= E <= 8, 1 <= M <= 23 and 1+E+M <= 32.
    constexpr FloatSpec(int exp_bits, int man_bits, bool denorm = true, bool reserved_top = true,
                        Rounding rounding = Rounding::ties_to_away,
                        Overflow overflow = Overflow::to_infinity)
        : exp_bits_(exp_bits),
          man_bits_(man_bits),
          denorm_(denorm),
          reserved_top_(reserved_top),
          rounding_(rounding),
          overflow_(overflow) {
        if (exp_bits < 2 || exp_bits > 8 || man_bits < 1 || man_bits > 23 || 1 + exp_bits + man_bits > 32)
            throw mx_error(errc::invalid_spec, "E" + std::to_string(exp_bits) + "M" + std::to_string(man_bits));
    }

    constexpr int exp_bits() const { return exp_bits_; }
    constexpr int man_bits() const { return man_bits_; }
    constexpr bool denorm() const { return denorm_; }
    constexpr bool reserved_top() const { return reserved_top_; }
    constexpr Rounding rounding() const { return rounding_; }
    constexpr Overflow overflow() const { return overflow_; }

    constexpr int width() const { return 1 + exp_bits_ + man_bits_; }
    constexpr int bias() const { return (1 << (exp_bits_ - 1)) - 1; }
    constexpr int top_exp_code() const { return (1 << exp_bits_) - 1; }
    constexpr code_t man_mask() const { return (code_t{1} << man_bits_) - 1; }
    constexpr code_t sign_mask() const { return code_t{1} << (exp_bits_ + man_bits_); }
    constexpr code_t code_mask() const { return (sign_mask() << 1) - 1; }

    /// Largest unbiased exponent of a finite value.
    constexpr int max_exponent() const { return (reserved_top_ ? top_exp_code() - 1 : top_exp_code()) - bias(); }
    /// Unbiased exponent of the lowest normal binade. Without subnormals the
    /// exponent field 0 still encodes normals 2^-b (1 + m/2^M), m != 0.
    constexpr int min_normal_exponent() const { return denorm_ ? 1 - bias() : -bias(); }

    constexpr FloatSpec with_rounding(Rounding r) const {
        FloatSpec s = *this;
        s.rounding_ = r;
        return s;
    }
    constexpr FloatSpec with_overflow(Overflow o) const {
        FloatSpec s = *this;
        s.overflow_ = o;
        return s;
    }

    /// Same encoding, ignoring rounding/overflow policy.
    constexpr bool same_encoding(const FloatSpec& o) const {
        return exp_bits_ == o.exp_bits_ && man_bits_ == o.man_bits_ && denorm_ == o.denorm_ &&
               reserved_top_ == o.reserved_top_;
    }

    friend constexpr bool operator==(const FloatSpec&, const FloatSpec&) = default;

    std::string name() const { return "e" + std::to_string(exp_bits_) + "m" + std::to_string(man_bits_); }

private:
    int exp_bits_;
    int man_bits_;
    bool denorm_;
    bool reserved_top_;
    Rounding rounding_;
    Overflow overflow_;
};

// ---------------------------------------------------------------------------
// Presets

namespace formats {
/// OCP-style E4M3: no infinities, single NaN per sign (S.1111.111), max 448.
inline constexpr FloatSpec e4m3{4, 3, true, false};
inline constexpr FloatSpec e5m2{5, 2};
inline constexpr FloatSpec e3m4{3, 4};
inline constexpr FloatSpec e5m10{5, 10};
inline constexpr FloatSpec e8m7{8, 7};
inline constexpr FloatSpec f32{8, 23};
}  // namespace formats

inline const std::vector<std::string_view>& preset_ids() {
    static const std::vector<std::string_view> ids{"e4m3", "e5m2", "e3m4", "e5m10", "e8m7", "f32"};
    return ids;
}

inline FloatSpec preset(std::string_view id) {
    if (id == "e4m3") return formats::e4m3;
    if (id == "e5m2") return formats::e5m2;
    if (id == "e3m4") return formats::e3m4;
    if (id == "e5m10") return formats::e5m10;
    if (id == "e8m7") return formats::e8m7;
    if (id == "f32") return formats::f32;
    throw mx_error(errc::unknown_format, "unknown format id '" + std::string(id) + "'");
}

inline std::string preset_id(const FloatSpec& spec) {
    for (auto id : preset_ids())
        if (preset(id).same_encoding(spec)) return std::string(id);
    return spec.name();
}

// ---------------------------------------------------------------------------
// Field access and special codes

constexpr bool sign_of(code_t x, const FloatSpec& s) { return (x & s.sign_mask()) != 0; }
constexpr int exp_field(code_t x, const FloatSpec& s) {
    return static_cast<int>((x >> s.man_bits()) & static_cast<code_t>(s.top_exp_code()));
}
constexpr code_t man_field(code_t x, const FloatSpec& s) { return x & s.man_mask(); }
constexpr code_t negate(code_t x, const FloatSpec& s) { return x ^ s.sign_mask(); }
constexpr code_t magnitude(code_t x, const FloatSpec& s) { return x & ~s.sign_mask() & s.code_mask(); }

constexpr code_t nan_code(const FloatSpec& s, bool negative = false) {
    const code_t top = static_cast<code_t>(s.top_exp_code()) << s.man_bits();
    const code_t payload = s.reserved_top() ? code_t{1} << (s.man_bits() - 1) : s.man_mask();
    return (negative ? s.sign_mask() : 0) | top | payload;
}

/// +-infinity where the format has one, otherwise NaN.
constexpr code_t inf_code(const FloatSpec& s, bool negative = false) {
    if (!s.reserved_top()) return nan_code(s, negative);
    return (negative ? s.sign_mask() : 0) | (static_cast<code_t>(s.top_exp_code()) << s.man_bits());
}

constexpr code_t max_finite_code(const FloatSpec& s, bool negative = false) {
    const code_t k = static_cast<code_t>(s.max_exponent() + s.bias());
    const code_t m = s.reserved_top() ? s.man_mask() : s.man_mask() - 1;
    return (negative ? s.sign_mask() : 0) | (k << s.man_bits()) | m;
}

constexpr FloatClass classify(code_t x, const FloatSpec& s) {
    const int k = exp_field(x, s);
    const code_t m = man_field(x, s);
    if (k == s.top_exp_code()) {
        if (s.reserved_top()) return m == 0 ? FloatClass::infinity : FloatClass::nan;
        if (m == s.man_mask()) return FloatClass::nan;
        return FloatClass::normal;
    }
    if (k == 0) {
        if (m == 0) return FloatClass::zero;
        return s.denorm() ? FloatClass::subnormal : FloatClass::normal;
    }
    return FloatClass::normal;
}

constexpr bool is_finite(code_t x, const FloatSpec& s) {
    const auto c = classify(x, s);
    return c != FloatClass::infinity && c != FloatClass::nan;
}

// ---------------------------------------------------------------------------
// Unpacked form: value = (-1)^negative * significand * 2^(exponent - frac_bits).
// Normal values carry the hidden bit explicitly, so significand lies in
// [2^frac_bits, 2^(frac_bits+1)). Subnormals keep the raw mantissa with the
// exponent of the lowest normal binade. NaN keeps its payload in significand.

struct Unpacked {
    FloatClass cls = FloatClass::zero;
    bool negative = false;
    int exponent = 0;
    std::uint64_t significand = 0;
    int frac_bits = 0;

    friend bool operator==(const Unpacked&, const Unpacked&) = default;
};

constexpr Unpacked unpack(code_t x, const FloatSpec& s) {
    Unpacked u;
    u.cls = classify(x, s);
    u.negative = sign_of(x, s);
    u.frac_bits = s.man_bits();
    const int k = exp_field(x, s);
    const code_t m = man_field(x, s);
    switch (u.cls) {
        case FloatClass::zero:
        case FloatClass::infinity:
            break;
        case FloatClass::nan:
            u.significand = m;
            break;
        case FloatClass::subnormal:
            u.exponent = s.min_normal_exponent();
            u.significand = m;
            break;
        case FloatClass::normal:
            u.exponent = k - s.bias();
            u.significand = (std::uint64_t{1} << s.man_bits()) | m;
            break;
    }
    return u;
}

inline double decode(code_t x, const FloatSpec& s) {
    const Unpacked u = unpack(x, s);
    double v = 0.0;
    switch (u.cls) {
        case FloatClass::zero: v = 0.0; break;
        case FloatClass::infinity: v = std::numeric_limits<double>::infinity(); break;
        case FloatClass::nan: v = std::numeric_limits<double>::quiet_NaN(); break;
        default:
            v = std::ldexp(static_cast<double>(u.significand), u.exponent - u.frac_bits);
    }
    return u.negative ? -v : v;
}

namespace detail {

struct Split {
    std::uint64_t kept;  // floor(value / 2^q)
    bool half;           // bit just below the cut
    bool sticky;         // any bit below that
};

// Splits sig * 2^exp2 at weight 2^q. Caller guarantees the kept part fits.
constexpr Split split_at(std::uint64_t sig, int exp2, int q) {
    const int d = q - exp2;
    if (d <= 0) return {sig << (-d), false, false};
    if (d > 64) return {0, false, sig != 0};
    if (d == 64) return {0, (sig >> 63) != 0, (sig & ~(std::uint64_t{1} << 63)) != 0};
    const std::uint64_t low = sig & ((std::uint64_t{1} << d) - 1);
    const std::uint64_t half_bit = std::uint64_t{1} << (d - 1);
    return {sig >> d, (low & half_bit) != 0, (low & (half_bit - 1)) != 0};
}

constexpr std::uint64_t round_split(const Split& sp, Rounding r) {
    switch (r) {
        case Rounding::truncate: return sp.kept;
        case Rounding::ties_to_away: return sp.kept + (sp.half ? 1 : 0);
        case Rounding::ties_to_even:
            return sp.kept + ((sp.half && (sp.sticky || (sp.kept & 1))) ? 1 : 0);
    }
    return sp.kept;
}

constexpr code_t overflow_code(const FloatSpec& s, bool negative, Rounding r) {
    if (r == Rounding::truncate || s.overflow() == Overflow::saturate) return max_finite_code(s, negative);
    return inf_code(s, negative);
}

}  // namespace detail

/// Rounds (-1)^negative * sig * 2^exp2 into the format. This is the single
/// rounding primitive every narrowing conversion goes through.
constexpr code_t round_scaled(bool negative, std::uint64_t sig, int exp2, const FloatSpec& s, Rounding r) {
    const code_t sign = negative ? s.sign_mask() : 0;
    if (sig == 0) return sign;
    const int M = s.man_bits();
    const int top = static_cast<int>(std::bit_width(sig)) - 1 + exp2;  // floor(log2 |value|)
    if (top > s.max_exponent()) return detail::overflow_code(s, negative, r);

    const int emin = s.min_normal_exponent();
    if (!s.denorm()) {
        // Nonzero magnitudes below 2^-b (1 + 2^-M) choose between 0 and that value.
        const int q = -s.bias() - M;
        const std::uint64_t smallest = (std::uint64_t{1} << M) + 1;
        if (top < emin || (top == emin && detail::split_at(sig, exp2, q).kept < smallest)) {
            if (r == Rounding::truncate) return sign;
            const detail::Split twice = detail::split_at(sig, exp2 + 1, q);  // 2|v| on the grid
            bool up;
            if (twice.kept != smallest) up = twice.kept > smallest;
            else if (twice.half || twice.sticky) up = true;
            else up = (r == Rounding::ties_to_away);  // even prefers the zero code
            return up ? (sign | 1u) : sign;
        }
    }

    int q = (top >= emin ? top : emin) - M;
    std::uint64_t r_int = detail::round_split(detail::split_at(sig, exp2, q), r);
    if (r_int == (std::uint64_t{1} << (M + 1))) {
        r_int >>= 1;
        ++q;
    }
    if (r_int == 0) return sign;
    if (r_int < (std::uint64_t{1} << M)) return sign | static_cast<code_t>(r_int);  // subnormal

    const int xi = q + M;
    if (xi > s.max_exponent()) return detail::overflow_code(s, negative, r);
    const code_t k = static_cast<code_t>(xi + s.bias());
    const code_t m = static_cast<code_t>(r_int - (std::uint64_t{1} << M));
    if (!s.reserved_top() && static_cast<int>(k) == s.top_exp_code() && m == s.man_mask())
        return detail::overflow_code(s, negative, r);
    return sign | (k << M) | m;
}

inline code_t encode(double v, const FloatSpec& s, Rounding r) {
    const bool neg = std::signbit(v);
    if (std::isnan(v)) return nan_code(s, neg);
    if (std::isinf(v)) {
        if (s.reserved_top()) return inf_code(s, neg);
        return s.overflow() == Overflow::saturate ? max_finite_code(s, neg) : nan_code(s, neg);
    }
    if (v == 0.0) return neg ? s.sign_mask() : 0;
    int ex = 0;
    const double fr = std::frexp(std::fabs(v), &ex);  // |v| = fr * 2^ex, fr in [0.5, 1)
    const auto sig = static_cast<std::uint64_t>(std::ldexp(fr, 53));
    return round_scaled(neg, sig, ex - 53, s, r);
}

inline code_t encode(double v, const FloatSpec& s) { return encode(v, s, s.rounding()); }

/// Inverse of unpack. NaN payloads survive when they are valid for the target.
inline code_t pack(const Unpacked& u, const FloatSpec& s, Rounding r) {
    const code_t sign = u.negative ? s.sign_mask() : 0;
    switch (u.cls) {
        case FloatClass::zero: return sign;
        case FloatClass::infinity:
            if (s.reserved_top()) return inf_code(s, u.negative);
            return s.overflow() == Overflow::saturate ? max_finite_code(s, u.negative) : nan_code(s, u.negative);
        case FloatClass::nan: {
            const bool keep = u.significand != 0 && u.significand <= s.man_mask() &&
                              (s.reserved_top() || u.significand == s.man_mask());
            if (!keep) return nan_code(s, u.negative);
            return sign | (static_cast<code_t>(s.top_exp_code()) << s.man_bits()) |
                   static_cast<code_t>(u.significand);
        }
        default:
            return round_scaled(u.negative, u.significand, u.exponent - u.frac_bits, s, r);
    }
}

inline code_t pack(const Unpacked& u, const FloatSpec& s) { return pack(u, s, s.rounding()); }

/// Round v to the nearest value of the format (decode(encode(v))).
inline double quantize(double v, const FloatSpec& s) { return decode(encode(v, s), s); }

// ---------------------------------------------------------------------------
// Format queries

/// Rows of the exact-multiplication format table. Their xi_min column does not
/// follow one formula across formats, so known formats use the tabulated value.
struct TabulatedFormat {
    FloatSpec spec;
    int xi_max;
    int xi_min;
    int product_xi_max;
    int product_xi_min;
    std::string_view product_type;
    int fixed_point_width;
};

inline const std::array<TabulatedFormat, 5>& tabulated_formats() {
    static const std::array<TabulatedFormat, 5> rows{{
        {formats::e4m3, 8, -9, 17, -18, "E6M7", 43},
        {formats::e5m2, 15, -16, 31, -32, "E7M5", 69},
        {formats::e3m4, 3, -4, 7, -8, "E5M9", 25},
        {formats::e5m10, 15, -14, 31, -28, "E6M21", 81},
        {formats::e8m7, 127, -126, 255, -252, "E9M15", 523},
    }};
    return rows;
}

inline std::optional<TabulatedFormat> tabulated(const FloatSpec& s) {
    for (const auto& row : tabulated_formats())
        if (row.spec.same_encoding(s)) return row;
    return std::nullopt;
}

struct FormatLimits {
    int bias;
    int xi_max;               // largest unbiased exponent
    int xi_min;               // smallest exponent (tabulated for known formats)
    int min_normal_exponent;  // lowest normal binade
    int min_positive_exponent;
    double max_normal;
    double min_normal;
    double min_positive;
};

inline FormatLimits format_queries(const FloatSpec& s) {
    FormatLimits q{};
    q.bias = s.bias();
    q.xi_max = s.max_exponent();
    q.min_normal_exponent = s.min_normal_exponent();
    q.max_normal = decode(max_finite_code(s), s);
    const code_t min_normal = s.denorm() ? (code_t{1} << s.man_bits()) : code_t{1};
    q.min_normal = decode(min_normal, s);
    q.min_positive = decode(1u, s);
    q.min_positive_exponent = std::ilogb(q.min_positive);
    const auto row = tabulated(s);
    q.xi_min = row ? row->xi_min : q.min_positive_exponent;
    return q;
}

/// Gap between adjacent representable values around |v|.
inline double ulp(const FloatSpec& s, double v) {
    int e = s.min_normal_exponent();
    const double a = std::fabs(v);
    if (std::isfinite(a) && a > 0.0) e = std::max(e, std::ilogb(a));
    e = std::min(e, s.max_exponent());
    return std::ldexp(1.0, e - s.man_bits());
}

/// Decoded value of every code, for formats up to 16 bits. Built once per spec.
const std::vector<double>& decode_table(const FloatSpec& s);

}  // namespace microscaling

#include "microscaling/detail/decode_table.hpp"
