#pragma once
// Test-only oracles. They evaluate formats from the raw bit fields with exact
// rationals and round by enumerating the representable set, sharing no code
// with the library's integer rounding path.

#include <gmpxx.h>
#include <mpfr.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "microscaling/minifloat.hpp"

namespace oracle {

using microscaling::code_t;
using microscaling::FloatSpec;
using microscaling::Rounding;

inline mpq_class pow2(int e) {
    mpq_class r = 1;
    if (e >= 0) mpz_mul_2exp(r.get_num_mpz_t(), r.get_num_mpz_t(), static_cast<unsigned>(e));
    else mpz_mul_2exp(r.get_den_mpz_t(), r.get_den_mpz_t(), static_cast<unsigned>(-e));
    r.canonicalize();
    return r;
}

enum class Kind { finite, infinity, nan };

struct Value {
    Kind kind = Kind::finite;
    bool negative = false;
    mpq_class magnitude = 0;
};

/// Direct evaluation of the case-split definition with 2^M denominators.
inline Value evaluate(code_t x, const FloatSpec& s) {
    const int E = s.exp_bits(), M = s.man_bits();
    const unsigned sign = (x >> (E + M)) & 1u;
    const unsigned k = (x >> M) & ((1u << E) - 1);
    const unsigned m = x & ((1u << M) - 1);
    const unsigned top = (1u << E) - 1;
    const int b = (1 << (E - 1)) - 1;
    Value v;
    v.negative = sign != 0;
    if (k == top && s.reserved_top()) {
        v.kind = m == 0 ? Kind::infinity : Kind::nan;
        return v;
    }
    if (k == top && !s.reserved_top() && m == (1u << M) - 1) {
        v.kind = Kind::nan;
        return v;
    }
    if (k == 0 && m == 0) return v;
    if (k == 0 && s.denorm()) {
        v.magnitude = pow2(-b + 1) * mpq_class(m) / pow2(M);
        return v;
    }
    v.magnitude = pow2(static_cast<int>(k) - b) * (mpq_class(1) + mpq_class(m) / pow2(M));
    return v;
}

inline mpq_class exact(double d) { return mpq_class(d); }

inline double to_double(const Value& v) {
    if (v.kind == Kind::nan) return std::nan("");
    if (v.kind == Kind::infinity) return v.negative ? -INFINITY : INFINITY;
    const double d = v.magnitude.get_d();  // exact for the formats in scope
    return v.negative ? -d : d;
}

/// Positive finite magnitudes, indexed by code (codes 0..max_finite_code).
class Grid {
public:
    explicit Grid(const FloatSpec& s) : spec_(s) {
        const code_t last = microscaling::max_finite_code(s);
        for (code_t c = 0; c <= last; ++c) values_.push_back(evaluate(c, s).magnitude);
        // Next point of the top binade: the overflow threshold for nearest rounding.
        const int top_exp = s.max_exponent();
        overflow_point_ = values_.back() + pow2(top_exp - s.man_bits());
    }

    /// Code produced by correctly rounding (-1)^negative * mag.
    code_t round(bool negative, const mpq_class& mag, Rounding r) const {
        const code_t sign = negative ? spec_.sign_mask() : 0;
        const auto overflow = [&]() -> code_t {
            if (r == Rounding::truncate || spec_.overflow() == microscaling::Overflow::saturate)
                return sign | static_cast<code_t>(values_.size() - 1);
            return microscaling::inf_code(spec_, negative);
        };
        if (mag >= overflow_point_) return r == Rounding::truncate ? sign | last_code() : overflow();
        // lo = largest code with value <= mag
        auto it = std::upper_bound(values_.begin(), values_.end(), mag);
        const auto lo = static_cast<code_t>((it - values_.begin()) - 1);
        const mpq_class lo_v = values_[lo];
        if (lo_v == mag) return sign | lo;
        const bool lo_is_last = lo == last_code();
        const mpq_class hi_v = lo_is_last ? overflow_point_ : values_[lo + 1];
        const code_t hi = lo + 1;  // may be the virtual overflow code
        bool up = false;
        switch (r) {
            case Rounding::truncate: up = false; break;
            case Rounding::ties_to_away: up = (mag - lo_v) >= (hi_v - mag); break;
            case Rounding::ties_to_even: {
                const mpq_class dl = mag - lo_v, dh = hi_v - mag;
                if (dl != dh) up = dh < dl;
                else up = (hi & 1u) == 0;
                break;
            }
        }
        if (!up) return sign | lo;
        if (lo_is_last) return overflow();
        return sign | hi;
    }

    code_t last_code() const { return static_cast<code_t>(values_.size() - 1); }
    const mpq_class& value(code_t c) const { return values_[c]; }

private:
    FloatSpec spec_;
    std::vector<mpq_class> values_;
    mpq_class overflow_point_;
};

/// Oracle conversion of a double into the format.
inline code_t round_double(double d, const FloatSpec& s, Rounding r, const Grid& grid) {
    if (std::isnan(d)) return microscaling::nan_code(s, std::signbit(d));
    if (std::isinf(d)) return microscaling::encode(d, s, r);  // specials: not what the oracle checks
    return grid.round(std::signbit(d), abs(exact(d)), r);
}

/// Correctly rounded (nearest-even) double of an exact rational.
inline double round_to_double(const mpq_class& q) {
    if (q == 0) return 0.0;
    mpfr_t f;
    mpfr_init2(f, 53);
    mpfr_set_q(f, q.get_mpq_t(), MPFR_RNDN);
    const double d = mpfr_get_d(f, MPFR_RNDN);
    mpfr_clear(f);
    return d;
}

}  // namespace oracle
