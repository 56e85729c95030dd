#pragma once
// Round-free dot-product accumulation.
//
// Products of two minifloats are exact on 2M+2 significand bits (2M+1 after
// the hidden bit) with an exponent range twice the operand's. Summing them in
// a two's-complement fixed-point register wide enough for every product weight
// never rounds; the single rounding happens when the register is packed into
// a floating point format.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "microscaling/minifloat.hpp"

namespace microscaling {

struct ProductFormat {
    int exp_bits;  // E + 2
    int man_bits;  // 2M + 1
    int xi_max;    // 2 xi_max + 1
    int xi_min;    // 2 xi_min
};

inline ProductFormat required_product_format(const FloatSpec& s) {
    const auto q = format_queries(s);
    return {s.exp_bits() + 2, 2 * s.man_bits() + 1, 2 * q.xi_max + 1, 2 * q.xi_min};
}

/// Fixed-point width needed to hold any product of two values of the format:
/// E4M3 43, E5M2 69, E3M4 25, E5M10 81, E8M7 523.
inline int required_width(const FloatSpec& s) {
    const ProductFormat p = required_product_format(s);
    return p.xi_max - p.xi_min + 1 + p.man_bits;
}

constexpr int ceil_log2(std::uint64_t n) { return n <= 1 ? 0 : static_cast<int>(std::bit_width(n - 1)); }

/// value = (-1)^negative * significand * 2^(exponent - frac_bits), with
/// significand in [2^frac_bits, 2^(frac_bits+1)) unless the product is zero.
struct ExactProduct {
    bool negative = false;
    std::uint64_t significand = 0;
    int exponent = 0;
    int frac_bits = 0;

    bool is_zero() const { return significand == 0; }
    double to_double() const {
        const double v = std::ldexp(static_cast<double>(significand), exponent - frac_bits);
        return negative ? -v : v;
    }
};

/// Throws mx_error(unsupported_special) for infinities and NaN.
inline ExactProduct exact_mul(code_t a, code_t b, const FloatSpec& s) {
    const Unpacked ua = unpack(a, s), ub = unpack(b, s);
    for (const auto* u : {&ua, &ub})
        if (u->cls == FloatClass::infinity || u->cls == FloatClass::nan)
            throw mx_error(errc::unsupported_special, "exact product of a non-finite " + s.name() + " value");
    ExactProduct p;
    p.negative = ua.negative != ub.negative;
    p.frac_bits = 2 * s.man_bits() + 1;
    if (ua.cls == FloatClass::zero || ub.cls == FloatClass::zero) return p;
    const std::uint64_t prod = ua.significand * ub.significand;
    const int lsb = (ua.exponent - ua.frac_bits) + (ub.exponent - ub.frac_bits);
    const int bw = static_cast<int>(std::bit_width(prod));
    p.significand = prod << (p.frac_bits + 1 - bw);
    p.exponent = lsb + bw - 1;
    return p;
}

/// 64-bit fixed-point register whose bit 0 weighs 2^(2 emin - 2M), emin being
/// the lowest normal exponent, so every product of the format lands on it.
class ExactAccumulator {
public:
    /// Rejects formats whose table width plus ceil(log2 block_len) carry bits
    /// exceed 63 (E5M2 needs 69 bits and is rejected).
    explicit ExactAccumulator(const FloatSpec& spec, std::size_t block_len = 32)
        : spec_(spec), width_(required_width(spec)), lsb_(2 * (spec.min_normal_exponent() - spec.man_bits())) {
        const int guard = ceil_log2(block_len);
        if (width_ + guard > 63)
            throw mx_error(errc::accumulator_too_wide,
                           spec.name() + " needs " + std::to_string(width_) + " + " + std::to_string(guard) +
                               " bits, the register has 63");
        if (spec.width() <= 8) products_ = &product_table();
    }

    ExactAccumulator& operator+=(const ExactProduct& p) {
        if (p.is_zero()) return *this;
        const int tz = std::countr_zero(p.significand);
        const std::uint64_t sig = p.significand >> tz;
        const int shift = p.exponent - p.frac_bits + tz - lsb_;
        if (shift < 0 || static_cast<int>(std::bit_width(sig)) + shift > 62)
            throw mx_error(errc::window_overflow, "product weight outside the accumulator window");
        const auto mag = static_cast<std::int64_t>(sig << shift);
        std::int64_t next = 0;
        if (__builtin_add_overflow(register_, p.negative ? -mag : mag, &next))
            throw mx_error(errc::window_overflow, "accumulator register overflow");
        register_ = next;
        return *this;
    }

    /// Products of <=8-bit formats come from a table of fixed-point integers;
    /// wider formats go through exact_mul.
    void add_product(code_t a, code_t b) {
        if (products_) {
            const unsigned h = static_cast<unsigned>(spec_.width()) - 1;
            const code_t mm = static_cast<code_t>((1u << h) - 1);
            const std::int64_t v = (*products_)[(static_cast<std::size_t>(a & mm) << h) | (b & mm)];
            const std::int64_t neg = ((a ^ b) >> h) & 1;
            if (v == 0 && (!is_finite(a, spec_) || !is_finite(b, spec_)))
                throw mx_error(errc::unsupported_special, "exact product of a non-finite " + spec_.name() + " value");
            register_ += (v ^ -neg) + neg;  // cannot overflow within the block length checked at construction
            return;
        }
        *this += exact_mul(a, b, spec_);
    }
    /// Adds a * b elementwise over two equally long code spans.
    void add_products(std::span<const code_t> a, std::span<const code_t> b) {
        if (!products_) {
            for (std::size_t i = 0; i < a.size(); ++i) *this += exact_mul(a[i], b[i], spec_);
            return;
        }
        const unsigned h = static_cast<unsigned>(spec_.width()) - 1;
        const code_t mm = static_cast<code_t>((1u << h) - 1);
        const std::int64_t* t = products_->data();
        std::int64_t r = register_;
        bool zero_seen = false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::int64_t v = t[(static_cast<std::size_t>(a[i] & mm) << h) | (b[i] & mm)];
            const std::int64_t neg = ((a[i] ^ b[i]) >> h) & 1;
            zero_seen |= v == 0;
            r += (v ^ -neg) + neg;
        }
        if (zero_seen)
            for (std::size_t i = 0; i < a.size(); ++i)
                if (!is_finite(a[i], spec_) || !is_finite(b[i], spec_))
                    throw mx_error(errc::unsupported_special, "exact product of a non-finite " + spec_.name() + " value");
        register_ = r;
    }

    void clear() { register_ = 0; }

    std::int64_t raw() const { return register_; }
    int min_exponent() const { return lsb_; }
    int width() const { return width_; }
    const FloatSpec& spec() const { return spec_; }

    /// Exact conversion: value = significand * 2^(exponent - frac_bits).
    Unpacked unpack() const {
        Unpacked u;
        if (register_ == 0) return u;
        u.cls = FloatClass::normal;
        u.negative = register_ < 0;
        u.significand = u.negative ? ~static_cast<std::uint64_t>(register_) + 1 : static_cast<std::uint64_t>(register_);
        u.frac_bits = static_cast<int>(std::bit_width(u.significand)) - 1;
        u.exponent = u.frac_bits + lsb_;
        return u;
    }

    /// Register value correctly rounded to double.
    double to_double() const { return std::ldexp(static_cast<double>(register_), lsb_); }

private:
    // Product magnitudes of every finite magnitude pair in units of 2^lsb; 0
    // for specials.
    const std::vector<std::int64_t>& product_table() const {
        static std::mutex mutex;
        static std::map<detail::EncodingKey, std::unique_ptr<const std::vector<std::int64_t>>> cache;
        std::lock_guard lock(mutex);
        auto& slot = cache[detail::encoding_key(spec_)];
        if (!slot) {
            const std::size_t n = std::size_t{1} << (spec_.width() - 1);
            auto t = std::make_unique<std::vector<std::int64_t>>(n * n, 0);
            for (code_t a = 0; a < n; ++a)
                for (code_t b = 0; b < n; ++b) {
                    if (!is_finite(a, spec_) || !is_finite(b, spec_)) continue;
                    const ExactProduct p = exact_mul(a, b, spec_);
                    if (p.is_zero()) continue;
                    const int shift = p.exponent - p.frac_bits - lsb_;
                    const auto mag = static_cast<std::int64_t>(shift >= 0 ? p.significand << shift : p.significand >> -shift);
                    (*t)[(a << (spec_.width() - 1)) | b] = mag;
                }
            slot = std::move(t);
        }
        return *slot;
    }

    FloatSpec spec_;
    int width_;
    int lsb_;
    std::int64_t register_ = 0;
    const std::vector<std::int64_t>* products_ = nullptr;
};

/// Multi-limb two's-complement fixed-point sum of int64 * 2^e terms, used to
/// combine per-block accumulators of differently scaled blocks without
/// rounding.
class ExactSum {
public:
    ExactSum(int min_exponent, int max_exponent) : base_(min_exponent) {
        const int bits = max_exponent - min_exponent + 64 + 2;
        limbs_.assign(static_cast<std::size_t>(bits / 64 + 2), 0);
    }

    void add(std::int64_t value, int exponent) {
        if (value == 0) return;
        const int shift = exponent - base_;
        if (shift < 0 || static_cast<std::size_t>(shift / 64 + 2) >= limbs_.size())
            throw mx_error(errc::window_overflow, "term outside the exact sum window");
        const bool neg = value < 0;
        const std::uint64_t mag = neg ? ~static_cast<std::uint64_t>(value) + 1 : static_cast<std::uint64_t>(value);
        const auto idx = static_cast<std::size_t>(shift / 64);
        const int off = shift % 64;
        const unsigned __int128 wide = static_cast<unsigned __int128>(mag) << off;
        const std::uint64_t parts[2] = {static_cast<std::uint64_t>(wide), static_cast<std::uint64_t>(wide >> 64)};
        if (!neg) {
            unsigned carry = 0;
            for (std::size_t i = idx; i < limbs_.size(); ++i) {
                const std::uint64_t term = i - idx < 2 ? parts[i - idx] : 0;
                if (term == 0 && carry == 0 && i - idx >= 2) break;
                const unsigned __int128 s = static_cast<unsigned __int128>(limbs_[i]) + term + carry;
                limbs_[i] = static_cast<std::uint64_t>(s);
                carry = static_cast<unsigned>(s >> 64);
            }
        } else {
            unsigned borrow = 0;
            for (std::size_t i = idx; i < limbs_.size(); ++i) {
                const std::uint64_t term = i - idx < 2 ? parts[i - idx] : 0;
                if (term == 0 && borrow == 0 && i - idx >= 2) break;
                const std::uint64_t before = limbs_[i];
                const std::uint64_t after = before - term - borrow;
                borrow = (before < term || (before == term && borrow)) ? 1u : 0u;
                limbs_[i] = after;
            }
        }
    }

    void add(const ExactAccumulator& acc, int extra_exponent = 0) {
        add(acc.raw(), acc.min_exponent() + extra_exponent);
    }

    void clear() { std::fill(limbs_.begin(), limbs_.end(), std::uint64_t{0}); }

    bool is_zero() const {
        for (auto l : limbs_)
            if (l) return false;
        return true;
    }

    /// Correctly rounded (ties to even) double of the sum.
    double to_double() const {
        auto& mag = scratch_;
        mag = limbs_;
        const bool neg = (mag.back() >> 63) != 0;
        if (neg) {
            unsigned carry = 1;
            for (auto& l : mag) {
                l = ~l;
                const unsigned __int128 s = static_cast<unsigned __int128>(l) + carry;
                l = static_cast<std::uint64_t>(s);
                carry = static_cast<unsigned>(s >> 64);
            }
        }
        std::size_t top = mag.size();
        while (top > 0 && mag[top - 1] == 0) --top;
        if (top == 0) return 0.0;
        // The 64 bits ending at the leading one, plus a sticky flag for the rest.
        const int b = static_cast<int>(std::bit_width(mag[top - 1])) - 1;
        const int low_bit = b - 63 + 64 * static_cast<int>(top - 1);
        std::uint64_t window = mag[top - 1] << (63 - b);
        bool sticky = false;
        std::size_t below = top - 1;  // limbs [0, below) only feed the sticky flag
        if (b < 63 && top >= 2) {
            window |= mag[top - 2] >> (b + 1);
            sticky = (mag[top - 2] & ((std::uint64_t{1} << (b + 1)) - 1)) != 0;
            below = top - 2;
        }
        for (std::size_t i = 0; i < below && !sticky; ++i) sticky = mag[i] != 0;
        std::uint64_t kept = window >> 11;
        const bool half = (window >> 10) & 1u;
        const bool rest = (window & ((std::uint64_t{1} << 10) - 1)) != 0 || sticky;
        if (half && (rest || (kept & 1u))) ++kept;
        const double v = std::ldexp(static_cast<double>(kept), low_bit + 11 + base_);
        return neg ? -v : v;
    }

private:
    int base_;
    std::vector<std::uint64_t> limbs_;
    mutable std::vector<std::uint64_t> scratch_;
};

}  // namespace microscaling
