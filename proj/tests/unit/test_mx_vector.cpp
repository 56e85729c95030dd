#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <list>
#include <numeric>
#include <random>
#include <vector>

#include "microscaling/mx_vector.hpp"
#include "oracle.hpp"

using namespace microscaling;

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> mag(-20, 20);
    std::vector<double> v(n);
    const double k = std::ldexp(1.0, mag(rng));
    for (auto& x : v) x = g(rng) * k;
    return v;
}

mpq_class exact_dot(const MxVector& a, const MxVector& b) {
    mpq_class s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += oracle::exact(a[i]) * oracle::exact(b[i]);
    return s;
}

}  // namespace

TEST(QuantizeBlock, AllZeros) {
    const std::vector<double> x(32, 0.0);
    const auto q = quantize_block(x, formats::e4m3);
    EXPECT_EQ(q.w, 0);
    for (auto c : q.codes) EXPECT_EQ(c, 0u);
}

TEST(QuantizeBlock, SubnormalOnlyBlockHasZeroScale) {
    const std::vector<double> x{4.9e-324, -1e-310, 0.0};
    EXPECT_EQ(quantize_block(x, formats::e4m3).w, 0);
}

TEST(QuantizeBlock, WorkedExample) {
    const std::vector<double> x{1.0, 0.5, -2.0, 0.25};
    const auto q = quantize_block(x, formats::e4m3);
    EXPECT_EQ(q.w, -7);
    std::vector<double> dec;
    for (auto c : q.codes) dec.push_back(decode(c, formats::e4m3));
    EXPECT_EQ(dec, (std::vector<double>{128, 64, -256, 32}));
}

TEST(QuantizeBlock, ScaleClamps) {
    EXPECT_EQ(quantize_block(std::vector<double>{1e300}, formats::e4m3).w, 127);
    EXPECT_EQ(quantize_block(std::vector<double>{1e-300}, formats::e4m3).w, -127);
    // E8M7's own max: ilogb 127 - xi 127 = 0, a huge input against E3M4 clamps
    EXPECT_EQ(quantize_block(std::vector<double>{std::ldexp(1.0, 200)}, formats::e3m4).w, 127);
}

TEST(QuantizeBlock, NaNInputStaysLocal) {
    const std::vector<double> x{1.0, std::nan(""), 2.0};
    const auto v = mx_from_values(x, formats::e4m3, 32);
    EXPECT_FALSE(v.scale_is_nan(0));
    EXPECT_EQ(v[0], 1.0);
    EXPECT_TRUE(std::isnan(v[1]));
    EXPECT_EQ(v[2], 2.0);
}

TEST(MxVector, Construction) {
    const auto empty = mx_from_values(std::vector<double>{}, formats::e4m3);
    EXPECT_EQ(empty.size(), 0u);
    EXPECT_EQ(empty.num_blocks(), 0u);
    const auto v = mx_from_values(std::vector<double>(33, 1.0), formats::e4m3, 32);
    EXPECT_EQ(v.num_blocks(), 2u);
    EXPECT_EQ(v.block_size(1), 1u);
    EXPECT_EQ(v.get(32), 1.0);
    // any input range, including lazy views and non-contiguous containers
    std::list<float> l{0.5f, 0.25f};
    EXPECT_EQ(mx_from_values(l, formats::e5m2, 4).get(1), 0.25);
    auto squares = std::views::iota(0, 10) | std::views::transform([](int i) { return double(i * i); });
    EXPECT_EQ(mx_from_values(squares, formats::e4m3, 4).get(3), 9.0);
}

TEST(MxVector, GetAndPoison) {
    auto v = mx_from_values(std::vector<double>{1.0, 0.5, -2.0, 0.25, 0.0}, formats::e4m3, 4);
    EXPECT_EQ(v.get(1), 0.5);
    EXPECT_EQ(v.get(4), 0.0);
    try {
        v.get(5);
        ADD_FAILURE();
    } catch (const mx_error& e) {
        EXPECT_EQ(e.code(), errc::index_out_of_range);
    }
    v.poison_block(0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(std::isnan(v.get(i)));
    EXPECT_EQ(v.get(4), 0.0);
}

TEST(MxVector, ScaleMaximality) {
    std::mt19937_64 rng(1);
    for (const auto& s : {formats::e4m3, formats::e5m2, formats::e3m4}) {
        const int xi = format_queries(s).xi_max;
        for (int t = 0; t < 500; ++t) {
            const auto v = mx_from_values(random_values(rng, 96), s, 32);
            for (std::size_t j = 0; j < v.num_blocks(); ++j) {
                int top = std::numeric_limits<int>::min();
                for (auto c : v.block_codes(j))
                    if (classify(c, s) == FloatClass::normal) top = std::max(top, exp_field(c, s) - s.bias());
                ASSERT_EQ(top, xi) << s.name();
            }
        }
    }
}

// Elements equal the correctly rounded scaled input, or the largest finite
// value when the scaled input lies beyond it.
TEST(MxVector, ElementsAreRoundedAtBlockScale) {
    std::mt19937_64 rng(2);
    for (const auto& s : {formats::e4m3, formats::e5m2, formats::e3m4}) {
        const FloatSpec sat = s.with_overflow(Overflow::saturate);
        const oracle::Grid grid(sat);
        const double top = format_queries(s).max_normal;
        for (int t = 0; t < 300; ++t) {
            const auto x = random_values(rng, 64);
            const auto v = mx_from_values(x, s, 32);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const int w = v.scale_exponent(i / 32);
                const double scaled = std::ldexp(x[i], -w);
                ASSERT_EQ(v.code(i), oracle::round_double(scaled, sat, s.rounding(), grid));
                if (std::fabs(scaled) <= top)
                    ASSERT_LE(std::fabs(x[i] - v[i]), 0.5 * std::ldexp(ulp(s, scaled), w));
            }
        }
    }
}

TEST(MxVector, Linearity) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        const auto x = random_values(rng, 64);
        auto y = x;
        for (auto& e : y) e *= 8.0;
        const auto a = mx_from_values(x, formats::e4m3), b = mx_from_values(y, formats::e4m3);
        for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(a.code(i), b.code(i));
        for (std::size_t j = 0; j < a.num_blocks(); ++j) ASSERT_EQ(b.scale_exponent(j), a.scale_exponent(j) + 3);
    }
}

TEST(MxVector, ResizeKeepsInvariants) {
    auto v = mx_from_values(std::vector<double>{1.0, 0.5, 4.0, 0.25, 3.0}, formats::e4m3, 4);
    const auto g = v.generation();
    v.resize(2);
    EXPECT_GT(v.generation(), g);
    EXPECT_EQ(v.num_blocks(), 1u);
    EXPECT_EQ(v.get(0), 1.0);
    EXPECT_EQ(v.scale_exponent(0), 0 - 8);
    v.resize(6);
    EXPECT_EQ(v.get(5), 0.0);
    v.assign(std::vector<double>{7.0});
    EXPECT_EQ(v.size(), 1u);
    EXPECT_EQ(v.get(0), 7.0);
}

TEST(MxVector, DumpFormat) {
    const auto v = mx_from_values(std::vector<double>{1.0, 0.5, -2.0, 0.25, 3.0}, formats::e4m3, 4);
    EXPECT_EQ(v.dump(), "block 0: w=-7 codes=70 68 f8 60\nblock 1: w=-7 codes=7c\n");
}

TEST(MxIterator, ReadScanMatchesGet) {
    std::mt19937_64 rng(4);
    auto v = mx_from_values(random_values(rng, 100), formats::e4m3, 32);
    std::size_t i = 0;
    for (auto it = v.begin(); it != v.end(); ++it, ++i) ASSERT_EQ(double(*it), v.get(i));
    EXPECT_EQ(i, 100u);
}

TEST(MxIterator, WriteCommitAndRefresh) {
    auto v = mx_from_values(std::vector<double>(8, 1.0), formats::e4m3, 4);
    {
        auto it = v.begin(false);
        *it = 3.3;
        EXPECT_EQ(v.get(0), 1.0);  // buffered
        it.refresh();
        EXPECT_EQ(double(*it), 1.0);
        *it = 3.3;
        it.commit();
        const std::vector<double> want_block{3.3, 1.0, 1.0, 1.0};
        const auto q = quantize_block(want_block, formats::e4m3);
        EXPECT_EQ(v.get(0), std::ldexp(decode(q.codes[0], formats::e4m3), q.w));
        EXPECT_EQ(v.get(0), 3.25);
    }
    {
        auto it = v.begin();
        it += 5;
        *it = -16.0;
        it += 3;  // leaves block 1: auto-commit
        EXPECT_EQ(v.get(5), -16.0);
    }
    {
        auto it = v.begin();
        *it = 5.0;
    }  // destructor commits
    EXPECT_EQ(v.get(0), 5.0);
}

TEST(MxIterator, FillIsIdempotent) {
    std::mt19937_64 rng(5);
    const auto x = random_values(rng, 70);
    auto once = mx_from_values(std::vector<double>(70, 0.0), formats::e4m3, 32);
    auto twice = once;
    {
        std::size_t i = 0;
        for (auto it = once.begin(); it != once.end(); ++it) *it = x[i++];
    }
    for (int pass = 0; pass < 2; ++pass) {
        std::size_t i = 0;
        for (auto it = twice.begin(); it != twice.end(); ++it) *it = x[i++];
    }
    EXPECT_EQ(once.dump(), twice.dump());
    // a fresh iterator sees the committed block, and re-committing it changes nothing
    auto snapshot = once.dump();
    {
        auto it = once.begin();
        for (; it != once.end(); ++it) *it = double(*it);
    }
    EXPECT_EQ(once.dump(), snapshot);
}

TEST(MxIterator, StaleAfterResize) {
    auto v = mx_from_values(std::vector<double>(8, 1.0), formats::e4m3, 4);
    auto it = v.begin(false);
    *it = 2.0;
    v.resize(6);
    try {
        it.commit();
        ADD_FAILURE();
    } catch (const mx_error& e) {
        EXPECT_EQ(e.code(), errc::stale_iterator);
    }
    EXPECT_THROW((void)it.read(), mx_error);
    it.refresh();
    EXPECT_EQ(it.read(), 1.0);
}

TEST(MxDot, Errors) {
    const auto a = mx_from_values(std::vector<double>(8, 1.0), formats::e4m3, 4);
    const auto b = mx_from_values(std::vector<double>(9, 1.0), formats::e4m3, 4);
    const auto c = mx_from_values(std::vector<double>(8, 1.0), formats::e4m3, 8);
    try {
        mx_dot(a, b);
        ADD_FAILURE();
    } catch (const mx_error& e) {
        EXPECT_EQ(e.code(), errc::length_mismatch);
    }
    try {
        mx_dot(a, c);
        ADD_FAILURE();
    } catch (const mx_error& e) {
        EXPECT_EQ(e.code(), errc::block_mismatch);
    }
    const auto d = mx_from_values(std::vector<double>(8, 1.0), formats::e5m2, 4);
    EXPECT_THROW(mx_dot(a, d, AccumulatorKind::exact), mx_error);
    EXPECT_EQ(mx_dot(a, d), 8.0);
    EXPECT_THROW(mx_dot(d, d, AccumulatorKind::exact), mx_error);  // E5M2 is too wide for the register
}

TEST(MxDot, ZeroVector) {
    std::mt19937_64 rng(6);
    const auto a = mx_from_values(random_values(rng, 64), formats::e4m3);
    const auto z = mx_from_values(std::vector<double>(64, 0.0), formats::e4m3);
    for (auto k : {AccumulatorKind::wide, AccumulatorKind::exact, AccumulatorKind::narrow}) EXPECT_EQ(mx_dot(a, z, k), 0.0);
}

TEST(MxDot, ExactIsRoundedOnce) {
    std::mt19937_64 rng(7);
    for (const auto& s : {formats::e4m3, formats::e3m4}) {
        for (int t = 0; t < 300; ++t) {
            const auto a = mx_from_values(random_values(rng, 256), s, 32);
            const auto b = mx_from_values(random_values(rng, 256), s, 32);
            ASSERT_EQ(mx_dot(a, b, AccumulatorKind::exact), oracle::round_to_double(exact_dot(a, b))) << s.name();
        }
    }
}

TEST(MxDot, ExactIsOrderIndependent) {
    std::mt19937_64 rng(8);
    const auto x = random_values(rng, 256), y = random_values(rng, 256);
    const auto a = mx_from_values(x, formats::e4m3), b = mx_from_values(y, formats::e4m3);
    const double ref = mx_dot(a, b, AccumulatorKind::exact);
    EXPECT_EQ(mx_dot(b, a, AccumulatorKind::exact), ref);
    std::vector<std::size_t> blocks(8), inner(32);
    std::iota(blocks.begin(), blocks.end(), 0);
    std::iota(inner.begin(), inner.end(), 0);
    for (int t = 0; t < 20; ++t) {
        std::shuffle(blocks.begin(), blocks.end(), rng);
        std::vector<double> px, py;
        for (auto j : blocks) {
            std::shuffle(inner.begin(), inner.end(), rng);
            for (auto i : inner) {
                px.push_back(x[j * 32 + i]);
                py.push_back(y[j * 32 + i]);
            }
        }
        EXPECT_EQ(mx_dot(mx_from_values(px, formats::e4m3), mx_from_values(py, formats::e4m3), AccumulatorKind::exact), ref);
    }
}

TEST(MxDot, WideMatchesWithAndWithoutTables) {
    std::mt19937_64 rng(9);
    const auto a = mx_from_values(random_values(rng, 200), formats::e4m3);
    const auto b = mx_from_values(random_values(rng, 200), formats::e4m3);
    const double with = mx_dot(a, b);
    setenv("MX_LUT_DISABLE", "1", 1);
    const double without = mx_dot(a, b);
    unsetenv("MX_LUT_DISABLE");
    EXPECT_EQ(with, without);
    double naive = 0.0;
    for (std::size_t i = 0; i < 200; ++i) naive += a[i] * b[i];
    EXPECT_NEAR(with, naive, 1e-9 * std::fabs(naive) + 1e-300);
}

TEST(MxDot, NarrowOverflowsWhereExactAndWideDoNot) {
    const auto& s = formats::e5m2;
    const auto a = mx_from_values(std::vector<double>{57344.0, 57344.0}, s, 32);
    const auto b = mx_from_values(std::vector<double>{1.0, 1.0}, s, 32);
    EXPECT_EQ(format_queries(s).xi_max, exp_field(a.code(0), s) - s.bias());
    const double narrow = mx_dot(a, b, AccumulatorKind::narrow);
    EXPECT_TRUE(std::isinf(narrow) && narrow > 0);
    EXPECT_EQ(mx_dot(a, b, AccumulatorKind::wide), 114688.0);
    // E4M3 fits the register: narrow gives NaN (no infinity), exact the true sum
    const auto c = mx_from_values(std::vector<double>{448.0, 448.0}, formats::e4m3, 32);
    const auto d = mx_from_values(std::vector<double>{1.0, 1.0}, formats::e4m3, 32);
    EXPECT_TRUE(std::isnan(mx_dot(c, d, AccumulatorKind::narrow)));
    EXPECT_EQ(mx_dot(c, d, AccumulatorKind::exact), 896.0);
}

TEST(MxDot, NaNScalePropagates) {
    auto a = mx_from_values(std::vector<double>(64, 1.0), formats::e4m3);
    const auto b = a;
    a.poison_block(1);
    for (auto k : {AccumulatorKind::wide, AccumulatorKind::exact, AccumulatorKind::narrow})
        EXPECT_TRUE(std::isnan(mx_dot(a, b, k)));
}
