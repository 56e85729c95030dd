#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "microscaling/luts.hpp"
#include "oracle.hpp"

using namespace microscaling;

namespace {

struct Pair {
    FloatSpec in, out;
};

const std::vector<Pair>& pairs() {
    static const std::vector<Pair> p{
        {formats::e4m3, formats::e8m7},
        {formats::e5m2, formats::e8m7},
        {formats::e3m4, formats::e8m7},
        {formats::e4m3.with_rounding(Rounding::ties_to_even), formats::e5m10},
        {formats::e5m2.with_rounding(Rounding::truncate), formats::e8m7},
        {FloatSpec(2, 1), formats::e5m2},
    };
    return p;
}

mpq_class signed_value(const oracle::Value& v) { return v.negative ? mpq_class(-v.magnitude) : v.magnitude; }

void expect_same(code_t got, code_t want, const FloatSpec& s, const std::string& what) {
    if (classify(want, s) == FloatClass::nan) {
        ASSERT_EQ(classify(got, s), FloatClass::nan) << what;
        ASSERT_EQ(sign_of(got, s), sign_of(want, s)) << what << " (NaN sign)";
    } else {
        ASSERT_EQ(got, want) << what;
    }
}

std::string label(const Pair& p, code_t a, code_t b) {
    return p.in.name() + "->" + p.out.name() + " a=" + std::to_string(a) + " b=" + std::to_string(b);
}

}  // namespace

TEST(Luts, TableSizes) {
    const auto t = LutSet::build(formats::e5m2, formats::e8m7);
    EXPECT_EQ(t.inv_bytes(), 128u);
    EXPECT_EQ(t.mul_bytes(), 32u * 1024u);
    EXPECT_EQ(t.add_bytes(), 64u * 1024u);
}

TEST(Luts, Examples) {
    const auto& in = formats::e5m2;
    const auto& t = shared_luts(in, formats::e8m7);
    const auto& out = t.out_spec();
    const code_t one = encode(1.0, in);
    EXPECT_EQ(t.recip(one), one);
    EXPECT_EQ(decode(t.mul(encode(1.5, in), encode(2.0, in)), out), 3.0);
    EXPECT_EQ(decode(t.mul(encode(-1.5, in), encode(2.0, in)), out), -3.0);
    EXPECT_TRUE(std::isnan(decode(t.mul(0, inf_code(in)), out)));
    EXPECT_EQ(decode(t.recip(encode(2.0, in)), in), 0.5);
    EXPECT_EQ(t.recip(0), inf_code(in));
    EXPECT_EQ(t.promote(0), 0u);
    EXPECT_EQ(decode(t.promote(max_finite_code(in)), out), 57344.0);
    EXPECT_TRUE(std::isnan(decode(t.promote(nan_code(in)), out)));
    EXPECT_EQ(decode(t.div(encode(3.0, in), encode(2.0, in)), out), 1.5);
}

TEST(Luts, RejectsWideFormats) {
    try {
        LutSet::build(formats::e5m10, formats::e8m7);
        ADD_FAILURE();
    } catch (const mx_error& e) {
        EXPECT_EQ(e.code(), errc::spec_too_wide);
    }
    EXPECT_THROW(LutSet::build(formats::e4m3, formats::f32), mx_error);
}

TEST(Luts, PromotionWarning) {
    EXPECT_TRUE(shared_luts(formats::e4m3, formats::e8m7).promotion_exact());
    EXPECT_TRUE(shared_luts(formats::e5m2, formats::e8m7).promotion_exact());
    // E3M4 products carry 9 fraction bits
    EXPECT_FALSE(shared_luts(formats::e3m4, formats::e8m7).promotion_exact());
}

TEST(Luts, IdentitiesAndSymmetry) {
    for (const auto& p : pairs()) {
        const auto& t = shared_luts(p.in, p.out);
        const code_t one = encode(1.0, p.in);
        const std::size_t n = std::size_t{1} << p.in.width();
        for (code_t a = 0; a < n; ++a) {
            if (!is_finite(a, p.in)) continue;
            EXPECT_EQ(t.mul(a, one), t.promote(a));
            EXPECT_EQ(t.add(a, 0), t.promote(a) == p.out.sign_mask() ? 0u : t.promote(a));  // -0 + +0 = +0
            for (code_t b = 0; b < n; ++b) {
                if (!is_finite(b, p.in)) continue;
                ASSERT_EQ(t.mul(a, b), t.mul(b, a)) << label(p, a, b);
                ASSERT_EQ(t.add(a, b), t.add(b, a)) << label(p, a, b);
                if (!sign_of(a, p.in) && !sign_of(b, p.in))
                    ASSERT_EQ(t.add(negate(a, p.in), negate(b, p.in)), negate(t.add(a, b), p.out)) << label(p, a, b);
            }
        }
    }
}

// Every (a, b) pair against exact rational arithmetic rounded by enumeration.
TEST(Luts, ExhaustiveAgainstRationalOracle) {
    for (const auto& p : pairs()) {
        const auto& t = shared_luts(p.in, p.out);
        const FloatSpec out_r = p.out.with_rounding(p.in.rounding());
        const oracle::Grid out_grid(out_r), in_grid(p.in);
        const std::size_t n = std::size_t{1} << p.in.width();
        for (code_t a = 0; a < n; ++a) {
            const auto va = oracle::evaluate(a, p.in);
            {
                code_t want;
                if (va.kind == oracle::Kind::nan) want = nan_code(p.in, va.negative);
                else if (va.kind == oracle::Kind::infinity) want = va.negative ? p.in.sign_mask() : 0;
                else if (va.magnitude == 0) want = inf_code(p.in, va.negative);
                else want = in_grid.round(va.negative, 1 / va.magnitude, p.in.rounding());
                expect_same(t.recip(a), want, p.in, label(p, a, 0) + " recip");
            }
            for (code_t b = 0; b < n; ++b) {
                const auto vb = oracle::evaluate(b, p.in);
                const bool any_nan = va.kind == oracle::Kind::nan || vb.kind == oracle::Kind::nan;
                const bool a_inf = va.kind == oracle::Kind::infinity, b_inf = vb.kind == oracle::Kind::infinity;
                // product
                {
                    const bool neg = va.negative != vb.negative;
                    code_t want;
                    if (any_nan || (a_inf && vb.magnitude == 0 && !b_inf) || (b_inf && va.magnitude == 0 && !a_inf))
                        want = nan_code(p.out, neg);
                    else if (a_inf || b_inf) want = inf_code(out_r, neg);
                    else want = out_grid.round(neg, va.magnitude * vb.magnitude, out_r.rounding());
                    expect_same(t.mul(a, b), want, p.out, label(p, a, b) + " mul");
                }
                // sum
                {
                    code_t want;
                    if (any_nan || (a_inf && b_inf && va.negative != vb.negative)) {
                        want = nan_code(p.out, va.negative && vb.negative);
                    } else if (a_inf || b_inf) {
                        want = inf_code(p.out, a_inf ? va.negative : vb.negative);
                    } else {
                        const mpq_class s = signed_value(va) + signed_value(vb);
                        const bool neg = s < 0 || (s == 0 && va.negative && vb.negative);
                        want = out_grid.round(neg, abs(s), out_r.rounding());
                    }
                    expect_same(t.add(a, b), want, p.out, label(p, a, b) + " add");
                }
            }
        }
    }
}

TEST(Luts, DumpAndLoadRoundTrip) {
    const auto path = (std::filesystem::temp_directory_path() / "mx_luts_test.bin").string();
    const auto& t = shared_luts(formats::e4m3, formats::e8m7);
    t.dump(path);
    EXPECT_EQ(std::filesystem::file_size(path), 6u + 12u + 128u + 32768u + 65536u);
    const auto u = LutSet::load(path);
    EXPECT_EQ(u.in_spec(), t.in_spec());
    EXPECT_EQ(u.out_spec(), t.out_spec());
    EXPECT_TRUE(u.promotion_exact());
    for (code_t a = 0; a < 256; ++a) {
        EXPECT_EQ(u.recip(a), t.recip(a));
        for (code_t b = 0; b < 256; ++b) {
            ASSERT_EQ(u.mul(a, b), t.mul(a, b));
            ASSERT_EQ(u.add(a, b), t.add(a, b));
        }
    }
    std::filesystem::resize_file(path, 1000);
    try {
        LutSet::load(path);
        ADD_FAILURE();
    } catch (const mx_error& e) {
        EXPECT_EQ(e.code(), errc::bad_file);
    }
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTALUT";
    }
    EXPECT_THROW(LutSet::load(path), mx_error);
    std::filesystem::remove(path);
}

TEST(Luts, SharedTablesAreBuiltOnce) {
    const auto* a = &shared_luts(formats::e4m3, formats::e8m7);
    const auto* b = &shared_luts(formats::e4m3, formats::e8m7);
    EXPECT_EQ(a, b);
    const auto* c = &shared_luts(formats::e4m3.with_rounding(Rounding::ties_to_even), formats::e8m7);
    EXPECT_NE(a, c);
}
