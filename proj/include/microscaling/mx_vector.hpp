#pragma once
// Microscaling vectors: blocks of B element codes sharing a power-of-two
// scale 2^w, with w stored as a signed 8-bit code (-128 marks a NaN scale).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iterator>
#include <map>
#include <mutex>
#include <optional>
#include <ranges>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "microscaling/exact_accumulator.hpp"
#include "microscaling/luts.hpp"
#include "microscaling/minifloat.hpp"

namespace microscaling {

inline constexpr int scale_min = -127;
inline constexpr int scale_max = 127;
inline constexpr std::int8_t nan_scale = -128;

enum class AccumulatorKind : std::uint8_t { wide, exact, narrow };

inline std::string_view to_string(AccumulatorKind k) {
    switch (k) {
        case AccumulatorKind::wide: return "wide";
        case AccumulatorKind::exact: return "exact";
        case AccumulatorKind::narrow: return "narrow";
    }
    return "?";
}

inline AccumulatorKind parse_accumulator(std::string_view s) {
    if (s == "wide") return AccumulatorKind::wide;
    if (s == "exact") return AccumulatorKind::exact;
    if (s == "narrow") return AccumulatorKind::narrow;
    throw mx_error(errc::invalid_spec, "unknown accumulator '" + std::string(s) + "'");
}

/// Scale exponent of a block: 0 when no input is a normal double, otherwise
/// ilogb of the largest normal magnitude minus the format's xi, clamped.
inline int block_exponent(std::span<const double> x, const FloatSpec& s) {
    double p = 0.0;
    bool any = false;
    for (double v : x)
        if (std::isnormal(v)) {
            p = std::max(p, std::fabs(v));
            any = true;
        }
    if (!any) return 0;
    const int w = std::ilogb(p) - format_queries(s).xi_max;
    return std::clamp(w, scale_min, scale_max);
}

/// Writes x.size() codes to out and returns w. Elements that land above the
/// largest finite value saturate to it.
inline int quantize_block(std::span<const double> x, const FloatSpec& s, std::span<code_t> out) {
    const int w = block_exponent(x, s);
    const FloatSpec elem = s.with_overflow(Overflow::saturate);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = encode(std::ldexp(x[i], -w), elem);
    return w;
}

struct QuantizedBlock {
    int w = 0;
    std::vector<code_t> codes;
};

inline QuantizedBlock quantize_block(std::span<const double> x, const FloatSpec& s) {
    QuantizedBlock q;
    q.codes.resize(x.size());
    q.w = quantize_block(x, s, q.codes);
    return q;
}

class MxVector {
public:
    class Iterator;
    class Reference;

    explicit MxVector(const FloatSpec& elem = formats::e4m3, std::size_t block_len = 32, std::size_t n = 0)
        : spec_(elem), block_(block_len), table_(elem.width() <= 16 ? &decode_table(elem) : nullptr) {
        if (block_len == 0) throw mx_error(errc::invalid_spec, "block length must be positive");
        resize(n);
    }

    const FloatSpec& elem_spec() const { return spec_; }
    std::size_t block_len() const { return block_; }
    std::size_t size() const { return n_; }
    bool empty() const { return n_ == 0; }
    std::size_t num_blocks() const { return scales_.size(); }

    /// Bumped by every change of length; iterators filled before it go stale.
    std::uint64_t generation() const { return generation_; }

    double operator[](std::size_t i) const {
        const std::int8_t w = scales_[i / block_];
        if (w == nan_scale) return std::numeric_limits<double>::quiet_NaN();
        return std::ldexp(table_ ? (*table_)[codes_[i]] : decode(codes_[i], spec_), w);
    }

    double get(std::size_t i) const {
        if (i >= n_) throw mx_error(errc::index_out_of_range, std::to_string(i) + " >= " + std::to_string(n_));
        return (*this)[i];
    }
    double at(std::size_t i) const { return get(i); }

    code_t code(std::size_t i) const { return codes_[i]; }
    std::span<const code_t> block_codes(std::size_t j) const { return {codes_.data() + j * block_, block_}; }
    std::span<const code_t> codes() const { return {codes_.data(), n_}; }
    int scale_exponent(std::size_t j) const { return scales_[j]; }
    bool scale_is_nan(std::size_t j) const { return scales_[j] == nan_scale; }

    /// Number of real (unpadded) elements in block j.
    std::size_t block_size(std::size_t j) const { return std::min(block_, n_ - j * block_); }

    /// Re-quantizes block j from block_size(j) wide values.
    void set_block(std::size_t j, std::span<const double> values) {
        if (j >= num_blocks()) throw mx_error(errc::index_out_of_range, "block " + std::to_string(j));
        const std::size_t len = block_size(j);
        if (values.size() != len) throw mx_error(errc::length_mismatch, "block " + std::to_string(j) + " holds " + std::to_string(len));
        const std::span<code_t> out(codes_.data() + j * block_, len);
        scales_[j] = static_cast<std::int8_t>(quantize_block(values, spec_, out));
    }

    /// Decompressed block j (real elements only).
    void read_block(std::size_t j, std::span<double> out) const {
        for (std::size_t i = 0; i < block_size(j); ++i) out[i] = (*this)[j * block_ + i];
    }

    /// Marks block j's scale as NaN, so every element in it decodes to NaN.
    void poison_block(std::size_t j) {
        if (j >= num_blocks()) throw mx_error(errc::index_out_of_range, "block " + std::to_string(j));
        scales_[j] = nan_scale;
    }

    void resize(std::size_t n) {
        const std::size_t old = n_;
        n_ = n;
        scales_.resize((n + block_ - 1) / block_, 0);
        codes_.resize(scales_.size() * block_, 0);
        if (n < old && n % block_ != 0) {
            // clear the cut tail and restore the scale invariant of the last block
            const std::size_t j = num_blocks() - 1;
            std::fill(codes_.begin() + static_cast<std::ptrdiff_t>(n), codes_.end(), code_t{0});
            if (!scale_is_nan(j)) {
                std::vector<double> buf(block_size(j));
                read_block(j, buf);
                set_block(j, buf);
            }
        }
        ++generation_;
    }

    template <std::ranges::input_range R>
    void assign(R&& values) {
        *this = from_range(std::forward<R>(values), spec_, block_, generation_ + 1);
    }

    std::vector<double> to_vector() const {
        std::vector<double> out(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i] = (*this)[i];
        return out;
    }

    /// Lines of the form "block j: w=<int> codes=<hex ...>".
    std::string dump() const {
        std::ostringstream os;
        const int digits = (spec_.width() + 3) / 4;
        for (std::size_t j = 0; j < num_blocks(); ++j) {
            os << "block " << j << ": w=";
            if (scale_is_nan(j)) os << "nan";
            else os << static_cast<int>(scales_[j]);
            os << " codes=";
            for (std::size_t i = 0; i < block_size(j); ++i) {
                char buf[16];
                std::snprintf(buf, sizeof buf, "%0*x", digits, codes_[j * block_ + i]);
                os << (i ? " " : "") << buf;
            }
            os << '\n';
        }
        return os.str();
    }

    /// Read-only decompressed view.
    auto values() const {
        return std::views::iota(std::size_t{0}, n_) | std::views::transform([this](std::size_t i) { return (*this)[i]; });
    }

    Iterator begin(bool auto_commit = true);
    std::default_sentinel_t end() const { return {}; }

    template <std::ranges::input_range R>
    static MxVector from_range(R&& values, const FloatSpec& elem, std::size_t block_len, std::uint64_t generation = 0) {
        MxVector v(elem, block_len);
        v.generation_ = generation;
        std::vector<double> buf;
        buf.reserve(block_len);
        auto flush = [&] {
            const std::size_t j = v.num_blocks();
            v.n_ += buf.size();
            v.scales_.push_back(0);
            v.codes_.resize(v.scales_.size() * block_len, 0);
            v.set_block(j, buf);
            buf.clear();
        };
        if constexpr (std::ranges::sized_range<R>) {
            const auto n = static_cast<std::size_t>(std::ranges::size(values));
            v.scales_.reserve((n + block_len - 1) / block_len);
            v.codes_.reserve(v.scales_.capacity() * block_len);
        }
        for (auto&& x : values) {
            buf.push_back(static_cast<double>(x));
            if (buf.size() == block_len) flush();
        }
        if (!buf.empty()) flush();
        return v;
    }

private:
    friend class Iterator;

    FloatSpec spec_;
    std::size_t block_;
    const std::vector<double>* table_;
    std::size_t n_ = 0;
    std::vector<code_t> codes_;       // num_blocks() * block_, zero padded
    std::vector<std::int8_t> scales_;
    std::uint64_t generation_ = 0;
};

/// Builds blocks of block_len consecutive values from any input range.
template <std::ranges::input_range R>
MxVector mx_from_values(R&& values, const FloatSpec& elem, std::size_t block_len = 32) {
    return MxVector::from_range(std::forward<R>(values), elem, block_len);
}

/// Block-buffered cursor. Reads and writes go to a wide copy of the current
/// block; commit() re-quantizes it into the vector. With auto-commit, leaving
/// a modified block (or destroying the iterator) commits it.
class MxVector::Iterator {
public:
    using value_type = double;
    using difference_type = std::ptrdiff_t;

    Iterator(MxVector& owner, bool auto_commit) : owner_(&owner), auto_commit_(auto_commit) {}
    Iterator(Iterator&& o) noexcept { *this = std::move(o); }
    Iterator& operator=(Iterator&& o) noexcept {
        if (this != &o) {
            finish();
            owner_ = o.owner_;
            pos_ = o.pos_;
            block_ = o.block_;
            buf_ = std::move(o.buf_);
            dirty_ = o.dirty_;
            auto_commit_ = o.auto_commit_;
            generation_ = o.generation_;
            o.dirty_ = false;
            o.owner_ = nullptr;
        }
        return *this;
    }
    Iterator(const Iterator&) = delete;
    Iterator& operator=(const Iterator&) = delete;
    ~Iterator() { finish(); }

    std::size_t position() const { return pos_; }
    bool dirty() const { return dirty_; }
    std::span<const double> buffer() const { return buf_; }

    double read() {
        ensure();
        return buf_[pos_ % owner_->block_];
    }

    void write(double v) {
        ensure();
        buf_[pos_ % owner_->block_] = v;
        dirty_ = true;
    }

    Reference operator*();

    Iterator& operator++() { return *this += 1; }
    void operator++(int) { ++*this; }

    Iterator& operator+=(std::size_t k) {
        const std::size_t next = pos_ + k;
        if (block_ != npos && next / owner_->block_ != block_) leave();
        pos_ = next;
        return *this;
    }

    /// Discards buffered writes and reloads the current block.
    void refresh() {
        dirty_ = false;
        block_ = npos;
        if (pos_ < owner_->n_) fill();
    }

    void commit() {
        if (!dirty_) return;
        check();
        owner_->set_block(block_, std::span<const double>(buf_.data(), owner_->block_size(block_)));
        dirty_ = false;
    }

    friend bool operator==(const Iterator& it, std::default_sentinel_t) { return it.pos_ >= it.owner_->size(); }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    void check() const {
        if (owner_->generation_ != generation_)
            throw mx_error(errc::stale_iterator, "vector was resized after the iterator buffered block " + std::to_string(block_));
    }

    void ensure() {
        if (pos_ >= owner_->n_) throw mx_error(errc::index_out_of_range, "iterator past the end");
        if (block_ == npos) fill();
        else check();
    }

    void fill() {
        block_ = pos_ / owner_->block_;
        buf_.assign(owner_->block_, 0.0);
        owner_->read_block(block_, buf_);
        generation_ = owner_->generation_;
        dirty_ = false;
    }

    void leave() {
        if (dirty_ && auto_commit_) commit();
        dirty_ = false;
        block_ = npos;
    }

    void finish() noexcept {
        if (owner_ && dirty_ && auto_commit_) {
            try {
                commit();
            } catch (const mx_error&) {
                // a stale buffer is dropped
            }
        }
    }

    MxVector* owner_ = nullptr;
    std::size_t pos_ = 0;
    std::size_t block_ = npos;
    std::vector<double> buf_;
    bool dirty_ = false;
    bool auto_commit_ = true;
    std::uint64_t generation_ = 0;
};

class MxVector::Reference {
public:
    explicit Reference(Iterator& it) : it_(&it) {}
    operator double() const { return it_->read(); }
    Reference& operator=(double v) {
        it_->write(v);
        return *this;
    }

private:
    Iterator* it_;
};

inline MxVector::Reference MxVector::Iterator::operator*() { return Reference(*this); }

inline MxVector::Iterator MxVector::begin(bool auto_commit) { return Iterator(*this, auto_commit); }

/// Dot products between MX vectors of fixed element formats and block length.
/// Tables and scratch registers are resolved once, so one instance per thread
/// serves a whole matmul. The result is
///   sum_j 2^(wa_j + wb_j) * sum_i ca_i * cb_i
/// with the inner sums formed according to the accumulator kind:
///   wide    block sums in double, blocks combined in double
///   exact   block sums in the fixed-point register and blocks combined
///           exactly, so the result is rounded once (blocks holding
///           infinities or NaN fall back to wide)
///   narrow  block sums rounded to the element format after every step
class MxDot {
public:
    MxDot(const FloatSpec& sa, const FloatSpec& sb, std::size_t block_len, AccumulatorKind kind)
        : sa_(sa), sb_(sb), block_(block_len), kind_(kind) {
        if (kind != AccumulatorKind::wide && !sa.same_encoding(sb))
            throw mx_error(errc::spec_mismatch, sa.name() + " vs " + sb.name());
        da_ = sa.width() <= 16 ? &decode_table(sa) : nullptr;
        db_ = sb.width() <= 16 ? &decode_table(sb) : nullptr;
        if (kind == AccumulatorKind::exact) {
            acc_.emplace(sa, block_len);
            const int lsb = acc_->min_exponent();
            sum_.emplace(lsb + 2 * scale_min, lsb + 2 * scale_max + 64);
        }
        if (kind == AccumulatorKind::wide && sa == sb && sa.width() <= 8 && !luts_disabled()) {
            const LutSet& t = shared_luts(sa, formats::e8m7);
            if (t.promotion_exact()) {
                lut_ = &t;
                lut_products_ = &lut_product_values(t);
                lut_shift_ = sa.width();
            }
        }
    }

    AccumulatorKind kind() const { return kind_; }

    double operator()(const MxVector& a, const MxVector& b) {
        if (a.size() != b.size())
            throw mx_error(errc::length_mismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
        if (a.block_len() != b.block_len() || a.block_len() != block_)
            throw mx_error(errc::block_mismatch, std::to_string(a.block_len()) + " vs " + std::to_string(b.block_len()));
        if (!a.elem_spec().same_encoding(sa_) || !b.elem_spec().same_encoding(sb_))
            throw mx_error(errc::spec_mismatch, "vector formats differ from the dot product's");
        if (kind_ == AccumulatorKind::exact) return exact(a, b);
        double y = 0.0;
        for (std::size_t j = 0; j < a.num_blocks(); ++j) {
            if (a.scale_is_nan(j) || b.scale_is_nan(j)) return std::numeric_limits<double>::quiet_NaN();
            const auto ca = a.block_codes(j), cb = b.block_codes(j);
            const double partial = kind_ == AccumulatorKind::narrow ? block_narrow(ca, cb) : block_wide(ca, cb);
            y += std::ldexp(partial, a.scale_exponent(j) + b.scale_exponent(j));
        }
        return y;
    }

private:
    double exact(const MxVector& a, const MxVector& b) {
        ExactAccumulator& acc = *acc_;
        ExactSum& total = *sum_;
        total.clear();
        double special = 0.0;
        for (std::size_t j = 0; j < a.num_blocks(); ++j) {
            if (a.scale_is_nan(j) || b.scale_is_nan(j)) return std::numeric_limits<double>::quiet_NaN();
            const auto ca = a.block_codes(j), cb = b.block_codes(j);
            const int w = a.scale_exponent(j) + b.scale_exponent(j);
            if (!all_finite(ca, sa_, da_) || !all_finite(cb, sb_, db_)) {
                special += std::ldexp(block_wide(ca, cb), w);
                continue;
            }
            acc.clear();
            acc.add_products(ca, cb);
            total.add(acc, w);
        }
        return total.to_double() + special;
    }

    double block_wide(std::span<const code_t> a, std::span<const code_t> b) const {
        double sum = 0.0;
        if (lut_) {
            const float* p = lut_products_->data();
            for (std::size_t i = 0; i < a.size(); ++i) sum += p[(std::size_t{a[i]} << lut_shift_) | b[i]];
            return sum;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double x = da_ ? (*da_)[a[i]] : decode(a[i], sa_);
            const double y = db_ ? (*db_)[b[i]] : decode(b[i], sb_);
            sum += x * y;
        }
        return sum;
    }

    double block_narrow(std::span<const code_t> a, std::span<const code_t> b) const {
        code_t acc = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const code_t p = encode(decode(a[i], sa_) * decode(b[i], sa_), sa_);
            acc = encode(decode(acc, sa_) + decode(p, sa_), sa_);
        }
        return decode(acc, sa_);
    }

    /// Decoded multiplication table entries indexed by (a << width) | b,
    /// built once per table set. Promoted products fit a float exactly.
    static const std::vector<float>& lut_product_values(const LutSet& t) {
        static std::mutex mutex;
        static std::map<const LutSet*, std::vector<float>> cache;
        std::lock_guard lock(mutex);
        auto& v = cache[&t];
        if (v.empty()) {
            const std::size_t n = std::size_t{1} << t.in_spec().width();
            const auto& out = decode_table(t.out_spec());
            v.resize(n * n);
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = 0; b < n; ++b)
                    v[a * n + b] = static_cast<float>(out[t.mul(static_cast<code_t>(a), static_cast<code_t>(b))]);
        }
        return v;
    }

    static bool all_finite(std::span<const code_t> c, const FloatSpec& s, const std::vector<double>* table) {
        if (table) return std::ranges::all_of(c, [&](code_t x) { return std::isfinite((*table)[x]); });
        return std::ranges::all_of(c, [&](code_t x) { return is_finite(x, s); });
    }

    FloatSpec sa_, sb_;
    std::size_t block_;
    AccumulatorKind kind_;
    const std::vector<double>* da_ = nullptr;
    const std::vector<double>* db_ = nullptr;
    const LutSet* lut_ = nullptr;
    const std::vector<float>* lut_products_ = nullptr;
    unsigned lut_shift_ = 0;
    std::optional<ExactAccumulator> acc_;
    std::optional<ExactSum> sum_;
};

/// Throws LengthMismatch, BlockMismatch, SpecMismatch (exact and narrow need
/// one element format) and AccumulatorTooWide.
inline double mx_dot(const MxVector& a, const MxVector& b, AccumulatorKind kind = AccumulatorKind::wide) {
    if (a.size() != b.size())
        throw mx_error(errc::length_mismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    if (a.block_len() != b.block_len())
        throw mx_error(errc::block_mismatch, std::to_string(a.block_len()) + " vs " + std::to_string(b.block_len()));
    MxDot dot(a.elem_spec(), b.elem_spec(), a.block_len(), kind);
    return dot(a, b);
}

}  // namespace microscaling
