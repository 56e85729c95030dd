#pragma once
// Tensor kernels of a GPT-2 style network, generic over the carrier type T
// (float for training, double for gradient checks).
//
// Low-precision containers are emulated by storing the decoded value of
// every element: a minifloat container rounds each element, an MX container
// quantizes consecutive chunks of B elements with a shared scale. Reading a
// stored tensor therefore returns exactly what the compressed container
// would decompress to.
//
// Matrix layout follows llm.c: X is N x C row-major, W is OC x C row-major
// (each output's weights contiguous), Y = X W^T + b is N x OC.

#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <numeric>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "microscaling/minifloat.hpp"
#include "microscaling/mx_vector.hpp"
#include "microscaling/parallel.hpp"

namespace microscaling {

enum class ContainerKind : std::uint8_t { wide, minifloat, mx };

struct Container {
    ContainerKind kind = ContainerKind::wide;
    FloatSpec spec = formats::f32;
    std::size_t block = 32;

    static Container wide() { return {}; }
    static Container minifloat(const FloatSpec& s) { return {ContainerKind::minifloat, s, 32}; }
    static Container mx(const FloatSpec& s, std::size_t block = 32) { return {ContainerKind::mx, s, block}; }

    Container with_rounding(Rounding r) const {
        Container c = *this;
        c.spec = spec.with_rounding(r);
        return c;
    }

    /// "wide", "minifloat:<format>" or "mx:<format>:<block>".
    std::string name() const {
        switch (kind) {
            case ContainerKind::wide: return "wide";
            case ContainerKind::minifloat: return "minifloat:" + preset_id(spec);
            case ContainerKind::mx: return "mx:" + preset_id(spec) + ":" + std::to_string(block);
        }
        return "?";
    }

    friend bool operator==(const Container&, const Container&) = default;
};

inline Container parse_container(std::string_view s) {
    if (s == "wide") return Container::wide();
    const auto colon = s.find(':');
    const std::string_view head = s.substr(0, colon);
    if (colon == std::string_view::npos) throw mx_error(errc::invalid_spec, "bad container '" + std::string(s) + "'");
    std::string_view rest = s.substr(colon + 1);
    if (head == "minifloat") return Container::minifloat(preset(rest));
    if (head == "mx") {
        const auto c2 = rest.find(':');
        std::size_t block = 32;
        if (c2 != std::string_view::npos) {
            block = std::stoul(std::string(rest.substr(c2 + 1)));
            rest = rest.substr(0, c2);
        }
        return Container::mx(preset(rest), block);
    }
    throw mx_error(errc::invalid_spec, "bad container '" + std::string(s) + "'");
}

/// Replaces every element by its value in the container.
template <class T>
void store(std::span<T> data, const Container& c) {
    switch (c.kind) {
        case ContainerKind::wide: return;
        case ContainerKind::minifloat:
            for (auto& x : data) x = static_cast<T>(quantize(static_cast<double>(x), c.spec));
            return;
        case ContainerKind::mx: {
            std::vector<double> buf(c.block);
            std::vector<code_t> codes(c.block);
            const std::vector<double>* table = c.spec.width() <= 16 ? &decode_table(c.spec) : nullptr;
            for (std::size_t at = 0; at < data.size(); at += c.block) {
                const std::size_t len = std::min(c.block, data.size() - at);
                for (std::size_t i = 0; i < len; ++i) buf[i] = static_cast<double>(data[at + i]);
                const int w = quantize_block(std::span<const double>(buf.data(), len), c.spec, codes);
                for (std::size_t i = 0; i < len; ++i) {
                    const double v = table ? (*table)[codes[i]] : decode(codes[i], c.spec);
                    data[at + i] = static_cast<T>(std::ldexp(v, w));
                }
            }
            return;
        }
    }
}

template <class T>
void store(std::vector<T>& data, const Container& c) {
    store(std::span<T>(data), c);
}

template <class T>
struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<T> data;
    Container container;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, Container c = {}) : dims(std::move(shape)), container(c) {
        data.assign(std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>()), T(0));
    }

    std::size_t size() const { return data.size(); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    std::span<T> span() { return data; }
    std::span<const T> span() const { return data; }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }
    void store() { microscaling::store(span(), container); }
};

/// Lazy transpose of a rows x cols row-major matrix: element i of the view is
/// element i of the cols x rows transpose in row-major order.
template <class T>
class TransposedView : public std::ranges::view_interface<TransposedView<T>> {
public:
    class iterator {
    public:
        using value_type = T;
        using difference_type = std::ptrdiff_t;
        using iterator_category = std::forward_iterator_tag;

        iterator() = default;
        iterator(const TransposedView* v, std::size_t i) : v_(v), i_(i) {}
        T operator*() const { return (*v_)[i_]; }
        iterator& operator++() {
            ++i_;
            return *this;
        }
        iterator operator++(int) {
            auto t = *this;
            ++i_;
            return t;
        }
        friend bool operator==(const iterator& a, const iterator& b) { return a.i_ == b.i_; }

    private:
        const TransposedView* v_ = nullptr;
        std::size_t i_ = 0;
    };

    TransposedView() = default;
    TransposedView(std::span<const T> source, std::size_t rows, std::size_t cols)
        : src_(source), rows_(rows), cols_(cols) {
        if (rows * cols != source.size())
            throw mx_error(errc::shape_mismatch, std::to_string(rows) + "x" + std::to_string(cols) + " view of " +
                                                     std::to_string(source.size()) + " elements");
    }

    T operator[](std::size_t i) const { return src_[(i % rows_) * cols_ + i / rows_]; }
    std::size_t size() const { return src_.size(); }
    std::size_t rows() const { return cols_; }
    std::size_t cols() const { return rows_; }
    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, size()}; }

    /// Row r of the transpose (column r of the source), lazily.
    auto row(std::size_t r) const {
        return std::views::iota(std::size_t{0}, rows_) |
               std::views::transform([src = src_, cols = cols_, r](std::size_t k) { return src[k * cols + r]; });
    }

private:
    std::span<const T> src_;
    std::size_t rows_ = 0, cols_ = 0;
};

template <class T>
TransposedView<T> transpose_view(std::span<const T> m, std::size_t rows, std::size_t cols) {
    return TransposedView<T>(m, rows, cols);
}

template <class T>
TransposedView<T> transpose_view(const std::vector<T>& m, std::size_t rows, std::size_t cols) {
    return TransposedView<T>(std::span<const T>(m), rows, cols);
}

struct MatmulMode {
    bool online_mx = false;
    FloatSpec spec = formats::e4m3;
    std::size_t block = 32;
    AccumulatorKind acc = AccumulatorKind::wide;

    static MatmulMode direct() { return {}; }
    static MatmulMode mx(const FloatSpec& s, std::size_t block = 32, AccumulatorKind acc = AccumulatorKind::wide) {
        return {true, s, block, acc};
    }
    std::string name() const {
        if (!online_mx) return "direct";
        return "online_mx:" + preset_id(spec) + ":" + std::to_string(block) + ":" + std::string(to_string(acc));
    }
};

namespace detail {

template <std::ranges::input_range R>
MxVector compress(R&& r, const MatmulMode& m) {
    return mx_from_values(std::forward<R>(r), m.spec, m.block);
}

template <class T>
std::vector<MxVector> compress_rows(const T* a, std::size_t rows, std::size_t cols, const MatmulMode& m) {
    std::vector<MxVector> out(rows, MxVector(m.spec, m.block));
    parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) out[r] = compress(std::span<const T>(a + r * cols, cols), m);
    });
    return out;
}

template <class T>
std::vector<MxVector> compress_cols(const T* a, std::size_t rows, std::size_t cols, const MatmulMode& m) {
    const auto view = transpose_view(std::span<const T>(a, rows * cols), rows, cols);
    std::vector<MxVector> out(cols, MxVector(m.spec, m.block));
    parallel_for(cols, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t c = lo; c < hi; ++c) out[c] = compress(view.row(c), m);
    });
    return out;
}

/// out[i * ncols + j] (+)= dot(left[i], right[j])
template <class T>
void mx_products(T* out, const std::vector<MxVector>& left, const std::vector<MxVector>& right, const MatmulMode& m,
                 bool accumulate) {
    const std::size_t ncols = right.size();
    parallel_for(left.size(), [&](std::size_t lo, std::size_t hi) {
        MxDot dot(m.spec, m.spec, m.block, m.acc);
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t j = 0; j < ncols; ++j) {
                const auto v = static_cast<T>(dot(left[i], right[j]));
                if (accumulate) out[i * ncols + j] += v;
                else out[i * ncols + j] = v;
            }
    });
}

}  // namespace detail

/// out (N x OC) = inp (N x C) * weight(OC x C)^T + bias. bias may be null.
template <class T>
void matmul_forward(T* out, const T* inp, const T* weight, const T* bias, std::size_t N, std::size_t C, std::size_t OC,
                    const MatmulMode& mode = {}) {
    if (mode.online_mx) {
        const auto xs = detail::compress_rows(inp, N, C, mode);
        const auto ws = detail::compress_rows(weight, OC, C, mode);
        detail::mx_products(out, xs, ws, mode, false);
        if (bias)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < OC; ++o) out[n * OC + o] += bias[o];
        return;
    }
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t n = lo; n < hi; ++n) {
            const T* x = inp + n * C;
            for (std::size_t o = 0; o < OC; ++o) {
                const T* w = weight + o * C;
                T val = bias ? bias[o] : T(0);
                for (std::size_t i = 0; i < C; ++i) val += x[i] * w[i];
                out[n * OC + o] = val;
            }
        }
    });
}

/// Accumulates dinp += dout * weight, dweight += dout^T * inp, dbias += column
/// sums of dout. In MX mode every product is a forward-style pass over MX
/// vectors built from rows of dout and rows of transposed views; gradients
/// land in the dense outputs. dbias may be null.
template <class T>
void matmul_backward(T* dinp, T* dweight, T* dbias, const T* dout, const T* inp, const T* weight, std::size_t N,
                     std::size_t C, std::size_t OC, const MatmulMode& mode = {}) {
    if (mode.online_mx) {
        {
            const auto dys = detail::compress_rows(dout, N, OC, mode);     // N vectors of OC
            const auto wts = detail::compress_cols(weight, OC, C, mode);   // C vectors of OC
            detail::mx_products(dinp, dys, wts, mode, true);
        }
        {
            const auto dyts = detail::compress_cols(dout, N, OC, mode);    // OC vectors of N
            const auto xts = detail::compress_cols(inp, N, C, mode);       // C vectors of N
            detail::mx_products(dweight, dyts, xts, mode, true);
        }
    } else {
        parallel_for(N, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t n = lo; n < hi; ++n) {
                const T* dy = dout + n * OC;
                T* dx = dinp + n * C;
                for (std::size_t o = 0; o < OC; ++o) {
                    const T* w = weight + o * C;
                    const T d = dy[o];
                    for (std::size_t i = 0; i < C; ++i) dx[i] += w[i] * d;
                }
            }
        });
        parallel_for(OC, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t o = lo; o < hi; ++o) {
                T* dw = dweight + o * C;
                for (std::size_t n = 0; n < N; ++n) {
                    const T* x = inp + n * C;
                    const T d = dout[n * OC + o];
                    for (std::size_t i = 0; i < C; ++i) dw[i] += x[i] * d;
                }
            }
        });
    }
    if (dbias)
        parallel_for(OC, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t o = lo; o < hi; ++o) {
                double s = 0.0;
                for (std::size_t n = 0; n < N; ++n) s += dout[n * OC + o];
                dbias[o] += static_cast<T>(s);
            }
        });
}

/// out_i = exp(a_i - maxval) / sum_k exp(a_k - maxval), exponentials computed
/// twice instead of stored. All zeros when the sum vanishes. out may alias a.
template <class T>
void softmax_twopass(std::span<const T> a, T maxval, std::span<T> out) {
    double s = 0.0;
    for (const T x : a) s += std::exp(static_cast<double>(x) - static_cast<double>(maxval));
    const double inv = s == 0.0 ? 0.0 : 1.0 / s;
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = static_cast<T>(std::exp(static_cast<double>(a[i]) - static_cast<double>(maxval)) * inv);
}

template <class T>
void encoder_forward(T* out, const int* tokens, const T* wte, const T* wpe, std::size_t B, std::size_t Tn, std::size_t C) {
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t) {
            T* o = out + (b * Tn + t) * C;
            const T* we = wte + static_cast<std::size_t>(tokens[b * Tn + t]) * C;
            const T* pe = wpe + t * C;
            for (std::size_t i = 0; i < C; ++i) o[i] = we[i] + pe[i];
        }
}

template <class T>
void encoder_backward(T* dwte, T* dwpe, const T* dout, const int* tokens, std::size_t B, std::size_t Tn, std::size_t C) {
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t) {
            const T* d = dout + (b * Tn + t) * C;
            T* we = dwte + static_cast<std::size_t>(tokens[b * Tn + t]) * C;
            T* pe = dwpe + t * C;
            for (std::size_t i = 0; i < C; ++i) {
                we[i] += d[i];
                pe[i] += d[i];
            }
        }
}

inline constexpr double layernorm_eps = 1e-5;

template <class T>
void layernorm_forward(T* out, T* mean, T* rstd, const T* inp, const T* weight, const T* bias, std::size_t N, std::size_t C) {
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t n = lo; n < hi; ++n) {
            const T* x = inp + n * C;
            double m = 0.0;
            for (std::size_t i = 0; i < C; ++i) m += x[i];
            m /= static_cast<double>(C);
            double v = 0.0;
            for (std::size_t i = 0; i < C; ++i) v += (x[i] - m) * (x[i] - m);
            v /= static_cast<double>(C);
            const double s = 1.0 / std::sqrt(v + layernorm_eps);
            T* o = out + n * C;
            for (std::size_t i = 0; i < C; ++i) o[i] = static_cast<T>((x[i] - m) * s * weight[i] + bias[i]);
            mean[n] = static_cast<T>(m);
            rstd[n] = static_cast<T>(s);
        }
    });
}

template <class T>
void layernorm_backward(T* dinp, T* dweight, T* dbias, const T* dout, const T* inp, const T* weight, const T* mean,
                        const T* rstd, std::size_t N, std::size_t C) {
    for (std::size_t n = 0; n < N; ++n) {
        const T* dy = dout + n * C;
        const T* x = inp + n * C;
        T* dx = dinp + n * C;
        const double m = mean[n], s = rstd[n];
        double dnorm_mean = 0.0, dnorm_norm_mean = 0.0;
        for (std::size_t i = 0; i < C; ++i) {
            const double norm = (x[i] - m) * s;
            const double dnorm = static_cast<double>(weight[i]) * dy[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= static_cast<double>(C);
        dnorm_norm_mean /= static_cast<double>(C);
        for (std::size_t i = 0; i < C; ++i) {
            const double norm = (x[i] - m) * s;
            const double dnorm = static_cast<double>(weight[i]) * dy[i];
            dbias[i] += dy[i];
            dweight[i] += static_cast<T>(norm * dy[i]);
            dx[i] += static_cast<T>((dnorm - dnorm_mean - norm * dnorm_norm_mean) * s);
        }
    }
}

template <class T>
void residual_forward(T* out, const T* a, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void residual_backward(T* da, T* db, const T* dout, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        da[i] += dout[i];
        db[i] += dout[i];
    }
}

inline constexpr double gelu_scaling = 0.7978845608028654;  // sqrt(2/pi)

template <class T>
void gelu_forward(T* out, const T* inp, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double x = inp[i];
        const double cube = 0.044715 * x * x * x;
        out[i] = static_cast<T>(0.5 * x * (1.0 + std::tanh(gelu_scaling * (x + cube))));
    }
}

template <class T>
void gelu_backward(T* dinp, const T* inp, const T* dout, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double x = inp[i];
        const double arg = gelu_scaling * (x + 0.044715 * x * x * x);
        const double th = std::tanh(arg);
        const double ch = std::cosh(arg);
        const double sech2 = 1.0 / (ch * ch);
        const double local = 0.5 * (1.0 + th) + x * 0.5 * sech2 * gelu_scaling * (1.0 + 3.0 * 0.044715 * x * x);
        dinp[i] += static_cast<T>(local * dout[i]);
    }
}

/// Causal multi-head attention over inp = (B, T, 3C) packed q,k,v. preatt and
/// att are (B, NH, T, T). When act is given, each score row and each
/// probability row is stored into it before use.
template <class T>
void attention_forward(T* out, T* preatt, T* att, const T* inp, std::size_t B, std::size_t Tn, std::size_t C,
                       std::size_t NH, const Container* act = nullptr) {
    const std::size_t C3 = 3 * C, hs = C / NH;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    parallel_for(B * NH, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t bh = lo; bh < hi; ++bh) {
            const std::size_t b = bh / NH, h = bh % NH;
            for (std::size_t t = 0; t < Tn; ++t) {
                const T* q = inp + b * Tn * C3 + t * C3 + h * hs;
                T* pre = preatt + b * NH * Tn * Tn + h * Tn * Tn + t * Tn;
                T* a = att + b * NH * Tn * Tn + h * Tn * Tn + t * Tn;
                for (std::size_t t2 = 0; t2 < Tn; ++t2) {
                    if (t2 > t) {
                        pre[t2] = T(0);
                        continue;
                    }
                    const T* k = inp + b * Tn * C3 + t2 * C3 + h * hs + C;
                    double v = 0.0;
                    for (std::size_t i = 0; i < hs; ++i) v += static_cast<double>(q[i]) * k[i];
                    pre[t2] = static_cast<T>(v * scale);
                }
                if (act) store(std::span<T>(pre, Tn), *act);
                T maxval = -std::numeric_limits<T>::infinity();
                for (std::size_t t2 = 0; t2 <= t; ++t2) maxval = std::max(maxval, pre[t2]);
                softmax_twopass(std::span<const T>(pre, t + 1), maxval, std::span<T>(a, t + 1));
                for (std::size_t t2 = t + 1; t2 < Tn; ++t2) a[t2] = T(0);
                if (act) store(std::span<T>(a, Tn), *act);
                T* o = out + b * Tn * C + t * C + h * hs;
                for (std::size_t i = 0; i < hs; ++i) {
                    double s = 0.0;
                    for (std::size_t t2 = 0; t2 <= t; ++t2)
                        s += static_cast<double>(a[t2]) * inp[b * Tn * C3 + t2 * C3 + h * hs + 2 * C + i];
                    o[i] = static_cast<T>(s);
                }
            }
        }
    });
}

template <class T>
void attention_backward(T* dinp, const T* dout, const T* inp, const T* att, std::size_t B, std::size_t Tn, std::size_t C,
                        std::size_t NH) {
    const std::size_t C3 = 3 * C, hs = C / NH;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    parallel_for(B * NH, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> datt(Tn), dpre(Tn);
        for (std::size_t bh = lo; bh < hi; ++bh) {
            const std::size_t b = bh / NH, h = bh % NH;
            for (std::size_t t = 0; t < Tn; ++t) {
                const T* a = att + b * NH * Tn * Tn + h * Tn * Tn + t * Tn;
                const T* dy = dout + b * Tn * C + t * C + h * hs;
                const T* q = inp + b * Tn * C3 + t * C3 + h * hs;
                T* dq = dinp + b * Tn * C3 + t * C3 + h * hs;
                double dot = 0.0;
                for (std::size_t t2 = 0; t2 <= t; ++t2) {
                    const T* v = inp + b * Tn * C3 + t2 * C3 + h * hs + 2 * C;
                    T* dv = dinp + b * Tn * C3 + t2 * C3 + h * hs + 2 * C;
                    double s = 0.0;
                    for (std::size_t i = 0; i < hs; ++i) {
                        s += static_cast<double>(v[i]) * dy[i];
                        dv[i] += static_cast<T>(static_cast<double>(a[t2]) * dy[i]);
                    }
                    datt[t2] = s;
                    dot += s * a[t2];
                }
                for (std::size_t t2 = 0; t2 <= t; ++t2) dpre[t2] = a[t2] * (datt[t2] - dot);
                for (std::size_t t2 = 0; t2 <= t; ++t2) {
                    const T* k = inp + b * Tn * C3 + t2 * C3 + h * hs + C;
                    T* dk = dinp + b * Tn * C3 + t2 * C3 + h * hs + C;
                    const double g = dpre[t2] * scale;
                    for (std::size_t i = 0; i < hs; ++i) {
                        dq[i] += static_cast<T>(k[i] * g);
                        dk[i] += static_cast<T>(q[i] * g);
                    }
                }
            }
        }
    });
}

/// probs over the first V of Vp logits per row; padded entries are zero.
template <class T>
void softmax_forward(T* probs, const T* logits, std::size_t N, std::size_t V, std::size_t Vp) {
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t n = lo; n < hi; ++n) {
            const T* l = logits + n * Vp;
            T* p = probs + n * Vp;
            T maxval = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < V; ++i) maxval = std::max(maxval, l[i]);
            softmax_twopass(std::span<const T>(l, V), maxval, std::span<T>(p, V));
            for (std::size_t i = V; i < Vp; ++i) p[i] = T(0);
        }
    });
}

template <class T>
void crossentropy_forward(T* losses, const T* probs, const int* targets, std::size_t N, std::size_t Vp) {
    for (std::size_t n = 0; n < N; ++n)
        losses[n] = static_cast<T>(-std::log(static_cast<double>(probs[n * Vp + static_cast<std::size_t>(targets[n])])));
}

/// dlogits += (probs - onehot(target)) * dloss, over the first V entries.
template <class T>
void crossentropy_softmax_backward(T* dlogits, const T* probs, const int* targets, double dloss, std::size_t N,
                                   std::size_t V, std::size_t Vp) {
    for (std::size_t n = 0; n < N; ++n) {
        T* d = dlogits + n * Vp;
        const T* p = probs + n * Vp;
        const auto target = static_cast<std::size_t>(targets[n]);
        for (std::size_t i = 0; i < V; ++i)
            d[i] += static_cast<T>((static_cast<double>(p[i]) - (i == target ? 1.0 : 0.0)) * dloss);
    }
}

}  // namespace microscaling
