// Minifloat conversion, MX blocks, exact dot products and a short fine-tune.

#include <cstdio>
#include <random>
#include <vector>

#include "microscaling/train.hpp"

using namespace microscaling;

int main() {
    const FloatSpec& s = formats::e4m3;
    for (double v : {3.0, 0.1, 300.0, 1000.0}) {
        const code_t c = encode(v, s);
        std::printf("%-8g -> 0x%02x -> %g\n", v, static_cast<unsigned>(c), decode(c, s));
    }

    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> x(256), y(256);
    for (auto& v : x) v = g(rng);
    for (auto& v : y) v = g(rng) * 1e-3;
    MxVector a(s, 32), b(s, 32);
    a.assign(x);
    b.assign(y);
    std::printf("block 0 scale 2^%d, first element %g (input %g)\n", a.scale_exponent(0), a[0], x[0]);

    double wide = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) wide += x[i] * y[i];
    std::printf("dot: inputs %.9g, mx wide %.9g, mx exact %.9g\n", wide, mx_dot(a, b, AccumulatorKind::wide),
                mx_dot(a, b, AccumulatorKind::exact));

    FinetuneOptions opts;
    opts.precision = precision_preset("F'");
    opts.iters = 10;
    const auto result = run_finetune(opts, encode_bytes(synthetic_corpus()));
    std::printf("preset F' loss %.4f -> %.4f over %zu steps\n", result.losses.front(), result.losses.back(), result.losses.size());
}
