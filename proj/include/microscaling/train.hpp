#pragma once
// Fine-tuning loop, byte-level corpora, sampling and paired evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "microscaling/gpt.hpp"

namespace microscaling {

inline std::vector<int> encode_bytes(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(c);
    return out;
}

inline std::string decode_bytes(std::span<const int> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw mx_error(errc::bad_file, "cannot open corpus " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.empty()) throw mx_error(errc::bad_file, "empty corpus " + path);
    return text;
}

/// Deterministic pseudo-English text from a small word-level grammar.
inline std::string synthetic_corpus(std::uint64_t seed = 1, std::size_t n_bytes = 1 << 16) {
    static const std::vector<std::string> subjects{"the king", "a sailor", "my lord", "the old man", "her sister",
                                                   "the good queen", "a young knight", "the fool"};
    static const std::vector<std::string> verbs{"speaks of", "loves", "fears", "remembers", "sees", "calls",
                                                "follows", "forgets"};
    static const std::vector<std::string> objects{"the sea", "his brother", "the crown", "a letter", "the night",
                                                  "their house", "the storm", "an answer"};
    static const std::vector<std::string> tails{".", "!", "?", ", and then sleeps.", ", but says nothing."};
    std::mt19937_64 rng(seed);
    auto pick = [&](const std::vector<std::string>& v) -> const std::string& {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    std::string out;
    while (out.size() < n_bytes) {
        std::string line = pick(subjects) + " " + pick(verbs) + " " + pick(objects) + pick(tails);
        line[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(line[0])));
        out += line;
        out += std::uniform_int_distribution<int>(0, 3)(rng) == 0 ? "\n\n" : "\n";
    }
    out.resize(n_bytes);
    return out;
}

/// Consecutive windows of B*T+1 tokens, starting at a seed-dependent offset
/// and wrapping around the corpus.
class DataLoader {
public:
    DataLoader(std::vector<int> tokens, std::size_t B, std::size_t Tn, std::uint64_t seed)
        : tokens_(std::move(tokens)), B_(B), T_(Tn) {
        if (tokens_.size() < B * Tn + 1)
            throw mx_error(errc::bad_file, "corpus of " + std::to_string(tokens_.size()) + " tokens is shorter than one batch");
        const std::size_t span = tokens_.size() - B * Tn - 1;
        pos_ = span == 0 ? 0 : std::mt19937_64(seed)() % span;
    }

    void next(std::vector<int>& inputs, std::vector<int>& targets) {
        const std::size_t n = B_ * T_;
        if (pos_ + n + 1 > tokens_.size()) pos_ = 0;
        inputs.assign(tokens_.begin() + static_cast<std::ptrdiff_t>(pos_), tokens_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        targets.assign(tokens_.begin() + static_cast<std::ptrdiff_t>(pos_ + 1),
                       tokens_.begin() + static_cast<std::ptrdiff_t>(pos_ + n + 1));
        pos_ += n;
    }

private:
    std::vector<int> tokens_;
    std::size_t B_, T_, pos_ = 0;
};

struct FinetuneOptions {
    PrecisionConfig precision;
    GptConfig model;
    std::size_t batch = 4;
    std::size_t seq_len = 64;
    std::size_t iters = 100;
    std::uint64_t seed = 1;
    AdamW optimizer;
    std::optional<Checkpoint> init;
};

struct FinetuneResult {
    std::vector<double> losses;
    std::vector<float> final_params;
};

/// Trains for opts.iters steps and returns the loss of every step. Throws
/// NonFiniteLoss naming the iteration when the wide loss is not finite.
inline FinetuneResult run_finetune(const FinetuneOptions& opts, const std::vector<int>& corpus,
                                   const std::function<void(std::size_t, double)>& on_step = {}) {
    const GptConfig cfg = opts.init ? opts.init->config : opts.model;
    Gpt<float> model(cfg, opts.precision);
    if (opts.init) model.parameters().set_values(opts.init->params);
    else model.init_random(opts.seed);
    for (int t : corpus)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw mx_error(errc::bad_file, "corpus token " + std::to_string(t) + " outside the vocabulary");
    DataLoader loader(corpus, opts.batch, opts.seq_len, opts.seed);
    FinetuneResult result;
    std::vector<int> x, y;
    for (std::size_t it = 0; it < opts.iters; ++it) {
        loader.next(x, y);
        const double loss = model.train_step(x, y, opts.batch, opts.seq_len, opts.optimizer, static_cast<int>(it + 1));
        if (!std::isfinite(loss))
            throw mx_error(errc::non_finite_loss, "loss " + std::to_string(loss) + " at iteration " + std::to_string(it));
        result.losses.push_back(loss);
        if (on_step) on_step(it, loss);
    }
    const auto& wide = model.parameters().wide_values();
    result.final_params.assign(wide.begin(), wide.end());
    return result;
}

/// Next-token distribution over the vocabulary at position t of sequence b
/// of the last forward, with logits divided by temperature.
template <class T>
std::vector<double> next_token_distribution(const Gpt<T>& model, std::size_t b, std::size_t t, double temperature) {
    const auto& c = model.config();
    const auto logits = model.logits().subspan((b * model.seq_len() + t) * c.padded_vocab_size, c.vocab_size);
    std::vector<double> p(c.vocab_size);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp((logits[i] - mx) / temperature);
    for (auto& v : p) v /= s;
    return p;
}

/// Ancestral sampling of n_tokens continuations of prompt. A temperature of
/// zero or below decodes greedily.
template <class T>
std::vector<int> generate(Gpt<T>& model, std::span<const int> prompt, std::size_t n_tokens, double temperature,
                          std::uint64_t seed) {
    if (prompt.empty()) throw mx_error(errc::shape_mismatch, "empty prompt");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<int> seq(prompt.begin(), prompt.end());
    const std::size_t maxT = model.config().max_seq_len;
    for (std::size_t k = 0; k < n_tokens; ++k) {
        const std::size_t len = std::min(seq.size(), maxT);
        const std::span<const int> ctx(seq.data() + seq.size() - len, len);
        model.forward(ctx, {}, 1, len);
        int next = 0;
        if (temperature <= 0.0) {
            const auto logits = model.logits().subspan((len - 1) * model.config().padded_vocab_size, model.config().vocab_size);
            next = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        } else {
            const auto p = next_token_distribution(model, 0, len - 1, temperature);
            const double u = coin(rng);
            double acc = 0.0;
            next = static_cast<int>(p.size() - 1);
            for (std::size_t i = 0; i < p.size(); ++i)
                if ((acc += p[i]) > u) {
                    next = static_cast<int>(i);
                    break;
                }
        }
        seq.push_back(next);
    }
    return {seq.begin() + static_cast<std::ptrdiff_t>(prompt.size()), seq.end()};
}

template <class T>
std::vector<int> generate(Gpt<T>& model, const std::vector<int>& prompt, std::size_t n_tokens, double temperature,
                          std::uint64_t seed) {
    return generate(model, std::span<const int>(prompt), n_tokens, temperature, seed);
}

/// Mean over positions of KL(reference || other) between next-token
/// distributions on the same batch.
template <class T>
double mean_next_token_kl(Gpt<T>& reference, Gpt<T>& other, std::span<const int> tokens, std::size_t B, std::size_t Tn) {
    reference.forward(tokens, {}, B, Tn);
    other.forward(tokens, {}, B, Tn);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t) {
            const auto p = next_token_distribution(reference, b, t, 1.0);
            const auto q = next_token_distribution(other, b, t, 1.0);
            for (std::size_t i = 0; i < p.size(); ++i)
                if (p[i] > 0) total += p[i] * (std::log(p[i]) - std::log(std::max(q[i], std::numeric_limits<double>::min())));
        }
    return total / static_cast<double>(B * Tn);
}

}  // namespace microscaling
