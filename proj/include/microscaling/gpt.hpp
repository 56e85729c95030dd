#pragma once
// Decoder-only transformer in the llm.c layout, with every value class held
// in the container chosen by a PrecisionConfig.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "microscaling/precision.hpp"
#include "microscaling/tensor.hpp"

namespace microscaling {

struct AdamW {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Parameters split into tensors, with gradients, optimizer moments and an
/// optional wide master copy. Each tensor is stored into its container on
/// its own, so MX blocks never straddle two tensors.
template <class T>
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(std::vector<std::size_t> sizes, const PrecisionConfig& prec) : sizes_(std::move(sizes)), prec_(prec) {
        offsets_.push_back(0);
        for (auto s : sizes_) offsets_.push_back(offsets_.back() + s);
        params_.assign(count(), T(0));
        grads_.assign(count(), T(0));
        m_.assign(count(), T(0));
        v_.assign(count(), T(0));
        if (prec_.master_copy) master_.assign(count(), T(0));
    }

    std::size_t count() const { return offsets_.empty() ? 0 : offsets_.back(); }
    std::size_t num_tensors() const { return sizes_.size(); }
    const PrecisionConfig& precision() const { return prec_; }

    std::span<T> param(std::size_t i) { return slice(params_, i); }
    std::span<const T> param(std::size_t i) const { return slice(params_, i); }
    std::span<T> grad(std::size_t i) { return slice(grads_, i); }
    std::span<const T> grad(std::size_t i) const { return slice(grads_, i); }

    /// Values as seen by forward and backward passes.
    const std::vector<T>& values() const { return params_; }
    const std::vector<T>& grads() const { return grads_; }
    std::vector<T>& grads() { return grads_; }

    /// The values the optimizer owns: the master copy when present.
    const std::vector<T>& wide_values() const { return prec_.master_copy ? master_ : params_; }

    template <class U>
    void set_values(std::span<const U> wide) {
        if (wide.size() != count())
            throw mx_error(errc::shape_mismatch, std::to_string(wide.size()) + " values for " + std::to_string(count()));
        auto& target = prec_.master_copy ? master_ : params_;
        for (std::size_t i = 0; i < wide.size(); ++i) target[i] = static_cast<T>(wide[i]);
        encode_params();
    }
    template <class U>
    void set_values(const std::vector<U>& wide) {
        set_values(std::span<const U>(wide));
    }

    void zero_grad() { std::fill(grads_.begin(), grads_.end(), T(0)); }

    void store_grads() {
        for (std::size_t i = 0; i < num_tensors(); ++i) store(grad(i), prec_.gradients);
    }

    /// One AdamW step (bias-corrected, decoupled weight decay) on the master
    /// copy when present, else on the stored parameters; the parameters are
    /// then re-encoded. step counts from 1.
    void adamw_step(const AdamW& hp, int step) {
        auto& target = prec_.master_copy ? master_ : params_;
        const double c1 = 1.0 - std::pow(hp.beta1, step), c2 = 1.0 - std::pow(hp.beta2, step);
        for (std::size_t i = 0; i < count(); ++i) {
            const double g = grads_[i];
            const double m = hp.beta1 * m_[i] + (1.0 - hp.beta1) * g;
            const double v = hp.beta2 * v_[i] + (1.0 - hp.beta2) * g * g;
            m_[i] = static_cast<T>(m);
            v_[i] = static_cast<T>(v);
            const double mhat = m / c1, vhat = v / c2;
            const double w = target[i];
            target[i] = static_cast<T>(w - hp.lr * (mhat / (std::sqrt(vhat) + hp.eps) + hp.weight_decay * w));
        }
        for (std::size_t i = 0; i < num_tensors(); ++i) {
            store(slice(m_, i), prec_.adam);
            store(slice(v_, i), prec_.adam);
        }
        encode_params();
    }

private:
    std::span<T> slice(std::vector<T>& v, std::size_t i) { return {v.data() + offsets_[i], sizes_[i]}; }
    std::span<const T> slice(const std::vector<T>& v, std::size_t i) const { return {v.data() + offsets_[i], sizes_[i]}; }

    void encode_params() {
        if (prec_.master_copy) params_ = master_;
        for (std::size_t i = 0; i < num_tensors(); ++i) store(param(i), prec_.weights);
    }

    std::vector<std::size_t> sizes_, offsets_;
    PrecisionConfig prec_;
    std::vector<T> params_, master_, grads_, m_, v_;
};

struct GptConfig {
    std::size_t max_seq_len = 64;
    std::size_t vocab_size = 256;
    std::size_t padded_vocab_size = 256;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t channels = 64;

    friend bool operator==(const GptConfig&, const GptConfig&) = default;
};

enum ParamIndex : std::size_t {
    p_wte, p_wpe, p_ln1w, p_ln1b, p_qkvw, p_qkvb, p_attprojw, p_attprojb,
    p_ln2w, p_ln2b, p_fcw, p_fcb, p_fcprojw, p_fcprojb, p_lnfw, p_lnfb,
    num_param_tensors
};

inline std::vector<std::size_t> param_sizes(const GptConfig& c) {
    const std::size_t C = c.channels, L = c.num_layers;
    return {c.padded_vocab_size * C, c.max_seq_len * C, L * C, L * C, L * 3 * C * C, L * 3 * C, L * C * C, L * C,
            L * C, L * C, L * 4 * C * C, L * 4 * C, L * C * 4 * C, L * C, C, C};
}

template <class T>
class Gpt {
public:
    Gpt(const GptConfig& cfg, const PrecisionConfig& prec) : cfg_(cfg), prec_(prec), params_(param_sizes(cfg), prec) {
        if (cfg.channels % cfg.num_heads != 0)
            throw mx_error(errc::shape_mismatch, "channels not divisible by heads");
        if (cfg.vocab_size > cfg.padded_vocab_size) throw mx_error(errc::shape_mismatch, "vocab exceeds padded vocab");
        prec.validate();
    }

    /// GPT-2 initialization: N(0, 0.02) weights, residual projections scaled
    /// by 1/sqrt(2L), unit layernorm gains, zero biases.
    void init_random(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        const auto sizes = param_sizes(cfg_);
        const double proj_std = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg_.num_layers));
        std::vector<double> values;
        values.reserve(params_.count());
        for (std::size_t t = 0; t < sizes.size(); ++t) {
            double fill = 0.0, sd = 0.0;
            switch (t) {
                case p_ln1w: case p_ln2w: case p_lnfw: fill = 1.0; break;
                case p_ln1b: case p_ln2b: case p_lnfb: case p_qkvb: case p_attprojb: case p_fcb: case p_fcprojb: break;
                case p_attprojw: case p_fcprojw: sd = proj_std; break;
                default: sd = 0.02;
            }
            for (std::size_t i = 0; i < sizes[t]; ++i) values.push_back(sd > 0 ? sd * normal(rng) : fill);
        }
        // padded vocabulary rows are never used
        for (std::size_t i = cfg_.vocab_size * cfg_.channels; i < cfg_.padded_vocab_size * cfg_.channels; ++i) values[i] = 0.0;
        params_.set_values(values);
    }

    const GptConfig& config() const { return cfg_; }
    const PrecisionConfig& precision() const { return prec_; }
    ParameterSet<T>& parameters() { return params_; }
    const ParameterSet<T>& parameters() const { return params_; }

    /// Runs the network on B sequences of Tn tokens. With targets, returns the
    /// mean cross-entropy computed in double; otherwise NaN.
    double forward(std::span<const int> tokens, std::span<const int> targets, std::size_t B, std::size_t Tn) {
        if (tokens.size() != B * Tn || (!targets.empty() && targets.size() != B * Tn) || Tn > cfg_.max_seq_len)
            throw mx_error(errc::shape_mismatch, "batch of " + std::to_string(tokens.size()) + " tokens");
        for (int tok : tokens)
            if (tok < 0 || static_cast<std::size_t>(tok) >= cfg_.vocab_size)
                throw mx_error(errc::index_out_of_range, "token " + std::to_string(tok));
        allocate(B, Tn);
        tokens_.assign(tokens.begin(), tokens.end());
        targets_.assign(targets.begin(), targets.end());

        const std::size_t C = cfg_.channels, L = cfg_.num_layers, NH = cfg_.num_heads, V = cfg_.vocab_size,
                          Vp = cfg_.padded_vocab_size, BT = B * Tn;
        const Container& act = prec_.activations;
        const Container* att_store = act.kind == ContainerKind::wide ? nullptr : &act;
        const auto& mode = prec_.matmul;
        auto P = [&](std::size_t t) { return params_.param(t).data(); };

        encoder_forward(a_.encoded.data(), tokens_.data(), P(p_wte), P(p_wpe), B, Tn, C);
        store(a_.encoded, prec_.probs_container());
        for (std::size_t l = 0; l < L; ++l) {
            const T* residual = l == 0 ? a_.encoded.data() : a_.residual3.data() + (l - 1) * BT * C;
            T* ln1 = a_.ln1.data() + l * BT * C;
            T* qkv = a_.qkv.data() + l * BT * 3 * C;
            T* atty = a_.atty.data() + l * BT * C;
            T* preatt = a_.preatt.data() + l * B * NH * Tn * Tn;
            T* att = a_.att.data() + l * B * NH * Tn * Tn;
            T* attproj = a_.attproj.data() + l * BT * C;
            T* residual2 = a_.residual2.data() + l * BT * C;
            T* ln2 = a_.ln2.data() + l * BT * C;
            T* fch = a_.fch.data() + l * BT * 4 * C;
            T* fch_gelu = a_.fch_gelu.data() + l * BT * 4 * C;
            T* fcproj = a_.fcproj.data() + l * BT * C;
            T* residual3 = a_.residual3.data() + l * BT * C;

            layernorm_forward(ln1, a_.ln1_mean.data() + l * BT, a_.ln1_rstd.data() + l * BT, residual,
                              P(p_ln1w) + l * C, P(p_ln1b) + l * C, BT, C);
            store(std::span<T>(ln1, BT * C), act);
            matmul_forward(qkv, ln1, P(p_qkvw) + l * 3 * C * C, P(p_qkvb) + l * 3 * C, BT, C, 3 * C, mode);
            store(std::span<T>(qkv, BT * 3 * C), act);
            attention_forward(atty, preatt, att, qkv, B, Tn, C, NH, att_store);
            store(std::span<T>(atty, BT * C), act);
            matmul_forward(attproj, atty, P(p_attprojw) + l * C * C, P(p_attprojb) + l * C, BT, C, C, mode);
            store(std::span<T>(attproj, BT * C), act);
            residual_forward(residual2, residual, attproj, BT * C);
            store(std::span<T>(residual2, BT * C), act);
            layernorm_forward(ln2, a_.ln2_mean.data() + l * BT, a_.ln2_rstd.data() + l * BT, residual2,
                              P(p_ln2w) + l * C, P(p_ln2b) + l * C, BT, C);
            store(std::span<T>(ln2, BT * C), act);
            matmul_forward(fch, ln2, P(p_fcw) + l * 4 * C * C, P(p_fcb) + l * 4 * C, BT, C, 4 * C, mode);
            store(std::span<T>(fch, BT * 4 * C), act);
            gelu_forward(fch_gelu, fch, BT * 4 * C);
            store(std::span<T>(fch_gelu, BT * 4 * C), act);
            matmul_forward(fcproj, fch_gelu, P(p_fcprojw) + l * C * 4 * C, P(p_fcprojb) + l * C, BT, 4 * C, C, mode);
            store(std::span<T>(fcproj, BT * C), act);
            residual_forward(residual3, residual2, fcproj, BT * C);
            store(std::span<T>(residual3, BT * C), act);
        }
        const T* last = L == 0 ? a_.encoded.data() : a_.residual3.data() + (L - 1) * BT * C;
        layernorm_forward(a_.lnf.data(), a_.lnf_mean.data(), a_.lnf_rstd.data(), last, P(p_lnfw), P(p_lnfb), BT, C);
        store(a_.lnf, act);
        matmul_forward(a_.logits.data(), a_.lnf.data(), P(p_wte), static_cast<const T*>(nullptr), BT, C, Vp, mode);
        store(a_.logits, act);
        softmax_forward(a_.probs.data(), a_.logits.data(), BT, V, Vp);
        store(a_.probs, prec_.probs_container());
        if (targets_.empty()) {
            mean_loss_ = std::numeric_limits<double>::quiet_NaN();
            return mean_loss_;
        }
        double sum = 0.0;
        for (std::size_t n = 0; n < BT; ++n) {
            const double p = a_.probs[n * Vp + static_cast<std::size_t>(targets_[n])];
            a_.losses[n] = -std::log(p);
            sum += a_.losses[n];
        }
        mean_loss_ = sum / static_cast<double>(BT);
        return mean_loss_;
    }

    double forward(const std::vector<int>& tokens, const std::vector<int>& targets, std::size_t B, std::size_t Tn) {
        return forward(std::span<const int>(tokens), std::span<const int>(targets), B, Tn);
    }

    void zero_grad() { params_.zero_grad(); }

    /// Accumulates parameter gradients of the mean loss of the last forward.
    void backward() {
        if (targets_.empty()) throw mx_error(errc::shape_mismatch, "backward needs a forward pass with targets");
        const std::size_t B = B_, Tn = T_, C = cfg_.channels, L = cfg_.num_layers, NH = cfg_.num_heads,
                          V = cfg_.vocab_size, Vp = cfg_.padded_vocab_size, BT = B * Tn;
        const Container& gc = prec_.gradients;
        const auto& mode = prec_.matmul;
        auto P = [&](std::size_t t) { return params_.param(t).data(); };
        auto G = [&](std::size_t t) { return params_.grad(t).data(); };
        d_.zero();

        crossentropy_softmax_backward(d_.logits.data(), a_.probs.data(), targets_.data(), 1.0 / static_cast<double>(BT),
                                      BT, V, Vp);
        store(d_.logits, gc);
        matmul_backward(d_.lnf.data(), G(p_wte), static_cast<T*>(nullptr), d_.logits.data(), a_.lnf.data(), P(p_wte), BT,
                        C, Vp, mode);
        store(d_.lnf, gc);
        {
            const T* last = L == 0 ? a_.encoded.data() : a_.residual3.data() + (L - 1) * BT * C;
            T* dlast = L == 0 ? d_.encoded.data() : d_.residual3.data() + (L - 1) * BT * C;
            layernorm_backward(dlast, G(p_lnfw), G(p_lnfb), d_.lnf.data(), last, P(p_lnfw), a_.lnf_mean.data(),
                               a_.lnf_rstd.data(), BT, C);
            store(std::span<T>(dlast, BT * C), gc);
        }
        for (std::size_t l = L; l-- > 0;) {
            const T* residual = l == 0 ? a_.encoded.data() : a_.residual3.data() + (l - 1) * BT * C;
            T* dresidual = l == 0 ? d_.encoded.data() : d_.residual3.data() + (l - 1) * BT * C;
            T* dres3 = d_.residual3.data() + l * BT * C;
            T* dres2 = d_.residual2.data() + l * BT * C;
            T* dfcproj = d_.fcproj.data() + l * BT * C;
            T* dfch_gelu = d_.fch_gelu.data() + l * BT * 4 * C;
            T* dfch = d_.fch.data() + l * BT * 4 * C;
            T* dln2 = d_.ln2.data() + l * BT * C;
            T* dattproj = d_.attproj.data() + l * BT * C;
            T* datty = d_.atty.data() + l * BT * C;
            T* dqkv = d_.qkv.data() + l * BT * 3 * C;
            T* dln1 = d_.ln1.data() + l * BT * C;

            residual_backward(dres2, dfcproj, dres3, BT * C);
            store(std::span<T>(dfcproj, BT * C), gc);
            matmul_backward(dfch_gelu, G(p_fcprojw) + l * C * 4 * C, G(p_fcprojb) + l * C, dfcproj,
                            a_.fch_gelu.data() + l * BT * 4 * C, P(p_fcprojw) + l * C * 4 * C, BT, 4 * C, C, mode);
            store(std::span<T>(dfch_gelu, BT * 4 * C), gc);
            gelu_backward(dfch, a_.fch.data() + l * BT * 4 * C, dfch_gelu, BT * 4 * C);
            store(std::span<T>(dfch, BT * 4 * C), gc);
            matmul_backward(dln2, G(p_fcw) + l * 4 * C * C, G(p_fcb) + l * 4 * C, dfch, a_.ln2.data() + l * BT * C,
                            P(p_fcw) + l * 4 * C * C, BT, C, 4 * C, mode);
            store(std::span<T>(dln2, BT * C), gc);
            layernorm_backward(dres2, G(p_ln2w) + l * C, G(p_ln2b) + l * C, dln2, a_.residual2.data() + l * BT * C,
                               P(p_ln2w) + l * C, a_.ln2_mean.data() + l * BT, a_.ln2_rstd.data() + l * BT, BT, C);
            store(std::span<T>(dres2, BT * C), gc);
            residual_backward(dresidual, dattproj, dres2, BT * C);
            store(std::span<T>(dattproj, BT * C), gc);
            matmul_backward(datty, G(p_attprojw) + l * C * C, G(p_attprojb) + l * C, dattproj,
                            a_.atty.data() + l * BT * C, P(p_attprojw) + l * C * C, BT, C, C, mode);
            store(std::span<T>(datty, BT * C), gc);
            attention_backward(dqkv, datty, a_.qkv.data() + l * BT * 3 * C, a_.att.data() + l * B * NH * Tn * Tn, B, Tn,
                               C, NH);
            store(std::span<T>(dqkv, BT * 3 * C), gc);
            matmul_backward(dln1, G(p_qkvw) + l * 3 * C * C, G(p_qkvb) + l * 3 * C, dqkv, a_.ln1.data() + l * BT * C,
                            P(p_qkvw) + l * 3 * C * C, BT, C, 3 * C, mode);
            store(std::span<T>(dln1, BT * C), gc);
            layernorm_backward(dresidual, G(p_ln1w) + l * C, G(p_ln1b) + l * C, dln1, residual, P(p_ln1w) + l * C,
                               a_.ln1_mean.data() + l * BT, a_.ln1_rstd.data() + l * BT, BT, C);
            store(std::span<T>(dresidual, BT * C), gc);
        }
        encoder_backward(G(p_wte), G(p_wpe), d_.encoded.data(), tokens_.data(), B, Tn, C);
        params_.store_grads();
    }

    void update(const AdamW& hp, int step) { params_.adamw_step(hp, step); }

    /// One optimization step; returns the loss before the update.
    double train_step(std::span<const int> tokens, std::span<const int> targets, std::size_t B, std::size_t Tn,
                      const AdamW& hp, int step) {
        const double loss = forward(tokens, targets, B, Tn);
        zero_grad();
        backward();
        update(hp, step);
        return loss;
    }

    double mean_loss() const { return mean_loss_; }
    std::size_t batch() const { return B_; }
    std::size_t seq_len() const { return T_; }
    /// (B, T, Vp) outputs of the last forward.
    std::span<const T> logits() const { return a_.logits; }
    std::span<const T> probs() const { return a_.probs; }

private:
    struct Buffers {
        std::vector<T> encoded, ln1, ln1_mean, ln1_rstd, qkv, atty, preatt, att, attproj, residual2, ln2, ln2_mean,
            ln2_rstd, fch, fch_gelu, fcproj, residual3, lnf, lnf_mean, lnf_rstd, logits, probs, losses;

        void resize(const GptConfig& c, std::size_t B, std::size_t Tn) {
            const std::size_t C = c.channels, L = c.num_layers, NH = c.num_heads, BT = B * Tn;
            encoded.assign(BT * C, T(0));
            for (auto* v : {&ln1, &atty, &attproj, &residual2, &ln2, &fcproj, &residual3}) v->assign(L * BT * C, T(0));
            for (auto* v : {&ln1_mean, &ln1_rstd, &ln2_mean, &ln2_rstd}) v->assign(L * BT, T(0));
            qkv.assign(L * BT * 3 * C, T(0));
            preatt.assign(L * B * NH * Tn * Tn, T(0));
            att.assign(L * B * NH * Tn * Tn, T(0));
            fch.assign(L * BT * 4 * C, T(0));
            fch_gelu.assign(L * BT * 4 * C, T(0));
            lnf.assign(BT * C, T(0));
            lnf_mean.assign(BT, T(0));
            lnf_rstd.assign(BT, T(0));
            logits.assign(BT * c.padded_vocab_size, T(0));
            probs.assign(BT * c.padded_vocab_size, T(0));
            losses.assign(BT, T(0));
        }

        void zero() {
            for (auto* v : {&encoded, &ln1, &qkv, &atty, &attproj, &residual2, &ln2, &fch, &fch_gelu, &fcproj, &residual3,
                            &lnf, &logits})
                std::fill(v->begin(), v->end(), T(0));
        }
    };

    void allocate(std::size_t B, std::size_t Tn) {
        if (B == B_ && Tn == T_) return;
        a_.resize(cfg_, B, Tn);
        d_.resize(cfg_, B, Tn);
        B_ = B;
        T_ = Tn;
    }

    GptConfig cfg_;
    PrecisionConfig prec_;
    ParameterSet<T> params_;
    Buffers a_, d_;
    std::size_t B_ = 0, T_ = 0;
    std::vector<int> tokens_, targets_;
    double mean_loss_ = std::numeric_limits<double>::quiet_NaN();
};

// ---------------------------------------------------------------------------
// Checkpoints: 256 little-endian int32 header words followed by the float32
// parameters in tensor order.

inline constexpr std::int32_t llmc_magic = 20240326;
inline constexpr std::int32_t native_magic = 0x4d58434b;

struct Checkpoint {
    GptConfig config;
    std::vector<float> params;
    bool native = false;
};

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw mx_error(errc::bad_file, "cannot open " + path);
    std::array<std::int32_t, 256> h{};
    if (!in.read(reinterpret_cast<char*>(h.data()), sizeof(h))) throw mx_error(errc::bad_file, path + ": short header");
    Checkpoint ck;
    if (h[0] == native_magic) ck.native = true;
    else if (h[0] != llmc_magic) throw mx_error(errc::bad_file, path + ": bad magic " + std::to_string(h[0]));
    if (h[1] != 1 && h[1] != 3) throw mx_error(errc::bad_file, path + ": unsupported version " + std::to_string(h[1]));
    for (int i = 2; i <= 6; ++i)
        if (h[i] <= 0) throw mx_error(errc::bad_file, path + ": bad dimension in header word " + std::to_string(i));
    ck.config.max_seq_len = static_cast<std::size_t>(h[2]);
    ck.config.vocab_size = static_cast<std::size_t>(h[3]);
    ck.config.num_layers = static_cast<std::size_t>(h[4]);
    ck.config.num_heads = static_cast<std::size_t>(h[5]);
    ck.config.channels = static_cast<std::size_t>(h[6]);
    ck.config.padded_vocab_size = h[1] == 3 ? static_cast<std::size_t>(h[7]) : ck.config.vocab_size;
    if (ck.config.padded_vocab_size < ck.config.vocab_size || ck.config.channels % ck.config.num_heads != 0)
        throw mx_error(errc::bad_file, path + ": inconsistent dimensions");
    const auto sizes = param_sizes(ck.config);
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != sizeof(h) + total * sizeof(float))
        throw mx_error(errc::bad_file, path + ": expected " + std::to_string(total) + " parameters");
    try {
        ck.params.resize(total);
    } catch (const std::bad_alloc&) {
        throw mx_error(errc::bad_file, path + ": model too large for available memory");
    }
    in.seekg(sizeof(h));
    in.read(reinterpret_cast<char*>(ck.params.data()), static_cast<std::streamsize>(total * sizeof(float)));
    if (!in) throw mx_error(errc::bad_file, path + ": truncated parameters");
    return ck;
}

template <class T>
void write_checkpoint(const std::string& path, const Gpt<T>& model, bool native = true) {
    std::array<std::int32_t, 256> h{};
    const auto& c = model.config();
    h[0] = native ? native_magic : llmc_magic;
    h[1] = 3;
    h[2] = static_cast<std::int32_t>(c.max_seq_len);
    h[3] = static_cast<std::int32_t>(c.vocab_size);
    h[4] = static_cast<std::int32_t>(c.num_layers);
    h[5] = static_cast<std::int32_t>(c.num_heads);
    h[6] = static_cast<std::int32_t>(c.channels);
    h[7] = static_cast<std::int32_t>(c.padded_vocab_size);
    const auto& wide = model.parameters().wide_values();
    std::vector<float> out(wide.begin(), wide.end());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw mx_error(errc::bad_file, "cannot write " + path);
    f.write(reinterpret_cast<const char*>(h.data()), sizeof(h));
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(float)));
    if (!f) throw mx_error(errc::bad_file, "short write to " + path);
}

template <class T>
Gpt<T> model_from_checkpoint(const Checkpoint& ck, const PrecisionConfig& prec) {
    Gpt<T> model(ck.config, prec);
    model.parameters().set_values(ck.params);
    return model;
}

}  // namespace microscaling
