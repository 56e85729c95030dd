#pragma once
// Per value-class storage choices of a training run and the named presets.

#include <string>
#include <string_view>
#include <vector>

#include "microscaling/exact_accumulator.hpp"
#include "microscaling/tensor.hpp"

namespace microscaling {

struct PrecisionConfig {
    std::string name = "custom";
    Container weights;
    Container activations;
    Container gradients;
    Container adam;
    bool master_copy = false;
    MatmulMode matmul;
    bool full_precision_probs = true;
    AccumulatorKind accumulator = AccumulatorKind::wide;
    Rounding rounding = Rounding::ties_to_away;

    /// Same configuration with every container and the matmul element format
    /// rounding under r.
    PrecisionConfig with_rounding(Rounding r) const {
        PrecisionConfig c = *this;
        c.rounding = r;
        for (Container* k : {&c.weights, &c.activations, &c.gradients, &c.adam}) *k = k->with_rounding(r);
        c.matmul.spec = c.matmul.spec.with_rounding(r);
        return c;
    }

    PrecisionConfig with_accumulator(AccumulatorKind acc) const {
        PrecisionConfig c = *this;
        c.accumulator = acc;
        c.matmul.acc = acc;
        return c;
    }

    /// Container used for the token encodings and the probabilities.
    Container probs_container() const { return full_precision_probs ? Container::wide() : activations; }

    /// Throws AccumulatorTooWide when the exact accumulator cannot hold the
    /// matmul element format.
    void validate() const {
        if (matmul.online_mx && matmul.acc == AccumulatorKind::exact) ExactAccumulator(matmul.spec, matmul.block);
    }

    friend bool operator==(const PrecisionConfig&, const PrecisionConfig&) = default;
};

inline const std::vector<std::string_view>& precision_preset_names() {
    static const std::vector<std::string_view> names{"baseline", "A", "B", "C", "D", "D'", "E", "F", "F'", "G"};
    return names;
}

inline PrecisionConfig precision_preset(std::string_view name) {
    const auto bf16 = Container::minifloat(formats::e8m7);
    const auto mx_e4m3 = Container::mx(formats::e4m3, 32);
    PrecisionConfig p;
    p.name = std::string(name);
    if (name == "baseline") return p;
    if (name == "A" || name == "B") {
        p.weights = p.activations = p.gradients = p.adam = bf16;
        p.master_copy = name == "B";
        p.full_precision_probs = false;
        return p;
    }
    if (name == "C") {
        p.weights = p.activations = p.gradients = p.adam = Container::mx(formats::e5m10, 32);
        p.master_copy = true;
        p.full_precision_probs = false;
        return p;
    }
    if (name == "D" || name == "D'" || name == "E" || name == "G") {
        const auto elem = name == "G" ? Container::mx(formats::e3m4, 32) : mx_e4m3;
        p.weights = p.gradients = elem;
        p.activations = name == "D" || name == "D'" ? bf16 : elem;
        p.adam = name == "D" || name == "D'" ? Container::wide() : elem;
        p.master_copy = true;
        p.full_precision_probs = true;
        p.matmul = MatmulMode::mx(elem.spec, 32);
        return name == "D'" ? p.with_accumulator(AccumulatorKind::exact) : p;
    }
    if (name == "F" || name == "F'") {
        p.weights = p.activations = p.gradients = p.adam = bf16;
        p.master_copy = true;
        p.full_precision_probs = false;
        p.matmul = MatmulMode::mx(formats::e4m3, 32);
        return name == "F'" ? p.with_accumulator(AccumulatorKind::exact) : p;
    }
    throw mx_error(errc::unknown_preset, "unknown preset '" + std::string(name) + "'");
}

}  // namespace microscaling
