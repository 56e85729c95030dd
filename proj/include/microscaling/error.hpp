#pragma once

#include <stdexcept>
#include <string>

namespace microscaling {

enum class errc {
    invalid_spec,
    spec_too_wide,
    promotion_too_narrow,
    unknown_format,
    index_out_of_range,
    stale_iterator,
    length_mismatch,
    block_mismatch,
    spec_mismatch,
    unsupported_special,
    accumulator_too_wide,
    window_overflow,
    shape_mismatch,
    non_finite_loss,
    unknown_preset,
    bad_file,
};

inline const char* to_string(errc code) {
    switch (code) {
        case errc::invalid_spec: return "InvalidSpec";
        case errc::spec_too_wide: return "SpecTooWide";
        case errc::promotion_too_narrow: return "PromotionTooNarrow";
        case errc::unknown_format: return "UnknownFormat";
        case errc::index_out_of_range: return "IndexOutOfRange";
        case errc::stale_iterator: return "StaleIterator";
        case errc::length_mismatch: return "LengthMismatch";
        case errc::block_mismatch: return "BlockMismatch";
        case errc::spec_mismatch: return "SpecMismatch";
        case errc::unsupported_special: return "UnsupportedSpecial";
        case errc::accumulator_too_wide: return "AccumulatorTooWide";
        case errc::window_overflow: return "WindowOverflow";
        case errc::shape_mismatch: return "ShapeMismatch";
        case errc::non_finite_loss: return "NonFiniteLoss";
        case errc::unknown_preset: return "UnknownPreset";
        case errc::bad_file: return "BadFile";
    }
    return "Unknown";
}

class mx_error : public std::runtime_error {
public:
    mx_error(errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

}  // namespace microscaling
