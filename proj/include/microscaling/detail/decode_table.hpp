#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace microscaling {

namespace detail {

using EncodingKey = std::tuple<int, int, bool, bool>;

inline EncodingKey encoding_key(const FloatSpec& s) {
    return {s.exp_bits(), s.man_bits(), s.denorm(), s.reserved_top()};
}

}  // namespace detail

inline const std::vector<double>& decode_table(const FloatSpec& s) {
    if (s.width() > 16) throw mx_error(errc::spec_too_wide, "decode table needs <= 16-bit format, got " + s.name());
    static std::mutex mutex;
    static std::map<detail::EncodingKey, std::unique_ptr<const std::vector<double>>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[detail::encoding_key(s)];
    if (!slot) {
        auto table = std::make_unique<std::vector<double>>(std::size_t{1} << s.width());
        for (std::size_t c = 0; c < table->size(); ++c) (*table)[c] = decode(static_cast<code_t>(c), s);
        slot = std::move(table);
    }
    return *slot;
}

}  // namespace microscaling
