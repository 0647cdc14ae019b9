#pragma once

#include <cstdint>
#include <limits>

namespace uvtomo {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based generator: output n is a bijective mix of (key, n). Any number of
/// independent substreams can be addressed by key without sequential state.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        return splitmix64(key_ + 0x9E3779B97F4A7C15ULL * (++counter_));
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Key of substream (seed, record, lane); lanes separate e.g. angle draws from noise.
inline constexpr std::uint64_t substream_key(std::uint64_t seed, std::uint64_t record,
                                             std::uint64_t lane = 0) noexcept {
    return splitmix64(splitmix64(splitmix64(seed) ^ record) + lane);
}

}  // namespace uvtomo
