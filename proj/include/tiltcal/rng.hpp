#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace tiltcal {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream key from a base seed and a tuple of
/// counters (iteration, particle, purpose tag, ...). Order of the counters
/// matters; the same tuple always yields the same key.
std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) noexcept;

/// Counter-based generator: output k is mix64(key + (k+1)*golden). Cheap to
/// construct, so every (seed, iteration, particle) gets its own stream and
/// parallel execution stays reproducible.
class StreamRng {
public:
    using result_type = std::uint64_t;

    explicit StreamRng(std::uint64_t key) noexcept : state_(key) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix64(state_);
    }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    double normal() noexcept;

    /// Index in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;

private:
    std::uint64_t state_;
};

// Purpose tags keep streams drawn for different roles in the same
// (iteration, particle) slot independent.
namespace rng_tag {
inline constexpr std::uint64_t baseline = 0x62617365;
inline constexpr std::uint64_t conditional = 0x636f6e64;
inline constexpr std::uint64_t init = 0x696e6974;
inline constexpr std::uint64_t proposal = 0x70726f70;
inline constexpr std::uint64_t mask = 0x6d61736b;
inline constexpr std::uint64_t accept = 0x61636370;
inline constexpr std::uint64_t partition = 0x70617274;
inline constexpr std::uint64_t bootstrap = 0x626f6f74;
inline constexpr std::uint64_t replicate = 0x7265706c;
inline constexpr std::uint64_t arm = 0x61726d00;
} // namespace rng_tag

} // namespace tiltcal
