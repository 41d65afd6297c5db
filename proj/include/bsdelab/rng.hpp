#pragma once

// Counter-based random numbers. A stream is addressed by (seed, stream id,
// channel); draw k of a stream depends only on those three values and k,
// so per-path randomness is independent of ensemble size and thread count.

#include <array>
#include <cstdint>

namespace bsdelab {

/// Philox4x32 with 10 rounds.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Independent channels sharing the same (seed, stream id).
enum class RngChannel : std::uint8_t {
    increments = 0,
    bridge = 1,
    probe = 2,
    user = 3,
};

class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream, RngChannel channel = RngChannel::increments);

    /// Uniform on the open interval (0, 1).
    double uniform();
    /// Standard normal (Box–Muller on two uniforms).
    double normal();

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

}  // namespace bsdelab
