#pragma once

#include <array>
#include <cstdint>

namespace glyphcrm {

// PCG32 with a splitmix64-seeded state. Two u64 words of state keep
// checkpoint serialization trivial, and the generator is identical on
// every platform. Streams derived from (seed, stream) are independent,
// which is what makes per-example masking worker-count invariant.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    // 53-bit uniform in [0, 1).
    double uniform01();

    // Unbiased integer in [0, n), n > 0.
    std::int64_t uniform_int(std::int64_t n);

    float uniform(float lo, float hi);

    // Box-Muller; no cached spare so the state is exactly two words.
    float gaussian(float mean, float stddev);

    std::array<std::uint64_t, 2> state() const { return {state_, inc_}; }
    void set_state(const std::array<std::uint64_t, 2>& s) {
        state_ = s[0];
        inc_ = s[1];
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
};

// Deterministic combiner for deriving stream ids from structured indices.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

}  // namespace glyphcrm
