#include "glyphcrm/rng.hpp"

#include <cmath>

namespace glyphcrm {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    const std::uint64_t initstate = splitmix64(s);
    std::uint64_t t = stream ^ 0xDA3E39CB94B95BDBULL;
    const std::uint64_t initseq = splitmix64(t);

    inc_ = (initseq << 1u) | 1u;
    state_ = 0u;
    next_u32();
    state_ += initstate;
    next_u32();
}

std::uint32_t Rng::next_u32() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    return (hi << 32) | lo;
}

double Rng::uniform01() {
    const std::uint64_t bits = next_u64() >> 11;  // 53 bits
    return static_cast<double>(bits) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    const auto bound = static_cast<std::uint32_t>(n);
    const std::uint32_t threshold = (0u - bound) % bound;
    for (;;) {
        const std::uint32_t r = next_u32();
        if (r >= threshold) return static_cast<std::int64_t>(r % bound);
    }
}

float Rng::uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform01()) * (hi - lo);
}

float Rng::gaussian(float mean, float stddev) {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    const double u2 = uniform01();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double z = mag * std::cos(2.0 * 3.14159265358979323846 * u2);
    return mean + stddev * static_cast<float>(z);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    return splitmix64(x);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

}  // namespace glyphcrm
