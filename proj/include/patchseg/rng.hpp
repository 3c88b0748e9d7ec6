#pragma once

#include <cstdint>

namespace patchseg {

// Counter-based splittable pseudo-random generator.
//
// Every draw is a pure function of (key, counter), built from the SplitMix64
// finalizer with the golden-ratio increment 0x9E3779B97F4A7C15. Values depend
// only on 64-bit integer arithmetic, so sequences are identical on every
// platform. Independent streams are derived with split(), which mixes a
// stream id into the key; child streams never collide with the parent
// sequence for practical workloads.
class Prng {
public:
    Prng() = default;
    Prng(std::uint64_t seed, std::uint64_t stream) : key_(mix(mix(seed) ^ mix(stream + kStreamSalt))) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    Prng split(std::uint64_t stream) const {
        Prng child;
        child.key_ = mix(key_ ^ mix(stream + kStreamSalt));
        return child;
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

    // Uniform in [0, 1), 53-bit mantissa.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Unbiased-enough integer in [0, n) via 128-bit multiply-shift.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // Standard normal via the Irwin-Hall 12-sum. Exactly portable (sums of
    // uniforms only), mean 0, variance 1, support clipped to [-6, 6] which is
    // irrelevant for phantom noise.
    double next_gaussian() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += next_double();
        return s - 6.0;
    }

private:
    static constexpr std::uint64_t kStreamSalt = 0xA0761D6478BD642FULL;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace patchseg
