#pragma once
#include <cstdint>

namespace sad {

// 32-bit xorshift. Streams are a pure function of (seed, a, b), so every
// consumer that derives its state the same way sees the same sequence on
// every platform.
struct RngState {
    uint32_t s = 0x6b33a1c9u;

    uint32_t next() {
        uint32_t x = s;
        x ^= x << 13;
        x ^= x >> 17;
        x ^= x << 5;
        s = x;
        return x;
    }

    // [0,1), 24-bit resolution
    double next_unit() { return (next() >> 8) * (1.0 / 16777216.0); }

    // unbiased-enough for n << 2^32; callers rely on determinism, not equidistribution
    uint32_t next_below(uint32_t n) { return n ? next() % n : 0; }
};

inline uint32_t mix32(uint32_t h) {
    h ^= h >> 16;
    h *= 0x7feb352du;
    h ^= h >> 15;
    h *= 0x846ca68bu;
    h ^= h >> 16;
    return h;
}

// Stream seeding: (seed, a, b) -> nonzero xorshift state.
inline RngState seeded_stream(uint64_t seed, uint32_t a, uint32_t b) {
    uint32_t h = mix32(static_cast<uint32_t>(seed) ^ 0x9e3779b9u);
    h ^= mix32(static_cast<uint32_t>(seed >> 32) + 0x85ebca6bu);
    h = mix32(h + mix32(a ^ 0x27d4eb2fu));
    h = mix32(h ^ mix32(b + 0x165667b1u));
    if (h == 0) h = 0x6b33a1c9u;
    return RngState{h};
}

} // namespace sad
