#pragma once
#include <cstdint>
#include <cstring>

namespace sad {

// IEEE 754 binary16 conversion, round-to-nearest-even. Handles subnormals,
// infinities and NaN; used by the wire format only.

inline uint16_t float_to_half(float f) {
    uint32_t x;
    std::memcpy(&x, &f, 4);
    uint16_t sign = static_cast<uint16_t>((x >> 16) & 0x8000u);
    uint32_t mant = x & 0x007fffffu;
    uint32_t exp = (x >> 23) & 0xffu;

    if (exp == 255) // inf or nan
        return sign | 0x7c00u | (mant ? (0x200u | (mant >> 13)) : 0u);

    int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 31) return sign | 0x7c00u; // overflow -> inf
    if (e <= 0) {
        if (e < -10) return sign; // underflow -> signed zero
        mant |= 0x00800000u;
        int shift = 14 - e; // in [14, 24]
        uint32_t hm = mant >> shift;
        uint32_t rem = mant & ((1u << shift) - 1u);
        uint32_t half_way = 1u << (shift - 1);
        if (rem > half_way || (rem == half_way && (hm & 1u))) hm++;
        return static_cast<uint16_t>(sign | hm); // carry rolls into exp 1 correctly
    }
    uint16_t h = static_cast<uint16_t>(sign | (e << 10) | (mant >> 13));
    uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) h++; // carry-safe
    return h;
}

inline float half_to_float(uint16_t h) {
    uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1fu;
    uint32_t mant = h & 0x3ffu;
    uint32_t x;
    if (exp == 0) {
        if (mant == 0) {
            x = sign;
        } else {
            // normalize subnormal
            int e = -1;
            do {
                e++;
                mant <<= 1;
            } while (!(mant & 0x400u));
            mant &= 0x3ffu;
            x = sign | static_cast<uint32_t>(127 - 15 - e) << 23 | (mant << 13);
        }
    } else if (exp == 31) {
        x = sign | 0x7f800000u | (mant << 13);
    } else {
        x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &x, 4);
    return f;
}

} // namespace sad
