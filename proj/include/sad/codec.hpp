#pragma once
#include "sad/types.hpp"

#include <cstdint>
#include <string>

namespace sad {

// 128-bit wire record, little-endian words.
//   w0: x code bits 0-14, y code bits 15-29 (15-bit unorm over [0,W-1] /
//       [0,H-1]), bit 30 reserved zero, bit 31 active flag
//   w1: color r bits 0-10, g bits 11-21 (11-bit), b bits 22-31 (10-bit),
//       unorm over per-channel [min, min+scale]
//   w2: log_tau bits 0-15, radius bits 16-31, unorm over per-image ranges
//   w3: dir angle bits 0-15 (unorm over [-pi, pi]), aniso bits 16-31 as
//       IEEE 754 half
struct PackedSite {
    uint32_t w0 = 0, w1 = 0, w2 = 0, w3 = 0;
};

// Per-image quantization ranges. Values are exactly float32-representable so
// the encoder and a decoder reading the serialized scalars agree bit for bit.
struct QuantRanges {
    double log_tau_min = 0, log_tau_scale = 1e-6;
    double radius_min = 0, radius_scale = 1e-6;
    double col_min[3] = {0, 0, 0};
    double col_scale[3] = {1e-6, 1e-6, 1e-6};
};

// Min and (max - min, floored at 1e-6) over active sites for log_tau, radius
// and each color channel; an empty store keeps the defaults.
QuantRanges compute_ranges(const SiteStore& sites);

PackedSite pack_site(const Site& s, const QuantRanges& q, int width, int height);
Site unpack_site(const PackedSite& p, const QuantRanges& q, int width, int height);

// Parameter-space bits per pixel: count * 128 / (W*H).
double bpp(size_t count, int width, int height);

constexpr uint16_t kSadVersion = 1;

// Container: "SADF" | version u16 | width u32 | height u32 | count u32 |
// 10 f32 scalars | count PackedSite records; everything little-endian.
// Only active sites are written, in ascending ID order.
void write_file(const std::string& path, const SiteStore& sites, int width, int height);

struct DecodedFile {
    int width = 0, height = 0;
    SiteStore sites;
};

// Validates magic, version and the size equation (18 + 40 + 16*count bytes);
// malformed input throws format_error naming the byte offset.
DecodedFile read_file(const std::string& path);

} // namespace sad
