#pragma once
#include "sad/types.hpp"

#include <vector>

namespace sad {

// Softmax mixture at one pixel; n <= K entries, weights sum to 1.
struct PixelMix {
    int n = 0;
    uint32_t ids[16];
    double w[16];
};

// Max-subtracted softmax over the pixel's candidate logits, recomputed from
// the current parameters. Convenience path (per-call table build); the image
// passes batch this internally. Throws on a stale field or an empty list.
PixelMix pixel_weights(const SiteStore& sites, const CandidateField& field, int px, int py);

// Blends candidate colors per pixel. Field must be synced with the store.
ImageBuffer render_image(const SiteStore& sites, const CandidateField& field,
                         const RunOpts& opts = {});

// Per-pixel argmax-logit owner (sentinel only if the pixel list is empty,
// which render treats as an error; id maps share that contract).
std::vector<uint32_t> render_id_map(const SiteStore& sites, const CandidateField& field,
                                    const RunOpts& opts = {});

// Owner's log-temperature per pixel.
std::vector<double> render_tau_map(const SiteStore& sites, const CandidateField& field,
                                   const RunOpts& opts = {});

// Pixels whose 4-neighborhood (self included) spans >= 2 distinct owners.
std::vector<uint8_t> boundary_map(const std::vector<uint32_t>& id_map, int w, int h);

} // namespace sad
