#pragma once
#include "sad/accum.hpp"
#include "sad/render.hpp"
#include "sad/types.hpp"

#include <array>
#include <cstdint>
#include <functional>

namespace sad {

// Gradient slot order; one extra channel carries the per-site removal delta.
enum GradSlot {
    kGradX = 0,
    kGradY,
    kGradLogTau,
    kGradRadius,
    kGradColR,
    kGradColG,
    kGradColB,
    kGradDirX,
    kGradDirY,
    kGradAniso,
    kGradSlots = 10,
    kChannels = 11 // gradients + removal delta
};

// Per-pixel removal deltas saturate here when a site owns the pixel outright
// (weight within 1e-6 of one): removing a sole owner must never look cheap.
inline constexpr double kRemovalSaturated = 1e6;

// Per-site accumulators, all compensated. The removal channel stays an
// unnormalized sum over pixels; gradient channels carry the loss
// normalization folded into the contributions.
class GradBuffer {
public:
    void resize(size_t n);
    void reset();
    size_t size() const { return n_; }

    void add(uint32_t id, const double c[kChannels]);
    void add_accum(uint32_t id, const Accum* acc);

    double grad(int slot, uint32_t id) const { return acc_[id * kChannels + slot].value(); }
    double removal_delta(uint32_t id) const { return acc_[id * kChannels + kGradSlots].value(); }

    // Direct mutable access for smoothing steps.
    Accum& at(int slot, uint32_t id) { return acc_[id * kChannels + slot]; }

    void merge(const GradBuffer& o);

    size_t nonfinite = 0; // zeroed components seen during backward

private:
    size_t n_ = 0;
    std::vector<Accum> acc_;
};

// Bounded tile-local reduction: 256 slots keyed by site ID via multiplicative
// hashing, linear probing capped at 8, overflow falling through to the output
// buffer directly. Flush order is slot order, tiles are visited in index
// order, so the whole reduction is reproducible; with compensated
// accumulators the result also equals a flat per-site sum of the same
// contribution stream.
class TileReducer {
public:
    static constexpr int kTableSize = 256;
    static constexpr int kMaxProbes = 8;

    explicit TileReducer(GradBuffer& out) : out_(out) {}

    void begin_tile();
    void add(uint32_t site, const double c[kChannels]);
    void end_tile();

    size_t overflow_count() const { return overflow_; }

private:
    struct Slot {
        uint32_t key = 0;
        uint32_t stamp = 0;
        Accum acc[kChannels];
    };
    GradBuffer& out_;
    std::array<Slot, kTableSize> table_;
    uint32_t cur_stamp_ = 0;
    size_t overflow_ = 0;
};

inline uint32_t tile_hash(uint32_t site) { return (site * 2654435761u) >> 24; }

// Mean squared error of the rendered field against the target (summed over
// the three channels, averaged over pixels), with analytic gradients for all
// ten parameter slots of every candidate site plus per-site removal deltas.
// Candidate lists are constants; the field must be synced with the store.
double backward_image(const SiteStore& sites, const CandidateField& field,
                      const ImageBuffer& target, GradBuffer& out, const RunOpts& opts = {},
                      bool with_removal = true);

// Forward-only loss, same arithmetic path as backward_image.
double image_loss(const SiteStore& sites, const CandidateField& field, const ImageBuffer& target,
                  const RunOpts& opts = {});

// Generalized adjoint: the caller supplies dL/d(rendered value) per pixel
// (three channels); used by field-fitting problems that are not image MSE.
void backward_pixel_grad(const SiteStore& sites, const CandidateField& field,
                         const ImageBuffer& dl_dvalue, GradBuffer& out, const RunOpts& opts = {});

// Streams the exact per-pixel contributions backward_image would reduce
// (double path), in row-major pixel order. Reduction-equivalence oracles
// consume this to build naive per-site sums.
void for_each_contribution(const SiteStore& sites, const CandidateField& field,
                           const ImageBuffer& target, bool with_removal,
                           const std::function<void(int px, int py, uint32_t site,
                                                    const double c[kChannels])>& sink);

// Closed-form per-pixel removal delta for candidate index k_idx of the mix:
// loss change at this pixel if the site were removed and the remaining
// weights renormalized. Saturates for near-sole owners.
double removal_delta_pixel(const PixelMix& mix, int k_idx, const double c_hat[3],
                           const double site_color[3], const double target[3]);

} // namespace sad
