#pragma once
#include "sad/types.hpp"

#include <string>
#include <vector>

namespace sad {

uint32_t ceil_log2(uint32_t v);

// Doubling schedule over a padded power-of-two extent b: steps b/2, b/4, ...
// down to 1, staying at 1 afterwards.
struct JumpSchedule {
    uint32_t b = 2;

    static JumpSchedule for_extent(int w, int h);
    uint32_t step(uint32_t t) const;
    // number of warm-up events needed to walk the step down to 1
    uint32_t warmup_events() const { return ceil_log2(b); }
};

// step for event t, validated: b must be a power of two >= 2.
uint32_t jump_step(uint32_t t, uint32_t b);

enum class Stencil { Axial, Box3 };

struct PassSpec {
    uint32_t step = 1;
    Stencil stencil = Stencil::Axial;
};

// Warm-up flood events (3x3 stencil, scheduled steps) followed by
// `extra_step1` immediate-neighbor passes. `total` truncates/extends the same
// sequence to an exact pass count for convergence probes.
std::vector<PassSpec> full_refresh_passes(int gw, int gh, int extra_step1);
std::vector<PassSpec> schedule_passes(int gw, int gh, int total);

// Writes each active site's ID into slot 0 of the cell containing its
// position (nearest pixel center); on collisions the better logit at the cell
// center survives. All other slots become the sentinel.
void jfa_seed(const SiteStore& sites, CandidateField& field);

// One double-buffered propagation pass: each cell keeps the top-K of its own
// list, the stencil neighbors' lists at +-step, and `inject` random active
// IDs drawn from a stream seeded by (seed, pass index, cell index). Inactive
// IDs are dropped on the way in. Ranking uses the half-packed site snapshot
// (see half_packed), which is what bounds the steady-state agreement with the
// full-precision top-k at high site densities.
void propagate_pass(const SiteStore& sites, CandidateField& field, const PassSpec& pass,
                    int inject, uint64_t seed, const RunOpts& opts);

// Runs a pass sequence and stamps the field as synced with the store.
void run_passes(const SiteStore& sites, CandidateField& field, const std::vector<PassSpec>& seq,
                int inject, uint64_t seed, const RunOpts& opts);

enum class RefreshMode {
    Full,     // re-seed, warm-up floods, then `passes` step-1 passes
    WarmStart // `passes` step-1 passes on the existing lists
};

void refresh(const SiteStore& sites, CandidateField& field, RefreshMode mode, int passes,
             int inject, uint64_t seed, const RunOpts& opts);

// Brute-force reference: exact top-k over all active sites at a pixel center,
// under the full-precision rendering score (not the packed snapshot).
std::vector<uint32_t> exact_topk(const SiteStore& sites, double px, double py, int k,
                                 double scale, bool fp64 = true);
// Batch variant (one scoring table build for many probes).
std::vector<std::vector<uint32_t>> exact_topk_batch(const SiteStore& sites,
                                                    const std::vector<std::pair<int, int>>& pixels,
                                                    int k, double scale, bool fp64 = true);

// Raw little-endian ID grid (gw*gh*k u32 words) for debugging.
void dump_candidates(const CandidateField& field, const std::string& path);

} // namespace sad
