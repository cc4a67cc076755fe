#pragma once
#include "sad/types.hpp"

#include <cstdint>
#include <vector>

namespace sad {

struct AdamState;

// Soft-responsibility statistics for one site. Moments are residual-weighted:
// the per-pixel weight is w_i * ||rendered - target||^2, so `energy` doubles
// as the zeroth moment.
struct SiteStats {
    double mass = 0;   // sum of w_i over pixels
    double energy = 0; // sum of w_i * squared residual
    double sx = 0, sy = 0;
    double sxx = 0, sxy = 0, syy = 0;
    double removal = 0; // summed per-pixel removal deltas
};

struct StatsResult {
    std::vector<SiteStats> site;
    size_t valid_pixels = 0; // pixels whose candidate list is non-empty
};

// One pass over the image computing every SiteStats field, reduced with the
// same tile contract as the backward pass. Field must be synced.
StatsResult accumulate_stats(const SiteStore& sites, const CandidateField& field,
                             const ImageBuffer& target, const RunOpts& opts = {});

// Error-density heuristic E / max(m, eps)^alpha. Ranking eligibility
// (mass > 1) is enforced by densify, not here.
double densify_score(const SiteStats& s, double alpha, double eps);

// Splits the top `percentile` of eligible sites (active, unfrozen, mass > 1)
// by densify_score. Children sit at +-offset along the residual principal
// axis (image-gradient fallback when the statistics are degenerate), inherit
// adjusted shape parameters, take target colors, and get zeroed Adam moments.
// One child overwrites the parent slot, the other goes to the lowest
// inactive slot or appends. Returns the number of splits performed; stops
// early (skipping the rest) if cfg.max_sites would be exceeded.
int densify(SiteStore& st, AdamState& adam, const StatsResult& stats, const ImageBuffer& target,
            double percentile, const TrainConfig& cfg);

// Deactivates the bottom `percentile` of active, unfrozen sites by removal
// delta normalized over valid pixels. Returns the number removed.
int prune(SiteStore& st, const StatsResult& stats, double percentile);

// Target active count for a bits-per-pixel goal: floor(bpp * W * H / 128).
size_t bpp_target_count(double bpp, int width, int height);

// Simulates the site-count trajectory over cfg's event calendar with both
// percentiles multiplied by a shared scale, and returns the scale in
// [0, budget_scale_cap] whose simulated final count lands closest to
// `target` (ties to the smaller scale). Pure integer arithmetic, cheap.
double plan_schedule(int n0, size_t target, const TrainConfig& cfg);

// The trajectory itself for one scale value (used by the planner and tests).
int simulate_schedule(int n0, double scale, const TrainConfig& cfg);

} // namespace sad
