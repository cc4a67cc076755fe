#pragma once
#include "sad/grad.hpp"
#include "sad/types.hpp"

#include <string>
#include <vector>

namespace sad {

// Per-parameter Adam moments, laid out n_sites x kGradSlots. The step count
// is global: bias correction uses the number of adam_step calls, not per-site
// ages, so sites created mid-run share the schedule.
struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;
    size_t skipped = 0; // non-finite gradient components left unapplied

    void resize(size_t n_sites);
    size_t sites() const { return m.size() / kGradSlots; }
    void zero_site(uint32_t id);
};

// Sobel magnitude of Rec.709 luma, replicate borders; one value per pixel.
std::vector<double> sobel_magnitude(const ImageBuffer& img);

// Samples n distinct pixel cells from (1-lambda)*|grad|/sum + lambda/(H*W)
// without replacement, adds subpixel offsets, and takes colors from the
// target. Replaces the store's contents.
void init_sites(SiteStore& st, const ImageBuffer& target, int n, const TrainConfig& cfg);

// One Adam update over all active, unfrozen sites, followed by projection
// back into the valid parameter region.
void adam_step(SiteStore& st, const GradBuffer& g, AdamState& a, int width, int height,
               const TrainConfig& cfg);

// Restores Site invariants: position bounds, scalar clamps, unit dir
// (zero-norm resets to (1,0)). Frozen sites are left bit-identical.
void clamp_project(SiteStore& st, int width, int height, const TrainConfig& cfg);

// Jacobi smoothing of the log_tau gradient channel: each site mixes its own
// gradient with the mean over sites sharing candidate lists on pixels it
// owns (the owner itself co-occurs, so the mean includes it).
void tau_diffusion(const SiteStore& st, const CandidateField& field, double lambda, GradBuffer& g,
                   const RunOpts& opts = {});

struct HistoryRow {
    int iter = 0;
    double loss = 0;
    double psnr = 0;
    int active_sites = 0;
    double ms = 0; // wall clock; excluded from deterministic comparisons
};

struct FitResult {
    SiteStore sites;
    CandidateField field; // synced with sites after the final full refresh
    std::vector<HistoryRow> history;
    double schedule_scale = 0; // percentile scale chosen for --bpp runs
};

// Full optimization loop: init, per-iteration warm refresh + backward +
// optional tau diffusion + Adam + scheduled budget events, then a final full
// refresh. Deterministic for a fixed (target, config).
FitResult fit(const ImageBuffer& target, const TrainConfig& cfg);

// Same loop on a caller-initialized store (the Poisson solver and tests use
// this to control initialization); cfg.n_sites is ignored.
FitResult fit_store(SiteStore st, const ImageBuffer& target, const TrainConfig& cfg);

// CSV with header: iter,loss,psnr,active_sites,ms. Values use %.17g.
void write_history_csv(const std::vector<HistoryRow>& history, const std::string& path);

// Deterministic rendering of one row (no timing), used for reproducibility
// checks and logs.
std::string history_line(const HistoryRow& row);

} // namespace sad
