#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sad {

// Thrown for malformed files and wire data (CLI exit code 3).
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when an optimization run diverges irrecoverably (CLI exit code 4).
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One blend site. Positions live in continuous pixel coordinates with pixel
// centers at integers, inside [0,W-1]x[0,H-1]. dir must be unit length
// (within 1e-6) whenever scoring happens; aniso is log-anisotropy.
struct Site {
    double x = 0.0, y = 0.0;
    double log_tau = 7.5;
    double radius = 1.0;
    double color[3] = {0.0, 0.0, 0.0};
    double dir[2] = {1.0, 0.0};
    double aniso = 0.0;
    bool active = true;
    bool frozen = false;
};

// Structure-of-arrays site container. Slots are never erased during a run:
// deactivation only clears the flag and parks the position at the sentinel,
// so site IDs stay stable. Anything that iterates sites must behave the same
// whether inactive slots are present or physically absent.
class SiteStore {
public:
    std::vector<double> x, y, log_tau, radius, col_r, col_g, col_b, dir_x, dir_y, aniso;
    std::vector<uint8_t> active, frozen;

    // Bumped by every mutation; candidate fields record the value they were
    // refreshed against so stale reads are detectable.
    uint64_t generation = 0;

    size_t size() const { return x.size(); }
    void clear();
    void resize(size_t n);
    uint32_t append(const Site& s);
    Site get(size_t i) const;
    void set(size_t i, const Site& s);
    void deactivate(size_t i);

    void bump();

    size_t active_count() const;
    // IDs of active sites in ascending order; cached, rebuilt on demand.
    const std::vector<uint32_t>& active_ids() const;

private:
    mutable std::vector<uint32_t> active_cache_;
    mutable uint64_t active_cache_gen_ = ~0ull;
};

// Interleaved RGB, values in [0,1] for image targets (scalar fields use
// channel 0 and keep the rest at zero).
struct ImageBuffer {
    int width = 0, height = 0;
    std::vector<double> data; // 3 * width * height

    void resize(int w, int h);
    double* at(int px, int py) { return data.data() + 3 * (static_cast<size_t>(py) * width + px); }
    const double* at(int px, int py) const {
        return data.data() + 3 * (static_cast<size_t>(py) * width + px);
    }
    bool same_shape(const ImageBuffer& o) const {
        return width == o.width && height == o.height;
    }
};

// Per-pixel top-K candidate lists over a (possibly downscaled) grid.
// Each list holds distinct site IDs sorted by descending logit, ties broken
// by ascending ID; unused slots hold the sentinel.
struct CandidateField {
    static constexpr uint32_t kEmpty = 0xffffffffu;

    int width = 0, height = 0; // image extent the field covers
    int cell = 1;              // integer downscale of the candidate grid
    int gw = 0, gh = 0;        // grid extent
    int k = 8;
    std::vector<uint32_t> ids;

    uint64_t synced_generation = ~0ull; // SiteStore.generation at last refresh
    uint64_t refresh_count = 0;
    uint32_t pass_index = 0; // total propagation passes ever run; seeds injection

    void resize(int w, int h, int k_slots, int cell_size = 1);
    uint32_t* slot(int gx, int gy) {
        return ids.data() + static_cast<size_t>(k) * (static_cast<size_t>(gy) * gw + gx);
    }
    const uint32_t* slot(int gx, int gy) const {
        return ids.data() + static_cast<size_t>(k) * (static_cast<size_t>(gy) * gw + gx);
    }
    // candidate cell of an image pixel
    int cell_x(int px) const { return px / cell; }
    int cell_y(int py) const { return py / cell; }
    // scoring position (image coords) of a candidate cell
    double center_x(int gx) const { return gx * static_cast<double>(cell) + (cell - 1) * 0.5; }
    double center_y(int gy) const { return gy * static_cast<double>(cell) + (cell - 1) * 0.5; }
};

struct LearningRates {
    double pos = 0.5;
    double color = 0.05;
    double log_tau = 0.05;
    double radius = 0.25;
    double dir = 0.025;
    double aniso = 0.025;
};

struct TrainConfig {
    int iters = 4000;
    int n_sites = 0;       // fixed site budget; 0 with target_bpp>0 means auto
    double target_bpp = 0; // >0 enables the budget schedule
    uint64_t seed = 1;

    int k = 8;
    int inject = 4;
    double lambda_init = 0.3;

    LearningRates lr;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    int refresh_every = 1;  // warm-start refresh period (iterations)
    int refresh_passes = 1; // passes per warm-start refresh
    int final_passes = 16;  // step-1 passes in the final full refresh

    double tau_diffusion_lambda = 0.0; // 0 disables the smoothing step

    // budget schedule
    int densify_every = 20, densify_start = 20, densify_end = 3000;
    double densify_pct = 0.01;
    double alpha = 0.7;
    double stats_eps = 1e-8;
    int prune_every = 40, prune_start = 100, prune_end = 3000;
    double prune_pct = 0.033;
    bool prune_during_densify = true;
    double budget_scale_cap = 0.95;
    size_t max_sites = 0; // 0 = unbounded

    // initialization
    double init_log_tau = 7.5;
    double init_radius = 0; // 0 = sqrt(W*H/n)
    double init_aniso = 0;

    // projection bounds
    double log_tau_min = 2.0, log_tau_max = 20.0;
    double radius_min = 1.0, radius_max = 512.0;
    double aniso_min = -2.0, aniso_max = 2.0;
    bool clamp_color = true; // off for scalar-field runs

    bool fp64 = true; // false selects the float32 kernels
    int threads = 1;

    // Clamps schedule windows into [0, iters] and rejects malformed values.
    void validate(int width, int height);
};

// Execution knobs for standalone passes.
struct RunOpts {
    bool fp64 = true;
    int threads = 1;
};

inline RunOpts run_opts(const TrainConfig& c) { return RunOpts{c.fp64, c.threads}; }

// Distance normalization: s = 1 / max(H, W).
inline double normalization_scale(int width, int height) {
    if (width < 1 || height < 1) throw std::invalid_argument("normalization_scale: empty extent");
    return 1.0 / static_cast<double>(width > height ? width : height);
}

} // namespace sad
