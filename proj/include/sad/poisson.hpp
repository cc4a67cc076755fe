#pragma once
#include "sad/candidates.hpp"
#include "sad/train.hpp"
#include "sad/types.hpp"

#include <vector>

namespace sad {

// Boolean pixel domain, row-major. Out-of-bounds queries read as outside, so
// image borders never count as interior.
struct DomainMask {
    int width = 0, height = 0;
    std::vector<uint8_t> inside;

    void resize(int w, int h);
    bool at(int x, int y) const {
        if (x < 0 || y < 0 || x >= width || y >= height) return false;
        return inside[static_cast<size_t>(y) * width + x] != 0;
    }
    // inside with all 4 neighbors inside; the residual stencil and its
    // adjoint only ever touch these and their neighbors
    bool interior(int x, int y) const {
        return at(x, y) && at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1);
    }
    size_t count() const;
};

DomainMask disk_mask(int width, int height, double radius); // centered
DomainMask mask_from_image(const ImageBuffer& img, double threshold = 0.5); // Rec.709 luma

// Iso-0.5 polyline between pixel centers (marching squares on the 0/1 mask,
// crossings at edge midpoints), chained into loops. Any finite mask closes
// all of its contours because everything beyond the image reads as outside.
struct Contour {
    std::vector<double> xs, ys; // closed loops do not repeat the start vertex
    bool closed = false;
    double length() const;
};
std::vector<Contour> mask_contours(const DomainMask& mask);

// n frozen sites evenly spaced by arc length along the longest contour,
// anchored at the vertex facing +x from the contour centroid so symmetric
// masks sample symmetrically. color[0] carries value, the rest stay zero.
SiteStore init_boundary_sites(const DomainMask& mask, int n, double value,
                              double log_tau = 5.0, double radius = 1.0);

// Appends n unfrozen sites on distinct inside pixels (uniform without
// replacement, jittered off the cell corner), color[0] = value; the shared
// radius comes from the mean inside-area per site.
void add_interior_sites(SiteStore& st, const DomainMask& mask, int n, double value,
                        double log_tau, uint64_t seed);

// 5-point Laplacian of u minus the constant source f at interior pixels,
// unit pixel spacing. Fills residual (zero off the interior) and returns the
// mean squared residual. Throws when the mask has no interior pixel.
double laplacian_residual(const std::vector<double>& u, const DomainMask& mask, double f,
                          std::vector<double>& residual);

// Direct solve of the same discrete problem on the pixel grid: interior
// pixels are unknowns, every other pixel is held at zero. Seeds site values
// (gradient descent handles local representation error well and global mass
// transport badly) and serves as the reference the tests compare against.
std::vector<double> poisson_grid_solution(const DomainMask& mask, double f);

// Mean squared stencil residual of the rendered scalar field (channel 0)
// with gradients for every site parameter, chained through the stencil
// adjoint and the softmax blend. Candidate lists are constants of the loss.
double poisson_residual(const SiteStore& sites, const CandidateField& field,
                        const DomainMask& mask, double f, GradBuffer& out,
                        const RunOpts& opts = {});

struct PoissonConfig {
    int steps = 2000;
    int n_interior = 2000;
    int n_boundary = 512;
    double f = -4.0;
    double boundary_value = 0.0;
    double init_log_tau = 5.0;
    double lr_value = 20.0; // value channel learning rate; other rates follow TrainConfig
    // total learning-rate multiplier reached by the last step (geometric
    // anneal, every rate). High early rates grow the field amplitude; the
    // annealed tail shrinks the sign-step orbit radius that otherwise floors
    // the residual.
    double lr_decay = 1e-4;
    // seed interior values from the pixel-grid solve; turning this off
    // starts from zero and leaves all transport to the descent
    bool grid_init = true;
    // re-solve the linear value block every this many steps (0 = never);
    // the rendered field is linear in the values at fixed geometry, so the
    // block has a closed-form optimum and descent only has to move geometry
    int value_refit_every = 0;
    // Tikhonov anchor of the value solves, relative to the normal-matrix
    // diagonal. Weak anchors let the solve trade field amplitude for
    // residual; strong anchors keep the grid-solve shape
    double value_fit_reg = 1e-2;
    int k = 8;
    int inject = 4;
    uint64_t seed = 0;
    bool fp64 = true;
    int threads = 1;
};

struct PoissonResult {
    SiteStore sites;
    CandidateField field; // synced after the final full refresh
    // loss carries the pre-step residual MSE; the psnr slot holds
    // -10*log10(mse) capped at 99 so shared history tooling stays usable
    std::vector<HistoryRow> history;
    ImageBuffer solution;    // rendered field at the final parameters
    double residual_mse = 0; // at the final parameters
};

// Frozen Dirichlet ring plus optimized interior sites, Adam on the residual.
// Boundary sites stay bit-identical for the whole run.
PoissonResult solve_poisson(const DomainMask& mask, const PoissonConfig& cfg);

} // namespace sad
