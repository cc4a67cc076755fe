#pragma once
#include "sad/types.hpp"

namespace sad {

// Symmetric 2x2 PSD matrix.
struct Metric {
    double xx = 1.0, xy = 0.0, yy = 1.0;
};

// G = e^a u u^T + e^-a v v^T with v = (-u_y, u_x). Unit determinant when u is
// unit length. u is used exactly as given (no renormalization here): the
// gradient of the raw direction components depends on that.
Metric metric_from_site(const Site& s);

inline double quad_form(const Metric& g, double dx, double dy) {
    return g.xx * dx * dx + 2.0 * g.xy * dx * dy + g.yy * dy * dy;
}

// Anisotropic additively weighted score at pixel-center (px,py):
//   d = ||x - p||_G * s - r * s,  s = normalization_scale(W,H).
// Negative inside the site's weighted ball. The quadratic form is clamped at
// zero before the square root.
double d_mix(double px, double py, const Site& s, double scale);

// logit = -tau * d_mix, tau = exp(log_tau).
double site_logit(double px, double py, const Site& s, double scale);

// Candidate maintenance scores sites from a compact snapshot whose geometric
// fields (position, log_tau, radius, direction, anisotropy) live in IEEE
// half precision; rendering and gradients keep full precision. This returns
// the site as the candidate kernel sees it. Colors are untouched.
Site half_packed(const Site& s);

// Diagram oracles for tests: these define the classical constructions the
// score generalizes. The power variant exists only for oracle comparisons and
// is never part of the fitting path.
double euclidean_dist(double px, double py, double sx, double sy);
double apollonius_dist(double px, double py, double sx, double sy, double r);
double power_dist(double px, double py, double sx, double sy, double weight);

// Argmin of d_mix over active sites; ties resolved to the lowest ID.
// Throws std::invalid_argument when no site is active.
uint32_t hard_owner(const SiteStore& sites, double px, double py, double scale);

} // namespace sad
