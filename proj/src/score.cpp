#include "sad/score.hpp"

#include "sad/half.hpp"

#include <cmath>

namespace sad {

Site half_packed(const Site& s) {
    auto rt = [](double v) {
        return static_cast<double>(half_to_float(float_to_half(static_cast<float>(v))));
    };
    Site q = s;
    q.x = rt(s.x);
    q.y = rt(s.y);
    q.log_tau = rt(s.log_tau);
    q.radius = rt(s.radius);
    q.dir[0] = rt(s.dir[0]);
    q.dir[1] = rt(s.dir[1]);
    q.aniso = rt(s.aniso);
    return q;
}

Metric metric_from_site(const Site& s) {
    double ea = std::exp(s.aniso);
    double ia = std::exp(-s.aniso);
    double ux = s.dir[0], uy = s.dir[1];
    double vx = -uy, vy = ux;
    Metric g;
    g.xx = ea * ux * ux + ia * vx * vx;
    g.xy = ea * ux * uy + ia * vx * vy;
    g.yy = ea * uy * uy + ia * vy * vy;
    return g;
}

double d_mix(double px, double py, const Site& s, double scale) {
    Metric g = metric_from_site(s);
    double dx = px - s.x, dy = py - s.y;
    double q = quad_form(g, dx, dy);
    if (q < 0) q = 0;
    return std::sqrt(q) * scale - s.radius * scale;
}

double site_logit(double px, double py, const Site& s, double scale) {
    return -std::exp(s.log_tau) * d_mix(px, py, s, scale);
}

double euclidean_dist(double px, double py, double sx, double sy) {
    double dx = px - sx, dy = py - sy;
    return std::sqrt(dx * dx + dy * dy);
}

double apollonius_dist(double px, double py, double sx, double sy, double r) {
    return euclidean_dist(px, py, sx, sy) - r;
}

double power_dist(double px, double py, double sx, double sy, double weight) {
    double dx = px - sx, dy = py - sy;
    return dx * dx + dy * dy - weight;
}

uint32_t hard_owner(const SiteStore& sites, double px, double py, double scale) {
    uint32_t best = CandidateField::kEmpty;
    double best_d = 0;
    for (uint32_t id : sites.active_ids()) {
        double d = d_mix(px, py, sites.get(id), scale);
        if (best == CandidateField::kEmpty || d < best_d) {
            best = id;
            best_d = d;
        }
    }
    if (best == CandidateField::kEmpty)
        throw std::invalid_argument("hard_owner: no active sites");
    return best;
}

} // namespace sad
