#include "sad/poisson.hpp"

#include "sad/accum.hpp"
#include "sad/grad.hpp"
#include "sad/render.hpp"
#include "sad/rng.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace sad {

void DomainMask::resize(int w, int h) {
    if (w < 1 || h < 1) throw std::invalid_argument("DomainMask: empty extent");
    width = w;
    height = h;
    inside.assign(static_cast<size_t>(w) * h, 0);
}

size_t DomainMask::count() const {
    size_t n = 0;
    for (uint8_t v : inside) n += v != 0;
    return n;
}

DomainMask disk_mask(int width, int height, double radius) {
    DomainMask m;
    m.resize(width, height);
    double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
    for (int y = 0; y < height; y++)
        for (int x = 0; x < width; x++) {
            double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= radius * radius)
                m.inside[static_cast<size_t>(y) * width + x] = 1;
        }
    return m;
}

DomainMask mask_from_image(const ImageBuffer& img, double threshold) {
    DomainMask m;
    m.resize(img.width, img.height);
    for (int y = 0; y < img.height; y++)
        for (int x = 0; x < img.width; x++) {
            const double* p = img.at(x, y);
            double luma = 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2];
            if (luma > threshold) m.inside[static_cast<size_t>(y) * img.width + x] = 1;
        }
    return m;
}

double Contour::length() const {
    double l = 0;
    size_t n = xs.size();
    if (n < 2) return 0;
    for (size_t i = 0; i + 1 < n; i++) l += std::hypot(xs[i + 1] - xs[i], ys[i + 1] - ys[i]);
    if (closed) l += std::hypot(xs[0] - xs[n - 1], ys[0] - ys[n - 1]);
    return l;
}

namespace {

struct Seg {
    double x0, y0, x1, y1;
};

int64_t vertex_key(double x, double y) {
    // crossings sit on the half-integer lattice; doubling makes the key exact
    int64_t kx = std::llround(2 * x) + 8, ky = std::llround(2 * y) + 8;
    return (kx << 32) | ky;
}

// per marching-squares case, pairs of edge indices (0=T 1=R 2=B 3=L), -1 ends
constexpr int8_t kCaseEdges[16][4] = {
    {-1, -1, -1, -1}, {3, 0, -1, -1}, {0, 1, -1, -1}, {3, 1, -1, -1},
    {1, 2, -1, -1},   {3, 0, 1, 2},   {0, 2, -1, -1}, {3, 2, -1, -1},
    {2, 3, -1, -1},   {0, 2, -1, -1}, {0, 1, 2, 3},   {1, 2, -1, -1},
    {1, 3, -1, -1},   {0, 1, -1, -1}, {3, 0, -1, -1}, {-1, -1, -1, -1},
};

} // namespace

std::vector<Contour> mask_contours(const DomainMask& mask) {
    std::vector<Seg> segs;
    // every crossing vertex gets exactly one incident segment from each of
    // the two cells sharing its pixel-center edge, so degree is always 2
    std::unordered_map<int64_t, std::array<int, 2>> inc;
    auto link = [&](int64_t key, int seg) {
        auto it = inc.find(key);
        if (it == inc.end())
            inc.emplace(key, std::array<int, 2>{seg, -1});
        else
            it->second[1] = seg;
    };

    for (int y = -1; y < mask.height; y++) {
        for (int x = -1; x < mask.width; x++) {
            int code = (mask.at(x, y) ? 1 : 0) | (mask.at(x + 1, y) ? 2 : 0) |
                       (mask.at(x + 1, y + 1) ? 4 : 0) | (mask.at(x, y + 1) ? 8 : 0);
            const int8_t* e = kCaseEdges[code];
            for (int s = 0; s < 4 && e[s] >= 0; s += 2) {
                auto pt = [&](int edge, double& px, double& py) {
                    switch (edge) {
                    case 0: px = x + 0.5; py = y; break;
                    case 1: px = x + 1.0; py = y + 0.5; break;
                    case 2: px = x + 0.5; py = y + 1.0; break;
                    default: px = x; py = y + 0.5; break;
                    }
                };
                Seg sg;
                pt(e[s], sg.x0, sg.y0);
                pt(e[s + 1], sg.x1, sg.y1);
                int id = static_cast<int>(segs.size());
                segs.push_back(sg);
                link(vertex_key(sg.x0, sg.y0), id);
                link(vertex_key(sg.x1, sg.y1), id);
            }
        }
    }

    std::vector<Contour> out;
    std::vector<uint8_t> used(segs.size(), 0);
    for (size_t start = 0; start < segs.size(); start++) {
        if (used[start]) continue;
        Contour c;
        used[start] = 1;
        double hx = segs[start].x0, hy = segs[start].y0; // loop head
        double cx = segs[start].x1, cy = segs[start].y1;
        c.xs.push_back(hx);
        c.ys.push_back(hy);
        int64_t head = vertex_key(hx, hy);
        while (vertex_key(cx, cy) != head) {
            c.xs.push_back(cx);
            c.ys.push_back(cy);
            auto& pair = inc.at(vertex_key(cx, cy));
            int nxt = !used[pair[0]] ? pair[0] : (pair[1] >= 0 && !used[pair[1]] ? pair[1] : -1);
            if (nxt < 0) break; // open chain; cannot happen for in-bounds masks
            used[nxt] = 1;
            bool from0 = vertex_key(segs[nxt].x0, segs[nxt].y0) == vertex_key(cx, cy);
            cx = from0 ? segs[nxt].x1 : segs[nxt].x0;
            cy = from0 ? segs[nxt].y1 : segs[nxt].y0;
        }
        c.closed = vertex_key(cx, cy) == head;
        out.push_back(std::move(c));
    }
    return out;
}

SiteStore init_boundary_sites(const DomainMask& mask, int n, double value, double log_tau,
                              double radius) {
    if (n < 1) throw std::invalid_argument("init_boundary_sites: need at least one site");
    std::vector<Contour> loops = mask_contours(mask);
    if (loops.empty()) throw std::invalid_argument("init_boundary_sites: mask has no contour");
    size_t best = 0;
    double best_len = loops[0].length();
    for (size_t i = 1; i < loops.size(); i++) {
        double l = loops[i].length();
        if (l > best_len) {
            best = i;
            best_len = l;
        }
    }
    const Contour& loop = loops[best];
    size_t m = loop.xs.size();

    double cx = 0, cy = 0;
    for (size_t i = 0; i < m; i++) {
        cx += loop.xs[i];
        cy += loop.ys[i];
    }
    cx /= static_cast<double>(m);
    cy /= static_cast<double>(m);
    size_t anchor = 0;
    double best_ang = 4 * 3.14159265358979323846;
    for (size_t i = 0; i < m; i++) {
        double a = std::fabs(std::atan2(loop.ys[i] - cy, loop.xs[i] - cx));
        if (a < best_ang) {
            best_ang = a;
            anchor = i;
        }
    }

    // cumulative arc length from the anchor, walking the stored order
    std::vector<double> cum(m + 1, 0);
    for (size_t j = 0; j < m; j++) {
        size_t a = (anchor + j) % m, b = (anchor + j + 1) % m;
        cum[j + 1] = cum[j] + std::hypot(loop.xs[b] - loop.xs[a], loop.ys[b] - loop.ys[a]);
    }
    double total = cum[m];
    if (total <= 0) throw std::invalid_argument("init_boundary_sites: degenerate contour");

    SiteStore st;
    size_t j = 0;
    for (int k = 0; k < n; k++) {
        double s = total * k / n;
        while (j + 1 < m + 1 && cum[j + 1] < s) j++;
        size_t a = (anchor + j) % m, b = (anchor + j + 1) % m;
        double seg = cum[j + 1] - cum[j];
        double t = seg > 0 ? (s - cum[j]) / seg : 0;
        Site site;
        site.x = std::clamp(loop.xs[a] + t * (loop.xs[b] - loop.xs[a]), 0.0, mask.width - 1.0);
        site.y = std::clamp(loop.ys[a] + t * (loop.ys[b] - loop.ys[a]), 0.0, mask.height - 1.0);
        site.log_tau = log_tau;
        site.radius = radius;
        site.color[0] = value;
        site.frozen = true;
        st.append(site);
    }
    return st;
}

void add_interior_sites(SiteStore& st, const DomainMask& mask, int n, double value,
                        double log_tau, uint64_t seed) {
    std::vector<uint32_t> cells;
    for (int y = 0; y < mask.height; y++)
        for (int x = 0; x < mask.width; x++)
            if (mask.at(x, y)) cells.push_back(static_cast<uint32_t>(y * mask.width + x));
    if (n < 1 || static_cast<size_t>(n) > cells.size())
        throw std::invalid_argument("add_interior_sites: site count exceeds inside pixels");

    RngState pick = seeded_stream(seed, 0x9015, 0);
    RngState jit = seeded_stream(seed, 0x9015, 1);
    double radius = std::max(1.0, std::sqrt(static_cast<double>(cells.size()) / n));
    for (int i = 0; i < n; i++) {
        uint32_t j = static_cast<uint32_t>(i) +
                     pick.next_below(static_cast<uint32_t>(cells.size()) - i);
        std::swap(cells[i], cells[j]);
        int cx = static_cast<int>(cells[i]) % mask.width;
        int cy = static_cast<int>(cells[i]) / mask.width;
        Site s;
        s.x = std::min(cx + 0.25 + 0.5 * jit.next_unit(), mask.width - 1.0);
        s.y = std::min(cy + 0.25 + 0.5 * jit.next_unit(), mask.height - 1.0);
        s.log_tau = log_tau;
        s.radius = radius;
        s.color[0] = value;
        st.append(s);
    }
}

double laplacian_residual(const std::vector<double>& u, const DomainMask& mask, double f,
                          std::vector<double>& residual) {
    int w = mask.width, h = mask.height;
    if (u.size() != static_cast<size_t>(w) * h)
        throw std::invalid_argument("laplacian_residual: field size mismatch");
    residual.assign(u.size(), 0.0);
    Accum sum;
    size_t n_int = 0;
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            if (!mask.interior(x, y)) continue;
            size_t i = static_cast<size_t>(y) * w + x;
            double r = u[i - 1] + u[i + 1] + u[i - w] + u[i + w] - 4.0 * u[i] - f;
            residual[i] = r;
            sum.add(r * r);
            n_int++;
        }
    if (n_int == 0) throw std::invalid_argument("laplacian_residual: mask has no interior pixels");
    return sum.value() / static_cast<double>(n_int);
}

std::vector<double> poisson_grid_solution(const DomainMask& mask, double f) {
    int w = mask.width, h = mask.height;
    std::vector<int> index(static_cast<size_t>(w) * h, -1);
    int n = 0;
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++)
            if (mask.interior(x, y)) index[static_cast<size_t>(y) * w + x] = n++;
    if (n == 0) throw std::invalid_argument("poisson_grid_solution: mask has no interior pixels");

    // negated stencil keeps the system positive definite
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<size_t>(n) * 5);
    Eigen::VectorXd rhs(n);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            int i = index[static_cast<size_t>(y) * w + x];
            if (i < 0) continue;
            trip.emplace_back(i, i, 4.0);
            int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
            for (auto& p : nb) {
                int j = index[static_cast<size_t>(p[1]) * w + p[0]];
                if (j >= 0) trip.emplace_back(i, j, -1.0);
            }
            rhs[i] = -f;
        }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-12);
    cg.setMaxIterations(8 * n);
    cg.compute(A);
    Eigen::VectorXd u = cg.solve(rhs);
    if (cg.info() != Eigen::Success)
        throw numeric_error("poisson_grid_solution: grid solve failed");

    std::vector<double> out(static_cast<size_t>(w) * h, 0.0);
    for (size_t i = 0; i < out.size(); i++)
        if (index[i] >= 0) out[i] = u[index[i]];
    return out;
}

double poisson_residual(const SiteStore& sites, const CandidateField& field,
                        const DomainMask& mask, double f, GradBuffer& out, const RunOpts& opts) {
    if (mask.width != field.width || mask.height != field.height)
        throw std::invalid_argument("poisson_residual: mask size mismatch");
    int w = mask.width, h = mask.height;

    ImageBuffer img = render_image(sites, field, opts);
    std::vector<double> u(static_cast<size_t>(w) * h);
    for (size_t i = 0; i < u.size(); i++) u[i] = img.data[3 * i];

    std::vector<double> r;
    double mse = laplacian_residual(u, mask, f, r);

    size_t n_int = 0;
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) n_int += mask.interior(x, y);

    // the stencil is symmetric, so the adjoint scatters each interior
    // residual back through the same five taps
    ImageBuffer adj;
    adj.resize(w, h);
    double c2 = 2.0 / static_cast<double>(n_int);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            if (!mask.interior(x, y)) continue;
            double cr = c2 * r[static_cast<size_t>(y) * w + x];
            adj.at(x, y)[0] -= 4.0 * cr;
            adj.at(x - 1, y)[0] += cr;
            adj.at(x + 1, y)[0] += cr;
            adj.at(x, y - 1)[0] += cr;
            adj.at(x, y + 1)[0] += cr;
        }
    backward_pixel_grad(sites, field, adj, out, opts);
    return mse;
}

namespace {

double residual_db(double mse) {
    if (mse <= 0) return 99.0;
    double v = -10.0 * std::log10(mse);
    return v > 99.0 ? 99.0 : v;
}

double bilerp(const std::vector<double>& g, int w, int h, double x, double y) {
    x = std::clamp(x, 0.0, w - 1.0);
    y = std::clamp(y, 0.0, h - 1.0);
    int x0 = std::min(static_cast<int>(x), w - 2);
    int y0 = std::min(static_cast<int>(y), h - 2);
    if (w == 1) x0 = 0;
    if (h == 1) y0 = 0;
    double tx = x - x0, ty = y - y0;
    size_t i = static_cast<size_t>(y0) * w + x0;
    double a = g[i], b = w > 1 ? g[i + 1] : a;
    double c = h > 1 ? g[i + w] : a, d = (w > 1 && h > 1) ? g[i + w + 1] : b;
    return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
}

// The rendered field is linear in the site values once the geometry is
// fixed, so the value block has a closed-form optimum: least squares on the
// stencil residual, anchored to the grid samples through a small Tikhonov
// term that pins the weakly constrained directions (near-constant modes and
// rim sites with little interior coverage).
void fit_values_to_residual(SiteStore& st, const CandidateField& field, const DomainMask& mask,
                            double f, const std::vector<double>& anchor, double lam_rel) {
    int w = mask.width, h = mask.height;
    std::vector<int> col(st.size(), -1);
    int m = 0;
    for (uint32_t i = 0; i < st.size(); i++)
        if (st.active[i] && !st.frozen[i]) col[i] = m++;
    if (m == 0) return;

    std::vector<int> rows(static_cast<size_t>(w) * h, -1);
    int nq = 0;
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++)
            if (mask.interior(x, y)) rows[static_cast<size_t>(y) * w + x] = nq++;

    // per-pixel blend weights for every pixel a stencil row touches
    std::vector<PixelMix> mixes(static_cast<size_t>(w) * h);
    std::vector<uint8_t> have(static_cast<size_t>(w) * h, 0);
    auto mix_at = [&](int x, int y) -> const PixelMix& {
        size_t i = static_cast<size_t>(y) * w + x;
        if (!have[i]) {
            mixes[i] = pixel_weights(st, field, x, y);
            have[i] = 1;
        }
        return mixes[i];
    };

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<size_t>(nq) * 40);
    Eigen::VectorXd rhs = Eigen::VectorXd::Constant(nq, f);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            int q = rows[static_cast<size_t>(y) * w + x];
            if (q < 0) continue;
            const int taps[5][3] = {{x, y, -4}, {x - 1, y, 1}, {x + 1, y, 1},
                                    {x, y - 1, 1}, {x, y + 1, 1}};
            for (auto& t : taps) {
                const PixelMix& mix = mix_at(t[0], t[1]);
                for (int i = 0; i < mix.n; i++) {
                    uint32_t id = mix.ids[i];
                    double cw = t[2] * mix.w[i];
                    if (col[id] >= 0)
                        trip.emplace_back(q, col[id], cw);
                    else
                        rhs[q] -= cw * st.col_r[id]; // frozen value is a constant
                }
            }
        }

    Eigen::SparseMatrix<double> B(nq, m);
    B.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd v0(m);
    for (uint32_t i = 0; i < st.size(); i++)
        if (col[i] >= 0) v0[col[i]] = anchor.empty() ? st.col_r[i]
                                                     : bilerp(anchor, w, h, st.x[i], st.y[i]);
    Eigen::VectorXd g = rhs - B * v0;

    Eigen::SparseMatrix<double> M = Eigen::SparseMatrix<double>(B.transpose()) * B;
    double diag_mean = 0;
    for (int i = 0; i < m; i++) diag_mean += M.coeff(i, i);
    diag_mean /= m;
    double lam = lam_rel * diag_mean;
    Eigen::SparseMatrix<double> I(m, m);
    I.setIdentity();
    M += lam * I;

    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-12);
    cg.setMaxIterations(4 * m);
    cg.compute(M);
    Eigen::VectorXd delta = cg.solve(Eigen::VectorXd(B.transpose() * g));
    if (cg.info() != Eigen::Success)
        throw numeric_error("fit_values_to_residual: normal equations solve failed");

    for (uint32_t i = 0; i < st.size(); i++)
        if (col[i] >= 0) st.col_r[i] = v0[col[i]] + delta[col[i]];
    st.bump();
}

} // namespace

PoissonResult solve_poisson(const DomainMask& mask, const PoissonConfig& cfg) {
    if (cfg.steps < 0) throw std::invalid_argument("solve_poisson: negative step count");
    if (cfg.n_interior < 1 || cfg.n_boundary < 1)
        throw std::invalid_argument("solve_poisson: need interior and boundary sites");
    if (cfg.k < 1 || cfg.k > 16) throw std::invalid_argument("solve_poisson: k out of range");
    if (!(cfg.lr_value > 0) && cfg.value_refit_every <= 0)
        throw std::invalid_argument("solve_poisson: bad value rate");
    if (!(cfg.lr_value >= 0)) throw std::invalid_argument("solve_poisson: bad value rate");
    if (!(cfg.lr_decay > 0) || cfg.lr_decay > 1)
        throw std::invalid_argument("solve_poisson: lr_decay outside (0,1]");
    bool any_interior = false;
    for (int y = 0; y < mask.height && !any_interior; y++)
        for (int x = 0; x < mask.width; x++)
            if (mask.interior(x, y)) {
                any_interior = true;
                break;
            }
    if (!any_interior) throw std::invalid_argument("solve_poisson: mask has no interior pixels");

    SiteStore st =
        init_boundary_sites(mask, cfg.n_boundary, cfg.boundary_value, cfg.init_log_tau, 1.0);
    add_interior_sites(st, mask, cfg.n_interior, 0.0, cfg.init_log_tau, cfg.seed);

    TrainConfig tc;
    tc.iters = cfg.steps;
    tc.k = cfg.k;
    tc.inject = cfg.inject;
    tc.seed = cfg.seed;
    tc.fp64 = cfg.fp64;
    tc.threads = cfg.threads < 1 ? 1 : cfg.threads;
    tc.clamp_color = false; // the scalar channel is unbounded
    tc.lr.color = cfg.lr_value;
    RunOpts opts = run_opts(tc);

    AdamState adam;
    adam.resize(st.size());
    CandidateField field;
    field.resize(mask.width, mask.height, tc.k);
    refresh(st, field, RefreshMode::Full, 4, tc.inject, tc.seed, opts);
    if (cfg.grid_init) {
        std::vector<double> g = poisson_grid_solution(mask, cfg.f);
        fit_values_to_residual(st, field, mask, cfg.f, g, cfg.value_fit_reg);
        field.synced_generation = st.generation; // values moved, geometry did not
    }

    GradBuffer gb;
    PoissonResult out;
    out.history.reserve(static_cast<size_t>(cfg.steps));
    const LearningRates base = tc.lr;
    double rho = cfg.steps > 0 ? std::pow(cfg.lr_decay, 1.0 / cfg.steps) : 1.0;
    double mult = 1.0;
    for (int t = 1; t <= cfg.steps; t++) {
        auto tick = std::chrono::steady_clock::now();
        if ((t - 1) % tc.refresh_every == 0)
            refresh(st, field, RefreshMode::WarmStart, tc.refresh_passes, tc.inject, tc.seed,
                    opts);
        if (cfg.value_refit_every > 0 && (t - 1) % cfg.value_refit_every == 0) {
            fit_values_to_residual(st, field, mask, cfg.f, {}, cfg.value_fit_reg);
            field.synced_generation = st.generation;
        }
        double mse = poisson_residual(st, field, mask, cfg.f, gb, opts);
        if (!std::isfinite(mse)) throw numeric_error("solve_poisson: non-finite residual");
        mult *= rho;
        tc.lr.pos = base.pos * mult;
        tc.lr.color = base.color * mult;
        tc.lr.log_tau = base.log_tau * mult;
        tc.lr.radius = base.radius * mult;
        tc.lr.dir = base.dir * mult;
        tc.lr.aniso = base.aniso * mult;
        adam_step(st, gb, adam, mask.width, mask.height, tc);
        // parameters moved but the lists are constants of the objective
        field.synced_generation = st.generation;

        HistoryRow row;
        row.iter = t;
        row.loss = mse;
        row.psnr = residual_db(mse);
        row.active_sites = static_cast<int>(st.active_count());
        row.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tick)
                     .count();
        out.history.push_back(row);
    }

    refresh(st, field, RefreshMode::Full, tc.final_passes, tc.inject, tc.seed, opts);
    out.solution = render_image(st, field, opts);
    std::vector<double> u(out.solution.data.size() / 3);
    for (size_t i = 0; i < u.size(); i++) u[i] = out.solution.data[3 * i];
    std::vector<double> r;
    out.residual_mse = laplacian_residual(u, mask, cfg.f, r);
    out.sites = std::move(st);
    out.field = std::move(field);
    return out;
}

} // namespace sad
