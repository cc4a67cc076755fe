#include "sad/budget.hpp"

#include "sad/grad.hpp"
#include "sad/parallel.hpp"
#include "sad/train.hpp"
#include "score_table.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sad {

namespace {

constexpr int kTile = 16;

double luma_at(const ImageBuffer& img, int x, int y) {
    x = std::clamp(x, 0, img.width - 1);
    y = std::clamp(y, 0, img.height - 1);
    const double* p = img.at(x, y);
    return 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2];
}

void local_sobel(const ImageBuffer& img, int px, int py, double& gx, double& gy) {
    gx = (luma_at(img, px + 1, py - 1) + 2 * luma_at(img, px + 1, py) +
          luma_at(img, px + 1, py + 1)) -
         (luma_at(img, px - 1, py - 1) + 2 * luma_at(img, px - 1, py) +
          luma_at(img, px - 1, py + 1));
    gy = (luma_at(img, px - 1, py + 1) + 2 * luma_at(img, px, py + 1) +
          luma_at(img, px + 1, py + 1)) -
         (luma_at(img, px - 1, py - 1) + 2 * luma_at(img, px, py - 1) +
          luma_at(img, px + 1, py - 1));
}

} // namespace

StatsResult accumulate_stats(const SiteStore& sites, const CandidateField& field,
                             const ImageBuffer& target, const RunOpts& opts) {
    if (field.synced_generation != sites.generation)
        throw std::invalid_argument("stats: candidate field is stale");
    if (target.width != field.width || target.height != field.height)
        throw std::invalid_argument("stats: target size mismatch");

    // stats are always double: they feed discrete decisions, and the tile
    // contract keeps the reduction order-independent
    ScoreTable<double> table;
    table.build(sites, normalization_scale(field.width, field.height));

    int tiles_x = (field.width + kTile - 1) / kTile;
    int tiles_y = (field.height + kTile - 1) / kTile;
    int nt = worker_count(tiles_y, opts.threads);
    std::vector<GradBuffer> bufs(nt);
    for (auto& b : bufs) b.resize(sites.size());
    std::vector<size_t> valid(nt, 0);

    run_stripes_workers(tiles_y, opts.threads, [&](int wk, int tyi) {
        GradBuffer& buf = bufs[wk];
        TileReducer red(buf);
        int y0 = tyi * kTile;
        int y1 = std::min(y0 + kTile, field.height);
        for (int txi = 0; txi < tiles_x; txi++) {
            int x0 = txi * kTile;
            int x1 = std::min(x0 + kTile, field.width);
            red.begin_tile();
            for (int py = y0; py < y1; py++) {
                for (int px = x0; px < x1; px++) {
                    const uint32_t* lst = field.slot(field.cell_x(px), field.cell_y(py));
                    uint32_t ids[16];
                    double lg[16], w[16];
                    int n = 0;
                    double best = 0;
                    for (int i = 0; i < field.k; i++) {
                        uint32_t id = lst[i];
                        if (id == CandidateField::kEmpty) break;
                        if (!sites.active[id]) continue;
                        double l = table.logit(static_cast<double>(px), static_cast<double>(py),
                                               id);
                        if (!std::isfinite(l)) continue;
                        ids[n] = id;
                        lg[n] = l;
                        if (n == 0 || l > best) best = l;
                        n++;
                    }
                    if (n == 0) continue;
                    valid[wk]++;
                    double wsum = 0;
                    for (int i = 0; i < n; i++) {
                        w[i] = std::exp(lg[i] - best);
                        wsum += w[i];
                    }
                    double invw = 1.0 / wsum;
                    double ch[3] = {0, 0, 0};
                    for (int i = 0; i < n; i++) {
                        w[i] *= invw;
                        ch[0] += w[i] * sites.col_r[ids[i]];
                        ch[1] += w[i] * sites.col_g[ids[i]];
                        ch[2] += w[i] * sites.col_b[ids[i]];
                    }
                    const double* tp = target.at(px, py);
                    double e0 = ch[0] - tp[0], e1 = ch[1] - tp[1], e2 = ch[2] - tp[2];
                    double r2 = e0 * e0 + e1 * e1 + e2 * e2;
                    double fx = px, fy = py;
                    for (int i = 0; i < n; i++) {
                        double rho = w[i] * r2;
                        double c[kChannels];
                        c[0] = w[i];
                        c[1] = rho;
                        c[2] = rho * fx;
                        c[3] = rho * fy;
                        c[4] = rho * fx * fx;
                        c[5] = rho * fx * fy;
                        c[6] = rho * fy * fy;
                        if (w[i] >= 1.0 - 1e-6) {
                            c[7] = kRemovalSaturated;
                        } else {
                            double inv_rest = 1.0 / (1.0 - w[i]);
                            double r0 = (ch[0] - w[i] * sites.col_r[ids[i]]) * inv_rest - tp[0];
                            double r1 = (ch[1] - w[i] * sites.col_g[ids[i]]) * inv_rest - tp[1];
                            double r2k = (ch[2] - w[i] * sites.col_b[ids[i]]) * inv_rest - tp[2];
                            c[7] = r0 * r0 + r1 * r1 + r2k * r2k - r2;
                        }
                        c[8] = c[9] = c[10] = 0;
                        for (int t = 0; t < 8; t++)
                            if (!std::isfinite(c[t])) c[t] = 0;
                        red.add(ids[i], c);
                    }
                }
            }
            red.end_tile();
        }
    });

    StatsResult out;
    out.site.resize(sites.size());
    GradBuffer total;
    total.resize(sites.size());
    for (int wk = 0; wk < nt; wk++) {
        total.merge(bufs[wk]);
        out.valid_pixels += valid[wk];
    }
    for (uint32_t id = 0; id < sites.size(); id++) {
        SiteStats& s = out.site[id];
        s.mass = total.grad(0, id);
        s.energy = total.grad(1, id);
        s.sx = total.grad(2, id);
        s.sy = total.grad(3, id);
        s.sxx = total.grad(4, id);
        s.sxy = total.grad(5, id);
        s.syy = total.grad(6, id);
        s.removal = total.grad(7, id);
    }
    return out;
}

double densify_score(const SiteStats& s, double alpha, double eps) {
    return s.energy / std::pow(std::max(s.mass, eps), alpha);
}

namespace {

struct SplitAxis {
    double ax = 1, ay = 0;
    double aniso = 0;
};

// Principal axis of the centered residual-weighted covariance; falls back to
// the local image gradient when the cloud is too small or too round.
SplitAxis split_axis(const SiteStats& s, const Site& parent, const ImageBuffer& target,
                     const TrainConfig& cfg) {
    SplitAxis out;
    bool fallback = true;
    if (s.mass >= 4.0 && s.energy > 0) {
        double w = s.energy;
        double mx = s.sx / w, my = s.sy / w;
        double cxx = s.sxx / w - mx * mx;
        double cyy = s.syy / w - my * my;
        double cxy = s.sxy / w - mx * my;
        double half = 0.5 * (cxx - cyy);
        double root = std::sqrt(half * half + cxy * cxy);
        double mid = 0.5 * (cxx + cyy);
        double lam1 = mid + root, lam2 = mid - root;
        if (lam1 > 0 && (lam2 <= 0 || lam1 > 1.05 * lam2)) {
            double vx = cxy, vy = lam1 - cxx;
            double n = std::sqrt(vx * vx + vy * vy);
            if (n < 1e-18 * lam1) {
                vx = lam1 - cyy;
                vy = cxy;
                n = std::sqrt(vx * vx + vy * vy);
            }
            if (n > 0 && std::isfinite(n)) {
                out.ax = vx / n;
                out.ay = vy / n;
                double ratio = lam2 > 0 ? lam1 / lam2 : 1e18;
                // negative a elongates the influence region along the axis
                out.aniso =
                    std::clamp(-0.5 * std::log(ratio), cfg.aniso_min, cfg.aniso_max);
                fallback = false;
            }
        }
    }
    if (fallback) {
        double gx = 0, gy = 0;
        local_sobel(target, static_cast<int>(std::lround(parent.x)),
                    static_cast<int>(std::lround(parent.y)), gx, gy);
        double n = std::sqrt(gx * gx + gy * gy);
        if (n > 1e-12) {
            out.ax = gx / n;
            out.ay = gy / n;
        }
        out.aniso = std::clamp(0.8 * parent.aniso, cfg.aniso_min, cfg.aniso_max);
    }
    return out;
}

} // namespace

int densify(SiteStore& st, AdamState& adam, const StatsResult& stats, const ImageBuffer& target,
            double percentile, const TrainConfig& cfg) {
    if (stats.site.size() != st.size()) throw std::invalid_argument("densify: stats size mismatch");
    if (percentile <= 0) return 0;
    if (percentile > 1) throw std::invalid_argument("densify: percentile out of (0,1]");

    std::vector<uint32_t> elig;
    for (uint32_t id = 0; id < st.size(); id++)
        if (st.active[id] && !st.frozen[id] && stats.site[id].mass > 1.0) elig.push_back(id);
    int want = static_cast<int>(static_cast<double>(elig.size()) * percentile);
    if (want < 1) return 0;

    std::sort(elig.begin(), elig.end(), [&](uint32_t a, uint32_t b) {
        double sa = densify_score(stats.site[a], cfg.alpha, cfg.stats_eps);
        double sb = densify_score(stats.site[b], cfg.alpha, cfg.stats_eps);
        return sa > sb || (sa == sb && a < b);
    });

    std::vector<uint32_t> free_slots;
    for (uint32_t id = 0; id < st.size(); id++)
        if (!st.active[id]) free_slots.push_back(id);
    size_t next_free = 0;

    int done = 0;
    for (int i = 0; i < want; i++) {
        uint32_t p = elig[i];
        bool have_slot = next_free < free_slots.size();
        if (!have_slot && cfg.max_sites > 0 && st.size() >= cfg.max_sites) break;

        const SiteStats& s = stats.site[p];
        Site parent = st.get(p);
        SplitAxis ax = split_axis(s, parent, target, cfg);
        double mag = std::clamp(0.5 * std::sqrt(std::max(s.mass, 0.0)), 1.5, 48.0);

        Site child = parent;
        child.log_tau = std::max(parent.log_tau - 0.25, cfg.log_tau_min);
        child.radius = std::max(parent.radius * 0.85, cfg.radius_min);
        child.aniso = ax.aniso;
        child.dir[0] = ax.ax;
        child.dir[1] = ax.ay;

        for (int side = 0; side < 2; side++) {
            Site c = child;
            double sgn = side == 0 ? 1.0 : -1.0;
            c.x = std::clamp(parent.x + sgn * ax.ax * mag, 0.0, target.width - 1.0);
            c.y = std::clamp(parent.y + sgn * ax.ay * mag, 0.0, target.height - 1.0);
            int cx = static_cast<int>(std::lround(c.x));
            int cy = static_cast<int>(std::lround(c.y));
            const double* col = target.at(cx, cy);
            for (int ch = 0; ch < 3; ch++) c.color[ch] = col[ch];
            uint32_t slot;
            if (side == 0) {
                slot = p;
                st.set(slot, c);
            } else if (have_slot) {
                slot = free_slots[next_free++];
                st.set(slot, c);
            } else {
                slot = st.append(c);
            }
            adam.zero_site(slot);
        }
        done++;
    }
    return done;
}

int prune(SiteStore& st, const StatsResult& stats, double percentile) {
    if (stats.site.size() != st.size()) throw std::invalid_argument("prune: stats size mismatch");
    if (percentile <= 0) return 0;
    if (percentile > 1) throw std::invalid_argument("prune: percentile out of (0,1]");

    std::vector<uint32_t> elig;
    for (uint32_t id = 0; id < st.size(); id++)
        if (st.active[id] && !st.frozen[id]) elig.push_back(id);
    int want = static_cast<int>(static_cast<double>(elig.size()) * percentile);
    if (want < 1) return 0;

    double norm = static_cast<double>(std::max<size_t>(stats.valid_pixels, 1));
    std::sort(elig.begin(), elig.end(), [&](uint32_t a, uint32_t b) {
        double sa = stats.site[a].removal / norm;
        double sb = stats.site[b].removal / norm;
        return sa < sb || (sa == sb && a < b);
    });
    for (int i = 0; i < want; i++) st.deactivate(elig[i]);
    return want;
}

size_t bpp_target_count(double bpp, int width, int height) {
    if (bpp < 0 || width < 1 || height < 1) throw std::invalid_argument("bpp target: bad inputs");
    return static_cast<size_t>(bpp * static_cast<double>(width) * height / 128.0);
}

int simulate_schedule(int n0, double scale, const TrainConfig& cfg) {
    int n = n0;
    for (int t = 1; t <= cfg.iters; t++) {
        bool ev_d = t >= cfg.densify_start && t <= cfg.densify_end && t % cfg.densify_every == 0;
        bool ev_p = t >= cfg.prune_start && t <= cfg.prune_end && t % cfg.prune_every == 0;
        if (ev_p && !cfg.prune_during_densify && t <= cfg.densify_end) ev_p = false;
        // prune before densify, matching the event order inside a fit step
        if (ev_p) {
            int p = static_cast<int>(n * cfg.prune_pct * scale);
            if (p >= n) p = n - 1;
            if (p > 0) n -= p;
        }
        if (ev_d) {
            int d = static_cast<int>(n * cfg.densify_pct * scale);
            if (cfg.max_sites > 0 && static_cast<size_t>(n + d) > cfg.max_sites)
                d = static_cast<int>(cfg.max_sites) - n;
            if (d > 0) n += d;
        }
    }
    return n;
}

double plan_schedule(int n0, size_t target, const TrainConfig& cfg) {
    double cap = cfg.budget_scale_cap;
    double tgt = static_cast<double>(target);
    int min_f = n0, max_f = n0;
    auto miss = [&](double s) {
        int fin = simulate_schedule(n0, s, cfg);
        min_f = std::min(min_f, fin);
        max_f = std::max(max_f, fin);
        return std::abs(static_cast<double>(fin) - tgt);
    };
    // coarse grid, then a fine sweep around the winner; the objective is a
    // step function, so gradient-free search is the honest option
    double best_s = 0, best_m = miss(0);
    const int kCoarse = 96;
    for (int i = 1; i <= kCoarse; i++) {
        double s = cap * i / kCoarse;
        double m = miss(s);
        if (m < best_m) {
            best_m = m;
            best_s = s;
        }
    }
    double lo = std::max(0.0, best_s - cap / kCoarse);
    double hi = std::min(cap, best_s + cap / kCoarse);
    const int kFine = 256;
    for (int i = 0; i <= kFine; i++) {
        double s = lo + (hi - lo) * i / kFine;
        double m = miss(s);
        if (m < best_m) {
            best_m = m;
            best_s = s;
        }
    }
    if (tgt < min_f || tgt > max_f) {
        std::fprintf(stderr,
                     "schedule: target %zu outside reachable range [%d, %d], using scale cap\n",
                     target, min_f, max_f);
        return cap;
    }
    return best_s;
}

} // namespace sad
