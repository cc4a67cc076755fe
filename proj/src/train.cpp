#include "sad/train.hpp"

#include "sad/accum.hpp"
#include "sad/budget.hpp"
#include "sad/candidates.hpp"
#include "sad/quality.hpp"
#include "sad/render.hpp"
#include "sad/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <utility>

namespace sad {

void AdamState::resize(size_t n_sites) {
    m.resize(n_sites * kGradSlots, 0.0);
    v.resize(n_sites * kGradSlots, 0.0);
}

void AdamState::zero_site(uint32_t id) {
    if (static_cast<size_t>(id) >= sites()) resize(id + 1);
    for (int s = 0; s < kGradSlots; s++) {
        m[static_cast<size_t>(id) * kGradSlots + s] = 0.0;
        v[static_cast<size_t>(id) * kGradSlots + s] = 0.0;
    }
}

std::vector<double> sobel_magnitude(const ImageBuffer& img) {
    int w = img.width, h = img.height;
    std::vector<double> luma(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            const double* p = img.at(x, y);
            luma[static_cast<size_t>(y) * w + x] =
                0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2];
        }
    auto at = [&](int x, int y) {
        x = std::clamp(x, 0, w - 1);
        y = std::clamp(y, 0, h - 1);
        return luma[static_cast<size_t>(y) * w + x];
    };
    std::vector<double> mag(luma.size());
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            mag[static_cast<size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
        }
    return mag;
}

void init_sites(SiteStore& st, const ImageBuffer& target, int n, const TrainConfig& cfg) {
    int w = target.width, h = target.height;
    size_t npx = static_cast<size_t>(w) * h;
    if (n < 1 || static_cast<size_t>(n) > npx)
        throw std::invalid_argument("init_sites: count out of range");

    std::vector<double> grad = sobel_magnitude(target);
    Accum total;
    for (double g : grad) total.add(g);
    double gsum = total.value();
    double lambda = cfg.lambda_init;
    if (gsum <= 0) lambda = 1.0; // flat image: mixture degenerates to uniform

    // weighted sampling without replacement via exponential keys:
    // larger log(u)/w wins, so every pixel keeps a positive chance
    double uni = 1.0 / static_cast<double>(npx);
    RngState key_rng = seeded_stream(cfg.seed, 0x1717, 0);
    std::vector<double> key(npx);
    for (size_t i = 0; i < npx; i++) {
        double wgt = lambda * uni + (gsum > 0 ? (1.0 - lambda) * grad[i] / gsum : 0.0);
        if (wgt < 1e-300) wgt = 1e-300;
        double u = key_rng.next_unit();
        if (u < 1e-12) u = 1e-12;
        key[i] = std::log(u) / wgt;
    }
    std::vector<uint32_t> order(npx);
    for (size_t i = 0; i < npx; i++) order[i] = static_cast<uint32_t>(i);
    auto better = [&](uint32_t a, uint32_t b) {
        return key[a] > key[b] || (key[a] == key[b] && a < b);
    };
    std::nth_element(order.begin(), order.begin() + n, order.end(), better);
    order.resize(n);
    std::sort(order.begin(), order.end()); // stable ID assignment in raster order

    st.clear();
    double radius0 = cfg.init_radius > 0
                         ? cfg.init_radius
                         : std::sqrt(static_cast<double>(w) * h / static_cast<double>(n));
    RngState off_rng = seeded_stream(cfg.seed, 0x1717, 1);
    for (uint32_t cell : order) {
        int cx = static_cast<int>(cell % static_cast<uint32_t>(w));
        int cy = static_cast<int>(cell / static_cast<uint32_t>(w));
        Site s;
        s.x = std::min(cx + 0.25 + 0.5 * off_rng.next_unit(), w - 1.0);
        s.y = std::min(cy + 0.25 + 0.5 * off_rng.next_unit(), h - 1.0);
        s.log_tau = cfg.init_log_tau;
        s.radius = radius0;
        s.aniso = cfg.init_aniso;
        const double* c = target.at(cx, cy);
        for (int ch = 0; ch < 3; ch++) s.color[ch] = c[ch];
        st.append(s);
    }
}

void clamp_project(SiteStore& st, int width, int height, const TrainConfig& cfg) {
    for (size_t i = 0; i < st.size(); i++) {
        if (!st.active[i] || st.frozen[i]) continue;
        st.x[i] = std::min(std::max(st.x[i], 0.0), width - 1.0);
        st.y[i] = std::min(std::max(st.y[i], 0.0), height - 1.0);
        st.log_tau[i] = std::min(std::max(st.log_tau[i], cfg.log_tau_min), cfg.log_tau_max);
        st.radius[i] = std::min(std::max(st.radius[i], cfg.radius_min), cfg.radius_max);
        st.aniso[i] = std::min(std::max(st.aniso[i], cfg.aniso_min), cfg.aniso_max);
        if (cfg.clamp_color) {
            st.col_r[i] = std::min(std::max(st.col_r[i], 0.0), 1.0);
            st.col_g[i] = std::min(std::max(st.col_g[i], 0.0), 1.0);
            st.col_b[i] = std::min(std::max(st.col_b[i], 0.0), 1.0);
        }
        double nx = st.dir_x[i], ny = st.dir_y[i];
        double norm = std::sqrt(nx * nx + ny * ny);
        if (!(norm > 1e-12) || !std::isfinite(norm)) {
            st.dir_x[i] = 1.0;
            st.dir_y[i] = 0.0;
        } else {
            st.dir_x[i] = nx / norm;
            st.dir_y[i] = ny / norm;
        }
    }
    st.bump();
}

void adam_step(SiteStore& st, const GradBuffer& g, AdamState& a, int width, int height,
               const TrainConfig& cfg) {
    if (g.size() != st.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
    if (a.sites() != st.size()) a.resize(st.size());
    a.t++;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(a.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(a.t));
    const double lrs[kGradSlots] = {cfg.lr.pos,   cfg.lr.pos,   cfg.lr.log_tau, cfg.lr.radius,
                                    cfg.lr.color, cfg.lr.color, cfg.lr.color,   cfg.lr.dir,
                                    cfg.lr.dir,   cfg.lr.aniso};
    for (size_t id = 0; id < st.size(); id++) {
        if (!st.active[id] || st.frozen[id]) continue;
        double* params[kGradSlots] = {&st.x[id],     &st.y[id],     &st.log_tau[id],
                                      &st.radius[id], &st.col_r[id], &st.col_g[id],
                                      &st.col_b[id],  &st.dir_x[id], &st.dir_y[id],
                                      &st.aniso[id]};
        for (int slot = 0; slot < kGradSlots; slot++) {
            double gv = g.grad(slot, static_cast<uint32_t>(id));
            if (!std::isfinite(gv)) {
                a.skipped++;
                continue;
            }
            size_t mi = id * kGradSlots + static_cast<size_t>(slot);
            double m = a.m[mi] = cfg.beta1 * a.m[mi] + (1.0 - cfg.beta1) * gv;
            double v = a.v[mi] = cfg.beta2 * a.v[mi] + (1.0 - cfg.beta2) * gv * gv;
            *params[slot] -= lrs[slot] * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        }
    }
    st.bump();
    clamp_project(st, width, height, cfg);
}

void tau_diffusion(const SiteStore& st, const CandidateField& field, double lambda, GradBuffer& g,
                   const RunOpts& opts) {
    if (lambda == 0) return;
    if (lambda < 0 || lambda > 1) throw std::invalid_argument("tau_diffusion: lambda out of [0,1]");
    if (g.size() != st.size()) throw std::invalid_argument("tau_diffusion: size mismatch");

    std::vector<uint32_t> owner = render_id_map(st, field, opts);
    std::vector<std::pair<uint32_t, uint32_t>> edges;
    edges.reserve(owner.size() * 2);
    for (int py = 0; py < field.height; py++) {
        for (int px = 0; px < field.width; px++) {
            uint32_t o = owner[static_cast<size_t>(py) * field.width + px];
            const uint32_t* lst = field.slot(field.cell_x(px), field.cell_y(py));
            for (int i = 0; i < field.k; i++) {
                uint32_t id = lst[i];
                if (id == CandidateField::kEmpty) break;
                if (!st.active[id]) continue;
                edges.emplace_back(o, id);
            }
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    std::vector<double> g0(st.size());
    for (size_t i = 0; i < st.size(); i++) g0[i] = g.grad(kGradLogTau, static_cast<uint32_t>(i));

    size_t e = 0;
    while (e < edges.size()) {
        uint32_t o = edges[e].first;
        double sum = 0;
        int cnt = 0;
        while (e < edges.size() && edges[e].first == o) {
            sum += g0[edges[e].second];
            cnt++;
            e++;
        }
        double mixed = (1.0 - lambda) * g0[o] + lambda * (sum / cnt);
        Accum& acc = g.at(kGradLogTau, o);
        acc.reset();
        acc.add(mixed);
    }
}

namespace {

// Extra step-1 passes after a re-seeding flood; enough for lists to settle
// around freshly inserted sites before the next optimizer step.
constexpr int kEventRefreshPasses = 4;

FitResult fit_impl(SiteStore st, const ImageBuffer& target, TrainConfig cfg) {
    int w = target.width, h = target.height;
    cfg.validate(w, h);
    RunOpts opts = run_opts(cfg);
    bool budget_on = cfg.target_bpp > 0;

    FitResult out;
    double scale = 1.0;
    if (budget_on) {
        size_t want = bpp_target_count(cfg.target_bpp, w, h);
        scale = plan_schedule(static_cast<int>(st.active_count()), want, cfg);
        out.schedule_scale = scale;
    }

    AdamState adam;
    adam.resize(st.size());
    CandidateField field;
    field.resize(w, h, cfg.k);
    refresh(st, field, RefreshMode::Full, kEventRefreshPasses, cfg.inject, cfg.seed, opts);

    GradBuffer gb;
    out.history.reserve(static_cast<size_t>(cfg.iters));
    for (int t = 1; t <= cfg.iters; t++) {
        auto tick = std::chrono::steady_clock::now();
        if ((t - 1) % cfg.refresh_every == 0)
            refresh(st, field, RefreshMode::WarmStart, cfg.refresh_passes, cfg.inject, cfg.seed,
                    opts);

        double loss = backward_image(st, field, target, gb, opts, false);
        if (!std::isfinite(loss)) throw numeric_error("fit: non-finite loss");
        if (cfg.tau_diffusion_lambda > 0)
            tau_diffusion(st, field, cfg.tau_diffusion_lambda, gb, opts);

        bool ev_d = budget_on && t >= cfg.densify_start && t <= cfg.densify_end &&
                    t % cfg.densify_every == 0;
        bool ev_p = budget_on && t >= cfg.prune_start && t <= cfg.prune_end &&
                    t % cfg.prune_every == 0;
        if (ev_p && !cfg.prune_during_densify && t <= cfg.densify_end) ev_p = false;
        StatsResult stats;
        if (ev_d || ev_p) stats = accumulate_stats(st, field, target, opts);

        adam_step(st, gb, adam, w, h, cfg);

        // prune first: densify appends slots the stats snapshot has no rows
        // for, and freed slots are prime split destinations
        if (ev_p) prune(st, stats, cfg.prune_pct * scale);
        if (ev_d) densify(st, adam, stats, target, cfg.densify_pct * scale, cfg);
        if (ev_d || ev_p) {
            adam.resize(st.size());
            refresh(st, field, RefreshMode::Full, kEventRefreshPasses, cfg.inject, cfg.seed, opts);
        } else {
            // parameters moved but the lists are constants of the objective;
            // the next warm refresh re-ranks them
            field.synced_generation = st.generation;
        }

        HistoryRow row;
        row.iter = t;
        row.loss = loss;
        row.psnr = psnr_from_loss(loss);
        row.active_sites = static_cast<int>(st.active_count());
        row.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tick)
                     .count();
        out.history.push_back(row);
    }

    refresh(st, field, RefreshMode::Full, cfg.final_passes, cfg.inject, cfg.seed, opts);
    out.sites = std::move(st);
    out.field = std::move(field);
    return out;
}

} // namespace

FitResult fit(const ImageBuffer& target, const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.validate(target.width, target.height);
    int n = c.n_sites;
    if (n == 0 && c.target_bpp > 0) {
        // start above the target; the schedule's net drift is downward
        size_t want = bpp_target_count(c.target_bpp, target.width, target.height);
        if (want < 1) throw std::invalid_argument("fit: bpp target below one site");
        size_t n0 = static_cast<size_t>(std::ceil(static_cast<double>(want) * 1.6));
        size_t cap = static_cast<size_t>(target.width) * target.height;
        n = static_cast<int>(std::min(n0, cap));
    }
    if (n < 1) throw std::invalid_argument("fit: site count unset");
    SiteStore st;
    init_sites(st, target, n, c);
    return fit_impl(std::move(st), target, c);
}

FitResult fit_store(SiteStore st, const ImageBuffer& target, const TrainConfig& cfg) {
    return fit_impl(std::move(st), target, cfg);
}

std::string history_line(const HistoryRow& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d", r.iter, r.loss, r.psnr, r.active_sites);
    return buf;
}

void write_history_csv(const std::vector<HistoryRow>& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("history: cannot open " + path);
    out << "iter,loss,psnr,active_sites,ms\n";
    char buf[64];
    for (const HistoryRow& r : history) {
        out << history_line(r);
        std::snprintf(buf, sizeof buf, ",%.17g\n", r.ms);
        out << buf;
    }
    if (!out) throw std::runtime_error("history: write failed");
}

} // namespace sad
