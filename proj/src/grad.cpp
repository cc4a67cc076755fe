#include "sad/grad.hpp"

#include "sad/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace sad {

void GradBuffer::resize(size_t n) {
    n_ = n;
    acc_.assign(n * kChannels, Accum{});
    nonfinite = 0;
}

void GradBuffer::reset() {
    for (auto& a : acc_) a.reset();
    nonfinite = 0;
}

void GradBuffer::add(uint32_t id, const double c[kChannels]) {
    Accum* row = &acc_[static_cast<size_t>(id) * kChannels];
    for (int t = 0; t < kChannels; t++) row[t].add(c[t]);
}

void GradBuffer::add_accum(uint32_t id, const Accum* acc) {
    Accum* row = &acc_[static_cast<size_t>(id) * kChannels];
    for (int t = 0; t < kChannels; t++) row[t].add(acc[t]);
}

void GradBuffer::merge(const GradBuffer& o) {
    if (o.n_ != n_) throw std::invalid_argument("GradBuffer::merge: size mismatch");
    for (size_t i = 0; i < acc_.size(); i++) acc_[i].add(o.acc_[i]);
    nonfinite += o.nonfinite;
}

void TileReducer::begin_tile() { cur_stamp_++; }

void TileReducer::add(uint32_t site, const double c[kChannels]) {
    uint32_t h = tile_hash(site);
    for (int p = 0; p < kMaxProbes; p++) {
        Slot& s = table_[(h + p) & (kTableSize - 1)];
        if (s.stamp != cur_stamp_) {
            s.stamp = cur_stamp_;
            s.key = site;
            for (int t = 0; t < kChannels; t++) s.acc[t].reset();
            for (int t = 0; t < kChannels; t++) s.acc[t].add(c[t]);
            return;
        }
        if (s.key == site) {
            for (int t = 0; t < kChannels; t++) s.acc[t].add(c[t]);
            return;
        }
    }
    overflow_++;
    out_.add(site, c);
}

void TileReducer::end_tile() {
    for (int i = 0; i < kTableSize; i++) {
        const Slot& s = table_[i];
        if (s.stamp == cur_stamp_) out_.add_accum(s.key, s.acc);
    }
}

namespace {

constexpr int kTile = 16;

void check_synced(const SiteStore& sites, const CandidateField& field) {
    if (field.synced_generation != sites.generation)
        throw std::invalid_argument("candidate field is stale for this store");
    if (field.gw < 1 || field.gh < 1) throw std::invalid_argument("candidate field not sized");
}

// Per-site constants for the backward pass. Derived in double, cast to T;
// the logit here uses the factored form (along/across projections) because
// the derivatives need those projections anyway.
template <typename T>
struct GradTable {
    std::vector<T> x, y, tau, r, ea, ia, ux, uy, cr, cg, cb;
    T s = T(1);

    void build(const SiteStore& st, double scale) {
        size_t n = st.size();
        x.resize(n); y.resize(n); tau.resize(n); r.resize(n);
        ea.resize(n); ia.resize(n); ux.resize(n); uy.resize(n);
        cr.resize(n); cg.resize(n); cb.resize(n);
        s = static_cast<T>(scale);
        for (size_t i = 0; i < n; i++) {
            if (!st.active[i]) {
                x[i] = y[i] = tau[i] = r[i] = T(0);
                ea[i] = ia[i] = T(1);
                ux[i] = T(1); uy[i] = T(0);
                cr[i] = cg[i] = cb[i] = T(0);
                continue;
            }
            x[i] = static_cast<T>(st.x[i]);
            y[i] = static_cast<T>(st.y[i]);
            tau[i] = static_cast<T>(std::exp(st.log_tau[i]));
            r[i] = static_cast<T>(st.radius[i]);
            ea[i] = static_cast<T>(std::exp(st.aniso[i]));
            ia[i] = static_cast<T>(std::exp(-st.aniso[i]));
            ux[i] = static_cast<T>(st.dir_x[i]);
            uy[i] = static_cast<T>(st.dir_y[i]);
            cr[i] = static_cast<T>(st.col_r[i]);
            cg[i] = static_cast<T>(st.col_g[i]);
            cb[i] = static_cast<T>(st.col_b[i]);
        }
    }
};

// Emits the eleven contribution components for every candidate of one pixel.
// Geometry gradients vanish when the pixel sits on a site center (the mixed
// distance is not differentiable there). Every emitted component is scrubbed
// to zero if nonfinite, so downstream sums stay usable.
template <typename T, typename Sink>
inline void pixel_pass(const GradTable<T>& tb, const SiteStore& sites, const CandidateField& field,
                       const ImageBuffer* target, const ImageBuffer* pixgrad, bool with_removal,
                       T inv_hw2, int px, int py, Accum& loss_acc, size_t& nonfinite, bool& empty,
                       Sink&& sink) {
    constexpr T kTiny = sizeof(T) == 8 ? T(1e-18) : T(1e-12);
    const uint32_t* lst = field.slot(field.cell_x(px), field.cell_y(py));
    uint32_t ids[16];
    T dxs[16], dys[16], ud[16], vd[16], nrm[16], lg[16], w[16];
    int n = 0;
    T best = T(0);
    T fx = static_cast<T>(px), fy = static_cast<T>(py);
    for (int i = 0; i < field.k; i++) {
        uint32_t id = lst[i];
        if (id == CandidateField::kEmpty) break;
        if (!sites.active[id]) continue;
        T dx = fx - tb.x[id], dy = fy - tb.y[id];
        T a = tb.ux[id] * dx + tb.uy[id] * dy;
        T b = tb.ux[id] * dy - tb.uy[id] * dx;
        T q = tb.ea[id] * a * a + tb.ia[id] * b * b;
        if (q < T(0)) q = T(0);
        T m = std::sqrt(q);
        T l = -tb.tau[id] * (m * tb.s - tb.r[id] * tb.s);
        if (!std::isfinite(static_cast<double>(l))) continue;
        ids[n] = id;
        dxs[n] = dx;
        dys[n] = dy;
        ud[n] = a;
        vd[n] = b;
        nrm[n] = m;
        lg[n] = l;
        if (n == 0 || l > best) best = l;
        n++;
    }
    if (n == 0) {
        empty = true;
        return;
    }
    T wsum = T(0);
    for (int i = 0; i < n; i++) {
        w[i] = std::exp(lg[i] - best);
        wsum += w[i];
    }
    T invw = T(1) / wsum;
    for (int i = 0; i < n; i++) w[i] *= invw;

    T ch[3] = {T(0), T(0), T(0)};
    for (int i = 0; i < n; i++) {
        ch[0] += w[i] * tb.cr[ids[i]];
        ch[1] += w[i] * tb.cg[ids[i]];
        ch[2] += w[i] * tb.cb[ids[i]];
    }

    T g[3];
    T tgt[3] = {T(0), T(0), T(0)};
    T pl = T(0);
    if (target) {
        const double* tp = target->at(px, py);
        for (int c = 0; c < 3; c++) tgt[c] = static_cast<T>(tp[c]);
        T e0 = ch[0] - tgt[0], e1 = ch[1] - tgt[1], e2 = ch[2] - tgt[2];
        pl = e0 * e0 + e1 * e1 + e2 * e2;
        double plv = static_cast<double>(pl);
        if (!std::isfinite(plv)) {
            nonfinite++;
            plv = 0;
        }
        loss_acc.add(plv);
        g[0] = inv_hw2 * e0;
        g[1] = inv_hw2 * e1;
        g[2] = inv_hw2 * e2;
    } else {
        const double* gp = pixgrad->at(px, py);
        for (int c = 0; c < 3; c++) g[c] = static_cast<T>(gp[c]);
    }

    for (int i = 0; i < n; i++) {
        uint32_t id = ids[i];
        T dc0 = tb.cr[id] - ch[0], dc1 = tb.cg[id] - ch[1], dc2 = tb.cb[id] - ch[2];
        T A = w[i] * (g[0] * dc0 + g[1] * dc1 + g[2] * dc2);
        T ts = tb.tau[id] * tb.s;
        double c[kChannels];
        c[kGradColR] = static_cast<double>(w[i] * g[0]);
        c[kGradColG] = static_cast<double>(w[i] * g[1]);
        c[kGradColB] = static_cast<double>(w[i] * g[2]);
        c[kGradLogTau] = static_cast<double>(A * lg[i]);
        c[kGradRadius] = static_cast<double>(A * ts);
        if (nrm[i] > kTiny) {
            T inv_n = T(1) / nrm[i];
            T eau = tb.ea[id] * ud[i];
            T iav = tb.ia[id] * vd[i];
            T coef = A * ts * inv_n;
            c[kGradX] = static_cast<double>(coef * (eau * tb.ux[id] - iav * tb.uy[id]));
            c[kGradY] = static_cast<double>(coef * (eau * tb.uy[id] + iav * tb.ux[id]));
            c[kGradDirX] = static_cast<double>(-coef * (eau * dxs[i] + iav * dys[i]));
            c[kGradDirY] = static_cast<double>(-coef * (eau * dys[i] - iav * dxs[i]));
            c[kGradAniso] =
                static_cast<double>(-A * ts * T(0.5) * inv_n * (eau * ud[i] - iav * vd[i]));
        } else {
            c[kGradX] = c[kGradY] = 0;
            c[kGradDirX] = c[kGradDirY] = 0;
            c[kGradAniso] = 0;
        }
        if (target && with_removal) {
            if (w[i] >= T(1) - T(1e-6)) {
                c[kGradSlots] = kRemovalSaturated;
            } else {
                T inv_rest = T(1) / (T(1) - w[i]);
                T r0 = (ch[0] - w[i] * tb.cr[id]) * inv_rest - tgt[0];
                T r1 = (ch[1] - w[i] * tb.cg[id]) * inv_rest - tgt[1];
                T r2 = (ch[2] - w[i] * tb.cb[id]) * inv_rest - tgt[2];
                c[kGradSlots] = static_cast<double>(r0 * r0 + r1 * r1 + r2 * r2 - pl);
            }
        } else {
            c[kGradSlots] = 0;
        }
        for (int t = 0; t < kChannels; t++) {
            if (!std::isfinite(c[t])) {
                c[t] = 0;
                nonfinite++;
            }
        }
        sink(id, c);
    }
}

template <typename T>
double backward_impl(const SiteStore& sites, const CandidateField& field,
                     const ImageBuffer* target, const ImageBuffer* pixgrad, GradBuffer& out,
                     const RunOpts& opts, bool with_removal) {
    check_synced(sites, field);
    GradTable<T> tb;
    tb.build(sites, normalization_scale(field.width, field.height));
    T inv_hw2 = static_cast<T>(2.0 / (static_cast<double>(field.width) * field.height));
    int tiles_x = (field.width + kTile - 1) / kTile;
    int tiles_y = (field.height + kTile - 1) / kTile;
    int nt = worker_count(tiles_y, opts.threads);

    out.resize(sites.size());
    std::vector<GradBuffer> bufs(nt);
    for (auto& b : bufs) b.resize(sites.size());
    std::vector<Accum> loss(nt);
    std::vector<char> empty(nt, 0);

    run_stripes_workers(tiles_y, opts.threads, [&](int wk, int tyi) {
        GradBuffer& buf = bufs[wk];
        TileReducer red(buf);
        bool emp = false;
        int y0 = tyi * kTile;
        int y1 = y0 + kTile < field.height ? y0 + kTile : field.height;
        for (int txi = 0; txi < tiles_x; txi++) {
            int x0 = txi * kTile;
            int x1 = x0 + kTile < field.width ? x0 + kTile : field.width;
            red.begin_tile();
            for (int py = y0; py < y1; py++) {
                for (int px = x0; px < x1; px++) {
                    pixel_pass(tb, sites, field, target, pixgrad, with_removal, inv_hw2, px, py,
                               loss[wk], buf.nonfinite, emp,
                               [&](uint32_t id, const double* c) { red.add(id, c); });
                }
            }
            red.end_tile();
        }
        if (emp) empty[wk] = 1;
    });

    for (int w = 0; w < nt; w++) {
        if (empty[w]) throw std::invalid_argument("backward: empty candidate list at a pixel");
        out.merge(bufs[w]);
    }
    Accum total;
    for (int w = 0; w < nt; w++) total.add(loss[w]);
    return total.value() / (static_cast<double>(field.width) * field.height);
}

template <typename T>
double loss_impl(const SiteStore& sites, const CandidateField& field, const ImageBuffer& target,
                 const RunOpts& opts) {
    check_synced(sites, field);
    GradTable<T> tb;
    tb.build(sites, normalization_scale(field.width, field.height));
    int stripes = opts.threads > 1 ? opts.threads * 4 : 1;
    if (stripes > field.height) stripes = field.height;
    std::vector<Accum> loss(stripes);
    std::vector<char> empty(stripes, 0);
    run_stripes(stripes, opts.threads, [&](int sidx) {
        int rb = static_cast<int>(static_cast<int64_t>(field.height) * sidx / stripes);
        int re = static_cast<int>(static_cast<int64_t>(field.height) * (sidx + 1) / stripes);
        for (int py = rb; py < re; py++) {
            for (int px = 0; px < field.width; px++) {
                const uint32_t* lst = field.slot(field.cell_x(px), field.cell_y(py));
                T lg[16], w[16];
                uint32_t ids[16];
                int n = 0;
                T best = T(0);
                T fx = static_cast<T>(px), fy = static_cast<T>(py);
                for (int i = 0; i < field.k; i++) {
                    uint32_t id = lst[i];
                    if (id == CandidateField::kEmpty) break;
                    if (!sites.active[id]) continue;
                    T dx = fx - tb.x[id], dy = fy - tb.y[id];
                    T a = tb.ux[id] * dx + tb.uy[id] * dy;
                    T b = tb.ux[id] * dy - tb.uy[id] * dx;
                    T q = tb.ea[id] * a * a + tb.ia[id] * b * b;
                    if (q < T(0)) q = T(0);
                    T m = std::sqrt(q);
                    T l = -tb.tau[id] * (m * tb.s - tb.r[id] * tb.s);
                    if (!std::isfinite(static_cast<double>(l))) continue;
                    ids[n] = id;
                    lg[n] = l;
                    if (n == 0 || l > best) best = l;
                    n++;
                }
                if (n == 0) {
                    empty[sidx] = 1;
                    continue;
                }
                T wsum = T(0);
                for (int i = 0; i < n; i++) {
                    w[i] = std::exp(lg[i] - best);
                    wsum += w[i];
                }
                T invw = T(1) / wsum;
                T c0 = T(0), c1 = T(0), c2 = T(0);
                for (int i = 0; i < n; i++) {
                    T wi = w[i] * invw;
                    c0 += wi * tb.cr[ids[i]];
                    c1 += wi * tb.cg[ids[i]];
                    c2 += wi * tb.cb[ids[i]];
                }
                const double* tp = target.at(px, py);
                T e0 = c0 - static_cast<T>(tp[0]);
                T e1 = c1 - static_cast<T>(tp[1]);
                T e2 = c2 - static_cast<T>(tp[2]);
                double pl = static_cast<double>(e0 * e0 + e1 * e1 + e2 * e2);
                if (std::isfinite(pl)) loss[sidx].add(pl);
            }
        }
    });
    for (int i = 0; i < stripes; i++)
        if (empty[i]) throw std::invalid_argument("loss: empty candidate list at a pixel");
    Accum total;
    for (int i = 0; i < stripes; i++) total.add(loss[i]);
    return total.value() / (static_cast<double>(field.width) * field.height);
}

} // namespace

double backward_image(const SiteStore& sites, const CandidateField& field,
                      const ImageBuffer& target, GradBuffer& out, const RunOpts& opts,
                      bool with_removal) {
    if (target.width != field.width || target.height != field.height)
        throw std::invalid_argument("backward: target size mismatch");
    if (opts.fp64)
        return backward_impl<double>(sites, field, &target, nullptr, out, opts, with_removal);
    return backward_impl<float>(sites, field, &target, nullptr, out, opts, with_removal);
}

double image_loss(const SiteStore& sites, const CandidateField& field, const ImageBuffer& target,
                  const RunOpts& opts) {
    if (target.width != field.width || target.height != field.height)
        throw std::invalid_argument("loss: target size mismatch");
    if (opts.fp64) return loss_impl<double>(sites, field, target, opts);
    return loss_impl<float>(sites, field, target, opts);
}

void backward_pixel_grad(const SiteStore& sites, const CandidateField& field,
                         const ImageBuffer& dl_dvalue, GradBuffer& out, const RunOpts& opts) {
    if (dl_dvalue.width != field.width || dl_dvalue.height != field.height)
        throw std::invalid_argument("backward: adjoint size mismatch");
    if (opts.fp64)
        backward_impl<double>(sites, field, nullptr, &dl_dvalue, out, opts, false);
    else
        backward_impl<float>(sites, field, nullptr, &dl_dvalue, out, opts, false);
}

void for_each_contribution(const SiteStore& sites, const CandidateField& field,
                           const ImageBuffer& target, bool with_removal,
                           const std::function<void(int px, int py, uint32_t site,
                                                    const double c[kChannels])>& sink) {
    check_synced(sites, field);
    GradTable<double> tb;
    tb.build(sites, normalization_scale(field.width, field.height));
    double inv_hw2 = 2.0 / (static_cast<double>(field.width) * field.height);
    Accum loss;
    size_t nonfinite = 0;
    bool empty = false;
    for (int py = 0; py < field.height; py++) {
        for (int px = 0; px < field.width; px++) {
            pixel_pass(tb, sites, field, &target, nullptr, with_removal, inv_hw2, px, py, loss,
                       nonfinite, empty,
                       [&](uint32_t id, const double* c) { sink(px, py, id, c); });
        }
    }
    if (empty) throw std::invalid_argument("backward: empty candidate list at a pixel");
}

double removal_delta_pixel(const PixelMix& mix, int k_idx, const double c_hat[3],
                           const double site_color[3], const double target[3]) {
    if (k_idx < 0 || k_idx >= mix.n) throw std::invalid_argument("removal_delta_pixel: bad index");
    double w = mix.w[k_idx];
    if (w >= 1.0 - 1e-6) return kRemovalSaturated;
    double base = 0, rem = 0;
    double inv_rest = 1.0 / (1.0 - w);
    for (int c = 0; c < 3; c++) {
        double e = c_hat[c] - target[c];
        base += e * e;
        double r = (c_hat[c] - w * site_color[c]) * inv_rest - target[c];
        rem += r * r;
    }
    return rem - base;
}

} // namespace sad
