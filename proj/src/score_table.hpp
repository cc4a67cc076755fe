#pragma once
#include "sad/score.hpp"
#include "sad/types.hpp"

#include <cmath>
#include <vector>

namespace sad {

// Flat per-site scoring snapshot, shared by propagation, rendering and the
// exact oracle so every path ranks candidates with bit-identical arithmetic
// for a given precision T. Coefficients are derived in double, then cast.
// With packed=true the geometric params first round-trip through IEEE half,
// reproducing the compact snapshot the candidate kernel scores from.
template <typename T>
struct ScoreTable {
    std::vector<T> x, y, tau, r, gxx, gxy, gyy;
    T s = T(1);

    void build(const SiteStore& st, double scale, bool packed = false) {
        size_t n = st.size();
        x.resize(n); y.resize(n); tau.resize(n); r.resize(n);
        gxx.resize(n); gxy.resize(n); gyy.resize(n);
        s = static_cast<T>(scale);
        for (size_t i = 0; i < n; i++) {
            if (!st.active[i]) {
                x[i] = y[i] = tau[i] = r[i] = T(0);
                gxx[i] = gyy[i] = T(1);
                gxy[i] = T(0);
                continue;
            }
            Site site = st.get(i);
            if (packed) site = half_packed(site);
            double ea = std::exp(site.aniso);
            double ia = std::exp(-site.aniso);
            double ux = site.dir[0], uy = site.dir[1];
            double vx = -uy, vy = ux;
            x[i] = static_cast<T>(site.x);
            y[i] = static_cast<T>(site.y);
            tau[i] = static_cast<T>(std::exp(site.log_tau));
            r[i] = static_cast<T>(site.radius);
            gxx[i] = static_cast<T>(ea * ux * ux + ia * vx * vx);
            gxy[i] = static_cast<T>(ea * ux * uy + ia * vx * vy);
            gyy[i] = static_cast<T>(ea * uy * uy + ia * vy * vy);
        }
    }

    T logit(T px, T py, uint32_t id) const {
        T dx = px - x[id], dy = py - y[id];
        T q = gxx[id] * dx * dx + T(2) * gxy[id] * dx * dy + gyy[id] * dy * dy;
        if (q < T(0)) q = T(0);
        T d = std::sqrt(q) * s - r[id] * s;
        return -tau[id] * d;
    }
};

// Bounded top-k selector ordered by (logit desc, id asc). Caller feeds
// distinct ids; the resulting set is independent of feed order because the
// ordering is a strict total order.
template <typename T, int MaxK = 16>
struct TopK {
    int k = 8;
    int n = 0;
    uint32_t id[MaxK];
    T lg[MaxK];

    void consider(uint32_t cand, T logit) {
        int pos = n;
        while (pos > 0 && (logit > lg[pos - 1] || (logit == lg[pos - 1] && cand < id[pos - 1])))
            pos--;
        if (pos >= k) return;
        int last = n < k ? n : k - 1;
        for (int i = last; i > pos; i--) {
            id[i] = id[i - 1];
            lg[i] = lg[i - 1];
        }
        id[pos] = cand;
        lg[pos] = logit;
        if (n < k) n++;
    }
};

} // namespace sad
