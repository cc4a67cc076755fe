#include "sad/render.hpp"

#include "sad/parallel.hpp"
#include "score_table.hpp"

#include <cmath>

namespace sad {
namespace {

void check_synced(const SiteStore& sites, const CandidateField& field) {
    if (field.synced_generation != sites.generation)
        throw std::invalid_argument("candidate field is stale for this store");
    if (field.gw < 1 || field.gh < 1) throw std::invalid_argument("candidate field not sized");
}

// Gathers the valid candidates of a pixel and their softmax weights.
// Returns the count; 0 means the list is empty (invalid field state).
template <typename T>
int mix_at(const ScoreTable<T>& table, const SiteStore& sites, const CandidateField& field,
           int px, int py, uint32_t* ids, T* w) {
    const uint32_t* lst = field.slot(field.cell_x(px), field.cell_y(py));
    T lg[16];
    int n = 0;
    T best = T(0);
    for (int i = 0; i < field.k; i++) {
        uint32_t id = lst[i];
        if (id == CandidateField::kEmpty) break;
        if (!sites.active[id]) continue; // defensive; a synced field holds active IDs
        T l = table.logit(static_cast<T>(px), static_cast<T>(py), id);
        if (!std::isfinite(static_cast<double>(l))) continue;
        ids[n] = id;
        lg[n] = l;
        if (n == 0 || l > best) best = l;
        n++;
    }
    if (n == 0) return 0;
    T sum = T(0);
    for (int i = 0; i < n; i++) {
        w[i] = std::exp(lg[i] - best);
        sum += w[i];
    }
    T inv = T(1) / sum;
    for (int i = 0; i < n; i++) w[i] *= inv;
    return n;
}

template <typename T>
void render_impl(const SiteStore& sites, const CandidateField& field, const RunOpts& opts,
                 ImageBuffer& out) {
    ScoreTable<T> table;
    table.build(sites, normalization_scale(field.width, field.height));
    std::vector<T> cr(sites.size()), cg(sites.size()), cb(sites.size());
    for (size_t i = 0; i < sites.size(); i++) {
        cr[i] = static_cast<T>(sites.col_r[i]);
        cg[i] = static_cast<T>(sites.col_g[i]);
        cb[i] = static_cast<T>(sites.col_b[i]);
    }
    std::atomic<bool> empty_pixel{false};
    int stripes = opts.threads > 1 ? opts.threads * 4 : 1;
    if (stripes > field.height) stripes = field.height;
    run_stripes(stripes, opts.threads, [&](int sidx) {
        int rb = static_cast<int>(static_cast<int64_t>(field.height) * sidx / stripes);
        int re = static_cast<int>(static_cast<int64_t>(field.height) * (sidx + 1) / stripes);
        uint32_t ids[16];
        T w[16];
        for (int py = rb; py < re; py++) {
            for (int px = 0; px < field.width; px++) {
                int n = mix_at(table, sites, field, px, py, ids, w);
                if (n == 0) {
                    empty_pixel.store(true);
                    continue;
                }
                T r = T(0), g = T(0), b = T(0);
                for (int i = 0; i < n; i++) {
                    r += w[i] * cr[ids[i]];
                    g += w[i] * cg[ids[i]];
                    b += w[i] * cb[ids[i]];
                }
                double* px_out = out.at(px, py);
                px_out[0] = r;
                px_out[1] = g;
                px_out[2] = b;
            }
        }
    });
    if (empty_pixel.load())
        throw std::invalid_argument("render: empty candidate list at a pixel");
}

} // namespace

PixelMix pixel_weights(const SiteStore& sites, const CandidateField& field, int px, int py) {
    check_synced(sites, field);
    if (px < 0 || py < 0 || px >= field.width || py >= field.height)
        throw std::invalid_argument("pixel_weights: pixel out of bounds");
    ScoreTable<double> table;
    table.build(sites, normalization_scale(field.width, field.height));
    PixelMix m;
    double w[16];
    m.n = mix_at(table, sites, field, px, py, m.ids, w);
    if (m.n == 0) throw std::invalid_argument("pixel_weights: empty candidate list");
    for (int i = 0; i < m.n; i++) m.w[i] = w[i];
    return m;
}

ImageBuffer render_image(const SiteStore& sites, const CandidateField& field, const RunOpts& opts) {
    check_synced(sites, field);
    ImageBuffer out;
    out.resize(field.width, field.height);
    if (opts.fp64)
        render_impl<double>(sites, field, opts, out);
    else
        render_impl<float>(sites, field, opts, out);
    return out;
}

std::vector<uint32_t> render_id_map(const SiteStore& sites, const CandidateField& field,
                                    const RunOpts& opts) {
    check_synced(sites, field);
    ScoreTable<double> table;
    table.build(sites, normalization_scale(field.width, field.height));
    std::vector<uint32_t> map(static_cast<size_t>(field.width) * field.height,
                              CandidateField::kEmpty);
    int stripes = opts.threads > 1 ? opts.threads * 4 : 1;
    if (stripes > field.height) stripes = field.height;
    run_stripes(stripes, opts.threads, [&](int sidx) {
        int rb = static_cast<int>(static_cast<int64_t>(field.height) * sidx / stripes);
        int re = static_cast<int>(static_cast<int64_t>(field.height) * (sidx + 1) / stripes);
        for (int py = rb; py < re; py++) {
            for (int px = 0; px < field.width; px++) {
                const uint32_t* lst = field.slot(field.cell_x(px), field.cell_y(py));
                uint32_t best = CandidateField::kEmpty;
                double best_l = 0;
                for (int i = 0; i < field.k; i++) {
                    uint32_t id = lst[i];
                    if (id == CandidateField::kEmpty) break;
                    if (!sites.active[id]) continue;
                    double l = table.logit(px, py, id);
                    if (best == CandidateField::kEmpty || l > best_l ||
                        (l == best_l && id < best)) {
                        best = id;
                        best_l = l;
                    }
                }
                map[static_cast<size_t>(py) * field.width + px] = best;
            }
        }
    });
    for (uint32_t v : map)
        if (v == CandidateField::kEmpty)
            throw std::invalid_argument("render: empty candidate list at a pixel");
    return map;
}

std::vector<double> render_tau_map(const SiteStore& sites, const CandidateField& field,
                                   const RunOpts& opts) {
    std::vector<uint32_t> owners = render_id_map(sites, field, opts);
    std::vector<double> out(owners.size());
    for (size_t i = 0; i < owners.size(); i++) out[i] = sites.log_tau[owners[i]];
    return out;
}

std::vector<uint8_t> boundary_map(const std::vector<uint32_t>& id_map, int w, int h) {
    if (id_map.size() != static_cast<size_t>(w) * h)
        throw std::invalid_argument("boundary_map: size mismatch");
    std::vector<uint8_t> out(id_map.size(), 0);
    for (int y = 0; y < h; y++) {
        for (int x = 0; x < w; x++) {
            uint32_t self = id_map[static_cast<size_t>(y) * w + x];
            bool edge = false;
            const int off[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
            for (auto& o : off) {
                int nx = x + o[0], ny = y + o[1];
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                if (id_map[static_cast<size_t>(ny) * w + nx] != self) edge = true;
            }
            out[static_cast<size_t>(y) * w + x] = edge ? 1 : 0;
        }
    }
    return out;
}

} // namespace sad
