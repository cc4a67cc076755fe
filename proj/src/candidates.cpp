#include "sad/candidates.hpp"

#include "sad/parallel.hpp"
#include "sad/rng.hpp"
#include "score_table.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace sad {

uint32_t ceil_log2(uint32_t v) {
    uint32_t e = 0;
    while ((1u << e) < v) e++;
    return e;
}

JumpSchedule JumpSchedule::for_extent(int w, int h) {
    if (w < 1 || h < 1) throw std::invalid_argument("JumpSchedule: empty extent");
    uint32_t m = static_cast<uint32_t>(w > h ? w : h);
    uint32_t b = 1u << ceil_log2(m);
    if (b < 2) b = 2;
    return JumpSchedule{b};
}

uint32_t jump_step(uint32_t t, uint32_t b) {
    if (b < 2 || (b & (b - 1)) != 0) throw std::invalid_argument("jump_step: b must be a power of two >= 2");
    uint32_t lg = ceil_log2(b);
    uint32_t e = (t < lg - 1 ? t : lg - 1) + 1;
    uint32_t s = b >> e;
    return s < 1 ? 1 : s;
}

uint32_t JumpSchedule::step(uint32_t t) const { return jump_step(t, b); }

std::vector<PassSpec> full_refresh_passes(int gw, int gh, int extra_step1) {
    JumpSchedule js = JumpSchedule::for_extent(gw, gh);
    uint32_t m = static_cast<uint32_t>(gw > gh ? gw : gh);
    uint32_t events = ceil_log2(m);
    std::vector<PassSpec> seq;
    seq.reserve(events + extra_step1);
    for (uint32_t t = 0; t < events; t++) seq.push_back({js.step(t), Stencil::Box3});
    for (int i = 0; i < extra_step1; i++) seq.push_back({1, Stencil::Axial});
    return seq;
}

std::vector<PassSpec> schedule_passes(int gw, int gh, int total) {
    JumpSchedule js = JumpSchedule::for_extent(gw, gh);
    uint32_t m = static_cast<uint32_t>(gw > gh ? gw : gh);
    uint32_t events = ceil_log2(m);
    std::vector<PassSpec> seq;
    seq.reserve(total);
    for (int t = 0; t < total; t++) {
        uint32_t tu = static_cast<uint32_t>(t);
        if (tu < events)
            seq.push_back({js.step(tu), Stencil::Box3});
        else
            seq.push_back({1, Stencil::Axial});
    }
    return seq;
}

void jfa_seed(const SiteStore& sites, CandidateField& field) {
    std::fill(field.ids.begin(), field.ids.end(), CandidateField::kEmpty);
    double scale = normalization_scale(field.width, field.height);
    for (uint32_t id : sites.active_ids()) {
        int px = static_cast<int>(std::lround(sites.x[id]));
        int py = static_cast<int>(std::lround(sites.y[id]));
        px = std::clamp(px, 0, field.width - 1);
        py = std::clamp(py, 0, field.height - 1);
        int gx = field.cell_x(px), gy = field.cell_y(py);
        uint32_t* slot = field.slot(gx, gy);
        if (slot[0] == CandidateField::kEmpty) {
            slot[0] = id;
            continue;
        }
        double cx = field.center_x(gx), cy = field.center_y(gy);
        double cur = site_logit(cx, cy, half_packed(sites.get(slot[0])), scale);
        double cand = site_logit(cx, cy, half_packed(sites.get(id)), scale);
        if (cand > cur || (cand == cur && id < slot[0])) slot[0] = id;
    }
    field.synced_generation = sites.generation;
}

namespace {

const int kAxialOff[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
const int kBoxOff[9][2] = {{0, 0}, {1, 0},  {-1, 0}, {0, 1},  {0, -1},
                           {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};

template <typename T>
void propagate_rows(const SiteStore& sites, const ScoreTable<T>& table, CandidateField& field,
                    const std::vector<uint32_t>& prev, std::vector<uint32_t>& next,
                    const PassSpec& pass, int inject, uint64_t seed, uint32_t pass_index,
                    int row_begin, int row_end) {
    const int k = field.k;
    const int gw = field.gw;
    const auto& act = sites.active_ids();
    const uint32_t n_active = static_cast<uint32_t>(act.size());
    const int step = static_cast<int>(pass.step);
    const int(*off)[2] = pass.stencil == Stencil::Box3 ? kBoxOff : kAxialOff;
    const int n_off = pass.stencil == Stencil::Box3 ? 9 : 5;

    uint32_t uniq[160];
    for (int gy = row_begin; gy < row_end; gy++) {
        for (int gx = 0; gx < gw; gx++) {
            int nu = 0;
            auto push = [&](uint32_t cand) {
                if (cand == CandidateField::kEmpty || !sites.active[cand]) return;
                for (int i = 0; i < nu; i++)
                    if (uniq[i] == cand) return;
                uniq[nu++] = cand;
            };
            for (int o = 0; o < n_off; o++) {
                int nx = gx + off[o][0] * step;
                int ny = gy + off[o][1] * step;
                if (nx < 0 || ny < 0 || nx >= gw || ny >= field.gh) continue;
                const uint32_t* lst = prev.data() + static_cast<size_t>(k) * (static_cast<size_t>(ny) * gw + nx);
                for (int si = 0; si < k; si++) {
                    if (lst[si] == CandidateField::kEmpty) break;
                    push(lst[si]);
                }
            }
            if (inject > 0 && n_active > 0) {
                uint32_t cell_id = static_cast<uint32_t>(gy) * gw + gx;
                RngState rng = seeded_stream(seed, pass_index, cell_id);
                for (int j = 0; j < inject; j++) push(act[rng.next_below(n_active)]);
            }

            TopK<T> sel;
            sel.k = k;
            T cx = static_cast<T>(field.center_x(gx));
            T cy = static_cast<T>(field.center_y(gy));
            for (int i = 0; i < nu; i++) sel.consider(uniq[i], table.logit(cx, cy, uniq[i]));

            uint32_t* out = next.data() + static_cast<size_t>(k) * (static_cast<size_t>(gy) * gw + gx);
            for (int i = 0; i < k; i++) out[i] = i < sel.n ? sel.id[i] : CandidateField::kEmpty;
        }
    }
}

template <typename T>
void run_passes_impl(const SiteStore& sites, CandidateField& field,
                     const std::vector<PassSpec>& seq, int inject, uint64_t seed,
                     const RunOpts& opts) {
    // candidate maintenance scores from the half-packed snapshot; rendering
    // and gradients stay full precision
    ScoreTable<T> table;
    table.build(sites, normalization_scale(field.width, field.height), true);
    std::vector<uint32_t> scratch(field.ids.size());
    int stripes = opts.threads > 1 ? opts.threads * 4 : 1;
    if (stripes > field.gh) stripes = field.gh;
    for (const PassSpec& pass : seq) {
        uint32_t pass_index = field.pass_index++;
        run_stripes(stripes, opts.threads, [&](int sidx) {
            int rb = static_cast<int>(static_cast<int64_t>(field.gh) * sidx / stripes);
            int re = static_cast<int>(static_cast<int64_t>(field.gh) * (sidx + 1) / stripes);
            propagate_rows<T>(sites, table, field, field.ids, scratch, pass, inject, seed,
                              pass_index, rb, re);
        });
        std::swap(field.ids, scratch);
    }
    field.synced_generation = sites.generation;
}

} // namespace

void propagate_pass(const SiteStore& sites, CandidateField& field, const PassSpec& pass,
                    int inject, uint64_t seed, const RunOpts& opts) {
    run_passes(sites, field, {pass}, inject, seed, opts);
}

void run_passes(const SiteStore& sites, CandidateField& field, const std::vector<PassSpec>& seq,
                int inject, uint64_t seed, const RunOpts& opts) {
    if (field.gw < 1 || field.gh < 1) throw std::invalid_argument("run_passes: field not sized");
    if (opts.fp64)
        run_passes_impl<double>(sites, field, seq, inject, seed, opts);
    else
        run_passes_impl<float>(sites, field, seq, inject, seed, opts);
}

void refresh(const SiteStore& sites, CandidateField& field, RefreshMode mode, int passes,
             int inject, uint64_t seed, const RunOpts& opts) {
    if (mode == RefreshMode::Full) {
        jfa_seed(sites, field);
        run_passes(sites, field, full_refresh_passes(field.gw, field.gh, passes), inject, seed, opts);
    } else {
        std::vector<PassSpec> seq(static_cast<size_t>(passes < 0 ? 0 : passes),
                                  PassSpec{1, Stencil::Axial});
        run_passes(sites, field, seq, inject, seed, opts);
    }
    field.refresh_count++;
}

namespace {

template <typename T>
std::vector<std::vector<uint32_t>> exact_batch_impl(const SiteStore& sites,
                                                    const std::vector<std::pair<int, int>>& pixels,
                                                    int k, double scale) {
    ScoreTable<T> table;
    table.build(sites, scale);
    const auto& act = sites.active_ids();
    std::vector<std::vector<uint32_t>> out;
    out.reserve(pixels.size());
    for (auto [px, py] : pixels) {
        TopK<T> sel;
        sel.k = k;
        T cx = static_cast<T>(static_cast<double>(px));
        T cy = static_cast<T>(static_cast<double>(py));
        for (uint32_t id : act) sel.consider(id, table.logit(cx, cy, id));
        out.emplace_back(sel.id, sel.id + sel.n);
    }
    return out;
}

} // namespace

std::vector<uint32_t> exact_topk(const SiteStore& sites, double px, double py, int k,
                                 double scale, bool fp64) {
    if (k < 1 || k > 16) throw std::invalid_argument("exact_topk: k out of range");
    // brute force under the unpacked score; quantize a store copy first to
    // get the packed kernel's view
    if (fp64) {
        ScoreTable<double> table;
        table.build(sites, scale);
        TopK<double> sel;
        sel.k = k;
        for (uint32_t id : sites.active_ids()) sel.consider(id, table.logit(px, py, id));
        return std::vector<uint32_t>(sel.id, sel.id + sel.n);
    }
    ScoreTable<float> table;
    table.build(sites, scale);
    TopK<float> sel;
    sel.k = k;
    for (uint32_t id : sites.active_ids())
        sel.consider(id, table.logit(static_cast<float>(px), static_cast<float>(py), id));
    return std::vector<uint32_t>(sel.id, sel.id + sel.n);
}

std::vector<std::vector<uint32_t>> exact_topk_batch(const SiteStore& sites,
                                                    const std::vector<std::pair<int, int>>& pixels,
                                                    int k, double scale, bool fp64) {
    if (k < 1 || k > 16) throw std::invalid_argument("exact_topk: k out of range");
    return fp64 ? exact_batch_impl<double>(sites, pixels, k, scale)
                : exact_batch_impl<float>(sites, pixels, k, scale);
}

void dump_candidates(const CandidateField& field, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw format_error("cannot write " + path);
    std::vector<uint8_t> bytes(field.ids.size() * 4);
    for (size_t i = 0; i < field.ids.size(); i++) {
        uint32_t v = field.ids[i];
        bytes[4 * i] = v & 0xff;
        bytes[4 * i + 1] = (v >> 8) & 0xff;
        bytes[4 * i + 2] = (v >> 16) & 0xff;
        bytes[4 * i + 3] = (v >> 24) & 0xff;
    }
    size_t w = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (w != bytes.size()) throw format_error("short write: " + path);
}

} // namespace sad
