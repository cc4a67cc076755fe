#include "sad/types.hpp"

#include <algorithm>

namespace sad {

void SiteStore::clear() {
    x.clear(); y.clear(); log_tau.clear(); radius.clear();
    col_r.clear(); col_g.clear(); col_b.clear();
    dir_x.clear(); dir_y.clear(); aniso.clear();
    active.clear(); frozen.clear();
    bump();
}

void SiteStore::resize(size_t n) {
    x.resize(n); y.resize(n); log_tau.resize(n); radius.resize(n);
    col_r.resize(n); col_g.resize(n); col_b.resize(n);
    dir_x.resize(n, 1.0); dir_y.resize(n);
    aniso.resize(n);
    active.resize(n, 0); frozen.resize(n, 0);
    bump();
}

uint32_t SiteStore::append(const Site& s) {
    uint32_t id = static_cast<uint32_t>(size());
    x.push_back(s.x); y.push_back(s.y);
    log_tau.push_back(s.log_tau); radius.push_back(s.radius);
    col_r.push_back(s.color[0]); col_g.push_back(s.color[1]); col_b.push_back(s.color[2]);
    dir_x.push_back(s.dir[0]); dir_y.push_back(s.dir[1]);
    aniso.push_back(s.aniso);
    active.push_back(s.active ? 1 : 0);
    frozen.push_back(s.frozen ? 1 : 0);
    bump();
    return id;
}

Site SiteStore::get(size_t i) const {
    Site s;
    s.x = x[i]; s.y = y[i];
    s.log_tau = log_tau[i]; s.radius = radius[i];
    s.color[0] = col_r[i]; s.color[1] = col_g[i]; s.color[2] = col_b[i];
    s.dir[0] = dir_x[i]; s.dir[1] = dir_y[i];
    s.aniso = aniso[i];
    s.active = active[i] != 0;
    s.frozen = frozen[i] != 0;
    return s;
}

void SiteStore::set(size_t i, const Site& s) {
    x[i] = s.x; y[i] = s.y;
    log_tau[i] = s.log_tau; radius[i] = s.radius;
    col_r[i] = s.color[0]; col_g[i] = s.color[1]; col_b[i] = s.color[2];
    dir_x[i] = s.dir[0]; dir_y[i] = s.dir[1];
    aniso[i] = s.aniso;
    active[i] = s.active ? 1 : 0;
    frozen[i] = s.frozen ? 1 : 0;
    bump();
}

void SiteStore::deactivate(size_t i) {
    active[i] = 0;
    x[i] = -1.0; // parked; inactive slots keep the sentinel position
    y[i] = -1.0;
    bump();
}

void SiteStore::bump() { ++generation; }

size_t SiteStore::active_count() const { return active_ids().size(); }

const std::vector<uint32_t>& SiteStore::active_ids() const {
    if (active_cache_gen_ != generation) {
        active_cache_.clear();
        active_cache_.reserve(size());
        for (size_t i = 0; i < active.size(); i++)
            if (active[i]) active_cache_.push_back(static_cast<uint32_t>(i));
        active_cache_gen_ = generation;
    }
    return active_cache_;
}

void ImageBuffer::resize(int w, int h) {
    if (w < 1 || h < 1) throw std::invalid_argument("ImageBuffer: empty extent");
    width = w;
    height = h;
    data.assign(3 * static_cast<size_t>(w) * h, 0.0);
}

void CandidateField::resize(int w, int h, int k_slots, int cell_size) {
    if (w < 1 || h < 1) throw std::invalid_argument("CandidateField: empty extent");
    if (k_slots < 1 || k_slots > 16) throw std::invalid_argument("CandidateField: k out of range");
    if (cell_size < 1) throw std::invalid_argument("CandidateField: bad cell size");
    width = w;
    height = h;
    cell = cell_size;
    gw = (w + cell_size - 1) / cell_size;
    gh = (h + cell_size - 1) / cell_size;
    k = k_slots;
    ids.assign(static_cast<size_t>(gw) * gh * k, kEmpty);
    synced_generation = ~0ull;
}

void TrainConfig::validate(int width, int height) {
    if (width < 1 || height < 1) throw std::invalid_argument("config: empty image");
    if (iters < 0) throw std::invalid_argument("config: negative iters");
    if (k < 1 || k > 16) throw std::invalid_argument("config: k out of [1,16]");
    if (inject < 0) throw std::invalid_argument("config: negative inject");
    if (lambda_init < 0 || lambda_init > 1) throw std::invalid_argument("config: lambda_init out of [0,1]");
    if (densify_every < 1 || prune_every < 1) throw std::invalid_argument("config: event period < 1");
    if (densify_pct < 0 || densify_pct > 1 || prune_pct < 0 || prune_pct > 1)
        throw std::invalid_argument("config: percentile out of [0,1]");
    if (refresh_every < 1) throw std::invalid_argument("config: refresh period < 1");
    if (refresh_passes < 0 || final_passes < 0) throw std::invalid_argument("config: negative passes");
    if (target_bpp < 0) throw std::invalid_argument("config: negative bpp");
    if (n_sites < 0) throw std::invalid_argument("config: negative site count");
    if (log_tau_min > log_tau_max || radius_min > radius_max || aniso_min > aniso_max)
        throw std::invalid_argument("config: inverted clamp range");
    if (threads < 1) threads = 1;

    densify_start = std::clamp(densify_start, 0, iters);
    densify_end = std::clamp(densify_end, 0, iters);
    prune_start = std::clamp(prune_start, 0, iters);
    prune_end = std::clamp(prune_end, 0, iters);
    if (densify_end < densify_start || prune_end < prune_start)
        throw std::invalid_argument("config: inverted schedule window");
}

} // namespace sad
