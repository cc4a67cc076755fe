#include "sad/codec.hpp"

#include "sad/half.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <vector>

namespace sad {

namespace {

constexpr double kPi = 3.14159265358979323846;

uint32_t unorm_encode(double value, double lo, double scale, uint32_t max_code) {
    double norm = (value - lo) / scale;
    norm = std::clamp(norm, 0.0, 1.0);
    return static_cast<uint32_t>(std::lround(norm * max_code));
}

double unorm_decode(uint32_t code, double lo, double scale, uint32_t max_code) {
    return lo + (static_cast<double>(code) / max_code) * scale;
}

void le16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void le32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; i++) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void lef32(std::vector<uint8_t>& out, double v) {
    le32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
}

uint16_t rd16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint32_t rd32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

double rdf32(const uint8_t* p) { return static_cast<double>(std::bit_cast<float>(rd32(p))); }

} // namespace

QuantRanges compute_ranges(const SiteStore& sites) {
    QuantRanges q;
    bool any = false;
    double lo[5], hi[5];
    for (uint32_t id = 0; id < sites.size(); id++) {
        if (!sites.active[id]) continue;
        double v[5] = {sites.log_tau[id], sites.radius[id], sites.col_r[id], sites.col_g[id],
                       sites.col_b[id]};
        if (!any) {
            for (int k = 0; k < 5; k++) lo[k] = hi[k] = v[k];
            any = true;
        } else {
            for (int k = 0; k < 5; k++) {
                lo[k] = std::min(lo[k], v[k]);
                hi[k] = std::max(hi[k], v[k]);
            }
        }
    }
    if (!any) return q;
    // min rounds down and scale rounds up, so the interval still covers the
    // population after both are squeezed through the file's float32 fields
    auto cover = [](double lo_v, double hi_v, double& min_o, double& scale_o) {
        float mn = static_cast<float>(lo_v);
        if (static_cast<double>(mn) > lo_v)
            mn = std::nextafterf(mn, -std::numeric_limits<float>::infinity());
        float sc = static_cast<float>(std::max(hi_v - static_cast<double>(mn), 1e-6));
        while (static_cast<double>(mn) + static_cast<double>(sc) < hi_v)
            sc = std::nextafterf(sc, std::numeric_limits<float>::infinity());
        min_o = static_cast<double>(mn);
        scale_o = static_cast<double>(sc);
    };
    cover(lo[0], hi[0], q.log_tau_min, q.log_tau_scale);
    cover(lo[1], hi[1], q.radius_min, q.radius_scale);
    for (int c = 0; c < 3; c++) cover(lo[2 + c], hi[2 + c], q.col_min[c], q.col_scale[c]);
    return q;
}

PackedSite pack_site(const Site& s, const QuantRanges& q, int width, int height) {
    PackedSite p;
    if (!s.active) return p; // flag 0, zeroed payload
    double wden = width > 1 ? width - 1.0 : 1.0;
    double hden = height > 1 ? height - 1.0 : 1.0;
    uint32_t xc = unorm_encode(s.x, 0.0, wden, 32767);
    uint32_t yc = unorm_encode(s.y, 0.0, hden, 32767);
    p.w0 = xc | (yc << 15) | (1u << 31);

    uint32_t rc = unorm_encode(s.color[0], q.col_min[0], q.col_scale[0], 2047);
    uint32_t gc = unorm_encode(s.color[1], q.col_min[1], q.col_scale[1], 2047);
    uint32_t bc = unorm_encode(s.color[2], q.col_min[2], q.col_scale[2], 1023);
    p.w1 = rc | (gc << 11) | (bc << 22);

    uint32_t tc = unorm_encode(s.log_tau, q.log_tau_min, q.log_tau_scale, 65535);
    uint32_t dc = unorm_encode(s.radius, q.radius_min, q.radius_scale, 65535);
    p.w2 = tc | (dc << 16);

    double ang = std::atan2(s.dir[1], s.dir[0]);
    uint32_t ac = unorm_encode(ang, -kPi, 2.0 * kPi, 65535);
    uint16_t ah = float_to_half(static_cast<float>(s.aniso));
    p.w3 = ac | (static_cast<uint32_t>(ah) << 16);
    return p;
}

Site unpack_site(const PackedSite& p, const QuantRanges& q, int width, int height) {
    Site s;
    if (!(p.w0 >> 31)) {
        s.active = false;
        return s;
    }
    double wden = width > 1 ? width - 1.0 : 1.0;
    double hden = height > 1 ? height - 1.0 : 1.0;
    s.x = unorm_decode(p.w0 & 0x7fffu, 0.0, wden, 32767);
    s.y = unorm_decode((p.w0 >> 15) & 0x7fffu, 0.0, hden, 32767);

    s.color[0] = unorm_decode(p.w1 & 0x7ffu, q.col_min[0], q.col_scale[0], 2047);
    s.color[1] = unorm_decode((p.w1 >> 11) & 0x7ffu, q.col_min[1], q.col_scale[1], 2047);
    s.color[2] = unorm_decode(p.w1 >> 22, q.col_min[2], q.col_scale[2], 1023);
    // rounded file scalars may overshoot the unit range by an ulp
    for (double& c : s.color) c = std::clamp(c, 0.0, 1.0);

    s.log_tau = unorm_decode(p.w2 & 0xffffu, q.log_tau_min, q.log_tau_scale, 65535);
    s.radius = unorm_decode(p.w2 >> 16, q.radius_min, q.radius_scale, 65535);

    double ang = unorm_decode(p.w3 & 0xffffu, -kPi, 2.0 * kPi, 65535);
    s.dir[0] = std::cos(ang);
    s.dir[1] = std::sin(ang);
    s.aniso = static_cast<double>(half_to_float(static_cast<uint16_t>(p.w3 >> 16)));
    return s;
}

double bpp(size_t count, int width, int height) {
    if (width < 1 || height < 1) throw std::invalid_argument("bpp: empty extent");
    return static_cast<double>(count) * 128.0 / (static_cast<double>(width) * height);
}

void write_file(const std::string& path, const SiteStore& sites, int width, int height) {
    if (width < 1 || height < 1) throw std::invalid_argument("write: empty extent");
    QuantRanges q = compute_ranges(sites);

    std::vector<uint8_t> buf;
    buf.reserve(58 + 16 * sites.active_count());
    buf.insert(buf.end(), {'S', 'A', 'D', 'F'});
    le16(buf, kSadVersion);
    le32(buf, static_cast<uint32_t>(width));
    le32(buf, static_cast<uint32_t>(height));
    le32(buf, static_cast<uint32_t>(sites.active_count()));
    lef32(buf, q.log_tau_min);
    lef32(buf, q.log_tau_scale);
    lef32(buf, q.radius_min);
    lef32(buf, q.radius_scale);
    for (int c = 0; c < 3; c++) lef32(buf, q.col_min[c]);
    for (int c = 0; c < 3; c++) lef32(buf, q.col_scale[c]);

    for (uint32_t id : sites.active_ids()) {
        PackedSite p = pack_site(sites.get(id), q, width, height);
        le32(buf, p.w0);
        le32(buf, p.w1);
        le32(buf, p.w2);
        le32(buf, p.w3);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write: cannot open " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write: short write to " + path);
}

DecodedFile read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read: cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    auto truncated = [&](size_t need) {
        char msg[96];
        std::snprintf(msg, sizeof msg, "file truncated at byte %zu, need %zu", buf.size(), need);
        return format_error(msg);
    };
    if (buf.size() < 18) throw truncated(18);
    if (!(buf[0] == 'S' && buf[1] == 'A' && buf[2] == 'D' && buf[3] == 'F'))
        throw format_error("bad magic, not a site file");
    uint16_t version = rd16(&buf[4]);
    if (version != kSadVersion)
        throw format_error("unknown format version " + std::to_string(version));
    uint32_t w = rd32(&buf[6]);
    uint32_t h = rd32(&buf[10]);
    uint32_t count = rd32(&buf[14]);
    if (w < 1 || h < 1 || w > (1u << 24) || h > (1u << 24))
        throw format_error("unreasonable image extent in header");
    size_t need = 58 + 16 * static_cast<size_t>(count);
    if (buf.size() != need) throw truncated(need);

    QuantRanges q;
    q.log_tau_min = rdf32(&buf[18]);
    q.log_tau_scale = rdf32(&buf[22]);
    q.radius_min = rdf32(&buf[26]);
    q.radius_scale = rdf32(&buf[30]);
    for (int c = 0; c < 3; c++) q.col_min[c] = rdf32(&buf[34 + 4 * c]);
    for (int c = 0; c < 3; c++) q.col_scale[c] = rdf32(&buf[46 + 4 * c]);

    DecodedFile out;
    out.width = static_cast<int>(w);
    out.height = static_cast<int>(h);
    for (uint32_t i = 0; i < count; i++) {
        const uint8_t* rec = &buf[58 + 16 * static_cast<size_t>(i)];
        PackedSite p{rd32(rec), rd32(rec + 4), rd32(rec + 8), rd32(rec + 12)};
        Site s = unpack_site(p, q, out.width, out.height);
        uint32_t id = out.sites.append(s);
        if (!s.active) out.sites.deactivate(id);
    }
    return out;
}

} // namespace sad
