#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sad/candidates.hpp"
#include "sad/codec.hpp"
#include "sad/half.hpp"
#include "sad/render.hpp"
#include "sad/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

using namespace sad;

namespace {

constexpr double kPi = 3.14159265358979323846;

SiteStore random_store(int w, int h, int n, uint64_t seed) {
    RngState rng = seeded_stream(seed, 0xc0de, 0);
    SiteStore st;
    for (int i = 0; i < n; i++) {
        Site s;
        s.x = rng.next_unit() * (w - 1);
        s.y = rng.next_unit() * (h - 1);
        s.log_tau = 2.0 + 18.0 * rng.next_unit();
        s.radius = 1.0 + 100.0 * rng.next_unit();
        for (int c = 0; c < 3; c++) s.color[c] = rng.next_unit();
        double ang = 2.0 * kPi * (rng.next_unit() - 0.5);
        s.dir[0] = std::cos(ang);
        s.dir[1] = std::sin(ang);
        s.aniso = (rng.next_unit() - 0.5) * 4.0;
        st.append(s);
    }
    return st;
}

// the checked-in byte-exact fixture is this store serialized at 64x48
SiteStore golden_store() {
    RngState rng = seeded_stream(99, 0x60, 5);
    SiteStore st;
    for (int i = 0; i < 13; i++) {
        Site s;
        s.x = rng.next_unit() * 63;
        s.y = rng.next_unit() * 47;
        s.log_tau = 4.0 + 4.0 * rng.next_unit();
        s.radius = 1.0 + 10.0 * rng.next_unit();
        for (int c = 0; c < 3; c++) s.color[c] = rng.next_unit();
        double ang = 2.0 * kPi * rng.next_unit();
        s.dir[0] = std::cos(ang);
        s.dir[1] = std::sin(ang);
        s.aniso = (rng.next_unit() - 0.5) * 3.0;
        st.append(s);
    }
    st.deactivate(6);
    return st;
}

std::vector<uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("unorm endpoints hit the exact corner codes") {
    QuantRanges q;
    q.log_tau_scale = 16.0;
    q.radius_scale = 512.0;
    for (int c = 0; c < 3; c++) q.col_scale[c] = 1.0;

    Site s;
    s.x = 0;
    s.y = 0;
    PackedSite p = pack_site(s, q, 256, 256);
    CHECK((p.w0 & 0x7fffu) == 0);
    CHECK(((p.w0 >> 15) & 0x7fffu) == 0);
    CHECK((p.w0 >> 31) == 1);
    CHECK(((p.w0 >> 30) & 1u) == 0);

    s.x = 255;
    s.y = 255;
    p = pack_site(s, q, 256, 256);
    CHECK((p.w0 & 0x7fffu) == 32767);
    CHECK(((p.w0 >> 15) & 0x7fffu) == 32767);

    s.dir[0] = -1.0;
    s.dir[1] = 0.0; // atan2(+0, -1) = +pi
    p = pack_site(s, q, 256, 256);
    CHECK((p.w3 & 0xffffu) == 65535);
    s.dir[1] = -0.0; // atan2(-0, -1) = -pi
    p = pack_site(s, q, 256, 256);
    CHECK((p.w3 & 0xffffu) == 0);
    s.dir[0] = 1.0;
    s.dir[1] = 0.0;
    p = pack_site(s, q, 256, 256);
    CHECK((p.w3 & 0xffffu) == 32768);
}

TEST_CASE("word layout places every field at its documented bits") {
    QuantRanges q;
    q.log_tau_min = 0;
    q.log_tau_scale = 16.0;
    q.radius_min = 0;
    q.radius_scale = 512.0;
    for (int c = 0; c < 3; c++) {
        q.col_min[c] = 0;
        q.col_scale[c] = 1.0;
    }
    Site s;
    s.x = 16;
    s.y = 8;
    s.log_tau = 8.0;
    s.radius = 256.0;
    s.color[0] = 0.5;
    s.color[1] = 0.5;
    s.color[2] = 0.5;
    s.dir[0] = 1.0;
    s.dir[1] = 0.0;
    s.aniso = 1.5;

    PackedSite p = pack_site(s, q, 33, 17);
    CHECK(p.w0 == ((1u << 31) | (16384u << 15) | 16384u));
    CHECK(p.w1 == (1024u | (1024u << 11) | (512u << 22)));
    CHECK(p.w2 == ((32768u << 16) | 32768u));
    CHECK(p.w3 == ((static_cast<uint32_t>(float_to_half(1.5f)) << 16) | 32768u));
    CHECK(float_to_half(1.5f) == 0x3e00);
}

TEST_CASE("roundtrip stays within half an LSB per field") {
    const int W = 256, H = 192;
    SiteStore st = random_store(W, H, 10000, 77);
    QuantRanges q = compute_ranges(st);

    double x_tol = 0.5 * (W - 1) / 32767.0 * (1 + 1e-9);
    double y_tol = 0.5 * (H - 1) / 32767.0 * (1 + 1e-9);
    double lt_tol = 0.5 * q.log_tau_scale / 65535.0 * (1 + 1e-9);
    double rad_tol = 0.5 * q.radius_scale / 65535.0 * (1 + 1e-9);
    double ang_tol = 0.5 * 2.0 * kPi / 65535.0 * (1 + 1e-9);

    for (uint32_t id = 0; id < st.size(); id++) {
        Site s = st.get(id);
        PackedSite p = pack_site(s, q, W, H);
        Site u = unpack_site(p, q, W, H);
        REQUIRE(u.active);
        CHECK(std::abs(u.x - s.x) <= x_tol);
        CHECK(std::abs(u.y - s.y) <= y_tol);
        CHECK(std::abs(u.log_tau - s.log_tau) <= lt_tol);
        CHECK(std::abs(u.radius - s.radius) <= rad_tol);
        for (int c = 0; c < 3; c++) {
            double bits = c == 2 ? 1023.0 : 2047.0;
            CHECK(std::abs(u.color[c] - s.color[c]) <= 0.5 * q.col_scale[c] / bits * (1 + 1e-9));
        }
        // direction is sign-ambiguous only through the metric, not the code
        double dot = u.dir[0] * s.dir[0] + u.dir[1] * s.dir[1];
        CHECK(dot >= std::cos(ang_tol) - 1e-12);
        CHECK(std::abs(u.aniso - s.aniso) <= 1.1e-3); // half ulp at |a| <= 2

        PackedSite p2 = pack_site(u, q, W, H);
        CHECK(p2.w0 == p.w0);
        CHECK(p2.w1 == p.w1);
        CHECK(p2.w2 == p.w2);
        CHECK(p2.w3 == p.w3);
    }
}

TEST_CASE("inactive sites pack to a zero record") {
    QuantRanges q;
    Site s;
    s.x = 17;
    s.y = 3;
    s.active = false;
    PackedSite p = pack_site(s, q, 64, 64);
    CHECK(p.w0 == 0);
    CHECK(p.w1 == 0);
    CHECK(p.w2 == 0);
    CHECK(p.w3 == 0);
    Site u = unpack_site(p, q, 64, 64);
    CHECK(!u.active);
}

TEST_CASE("quantization ranges cover the active population") {
    SUBCASE("degenerate range floors at 1e-6") {
        SiteStore st;
        Site s;
        s.log_tau = 7.5;
        st.append(s);
        st.append(s);
        QuantRanges q = compute_ranges(st);
        CHECK(q.log_tau_min == static_cast<double>(static_cast<float>(7.5)));
        CHECK(q.log_tau_scale == static_cast<double>(static_cast<float>(1e-6)));
        PackedSite p = pack_site(st.get(0), q, 16, 16);
        CHECK((p.w2 & 0xffffu) == 0); // code 0 at the degenerate floor
    }
    SUBCASE("two-point range spans exactly") {
        SiteStore st;
        Site s;
        s.log_tau = 2.0;
        st.append(s);
        s.log_tau = 20.0;
        st.append(s);
        QuantRanges q = compute_ranges(st);
        CHECK(q.log_tau_min == 2.0);
        CHECK(q.log_tau_scale == 18.0);
    }
    SUBCASE("random store lies inside its ranges") {
        SiteStore st = random_store(64, 64, 500, 3);
        st.deactivate(7); // inactive values must not widen the range
        QuantRanges q = compute_ranges(st);
        for (uint32_t id = 0; id < st.size(); id++) {
            if (!st.active[id]) continue;
            CHECK(st.log_tau[id] >= q.log_tau_min - 1e-6);
            CHECK(st.log_tau[id] <= q.log_tau_min + q.log_tau_scale + 1e-6);
            CHECK(st.radius[id] >= q.radius_min - 1e-6);
            CHECK(st.radius[id] <= q.radius_min + q.radius_scale + 1e-6);
        }
    }
    SUBCASE("empty store keeps defaults") {
        SiteStore st;
        QuantRanges q = compute_ranges(st);
        CHECK(q.log_tau_min == 0.0);
        CHECK(q.log_tau_scale == 1e-6);
    }
}

TEST_CASE("file roundtrip reproduces the quantized store") {
    const int W = 128, H = 96;
    SiteStore st = random_store(W, H, 200, 15);
    st.deactivate(13);
    st.deactivate(77);
    QuantRanges q = compute_ranges(st);

    std::string path = "codec_roundtrip_tmp.sad";
    write_file(path, st, W, H);

    std::vector<uint8_t> bytes = slurp(path);
    CHECK(bytes.size() == 58 + 16 * st.active_count());
    CHECK(bpp(st.active_count(), W, H) ==
          doctest::Approx(static_cast<double>(bytes.size() - 58) * 8 / (W * H)).epsilon(1e-12));

    DecodedFile dec = read_file(path);
    CHECK(dec.width == W);
    CHECK(dec.height == H);
    REQUIRE(dec.sites.size() == st.active_count());
    CHECK(dec.sites.active_count() == st.active_count());

    size_t j = 0;
    for (uint32_t id : st.active_ids()) {
        Site expect = unpack_site(pack_site(st.get(id), q, W, H), q, W, H);
        Site got = dec.sites.get(static_cast<uint32_t>(j++));
        CHECK(got.x == expect.x);
        CHECK(got.y == expect.y);
        CHECK(got.log_tau == expect.log_tau);
        CHECK(got.radius == expect.radius);
        for (int c = 0; c < 3; c++) CHECK(got.color[c] == expect.color[c]);
        CHECK(got.dir[0] == expect.dir[0]);
        CHECK(got.dir[1] == expect.dir[1]);
        CHECK(got.aniso == expect.aniso);
    }
    std::remove(path.c_str());
}

TEST_CASE("decoded files render inside the unit color cube") {
    const int W = 64, H = 64;
    SiteStore st = random_store(W, H, 60, 29);
    std::string path = "codec_render_tmp.sad";
    write_file(path, st, W, H);
    DecodedFile dec = read_file(path);
    std::remove(path.c_str());

    CandidateField f;
    f.resize(W, H, 8);
    refresh(dec.sites, f, RefreshMode::Full, 4, 4, 7, {});
    ImageBuffer img = render_image(dec.sites, f);
    for (double v : img.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("malformed files are rejected with the failing offset") {
    SiteStore st = random_store(32, 32, 5, 8);
    std::string path = "codec_bad_tmp.sad";
    write_file(path, st, 32, 32);
    std::vector<uint8_t> good = slurp(path);

    SUBCASE("bad magic") {
        std::vector<uint8_t> bad = good;
        bad[0] = 'X';
        spit(path, bad);
        CHECK_THROWS_AS(read_file(path), format_error);
    }
    SUBCASE("unknown version") {
        std::vector<uint8_t> bad = good;
        bad[4] = 9;
        spit(path, bad);
        CHECK_THROWS_AS(read_file(path), format_error);
    }
    SUBCASE("truncated payload names the offset") {
        std::vector<uint8_t> bad(good.begin(), good.end() - 10);
        spit(path, bad);
        try {
            read_file(path);
            FAIL("expected a framing error");
        } catch (const format_error& e) {
            std::string msg = e.what();
            CHECK(msg.find("truncated at byte") != std::string::npos);
            CHECK(msg.find(std::to_string(good.size() - 10)) != std::string::npos);
        }
    }
    SUBCASE("trailing garbage is a size violation") {
        std::vector<uint8_t> bad = good;
        bad.push_back(0);
        spit(path, bad);
        CHECK_THROWS_AS(read_file(path), format_error);
    }
    SUBCASE("header shorter than 18 bytes") {
        spit(path, {'S', 'A', 'D', 'F', 1, 0});
        CHECK_THROWS_AS(read_file(path), format_error);
    }
    std::remove(path.c_str());
}

TEST_CASE("bits per pixel follows the 128-bit record size") {
    CHECK(bpp(50000, 768, 512) == doctest::Approx(16.276041666666668).epsilon(1e-12));
    CHECK(bpp(0, 64, 64) == 0.0);
    CHECK(bpp(256, 256, 128) == 1.0); // count = H*W/128
    CHECK_THROWS_AS(bpp(10, 0, 64), std::invalid_argument);
}

TEST_CASE("golden file bytes are stable") {
    SiteStore st = golden_store();
    std::string path = "codec_golden_tmp.sad";
    write_file(path, st, 64, 48);
    std::vector<uint8_t> fresh = slurp(path);
    std::remove(path.c_str());

    std::vector<uint8_t> frozen = slurp(std::string(SAD_TEST_DATA_DIR) + "/golden.sad");
    REQUIRE(fresh.size() == frozen.size());
    size_t diff = 0;
    for (size_t i = 0; i < fresh.size(); i++)
        if (fresh[i] != frozen[i]) diff++;
    CHECK(diff == 0);

    // header spot checks on the frozen bytes
    CHECK(frozen[0] == 'S');
    CHECK(frozen[3] == 'F');
    CHECK(frozen[4] == 1);
    CHECK(frozen[6] == 64);
    CHECK(frozen[10] == 48);
    CHECK(frozen[14] == 12); // 13 appended, one deactivated
    CHECK(frozen.size() == 58u + 16u * 12u);
}
