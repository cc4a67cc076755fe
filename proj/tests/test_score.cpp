#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sad/rng.hpp"
#include "sad/score.hpp"

#include <cmath>

using namespace sad;

static Site make_site(double x, double y, double lt = 4.0, double r = 0.0, double a = 0.0,
                      double ux = 1.0, double uy = 0.0) {
    Site s;
    s.x = x;
    s.y = y;
    s.log_tau = lt;
    s.radius = r;
    s.aniso = a;
    s.dir[0] = ux;
    s.dir[1] = uy;
    return s;
}

TEST_CASE("metric is identity at zero anisotropy") {
    for (double ang : {0.0, 0.3, 1.1, 2.9}) {
        Site s = make_site(0, 0, 4, 0, 0, std::cos(ang), std::sin(ang));
        Metric g = metric_from_site(s);
        CHECK(g.xx == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(g.yy == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(g.xy == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("metric stretches by e^a along dir and e^-a across") {
    double a = std::log(4.0);
    Site s = make_site(0, 0, 4, 0, a, 1, 0);
    Metric g = metric_from_site(s);
    CHECK(g.xx == doctest::Approx(4.0));
    CHECK(g.yy == doctest::Approx(0.25));
    CHECK(g.xy == doctest::Approx(0.0));
    // unit determinant for unit dir
    CHECK(g.xx * g.yy - g.xy * g.xy == doctest::Approx(1.0).epsilon(1e-12));

    // rotated dir keeps determinant and swaps roles
    Site r = make_site(0, 0, 4, 0, a, std::sqrt(0.5), std::sqrt(0.5));
    Metric gr = metric_from_site(r);
    CHECK(gr.xx * gr.yy - gr.xy * gr.xy == doctest::Approx(1.0).epsilon(1e-12));
    double along = quad_form(gr, std::sqrt(0.5), std::sqrt(0.5));
    double across = quad_form(gr, -std::sqrt(0.5), std::sqrt(0.5));
    CHECK(along == doctest::Approx(4.0));
    CHECK(across == doctest::Approx(0.25));
}

TEST_CASE("d_mix matches the worked flat case") {
    // 256x256, site at center with radius 64: the offset (64,0) lands on the
    // weighted sphere, so the score is exactly zero.
    double s = 1.0 / 256.0;
    Site site = make_site(128, 128, 4, 64);
    CHECK(d_mix(192, 128, site, s) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(d_mix(128, 128, site, s) == doctest::Approx(-64.0 / 256.0));
    CHECK(d_mix(224, 128, site, s) == doctest::Approx(32.0 / 256.0));
}

TEST_CASE("d_mix anisotropy shortens reach across dir") {
    double s = 1.0 / 128.0;
    double a = 2.0 * std::log(2.0); // e^a = 4
    Site site = make_site(64, 64, 4, 0, a, 1, 0);
    double along = d_mix(64 + 8, 64, site, s);
    double across = d_mix(64, 64 + 8, site, s);
    // e^{a/2} = 2: offsets along dir count double, across dir count half
    CHECK(along == doctest::Approx(16.0 / 128.0));
    CHECK(across == doctest::Approx(4.0 / 128.0));
}

TEST_CASE("growing the additive weight expands ownership monotonically") {
    double s = 1.0 / 64.0;
    Site a = make_site(20, 32), b = make_site(44, 32);
    SiteStore st;
    st.append(a);
    st.append(b);
    CHECK(hard_owner(st, 31, 32, s) == 0);
    CHECK(hard_owner(st, 33, 32, s) == 1);
    // bump r of site 0: the boundary moves right, never left
    for (double r : {2.0, 4.0, 8.0}) {
        Site g = a;
        g.radius = r;
        st.set(0, g);
        CHECK(hard_owner(st, 33, 32, s) == 0);
        double prev = d_mix(50, 32, g, s);
        Site g2 = g;
        g2.radius = r + 1;
        CHECK(d_mix(50, 32, g2, s) < prev); // strictly decreasing in r
    }
}

TEST_CASE("preliminary diagrams disagree where they should") {
    // collinear pair: site A at x=0 with additive weight 2, B at x=10 plain.
    // bisectors: Voronoi x=5, additively weighted x=6, power (w=r^2) x=5.2.
    double ax = 0, bx = 10;
    double r = 2;
    auto apo_gap = [&](double x) {
        return apollonius_dist(x, 0, ax, 0, r) - apollonius_dist(x, 0, bx, 0, 0);
    };
    auto pow_gap = [&](double x) {
        return power_dist(x, 0, ax, 0, r * r) - power_dist(x, 0, bx, 0, 0);
    };
    auto vor_gap = [&](double x) {
        return euclidean_dist(x, 0, ax, 0) - euclidean_dist(x, 0, bx, 0);
    };
    CHECK(vor_gap(5.0) == doctest::Approx(0.0));
    CHECK(apo_gap(6.0) == doctest::Approx(0.0));
    CHECK(pow_gap(5.2) == doctest::Approx(0.0));
    CHECK(apo_gap(5.2) < 0.0); // the three bisectors are genuinely distinct
    CHECK(vor_gap(5.2) > 0.0);
}

TEST_CASE("d_mix reduces to the additively weighted distance at zero anisotropy") {
    RngState rng = seeded_stream(11, 0, 0);
    for (int i = 0; i < 200; i++) {
        double sx = rng.next_unit() * 100, sy = rng.next_unit() * 100;
        double px = rng.next_unit() * 100, py = rng.next_unit() * 100;
        double r = rng.next_unit() * 20;
        double ang = rng.next_unit() * 6.28318;
        Site s = make_site(sx, sy, 4, r, 0, std::cos(ang), std::sin(ang));
        double scale = 1.0 / 100.0;
        double want = apollonius_dist(px, py, sx, sy, r) * scale;
        CHECK(d_mix(px, py, s, scale) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("logit scale absorption") {
    // scaling s by c and tau by 1/c moves nothing: the logit only sees tau*s
    RngState rng = seeded_stream(5, 1, 2);
    for (int i = 0; i < 100; i++) {
        double px = rng.next_unit() * 50, py = rng.next_unit() * 50;
        Site s = make_site(rng.next_unit() * 50, rng.next_unit() * 50, 3.0 + rng.next_unit(),
                           rng.next_unit() * 10, rng.next_unit() * 2 - 1);
        double ang = rng.next_unit() * 6.28318;
        s.dir[0] = std::cos(ang);
        s.dir[1] = std::sin(ang);
        double base = site_logit(px, py, s, 1.0 / 64.0);
        for (double c : {2.0, 8.0, 0.5}) {
            Site t = s;
            t.log_tau = s.log_tau - std::log(c);
            double scaled = site_logit(px, py, t, c / 64.0);
            CHECK(scaled == doctest::Approx(base).epsilon(1e-12));
        }
    }
}

TEST_CASE("hard owner tie breaks to the lowest id") {
    SiteStore st;
    st.append(make_site(10, 10));
    st.append(make_site(10, 10));
    CHECK(hard_owner(st, 40, 40, 1.0 / 64.0) == 0);
    SiteStore empty;
    CHECK_THROWS_AS(hard_owner(empty, 0, 0, 1.0), std::invalid_argument);
}

TEST_CASE("hard owner ignores inactive slots") {
    SiteStore st;
    st.append(make_site(10, 10));
    st.append(make_site(40, 40));
    CHECK(hard_owner(st, 38, 38, 1.0 / 64.0) == 1);
    st.deactivate(1);
    CHECK(hard_owner(st, 38, 38, 1.0 / 64.0) == 0);
}
