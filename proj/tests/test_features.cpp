#include <doctest.h>

#include <cmath>

#include "terraseg/features.hpp"
#include "terraseg/oracles.hpp"
#include "terraseg/reference_kernels.hpp"
#include "terraseg/rng.hpp"

using namespace terraseg;

namespace {

PointRecord pt(double x, double y, double z, double intensity = 1.0,
               LasClass cls = LasClass::Ground) {
    PointRecord p;
    p.x = x;
    p.y = y;
    p.z = z;
    p.intensity = intensity;
    p.las_class = cls;
    return p;
}

void color_all(PointCloud& c, float r = 0.2f, float g = 0.4f, float b = 0.6f,
               float nir = 0.8f) {
    for (auto& p : c.records) {
        p.has_color = true;
        p.color = {r, g, b, nir};
    }
}

Raster constant_ortho(double v, double extent = 10.0, double cell = 0.5) {
    int n = static_cast<int>(extent / cell);
    Raster r(0, 0, cell, n, n);
    for (const char* ch : {"r", "g", "b", "nir"}) {
        auto& c = r.add_channel(ch);
        std::fill(c.begin(), c.end(), v);
    }
    return r;
}

} // namespace

TEST_SUITE_BEGIN("features");

TEST_CASE("colorize: constant ortho paints every point") {
    PointCloud c;
    Rng rng(3);
    for (int i = 0; i < 50; ++i) c.records.push_back(pt(rng.uniform(0, 10), rng.uniform(0, 10), 0));
    Raster ortho = constant_ortho(0.625);
    size_t missing = colorize(c, ortho);
    CHECK(missing == 0);
    for (const auto& p : c.records) {
        CHECK(p.has_color);
        CHECK(p.color.r == doctest::Approx(0.625));
        CHECK(p.color.nir == doctest::Approx(0.625));
    }
}

TEST_CASE("colorize: point picks its containing cell, outside points stay gray") {
    Raster ortho(0, 0, 1.0, 4, 4);
    for (const char* ch : {"r", "g", "b", "nir"}) ortho.add_channel(ch);
    for (int row = 0; row < 4; ++row)
        for (int col = 0; col < 4; ++col)
            ortho.channel("r")[ortho.idx(col, row)] = row * 4 + col;
    for (auto* ch : {"g", "b", "nir"})
        std::fill(ortho.channel(ch).begin(), ortho.channel(ch).end(), 0.0);

    PointCloud c;
    c.records.push_back(pt(2.5, 1.5, 0)); // cell (2, 1) -> value 6
    c.records.push_back(pt(9.0, 9.0, 0)); // outside
    size_t missing = colorize(c, ortho);
    CHECK(missing == 1);
    CHECK(c.records[0].has_color);
    CHECK(c.records[0].color.r == doctest::Approx(6.0));
    CHECK_FALSE(c.records[1].has_color);
}

TEST_CASE("colorize: 100 random points match index arithmetic") {
    Raster ortho(2.0, -3.0, 0.35, 40, 40);
    Rng rng(11);
    for (const char* ch : {"r", "g", "b", "nir"}) {
        auto& c = ortho.add_channel(ch);
        for (auto& v : c) v = rng.uniform();
    }
    PointCloud c;
    for (int i = 0; i < 100; ++i)
        c.records.push_back(
            pt(rng.uniform(2.0, 2.0 + 0.35 * 40), rng.uniform(-3.0, -3.0 + 0.35 * 40), 0));
    colorize(c, ortho);
    for (const auto& p : c.records) {
        int col = static_cast<int>(std::floor((p.x - 2.0) / 0.35));
        int row = static_cast<int>(std::floor((p.y + 3.0) / 0.35));
        if (col < 0 || col >= 40 || row < 0 || row >= 40) {
            CHECK_FALSE(p.has_color);
            continue;
        }
        REQUIRE(p.has_color);
        CHECK(p.color.r == doctest::Approx(ortho.channel("r")[ortho.idx(col, row)]));
    }
}

TEST_CASE("neighborhood_stats: isolated point reproduces itself") {
    PointCloud c;
    c.records.push_back(pt(0, 0, 0, 7.5));
    color_all(c, 0.1f, 0.2f, 0.3f, 0.4f);
    SpatialIndex idx(c, 1.0);
    auto s = neighborhood_stats(idx, c, 0);
    CHECK(s[0] == doctest::Approx(7.5)); // intensity min
    CHECK(s[1] == doctest::Approx(7.5));
    CHECK(s[2] == doctest::Approx(7.5));
    CHECK(s[3] == doctest::Approx(0.1)); // r min
    CHECK(s[5] == doctest::Approx(0.1)); // r mean
    CHECK(s[14] == doctest::Approx(0.4));
}

TEST_CASE("neighborhood_stats: min/max/mean of {10,20,30}") {
    PointCloud c;
    c.records.push_back(pt(0, 0, 0, 10));
    c.records.push_back(pt(0.1, 0, 0, 20));
    c.records.push_back(pt(0, 0.1, 0, 30));
    color_all(c);
    SpatialIndex idx(c, 1.0);
    auto s = neighborhood_stats(idx, c, 0);
    CHECK(s[0] == doctest::Approx(10.0));
    CHECK(s[1] == doctest::Approx(30.0));
    CHECK(s[2] == doctest::Approx(20.0));
}

TEST_CASE("neighborhood_stats: uncolored neighbors skipped for color only") {
    PointCloud c;
    c.records.push_back(pt(0, 0, 0, 10));
    c.records.push_back(pt(0.2, 0, 0, 50));
    c.records[0].has_color = true;
    c.records[0].color = {0.5f, 0.5f, 0.5f, 0.5f};
    SpatialIndex idx(c, 1.0);
    auto s = neighborhood_stats(idx, c, 0);
    CHECK(s[1] == doctest::Approx(50.0)); // intensity max counts both
    CHECK(s[4] == doctest::Approx(0.5)); // r max from the colored point only
}

TEST_CASE("neighborhood_stats matches the scan-then-fold reference") {
    Rng rng(21);
    PointCloud c;
    for (int i = 0; i < 3000; ++i) {
        auto p = pt(rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(0, 3),
                    rng.uniform(0, 900));
        p.has_color = rng.uniform() < 0.8;
        if (p.has_color)
            p.color = {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                       static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
        c.records.push_back(p);
    }
    SpatialIndex idx(c, 1.0);
    for (uint32_t id = 0; id < 200; ++id) {
        if (!c.records[id].has_color) continue;
        auto got = neighborhood_stats(idx, c, id);
        auto want = reference::neighborhood_stats(c, id, 1.0);
        for (int k = 0; k < 15; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
}

TEST_CASE("flatness: coplanar points give 0") {
    PointCloud c;
    Rng rng(9);
    for (int i = 0; i < 20; ++i)
        c.records.push_back(pt(rng.uniform(0, 0.9), rng.uniform(0, 0.9), 0.0));
    SpatialIndex idx(c, 1.0);
    CHECK(flatness(idx, c, 0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("flatness: cube corners are isotropic, ratio 1/3") {
    PointCloud c;
    double s = 0.4;
    for (int i = 0; i < 8; ++i)
        c.records.push_back(
            pt(0.5 + (i & 1 ? s : -s), 0.5 + (i & 2 ? s : -s), (i & 4 ? s : -s)));
    SpatialIndex idx(c, 2.0);
    CHECK(flatness(idx, c, 0, 2.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("flatness: degenerate neighborhoods give 0") {
    PointCloud c;
    c.records.push_back(pt(0, 0, 0));
    c.records.push_back(pt(0.1, 0, 0));
    SpatialIndex idx(c, 1.0);
    CHECK(flatness(idx, c, 0) == 0.0); // < 3 neighbors
    PointCloud tiny;
    for (int i = 0; i < 5; ++i) tiny.records.push_back(pt(0, 0, 0));
    SpatialIndex idx2(tiny, 1.0);
    CHECK(flatness(idx2, tiny, 0) == 0.0); // trace below threshold
}

TEST_CASE("flatness matches the characteristic-polynomial eigen oracle") {
    Rng rng(33);
    for (int trial = 0; trial < 30; ++trial) {
        PointCloud c;
        for (int i = 0; i < 50; ++i)
            c.records.push_back(
                pt(rng.uniform(0, 0.9), rng.uniform(0, 0.9), rng.normal(0, 0.3)));
        SpatialIndex idx(c, 1.0);
        double got = flatness(idx, c, 0, 2.0);

        // Covariance of all 50 points (all within radius 2 of point 0).
        double mx = 0, my = 0, mz = 0;
        for (const auto& p : c.records) {
            mx += p.x;
            my += p.y;
            mz += p.z;
        }
        mx /= 50;
        my /= 50;
        mz /= 50;
        std::array<std::array<double, 3>, 3> cov{};
        for (const auto& p : c.records) {
            double d[3] = {p.x - mx, p.y - my, p.z - mz};
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) cov[i][j] += d[i] * d[j] / 50.0;
        }
        auto ev = oracle_eigen(cov);
        double want = ev[0] / (ev[0] + ev[1] + ev[2]);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("feature table: no ground points, empty table") {
    PointCloud c;
    c.records.push_back(pt(0, 0, 0, 1, LasClass::Building));
    color_all(c);
    SpatialIndex idx(c, 1.0);
    auto t = build_feature_table(c, idx, IntensitySource::Raw);
    CHECK(t.rows.empty());
}

TEST_CASE("feature table: non-ground neighbor feeds stats but gets no row") {
    PointCloud c;
    c.records.push_back(pt(0, 0, 0, 10, LasClass::Ground));
    c.records.push_back(pt(0.3, 0, 5, 90, LasClass::Building));
    color_all(c);
    SpatialIndex idx(c, 1.0);
    auto t = build_feature_table(c, idx, IntensitySource::Raw);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.point_ids[0] == 0);
    CHECK(t.rows[0][0] == doctest::Approx(10.0)); // own intensity
    CHECK(t.rows[0][6] == doctest::Approx(90.0)); // neighborhood intensity max
}

TEST_CASE("feature table: flatness column equals the op output") {
    Rng rng(55);
    PointCloud c;
    for (int i = 0; i < 500; ++i)
        c.records.push_back(pt(rng.uniform(0, 8), rng.uniform(0, 8), rng.normal(0, 0.2),
                               rng.uniform(1, 100)));
    color_all(c);
    SpatialIndex idx(c, 1.0);
    auto t = build_feature_table(c, idx, IntensitySource::Raw);
    for (size_t k = 0; k < t.rows.size(); k += 17)
        CHECK(t.rows[k][20] ==
              doctest::Approx(flatness(idx, c, t.point_ids[k])).epsilon(1e-15));
}

TEST_CASE("feature table: uncolorized ground point is named in the error") {
    PointCloud c;
    c.records.push_back(pt(0, 0, 0));
    SpatialIndex idx(c, 1.0);
    try {
        build_feature_table(c, idx, IntensitySource::Raw);
        FAIL("expected error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("0") != std::string::npos);
    }
}

TEST_CASE("feature table: encoded/raw source must match the cloud flag") {
    PointCloud c;
    c.records.push_back(pt(0, 0, 0));
    color_all(c);
    SpatialIndex idx(c, 1.0);
    CHECK_THROWS_AS(build_feature_table(c, idx, IntensitySource::Encoded), validation_error);
    c.intensity_encoded = true;
    CHECK_THROWS_AS(build_feature_table(c, idx, IntensitySource::Raw), validation_error);
}

TEST_CASE("duplicating every neighbor leaves stats and flatness unchanged") {
    Rng rng(88);
    PointCloud c;
    for (int i = 0; i < 40; ++i) {
        auto p = pt(rng.uniform(0, 1.2), rng.uniform(0, 1.2), rng.normal(0, 0.4),
                    rng.uniform(1, 50));
        p.has_color = true;
        p.color = {static_cast<float>(rng.uniform()), 0.5f, 0.5f, 0.5f};
        c.records.push_back(p);
    }
    PointCloud doubled = c;
    for (const auto& p : c.records) doubled.records.push_back(p);
    SpatialIndex i1(c, 1.0), i2(doubled, 1.0);
    auto s1 = neighborhood_stats(i1, c, 0);
    auto s2 = neighborhood_stats(i2, doubled, 0);
    for (int k = 0; k < 15; ++k) CHECK(s1[k] == doctest::Approx(s2[k]).epsilon(1e-12));
    CHECK(flatness(i1, c, 0, 2.0) ==
          doctest::Approx(flatness(i2, doubled, 0, 2.0)).epsilon(1e-12));
}

TEST_CASE("rigid xy-rotation preserves flatness") {
    Rng rng(13);
    PointCloud c;
    for (int i = 0; i < 60; ++i)
        c.records.push_back(
            pt(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.normal(0, 0.25)));
    SpatialIndex i1(c, 1.0);
    double before = flatness(i1, c, 0, 2.0);

    double theta = 0.7345;
    PointCloud rot;
    for (const auto& p : c.records) {
        auto q = p;
        q.x = std::cos(theta) * p.x - std::sin(theta) * p.y;
        q.y = std::sin(theta) * p.x + std::cos(theta) * p.y;
        rot.records.push_back(q);
    }
    SpatialIndex i2(rot, 1.0);
    CHECK(flatness(i2, rot, 0, 2.0) == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("flatness stays within [0, 1/3] on random neighborhoods") {
    Rng rng(101);
    PointCloud c;
    for (int i = 0; i < 2000; ++i)
        c.records.push_back(pt(rng.uniform(0, 15), rng.uniform(0, 15),
                               rng.normal(0, rng.uniform(0.01, 2.0))));
    SpatialIndex idx(c, 1.0);
    for (uint32_t id = 0; id < c.size(); id += 23) {
        double f = flatness(idx, c, id);
        CHECK(f >= 0.0);
        CHECK(f <= 1.0 / 3.0 + 1e-12);
    }
}

TEST_SUITE_END();
