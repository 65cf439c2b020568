#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "terraseg/geometry.hpp"
#include "terraseg/grid_index.hpp"
#include "terraseg/io.hpp"
#include "terraseg/reference_kernels.hpp"
#include "terraseg/rng.hpp"
#include "test_util.hpp"

using namespace terraseg;

namespace {

PointRecord pt(double x, double y, double z = 0.0) {
    PointRecord p;
    p.x = x;
    p.y = y;
    p.z = z;
    p.intensity = 1.0;
    return p;
}

PointCloud random_cloud(size_t n, double extent, uint64_t seed) {
    Rng rng(seed);
    PointCloud c;
    for (size_t i = 0; i < n; ++i)
        c.records.push_back(pt(rng.uniform(0, extent), rng.uniform(0, extent),
                               rng.uniform(0, 5)));
    return c;
}

} // namespace

TEST_SUITE_BEGIN("core");

TEST_CASE("load_points csv: empty file gives empty cloud, bbox errors") {
    testutil::TempDir tmp("csv_empty");
    {
        std::ofstream f(tmp.file("p.csv"));
        f << "x,y,z,intensity,scan_angle,return_number,number_of_returns,las_class,sensor_id\n";
    }
    PointCloud c = load_points(tmp.file("p.csv"), PointFormat::Csv);
    CHECK(c.records.empty());
    CHECK_THROWS_AS(c.bbox(), validation_error);
}

TEST_CASE("load_points csv: singleton bbox") {
    testutil::TempDir tmp("csv_one");
    {
        std::ofstream f(tmp.file("p.csv"));
        f << "x,y,z,intensity,scan_angle,return_number,number_of_returns,las_class,sensor_id\n";
        f << "0,0,1,10,0,1,1,ground,0\n";
    }
    PointCloud c = load_points(tmp.file("p.csv"), PointFormat::Csv);
    REQUIRE(c.records.size() == 1);
    BBox b = c.bbox();
    CHECK(b.min_x == 0.0);
    CHECK(b.max_x == 0.0);
    CHECK(b.min_y == 0.0);
    CHECK(b.max_y == 0.0);
}

TEST_CASE("load_points csv: return_number above number_of_returns rejected") {
    testutil::TempDir tmp("csv_bad");
    {
        std::ofstream f(tmp.file("p.csv"));
        f << "x,y,z,intensity,scan_angle,return_number,number_of_returns,las_class,sensor_id\n";
        f << "0,0,1,10,0,3,2,ground,0\n";
    }
    CHECK_THROWS_AS(load_points(tmp.file("p.csv"), PointFormat::Csv), validation_error);
}

TEST_CASE("load_points csv: malformed row reports line number") {
    testutil::TempDir tmp("csv_mal");
    {
        std::ofstream f(tmp.file("p.csv"));
        f << "x,y,z,intensity,scan_angle,return_number,number_of_returns,las_class,sensor_id\n";
        f << "0,0,1,10,0,1,1,ground,0\n";
        f << "0,oops,1,10,0,1,1,ground,0\n";
    }
    try {
        load_points(tmp.file("p.csv"), PointFormat::Csv);
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
}

TEST_CASE("points binary round trip, with and without color") {
    testutil::TempDir tmp("bin_rt");
    PointCloud c = random_cloud(257, 50.0, 9);
    c.records[3].las_class = LasClass::Vegetation;
    c.records[3].return_number = 2;
    c.records[3].number_of_returns = 3;
    c.records[5].sensor_id = 4;
    c.records[5].scan_angle = -12;

    SUBCASE("uncolored") {
        save_points(tmp.file("p.bin"), c, PointFormat::Bin);
        PointCloud d = load_points(tmp.file("p.bin"), PointFormat::Bin);
        REQUIRE(d.records.size() == c.records.size());
        for (size_t i = 0; i < c.records.size(); ++i) {
            CHECK(d.records[i].x == c.records[i].x);
            CHECK(d.records[i].intensity == c.records[i].intensity);
            CHECK(d.records[i].sensor_id == c.records[i].sensor_id);
            CHECK(d.records[i].las_class == c.records[i].las_class);
            CHECK(d.records[i].has_color == false);
        }
    }
    SUBCASE("colored") {
        for (auto& p : c.records) {
            p.has_color = true;
            p.color = {0.25f, 0.5f, 0.75f, 1.0f};
        }
        save_points(tmp.file("p.bin"), c, PointFormat::Bin);
        PointCloud d = load_points(tmp.file("p.bin"), PointFormat::Bin);
        REQUIRE(d.records.size() == c.records.size());
        CHECK(d.records[7].has_color);
        CHECK(d.records[7].color.nir == 1.0f);
    }
    SUBCASE("csv round trip preserves values") {
        save_points(tmp.file("p.csv"), c, PointFormat::Csv);
        PointCloud d = load_points(tmp.file("p.csv"), PointFormat::Csv);
        REQUIRE(d.records.size() == c.records.size());
        CHECK(d.records[11].x == doctest::Approx(c.records[11].x).epsilon(1e-15));
        CHECK(d.records[3].number_of_returns == 3);
    }
}

TEST_CASE("build_index: empty cloud, all queries empty") {
    PointCloud c;
    SpatialIndex idx(c, 1.0);
    CHECK(idx.radius_query(0, 0, 5.0).empty());
}

TEST_CASE("build_index: single point found within radius") {
    PointCloud c;
    c.records.push_back(pt(2.0, 3.0));
    SpatialIndex idx(c, 1.0);
    auto ids = idx.radius_query(2.0, 3.0, 0.5);
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] == 0);
}

TEST_CASE("radius_query: strict inequality excludes the boundary point") {
    PointCloud c;
    c.records.push_back(pt(0.0, 0.0));
    c.records.push_back(pt(1.0, 0.0)); // exactly at distance 1
    SpatialIndex idx(c, 1.0);
    auto ids = idx.radius_query(0.0, 0.0, 1.0);
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] == 0);
}

TEST_CASE("index equals linear scan on random clouds") {
    PointCloud c = random_cloud(10000, 80.0, 1234);
    SpatialIndex idx(c, 1.0);
    Rng rng(77);
    for (int q = 0; q < 100; ++q) {
        double cx = rng.uniform(-5, 85), cy = rng.uniform(-5, 85);
        double r = rng.uniform(0.2, 3.0);
        auto got = idx.radius_query(cx, cy, r);
        auto want = reference::radius_scan(c, cx, cy, r);
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK(got == want);
    }
}

TEST_CASE("point_in_polygon basics") {
    Polygon sq = rect_polygon({0, 0, 1, 1});
    CHECK(point_in_polygon(0.5, 0.5, sq));
    CHECK_FALSE(point_in_polygon(1.5, 0.5, sq));
    // Edge and corner count as inside.
    CHECK(point_in_polygon(1.0, 0.5, sq));
    CHECK(point_in_polygon(0.0, 0.0, sq));
}

TEST_CASE("point_in_polygon: hole excludes") {
    Polygon p = rect_polygon({0, 0, 10, 10});
    p.holes.push_back({{3, 3}, {7, 3}, {7, 7}, {3, 7}});
    CHECK_FALSE(point_in_polygon(5, 5, p));
    CHECK(point_in_polygon(1, 1, p));
    // Even-odd over the two rings: inside outer xor inside hole.
    CHECK(point_in_polygon(3.0, 5.0, p)); // on the hole edge stays inside
}

TEST_CASE("containment is translation invariant") {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        Polygon p = rect_polygon({rng.uniform(0, 4), rng.uniform(0, 4),
                                  rng.uniform(5, 9), rng.uniform(5, 9)});
        double x = rng.uniform(-1, 10), y = rng.uniform(-1, 10);
        double dx = rng.uniform(-100, 100), dy = rng.uniform(-100, 100);
        bool before = point_in_polygon(x, y, p);
        Polygon q = p;
        for (auto& v : q.outer) {
            v[0] += dx;
            v[1] += dy;
        }
        CHECK(point_in_polygon(x + dx, y + dy, q) == before);
    }
}

TEST_CASE("label_points: empty set, single polygon, overlap order") {
    PointCloud c;
    c.records.push_back(pt(0.5, 0.5));
    c.records.push_back(pt(5.0, 5.0));

    PolygonSet empty;
    auto l0 = label_points(c, empty);
    CHECK_FALSE(l0[0].fortified);
    CHECK(l0[0].tag == ClassTag::Rest);

    PolygonSet roads;
    roads.polys.push_back({rect_polygon({0, 0, 1, 1}), ClassTag::Road});
    auto l1 = label_points(c, roads);
    CHECK(l1[0].fortified);
    CHECK(l1[0].tag == ClassTag::Road);
    CHECK_FALSE(l1[1].fortified);

    // Overlapping polygons: first in set order wins the tag.
    PolygonSet both;
    both.polys.push_back({rect_polygon({0, 0, 1, 1}), ClassTag::Sidewalk});
    both.polys.push_back({rect_polygon({0, 0, 2, 2}), ClassTag::Terrace});
    auto l2 = label_points(c, both);
    CHECK(l2[0].fortified);
    CHECK(l2[0].tag == ClassTag::Sidewalk);

    PolygonSet swapped;
    swapped.polys.push_back({rect_polygon({0, 0, 2, 2}), ClassTag::Terrace});
    swapped.polys.push_back({rect_polygon({0, 0, 1, 1}), ClassTag::Sidewalk});
    auto l3 = label_points(c, swapped);
    CHECK(l3[0].tag == ClassTag::Terrace);
}

TEST_CASE("label_points is idempotent and uses only xy") {
    PointCloud c;
    c.records.push_back(pt(0.5, 0.5, 100.0));
    c.records.push_back(pt(0.5, 0.5, -3.0));
    PolygonSet set;
    set.polys.push_back({rect_polygon({0, 0, 1, 1}), ClassTag::Road});
    auto a = label_points(c, set);
    auto b = label_points(c, set);
    CHECK(a[0].fortified == b[0].fortified);
    CHECK(a[0].fortified == a[1].fortified); // z ignored
}

TEST_CASE("polygon validation") {
    Polygon bad;
    bad.outer = {{0, 0}, {1, 0}};
    CHECK_THROWS_AS(bad.validate(), validation_error);
    Polygon dup;
    dup.outer = {{0, 0}, {0, 0}, {1, 1}};
    CHECK_THROWS_AS(dup.validate(), validation_error);
}

TEST_CASE("geojson round trip") {
    testutil::TempDir tmp("geojson");
    PolygonSet set;
    set.polys.push_back({rect_polygon({0, 0, 5, 5}), ClassTag::Road});
    Polygon holed = rect_polygon({10, 10, 20, 20});
    holed.holes.push_back({{12, 12}, {14, 12}, {14, 14}, {12, 14}});
    set.polys.push_back({holed, ClassTag::UnpavedRoad});
    save_polygons(tmp.file("p.geojson"), set);
    PolygonSet got = load_polygons(tmp.file("p.geojson"));
    REQUIRE(got.size() == 2);
    CHECK(got.polys[0].tag == ClassTag::Road);
    CHECK(got.polys[1].tag == ClassTag::UnpavedRoad);
    REQUIRE(got.polys[1].shape.holes.size() == 1);
    CHECK(got.polys[0].shape.outer.size() == 4); // closure vertex stripped
}

TEST_CASE("raster round trip") {
    testutil::TempDir tmp("raster");
    Raster r(10.0, 20.0, 0.2, 7, 5);
    auto& a = r.add_channel("alpha", -1.0);
    auto& b = r.add_channel("beta");
    for (size_t i = 0; i < r.cell_count(); ++i) {
        a[i] = static_cast<double>(i) * 0.5;
        if (i % 3 == 0) b[i] = 42.0;
    }
    save_raster(tmp.file("r.tsrg"), r);
    Raster got = load_raster(tmp.file("r.tsrg"));
    CHECK(got.width() == 7);
    CHECK(got.height() == 5);
    CHECK(got.origin_x() == 10.0);
    CHECK(got.cell_size() == doctest::Approx(0.2));
    REQUIRE(got.channel_names().size() == 2);
    CHECK(got.nodata("alpha") == -1.0);
    CHECK(got.channel("alpha")[4] == doctest::Approx(2.0));
    CHECK(got.channel("beta")[3] == doctest::Approx(42.0));
    CHECK(got.channel("beta")[1] == Raster::kDefaultNodata);
}

TEST_SUITE_END();
