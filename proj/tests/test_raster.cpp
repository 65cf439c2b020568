#include <doctest.h>

#include <cmath>

#include "terraseg/geometry.hpp"
#include "terraseg/rasterize.hpp"
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

GridSpec grid5() {
    GridSpec g;
    g.origin_x = 0;
    g.origin_y = 0;
    g.cell_size = 0.2;
    g.width = 5;
    g.height = 5;
    return g;
}

} // namespace

TEST_SUITE_BEGIN("raster");

TEST_CASE("rasterize_features: single ground point fills its cell") {
    PointCloud c;
    auto p = pt(0.31, 0.15, 12.5, 200);
    p.return_number = 2;
    p.number_of_returns = 2;
    c.records.push_back(p);
    Raster r = rasterize_features(c, grid5());
    size_t i = r.idx(1, 0);
    CHECK(r.channel("ground")[i] == 1.0);
    CHECK(r.channel("z")[i] == doctest::Approx(12.5));
    CHECK(r.channel("return_num")[i] == doctest::Approx(2.0));
    CHECK(r.channel("intensity")[i] == doctest::Approx(200.0));
    // Neighboring cell stays nodata.
    CHECK(r.channel("z")[r.idx(2, 0)] == r.nodata("z"));
}

TEST_CASE("rasterize_features: mixed cell drops ground flag, intensity ignores non-ground") {
    PointCloud c;
    c.records.push_back(pt(0.1, 0.1, 1.0, 100, LasClass::Ground));
    c.records.push_back(pt(0.11, 0.1, 9.0, 999, LasClass::Building));
    Raster r = rasterize_features(c, grid5());
    size_t i = r.idx(0, 0);
    CHECK(r.channel("ground")[i] == 0.0);
    CHECK(r.channel("intensity")[i] == doctest::Approx(100.0));
    CHECK(r.channel("z")[i] == doctest::Approx(5.0)); // mean over all points
}

TEST_CASE("rasterize_features: z is the mean, color averaged over colored points") {
    PointCloud c;
    auto a = pt(0.1, 0.1, 1.0);
    auto b = pt(0.12, 0.1, 3.0);
    a.has_color = true;
    a.color = {0.2f, 0.2f, 0.2f, 0.2f};
    c.records.push_back(a);
    c.records.push_back(b);
    Raster r = rasterize_features(c, grid5());
    size_t i = r.idx(0, 0);
    CHECK(r.channel("z")[i] == doctest::Approx(2.0));
    CHECK(r.channel("r")[i] == doctest::Approx(0.2));
}

TEST_CASE("rasterize_labels: any fortified point marks the cell") {
    PointCloud c;
    std::vector<PointLabel> labels;
    c.records.push_back(pt(0.1, 0.1, 0));
    labels.push_back({true, ClassTag::Road});
    for (int i = 0; i < 3; ++i) {
        c.records.push_back(pt(0.11 + 0.01 * i, 0.1, 0));
        labels.push_back({false, ClassTag::Rest});
    }
    c.records.push_back(pt(0.5, 0.5, 0));
    labels.push_back({false, ClassTag::Rest});

    Raster r = rasterize_labels(c, labels, grid5());
    CHECK(r.channel("label")[r.idx(0, 0)] == 1.0);
    CHECK(r.channel("label")[r.idx(2, 2)] == 0.0);
    CHECK(r.channel("label")[r.idx(4, 4)] == r.nodata("label"));
    CHECK(r.channel("class_tag")[r.idx(0, 0)] == doctest::Approx(1.0));
    CHECK(r.channel("class_tag")[r.idx(2, 2)] == doctest::Approx(0.0));
}

TEST_CASE("rasterize_labels: max tag code wins inside a cell") {
    PointCloud c;
    std::vector<PointLabel> labels;
    c.records.push_back(pt(0.1, 0.1, 0));
    labels.push_back({true, ClassTag::Road});
    c.records.push_back(pt(0.12, 0.1, 0));
    labels.push_back({true, ClassTag::Terrace});
    Raster r = rasterize_labels(c, labels, grid5());
    CHECK(r.channel("class_tag")[r.idx(0, 0)] ==
          doctest::Approx(static_cast<double>(ClassTag::Terrace)));
}

TEST_CASE("rasterize_point_predictions: max rule and prob range check") {
    PointCloud c;
    c.records.push_back(pt(0.1, 0.1, 0));
    c.records.push_back(pt(0.12, 0.1, 0));
    c.records.push_back(pt(0.5, 0.5, 0));
    Raster r = rasterize_point_predictions(c, {0, 1, 2}, {0.2, 0.9, 0.7}, grid5());
    CHECK(r.channel("prob")[r.idx(0, 0)] == doctest::Approx(0.9));
    CHECK(r.channel("prob")[r.idx(2, 2)] == doctest::Approx(0.7));
    CHECK(r.channel("prob")[r.idx(4, 4)] == r.nodata("prob"));
    CHECK_THROWS_AS(rasterize_point_predictions(c, {0}, {1.5}, grid5()), validation_error);
}

TEST_CASE("max-rasterized predictions thresholded equal OR of thresholded points") {
    Rng rng(71);
    GridSpec g;
    g.cell_size = 0.2;
    g.width = 20;
    g.height = 20;
    PointCloud c;
    std::vector<uint32_t> ids;
    std::vector<double> probs;
    for (int i = 0; i < 400; ++i) {
        c.records.push_back(pt(rng.uniform(0, 4), rng.uniform(0, 4), 0));
        ids.push_back(static_cast<uint32_t>(i));
        probs.push_back(rng.uniform());
    }
    Raster r = rasterize_point_predictions(c, ids, probs, g);
    const auto& prob = r.channel("prob");
    double nd = r.nodata("prob");

    // Oracle: per-cell OR of per-point thresholded predictions.
    std::vector<int> any_pos(r.cell_count(), -1);
    for (size_t k = 0; k < ids.size(); ++k) {
        int col, row;
        if (!r.cell_of(c.records[k].x, c.records[k].y, col, row)) continue;
        size_t i = r.idx(col, row);
        if (any_pos[i] < 0) any_pos[i] = 0;
        if (probs[k] >= 0.5) any_pos[i] = 1;
    }
    for (size_t i = 0; i < r.cell_count(); ++i) {
        if (any_pos[i] < 0) {
            CHECK(prob[i] == nd);
        } else {
            CHECK((prob[i] >= 0.5) == (any_pos[i] == 1));
        }
    }
}

TEST_CASE("rasterization is independent of point order") {
    Rng rng(5);
    PointCloud c;
    for (int i = 0; i < 300; ++i) {
        auto p = pt(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 10),
                    rng.uniform(0, 500), rng.uniform() < 0.7 ? LasClass::Ground
                                                             : LasClass::Vegetation);
        p.return_number = 1 + static_cast<uint8_t>(rng.below(2));
        p.number_of_returns = 2;
        c.records.push_back(p);
    }
    PointCloud shuffled = c;
    Rng rng2(6);
    rng2.shuffle(shuffled.records);
    Raster a = rasterize_features(c, grid5());
    Raster b = rasterize_features(shuffled, grid5());
    for (const auto& name : a.channel_names())
        for (size_t i = 0; i < a.cell_count(); ++i)
            CHECK(a.channel(name)[i] == doctest::Approx(b.channel(name)[i]).epsilon(1e-12));
}

TEST_CASE("normalize_z: constant tile becomes zero") {
    Tensor tile(1, 4, 4, 2);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) tile.at(0, y, x, 1) = 5.0;
    std::vector<uint8_t> valid(16, 1);
    normalize_z(tile, 1, valid);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(tile.at(0, y, x, 1) == doctest::Approx(0.0));
}

TEST_CASE("normalize_z: two-level tile maps to +-1") {
    Tensor tile(1, 2, 2, 1);
    tile.at(0, 0, 0, 0) = 0.0;
    tile.at(0, 0, 1, 0) = 2.0;
    tile.at(0, 1, 0, 0) = 0.0;
    tile.at(0, 1, 1, 0) = 2.0;
    std::vector<uint8_t> valid(4, 1);
    normalize_z(tile, 0, valid);
    CHECK(tile.at(0, 0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(tile.at(0, 0, 1, 0) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("normalize_z: random tile standardized, nodata zeroed") {
    Rng rng(17);
    Tensor tile(1, 16, 16, 1);
    std::vector<uint8_t> valid(256, 0);
    for (int i = 0; i < 256; ++i) {
        if (rng.uniform() < 0.8) {
            valid[i] = 1;
            tile[i] = rng.normal(40.0, 3.0);
        } else {
            tile[i] = -9999.0;
        }
    }
    normalize_z(tile, 0, valid);
    double mean = 0, var = 0;
    size_t n = 0;
    for (int i = 0; i < 256; ++i) {
        if (!valid[i]) {
            CHECK(tile[i] == 0.0);
            continue;
        }
        mean += tile[i];
        ++n;
    }
    mean /= n;
    for (int i = 0; i < 256; ++i)
        if (valid[i]) var += (tile[i] - mean) * (tile[i] - mean);
    var /= n;
    CHECK(std::abs(mean) < 1e-3);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-3);
}

TEST_CASE("crop_raster copies window and origin") {
    Raster r(0, 0, 0.5, 10, 8);
    auto& ch = r.add_channel("v");
    for (size_t i = 0; i < r.cell_count(); ++i) ch[i] = static_cast<double>(i);
    Raster c = crop_raster(r, 2, 3, 4, 2);
    CHECK(c.origin_x() == doctest::Approx(1.0));
    CHECK(c.origin_y() == doctest::Approx(1.5));
    CHECK(c.channel("v")[c.idx(0, 0)] == doctest::Approx(r.channel("v")[r.idx(2, 3)]));
    CHECK(c.channel("v")[c.idx(3, 1)] == doctest::Approx(r.channel("v")[r.idx(5, 4)]));
    CHECK_THROWS_AS(crop_raster(r, 8, 0, 4, 2), validation_error);
}

TEST_SUITE_END();
