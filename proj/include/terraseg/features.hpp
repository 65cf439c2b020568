#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "terraseg/grid_index.hpp"
#include "terraseg/types.hpp"

namespace terraseg {

// Column order: point value of [intensity, r, g, b, nir], then the
// (min, max, mean) triple of each of those five over the 1 m neighborhood,
// then flatness.
constexpr int kFeatureDim = 21;
using FeatureVector = std::array<double, kFeatureDim>;

std::vector<std::string> feature_column_names();

struct FeatureTable {
    std::vector<FeatureVector> rows;
    std::vector<uint32_t> point_ids;
    std::vector<uint8_t> labels;   // 1 = fortified
    std::vector<ClassTag> tags;
};

enum class IntensitySource { Raw, Encoded };

// Nearest-cell lookup of the four ortho channels (r, g, b, nir) at each
// point. Points outside the ortho extent or over nodata keep has_color =
// false; the return value counts them.
size_t colorize(PointCloud& cloud, const Raster& ortho);

// (min, max, mean) of intensity, r, g, b, nir over the strict-1m
// xy-neighborhood (all classes, the point itself included). Neighbors
// without color are skipped for the color statistics only.
std::array<double, 15> neighborhood_stats(const SpatialIndex& index, const PointCloud& cloud,
                                          uint32_t point_id, double radius = 1.0);

// Smallest covariance eigenvalue over the eigenvalue sum for the xyz
// neighborhood; 0 for degenerate neighborhoods (< 3 points or tiny trace).
double flatness(const SpatialIndex& index, const PointCloud& cloud, uint32_t point_id,
                double radius = 1.0);

// One row per Ground point (cloud order); neighborhoods span all classes.
FeatureTable build_feature_table(const PointCloud& cloud, const SpatialIndex& index,
                                 IntensitySource source, double radius = 1.0);

// Attaches labels from the polygon set to an existing table.
void attach_labels(FeatureTable& table, const PointCloud& cloud, const PolygonSet& labels);

void save_feature_table(const std::string& path, const FeatureTable& table);
FeatureTable load_feature_table(const std::string& path);

} // namespace terraseg
