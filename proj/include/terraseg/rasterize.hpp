#pragma once

#include <cstdint>
#include <vector>

#include "terraseg/tensor.hpp"
#include "terraseg/types.hpp"

namespace terraseg {

struct GridSpec {
    double origin_x = 0, origin_y = 0;
    double cell_size = 0.2;
    int width = 0, height = 0;

    static GridSpec covering(const BBox& bb, double cell_size = 0.2);
};

// Channels: ground, return_num, z, r, g, b, nir, intensity.
// ground: 1 when all points in the cell are Ground, 0 when mixed, nodata
// when empty. return_num: max over all points. z: mean over all points.
// Color: mean over colored points. intensity: mean over Ground points only.
Raster rasterize_features(const PointCloud& cloud, const GridSpec& grid);

// Channel "label": 1 when any fortified point falls in the cell, 0 when the
// cell has only unfortified points, nodata when empty. Channel "class_tag":
// max tag code over the cell's fortified points, Rest when none.
Raster rasterize_labels(const PointCloud& cloud, const std::vector<PointLabel>& labels,
                        const GridSpec& grid);

// Channel "prob": max probability over the given points per cell.
Raster rasterize_point_predictions(const PointCloud& cloud, const std::vector<uint32_t>& ids,
                                   const std::vector<double>& probs, const GridSpec& grid);

// Per-tile standardization of one channel: v' = (v - mean) / (std + 1e-6)
// over non-nodata cells; nodata cells become 0.
void normalize_z(Tensor& tile, int channel, const std::vector<uint8_t>& valid);

// Axis-aligned sub-raster copy (all channels).
Raster crop_raster(const Raster& src, int col0, int row0, int width, int height);

} // namespace terraseg
