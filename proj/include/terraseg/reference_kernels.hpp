#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "terraseg/stitch.hpp"
#include "terraseg/tensor.hpp"
#include "terraseg/types.hpp"

namespace terraseg::reference {

// Plain serial implementations kept alongside the production kernels. The
// test suite checks bit-equality against them and the benchmark tool
// compares their timing; they are written from the definitions, not shared
// with the optimized paths.

// Naive same-padding cross-correlation.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Linear scan instead of the grid index (strict xy-distance).
std::vector<uint32_t> radius_scan(const PointCloud& cloud, double cx, double cy, double radius);

// Fold over a linear scan; layout matches features::neighborhood_stats.
std::array<double, 15> neighborhood_stats(const PointCloud& cloud, uint32_t point_id,
                                          double radius);

// Per-point scatter accumulation instead of cell binning.
Raster rasterize_features(const PointCloud& cloud, double origin_x, double origin_y,
                          double cell_size, int width, int height);

// Scatter-style blending over tiles, then the per-cell divide.
std::vector<double> stitch_blend(const std::vector<std::vector<double>>& tile_probs,
                                 const std::vector<TilePlacement>& placements,
                                 const std::vector<double>& weights, int size, int width,
                                 int height);

// Power iteration with deflation for symmetric 3x3 matrices (descending).
std::array<double, 3> power_eigenvalues(const std::array<std::array<double, 3>, 3>& m);

} // namespace terraseg::reference
