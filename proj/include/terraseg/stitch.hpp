#pragma once

#include <vector>

#include "terraseg/types.hpp"
#include "terraseg/unet.hpp"

namespace terraseg {

// Placement offsets along one axis: multiples of `stride` with the last
// placement clamped flush to the far edge so every cell is covered.
std::vector<int> axis_placements(int dim, int size, int stride);

struct TilePlacement {
    int col0 = 0, row0 = 0;
};

std::vector<TilePlacement> tile_cover(int width, int height, int size = 96, int stride = 48);

// Separable tent: wgt(r, c) = t(r) * t(c) with
// t(i) = min(i + 1, size - i) / ceil(size / 2); strictly positive, maximal
// at the center.
std::vector<double> blend_weights(int size = 96);

// Per-cell weighted blend of sigmoid(logits) over every covering tile.
// Feature channels are cropped the same way training tiles are (z
// standardized per tile, nodata as 0).
Raster stitch_predictions(UNetModel& model, const Raster& features,
                          const std::vector<std::string>& channels, int size = 96,
                          int stride = 48);

} // namespace terraseg
