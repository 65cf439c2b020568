#pragma once

#include <string>

#include "terraseg/types.hpp"

namespace terraseg {

enum class PointFormat { Csv, Bin };

// CSV header:
//   x,y,z,intensity,scan_angle,return_number,number_of_returns,las_class,sensor_id[,r,g,b,nir]
// Binary layout (little-endian):
//   magic "TSPC", u32 version=1, u8 flags (bit0: records carry r,g,b,nir as 4xf32),
//   u64 count, then per record:
//   f64 x,y,z, f64 intensity, i16 scan_angle, u8 return_number, u8 number_of_returns,
//   u8 las_class, u16 sensor_id [, 4xf32 color].
PointCloud load_points(const std::string& path, PointFormat format);
void save_points(const std::string& path, const PointCloud& cloud, PointFormat format);

// Minimal GeoJSON FeatureCollection of Polygon features; optional "class"
// property maps to the polygon tag.
PolygonSet load_polygons(const std::string& path);
void save_polygons(const std::string& path, const PolygonSet& set);

// Raster container (little-endian):
//   magic "TSRG", u32 version=1, f64 origin_x, origin_y, cell_size,
//   u32 width, height, u16 channel count, then per channel:
//   u16 name length, UTF-8 name, f32 nodata, width*height f32 row-major
//   (row 0 = southernmost).
Raster load_raster(const std::string& path);
void save_raster(const std::string& path, const Raster& raster);

PointFormat point_format_from_path(const std::string& path);

} // namespace terraseg
