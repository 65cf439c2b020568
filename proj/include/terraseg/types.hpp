#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "terraseg/common.hpp"

namespace terraseg {

enum class LasClass : uint8_t { Ground = 0, Vegetation = 1, Building = 2, Other = 3 };

const char* las_class_name(LasClass c);
LasClass las_class_from_name(const std::string& name);

// Surface classes used for labels and the per-class error breakdown.
// Raster codes are the enum values; "max code wins" ties in cell labeling.
enum class ClassTag : uint8_t { Rest = 0, Road = 1, Sidewalk = 2, Terrace = 3, UnpavedRoad = 4 };

constexpr int kClassTagCount = 5;

const char* class_tag_name(ClassTag t);
ClassTag class_tag_from_name(const std::string& name);

struct Color {
    float r = 0, g = 0, b = 0, nir = 0;
};

struct PointRecord {
    double x = 0, y = 0, z = 0;
    double intensity = 0;      // raw return energy, >= 0
    int16_t scan_angle = 0;    // integer degrees
    uint8_t return_number = 1; // 1-based
    uint8_t number_of_returns = 1;
    LasClass las_class = LasClass::Ground;
    uint16_t sensor_id = 0; // measurement context
    bool has_color = false;
    Color color;

    void validate() const;
};

struct BBox {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    bool contains(double x, double y) const {
        return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
    }
};

struct PointLabel {
    bool fortified = false;
    ClassTag tag = ClassTag::Rest;
};

struct PointCloud {
    std::vector<PointRecord> records;
    // Set by encode_cloud; guards against double application.
    bool intensity_encoded = false;

    bool empty() const { return records.empty(); }
    size_t size() const { return records.size(); }

    // Throws validation_error on an empty cloud.
    BBox bbox() const;
};

// Ring stored open: first vertex != last, closure implicit.
struct Polygon {
    std::vector<std::array<double, 2>> outer;
    std::vector<std::vector<std::array<double, 2>>> holes;

    void validate() const;
};

struct TaggedPolygon {
    Polygon shape;
    ClassTag tag = ClassTag::Rest;
};

struct PolygonSet {
    std::vector<TaggedPolygon> polys;

    bool empty() const { return polys.empty(); }
    size_t size() const { return polys.size(); }
};

// Named-channel grid. Cell (col, row) covers
// [origin_x + col*cell, origin_x + (col+1)*cell) x [origin_y + row*cell, ...);
// row 0 is the southernmost row.
class Raster {
public:
    static constexpr double kDefaultNodata = -9999.0;

    Raster() = default;
    Raster(double origin_x, double origin_y, double cell_size, int width, int height);

    double origin_x() const { return origin_x_; }
    double origin_y() const { return origin_y_; }
    double cell_size() const { return cell_size_; }
    int width() const { return width_; }
    int height() const { return height_; }
    size_t cell_count() const { return static_cast<size_t>(width_) * height_; }

    std::vector<double>& add_channel(const std::string& name, double nodata = kDefaultNodata);
    bool has_channel(const std::string& name) const;
    std::vector<double>& channel(const std::string& name);
    const std::vector<double>& channel(const std::string& name) const;
    double nodata(const std::string& name) const;
    const std::vector<std::string>& channel_names() const { return names_; }

    size_t idx(int col, int row) const { return static_cast<size_t>(row) * width_ + col; }

    // Cell containing a world coordinate; false when outside the extent.
    bool cell_of(double x, double y, int& col, int& row) const;

    double cell_center_x(int col) const { return origin_x_ + (col + 0.5) * cell_size_; }
    double cell_center_y(int row) const { return origin_y_ + (row + 0.5) * cell_size_; }

    bool aligned_with(const Raster& other) const;

private:
    double origin_x_ = 0, origin_y_ = 0, cell_size_ = 0.2;
    int width_ = 0, height_ = 0;
    std::vector<std::string> names_;
    std::map<std::string, std::vector<double>> channels_;
    std::map<std::string, double> nodata_;
};

} // namespace terraseg
