#include "terraseg/types.hpp"

#include <cmath>

namespace terraseg {

const char* las_class_name(LasClass c) {
    switch (c) {
        case LasClass::Ground: return "ground";
        case LasClass::Vegetation: return "vegetation";
        case LasClass::Building: return "building";
        case LasClass::Other: return "other";
    }
    return "other";
}

LasClass las_class_from_name(const std::string& name) {
    if (name == "ground") return LasClass::Ground;
    if (name == "vegetation") return LasClass::Vegetation;
    if (name == "building") return LasClass::Building;
    if (name == "other") return LasClass::Other;
    throw validation_error("unknown las_class: " + name);
}

const char* class_tag_name(ClassTag t) {
    switch (t) {
        case ClassTag::Rest: return "rest";
        case ClassTag::Road: return "road";
        case ClassTag::Sidewalk: return "sidewalk";
        case ClassTag::Terrace: return "terrace";
        case ClassTag::UnpavedRoad: return "unpaved-road";
    }
    return "rest";
}

ClassTag class_tag_from_name(const std::string& name) {
    if (name == "rest") return ClassTag::Rest;
    if (name == "road") return ClassTag::Road;
    if (name == "sidewalk") return ClassTag::Sidewalk;
    if (name == "terrace") return ClassTag::Terrace;
    if (name == "unpaved-road") return ClassTag::UnpavedRoad;
    throw validation_error("unknown class tag: " + name);
}

void PointRecord::validate() const {
    if (return_number < 1 || return_number > number_of_returns)
        throw validation_error("point record: return_number out of [1, number_of_returns]");
    if (intensity < 0.0) throw validation_error("point record: negative intensity");
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
        throw validation_error("point record: non-finite coordinate");
}

BBox PointCloud::bbox() const {
    if (records.empty()) throw validation_error("bbox of empty point cloud");
    BBox b{records[0].x, records[0].y, records[0].x, records[0].y};
    for (const auto& p : records) {
        b.min_x = std::min(b.min_x, p.x);
        b.min_y = std::min(b.min_y, p.y);
        b.max_x = std::max(b.max_x, p.x);
        b.max_y = std::max(b.max_y, p.y);
    }
    return b;
}

void Polygon::validate() const {
    auto check_ring = [](const std::vector<std::array<double, 2>>& ring) {
        if (ring.size() < 3) throw validation_error("polygon ring with fewer than 3 vertices");
        for (size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
            if (ring[i][0] == ring[j][0] && ring[i][1] == ring[j][1])
                throw validation_error("polygon ring with repeated consecutive vertex");
        }
    };
    check_ring(outer);
    for (const auto& h : holes) check_ring(h);
}

Raster::Raster(double origin_x, double origin_y, double cell_size, int width, int height)
    : origin_x_(origin_x), origin_y_(origin_y), cell_size_(cell_size), width_(width),
      height_(height) {
    if (cell_size <= 0.0) throw validation_error("raster cell_size must be > 0");
    if (width < 0 || height < 0) throw validation_error("negative raster dimensions");
}

std::vector<double>& Raster::add_channel(const std::string& name, double nodata) {
    if (channels_.count(name) != 0) throw validation_error("duplicate raster channel: " + name);
    names_.push_back(name);
    nodata_[name] = nodata;
    auto& v = channels_[name];
    v.assign(cell_count(), nodata);
    return v;
}

bool Raster::has_channel(const std::string& name) const { return channels_.count(name) != 0; }

std::vector<double>& Raster::channel(const std::string& name) {
    auto it = channels_.find(name);
    if (it == channels_.end()) throw validation_error("missing raster channel: " + name);
    return it->second;
}

const std::vector<double>& Raster::channel(const std::string& name) const {
    auto it = channels_.find(name);
    if (it == channels_.end()) throw validation_error("missing raster channel: " + name);
    return it->second;
}

double Raster::nodata(const std::string& name) const {
    auto it = nodata_.find(name);
    if (it == nodata_.end()) throw validation_error("missing raster channel: " + name);
    return it->second;
}

bool Raster::cell_of(double x, double y, int& col, int& row) const {
    double fc = std::floor((x - origin_x_) / cell_size_);
    double fr = std::floor((y - origin_y_) / cell_size_);
    col = static_cast<int>(fc);
    row = static_cast<int>(fr);
    return fc >= 0 && fr >= 0 && col < width_ && row < height_;
}

bool Raster::aligned_with(const Raster& other) const {
    return origin_x_ == other.origin_x_ && origin_y_ == other.origin_y_ &&
           cell_size_ == other.cell_size_ && width_ == other.width_ && height_ == other.height_;
}

} // namespace terraseg
