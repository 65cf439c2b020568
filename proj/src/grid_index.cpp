#include "terraseg/grid_index.hpp"

#include <algorithm>
#include <cmath>

namespace terraseg {

SpatialIndex::SpatialIndex(const PointCloud& cloud, double bucket_size)
    : bucket_size_(bucket_size), n_points_(cloud.size()) {
    if (bucket_size <= 0.0) throw validation_error("spatial index bucket_size must be > 0");
    if (n_points_ == 0) {
        cols_ = rows_ = 0;
        return;
    }
    BBox bb = cloud.bbox();
    min_x_ = bb.min_x;
    min_y_ = bb.min_y;
    cols_ = static_cast<int>(std::floor((bb.max_x - min_x_) / bucket_size_)) + 1;
    rows_ = static_cast<int>(std::floor((bb.max_y - min_y_) / bucket_size_)) + 1;
    buckets_.resize(static_cast<size_t>(cols_) * rows_);
    xs_.resize(n_points_);
    ys_.resize(n_points_);
    for (size_t i = 0; i < n_points_; ++i) {
        const auto& p = cloud.records[i];
        xs_[i] = p.x;
        ys_[i] = p.y;
        int bc = static_cast<int>(std::floor((p.x - min_x_) / bucket_size_));
        int br = static_cast<int>(std::floor((p.y - min_y_) / bucket_size_));
        bc = std::clamp(bc, 0, cols_ - 1);
        br = std::clamp(br, 0, rows_ - 1);
        buckets_[static_cast<size_t>(br) * cols_ + bc].push_back(static_cast<uint32_t>(i));
    }
}

void SpatialIndex::bucket_range(double min_x, double max_x, double min_y, double max_y, int& c0,
                                int& c1, int& r0, int& r1) const {
    c0 = std::clamp(static_cast<int>(std::floor((min_x - min_x_) / bucket_size_)), 0, cols_ - 1);
    c1 = std::clamp(static_cast<int>(std::floor((max_x - min_x_) / bucket_size_)), 0, cols_ - 1);
    r0 = std::clamp(static_cast<int>(std::floor((min_y - min_y_) / bucket_size_)), 0, rows_ - 1);
    r1 = std::clamp(static_cast<int>(std::floor((max_y - min_y_) / bucket_size_)), 0, rows_ - 1);
}

std::vector<uint32_t> SpatialIndex::radius_query(double cx, double cy, double radius) const {
    if (radius <= 0.0) throw validation_error("radius_query: radius must be > 0");
    std::vector<uint32_t> out;
    visit_radius(cx, cy, radius, [&](uint32_t id) { out.push_back(id); });
    return out;
}

SpatialIndex build_index(const PointCloud& cloud, double bucket_size) {
    return SpatialIndex(cloud, bucket_size);
}

} // namespace terraseg
