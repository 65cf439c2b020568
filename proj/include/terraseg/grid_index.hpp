#pragma once

#include <cstdint>
#include <vector>

#include "terraseg/types.hpp"

namespace terraseg {

// Uniform grid over the cloud bbox. Bucket side defaults to the query
// radius so a radius query touches at most 9 buckets.
class SpatialIndex {
public:
    SpatialIndex(const PointCloud& cloud, double bucket_size);

    // Point ids with xy-distance strictly less than `radius` from center,
    // over all classes. Any order.
    std::vector<uint32_t> radius_query(double cx, double cy, double radius) const;

    // Visitor variant that avoids the output allocation in hot loops.
    template <typename Fn>
    void visit_radius(double cx, double cy, double radius, Fn&& fn) const {
        if (n_points_ == 0) return;
        double r2 = radius * radius;
        int c0, c1, r0, r1;
        bucket_range(cx - radius, cx + radius, cy - radius, cy + radius, c0, c1, r0, r1);
        for (int br = r0; br <= r1; ++br) {
            for (int bc = c0; bc <= c1; ++bc) {
                size_t b = static_cast<size_t>(br) * cols_ + bc;
                for (uint32_t id : buckets_[b]) {
                    double dx = xs_[id] - cx;
                    double dy = ys_[id] - cy;
                    if (dx * dx + dy * dy < r2) fn(id);
                }
            }
        }
    }

    size_t size() const { return n_points_; }
    double bucket_size() const { return bucket_size_; }

private:
    void bucket_range(double min_x, double max_x, double min_y, double max_y, int& c0, int& c1,
                      int& r0, int& r1) const;

    double bucket_size_ = 1.0;
    double min_x_ = 0, min_y_ = 0;
    int cols_ = 0, rows_ = 0;
    size_t n_points_ = 0;
    std::vector<std::vector<uint32_t>> buckets_;
    std::vector<double> xs_, ys_; // copies for cache-friendly distance tests
};

SpatialIndex build_index(const PointCloud& cloud, double bucket_size = 1.0);

} // namespace terraseg
