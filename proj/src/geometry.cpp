#include "terraseg/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace terraseg {

namespace {

// Distance-free on-segment test; collinearity via cross product with a
// tolerance scaled to the segment extent.
bool on_segment(double px, double py, const std::array<double, 2>& a,
                const std::array<double, 2>& b) {
    double cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    double span = std::max(std::abs(b[0] - a[0]), std::abs(b[1] - a[1]));
    if (std::abs(cross) > 1e-12 * std::max(1.0, span)) return false;
    if (px < std::min(a[0], b[0]) - 1e-12 || px > std::max(a[0], b[0]) + 1e-12) return false;
    if (py < std::min(a[1], b[1]) - 1e-12 || py > std::max(a[1], b[1]) + 1e-12) return false;
    return true;
}

} // namespace

bool point_in_ring(double x, double y, const std::vector<std::array<double, 2>>& ring) {
    size_t n = ring.size();
    bool inside = false;
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto& a = ring[j];
        const auto& b = ring[i];
        if (on_segment(x, y, a, b)) return true; // edge counts as inside
        bool crosses = (b[1] > y) != (a[1] > y);
        if (crosses) {
            double x_at = b[0] + (y - b[1]) / (a[1] - b[1]) * (a[0] - b[0]);
            if (x < x_at) inside = !inside;
        }
    }
    return inside;
}

bool point_in_polygon(double x, double y, const Polygon& poly) {
    if (!point_in_ring(x, y, poly.outer)) return false;
    for (const auto& hole : poly.holes) {
        // Edge of a hole still counts as inside the polygon.
        bool on_hole_edge = false;
        size_t n = hole.size();
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
            if (on_segment(x, y, hole[j], hole[i])) {
                on_hole_edge = true;
                break;
            }
        }
        if (on_hole_edge) continue;
        if (point_in_ring(x, y, hole)) return false;
    }
    return true;
}

std::vector<PointLabel> label_points(const PointCloud& cloud, const PolygonSet& labels) {
    std::vector<PointLabel> out(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.records[i];
        for (const auto& tp : labels.polys) {
            if (point_in_polygon(p.x, p.y, tp.shape)) {
                out[i].fortified = true;
                out[i].tag = tp.tag;
                break;
            }
        }
    }
    return out;
}

double ring_area(const std::vector<std::array<double, 2>>& ring) {
    double acc = 0.0;
    size_t n = ring.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        acc += ring[j][0] * ring[i][1] - ring[i][0] * ring[j][1];
    }
    return 0.5 * acc;
}

double polygon_area(const Polygon& poly) {
    double a = std::abs(ring_area(poly.outer));
    for (const auto& h : poly.holes) a -= std::abs(ring_area(h));
    return std::max(a, 0.0);
}

namespace {

enum class Side { Left, Right, Bottom, Top };

bool inside_edge(const std::array<double, 2>& p, Side s, const Rect& r) {
    switch (s) {
        case Side::Left: return p[0] >= r.min_x;
        case Side::Right: return p[0] <= r.max_x;
        case Side::Bottom: return p[1] >= r.min_y;
        case Side::Top: return p[1] <= r.max_y;
    }
    return false;
}

std::array<double, 2> edge_intersect(const std::array<double, 2>& a,
                                     const std::array<double, 2>& b, Side s, const Rect& r) {
    double t = 0.0;
    switch (s) {
        case Side::Left: t = (r.min_x - a[0]) / (b[0] - a[0]); break;
        case Side::Right: t = (r.max_x - a[0]) / (b[0] - a[0]); break;
        case Side::Bottom: t = (r.min_y - a[1]) / (b[1] - a[1]); break;
        case Side::Top: t = (r.max_y - a[1]) / (b[1] - a[1]); break;
    }
    return {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])};
}

} // namespace

std::vector<std::array<double, 2>> clip_ring_to_rect(
    const std::vector<std::array<double, 2>>& ring, const Rect& rect) {
    std::vector<std::array<double, 2>> poly = ring;
    for (Side s : {Side::Left, Side::Right, Side::Bottom, Side::Top}) {
        if (poly.empty()) break;
        std::vector<std::array<double, 2>> next;
        next.reserve(poly.size() + 4);
        for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
            const auto& cur = poly[i];
            const auto& prev = poly[j];
            bool cur_in = inside_edge(cur, s, rect);
            bool prev_in = inside_edge(prev, s, rect);
            if (cur_in) {
                if (!prev_in) next.push_back(edge_intersect(prev, cur, s, rect));
                next.push_back(cur);
            } else if (prev_in) {
                next.push_back(edge_intersect(prev, cur, s, rect));
            }
        }
        poly = std::move(next);
    }
    return poly;
}

double intersection_fraction(const Rect& cell, const PolygonSet& polys, bool* clamped) {
    double cell_area = cell.area();
    if (cell_area <= 0.0) throw validation_error("intersection_fraction: degenerate cell");
    double acc = 0.0;
    for (const auto& tp : polys.polys) {
        auto clipped = clip_ring_to_rect(tp.shape.outer, cell);
        if (clipped.size() >= 3) acc += std::abs(ring_area(clipped));
        for (const auto& hole : tp.shape.holes) {
            auto ch = clip_ring_to_rect(hole, cell);
            if (ch.size() >= 3) acc -= std::abs(ring_area(ch));
        }
    }
    double frac = acc / cell_area;
    if (clamped != nullptr) *clamped = frac > 1.0;
    return std::clamp(frac, 0.0, 1.0);
}

Polygon rect_polygon(const Rect& r) {
    Polygon p;
    p.outer = {{r.min_x, r.min_y}, {r.max_x, r.min_y}, {r.max_x, r.max_y}, {r.min_x, r.max_y}};
    return p;
}

} // namespace terraseg
