#pragma once

#include <vector>

#include "terraseg/types.hpp"

namespace terraseg {

// Even-odd ray casting. Points exactly on an edge count as inside.
bool point_in_ring(double x, double y, const std::vector<std::array<double, 2>>& ring);

// Outer ring containment minus holes (even-odd over all rings).
bool point_in_polygon(double x, double y, const Polygon& poly);

// fortified <=> inside any polygon of the set; tag from the first containing
// polygon in set order, Rest otherwise. Depends only on (x, y).
std::vector<PointLabel> label_points(const PointCloud& cloud, const PolygonSet& labels);

// Signed area is positive for counter-clockwise rings (shoelace).
double ring_area(const std::vector<std::array<double, 2>>& ring);

// Area of the polygon: |outer| minus the hole areas.
double polygon_area(const Polygon& poly);

struct Rect {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    double area() const { return (max_x - min_x) * (max_y - min_y); }
};

// Sutherland-Hodgman clip of a ring against an axis-aligned rectangle.
std::vector<std::array<double, 2>> clip_ring_to_rect(
    const std::vector<std::array<double, 2>>& ring, const Rect& rect);

// Sum over polygons of area(p ∩ cell) / area(cell). Overlapping polygons can
// push the sum above 1; the result is clamped and `clamped` reports it.
double intersection_fraction(const Rect& cell, const PolygonSet& polys, bool* clamped = nullptr);

// Axis-aligned rectangle as a Polygon (counter-clockwise outer ring).
Polygon rect_polygon(const Rect& r);

} // namespace terraseg
