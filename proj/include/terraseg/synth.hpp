#pragma once

#include <cstdint>
#include <vector>

#include "terraseg/types.hpp"

namespace terraseg {

// Monotone sensor response I = f(A, c) mapping surface absorption to raw
// intensity. The two default sensors use deliberately different curve
// families (concave power law vs convex quadratic) so their raw intensity
// distributions differ in shape, not just in scale.
struct SensorDistortion {
    enum class Kind : uint8_t { PowerLaw = 0, Quadratic = 1, Logarithmic = 2 };
    Kind kind = Kind::PowerLaw;
    double scale = 800.0;
    double param = 0.6;

    double apply(double absorption) const;
    double range() const { return apply(1.0) - apply(0.0); }
};

struct WorldSpec {
    uint64_t seed = 7;
    double extent = 200.0;        // square side, meters
    double density = 8.0;         // points per square meter
    double cell_size = 0.2;       // class/ortho raster resolution
    double sensor_split = 0.5;    // x fraction of the sensor boundary line
    double noise_frac = 0.05;     // intensity noise as share of sensor range
    double canopy_share = 0.65;   // canopy hit probability inside vegetation
    std::vector<SensorDistortion> sensors = {
        {SensorDistortion::Kind::PowerLaw, 800.0, 0.6},
        {SensorDistortion::Kind::Quadratic, 1100.0, 2.0},
    };

    void validate() const;
};

struct World {
    PointCloud points;   // uncolored; colors come from the ortho via colorize
    Raster ortho;        // r, g, b, nir
    PolygonSet labels;   // fortified polygons: road, sidewalk, terrace
    PolygonSet roads;    // public-road set used for harmonization
    PolygonSet grain;    // grain-field set used for harmonization
    Raster classes;      // channel class_tag, codes 0..4
};

World generate_world(const WorldSpec& spec);

} // namespace terraseg
