#include "terraseg/synth.hpp"

#include <algorithm>
#include <cmath>

#include "terraseg/geometry.hpp"
#include "terraseg/rng.hpp"

namespace terraseg {

double SensorDistortion::apply(double absorption) const {
    double a = std::clamp(absorption, 0.0, 1.0);
    switch (kind) {
        case Kind::PowerLaw: return scale * std::pow(a, param);
        case Kind::Quadratic: return scale * a * a;
        case Kind::Logarithmic: return scale * std::log1p(param * a);
    }
    return scale * a;
}

void WorldSpec::validate() const {
    if (extent <= 0.0) throw validation_error("generate_world: empty extent");
    if (extent < 50.0)
        throw validation_error("generate_world: extent below 50 m leaves no room for the layout");
    if (density <= 0.0) throw validation_error("generate_world: density must be > 0");
    if (sensors.size() < 1) throw validation_error("generate_world: at least one sensor");
    for (const auto& s : sensors) {
        double prev = s.apply(0.0);
        for (int i = 1; i <= 64; ++i) {
            double cur = s.apply(i / 64.0);
            if (cur <= prev)
                throw validation_error("generate_world: sensor distortion not increasing");
            prev = cur;
        }
    }
}

namespace {

// Surface palette (r, g, b, nir). Terrace and unpaved road are nearly the
// same color, and unpaved sits between the paved classes in absorption, so
// neither intensity nor color separates everything on its own.
struct ClassLook {
    double absorption;
    double abs_sigma;
    Color color;
};

ClassLook look_of(int code, bool vegetation, bool building) {
    if (vegetation) return {0.78, 0.05, {0.25f, 0.40f, 0.22f, 0.78f}};
    if (building) return {0.42, 0.03, {0.45f, 0.35f, 0.33f, 0.24f}};
    switch (code) {
        case 1: return {0.12, 0.025, {0.30f, 0.30f, 0.32f, 0.18f}}; // road
        case 2: return {0.33, 0.025, {0.56f, 0.55f, 0.53f, 0.30f}}; // sidewalk
        case 3: return {0.27, 0.025, {0.49f, 0.43f, 0.38f, 0.29f}}; // terrace
        case 4: return {0.22, 0.030, {0.50f, 0.44f, 0.37f, 0.31f}}; // unpaved road
        default: break;
    }
    return {0.55, 0.045, {0.36f, 0.47f, 0.28f, 0.66f}}; // grass / grain
}

struct Layout {
    std::vector<Rect> roads, sidewalks, terraces, unpaved, grain, buildings;
    std::vector<double> building_height;
    struct VegCluster {
        double x, y, r;
    };
    std::vector<VegCluster> veg;
};

std::vector<std::pair<double, double>> subtract_intervals(
    double lo, double hi, std::vector<std::pair<double, double>> blockers) {
    std::sort(blockers.begin(), blockers.end());
    std::vector<std::pair<double, double>> out;
    double cur = lo;
    for (const auto& b : blockers) {
        if (b.second <= cur) continue;
        if (b.first >= hi) break;
        if (b.first > cur) out.push_back({cur, std::min(b.first, hi)});
        cur = std::max(cur, b.second);
    }
    if (cur < hi) out.push_back({cur, hi});
    return out;
}

Layout build_layout(const WorldSpec& spec, Rng& rng) {
    const double E = spec.extent;
    Layout lay;

    Rect road1{0.0, 0.30 * E - 2.75, E, 0.30 * E + 2.75};
    Rect road2{0.0, 0.62 * E - 2.25, E, 0.62 * E + 2.25};
    Rect vroad1{0.24 * E - 2.0, road1.max_y, 0.24 * E + 2.0, road2.min_y};
    Rect vroad2{0.58 * E - 2.0, road1.max_y, 0.58 * E + 2.0, road2.min_y};
    Rect vroad3{0.80 * E - 2.0, 0.08 * E, 0.80 * E + 2.0, road1.min_y};
    lay.roads = {road1, road2, vroad1, vroad2, vroad3};

    double sw = 1.6; // sidewalk width
    auto add_sidewalk_row = [&](double y0, double y1,
                                const std::vector<std::pair<double, double>>& blockers) {
        for (auto [a, b] : subtract_intervals(0.0, E, blockers))
            if (b - a > 2.0) lay.sidewalks.push_back({a, y0, b, y1});
    };
    // Blockers widen by the sidewalk so strips touch but never overlap the
    // vertical roads or their own sidewalks.
    std::vector<std::pair<double, double>> mid_blockers = {
        {vroad1.min_x - sw, vroad1.max_x + sw}, {vroad2.min_x - sw, vroad2.max_x + sw}};
    std::vector<std::pair<double, double>> south_blockers = {
        {vroad3.min_x - sw, vroad3.max_x + sw}};
    add_sidewalk_row(road1.max_y, road1.max_y + sw, mid_blockers);
    add_sidewalk_row(road1.min_y - sw, road1.min_y, south_blockers);
    add_sidewalk_row(road2.min_y - sw, road2.min_y, mid_blockers);
    add_sidewalk_row(road2.max_y, road2.max_y + sw, {});
    for (const Rect& vr : {vroad1, vroad2}) {
        double y0 = vr.min_y + sw, y1 = vr.max_y - sw;
        if (y1 - y0 > 2.0) lay.sidewalks.push_back({vr.max_x, y0, vr.max_x + sw, y1});
    }

    // Residential rows: building behind the sidewalk, terrace behind the
    // building. Spacing keeps everything clear of the vertical roads.
    auto add_lots = [&](double y_side, bool north,
                        const std::vector<std::pair<double, double>>& blockers) {
        double bw = 8.0, bd = 6.0, tw = 5.0, td = 4.0, gap = 2.0;
        for (auto [a, b] : subtract_intervals(0.04 * E, 0.96 * E, blockers)) {
            for (double x = a + 2.0; x + bw + 2.0 <= b; x += bw + 6.0) {
                double by0 = north ? y_side + gap : y_side - gap - bd;
                double by1 = by0 + bd;
                lay.buildings.push_back({x, by0, x + bw, by1});
                lay.building_height.push_back(rng.uniform(3.5, 8.5));
                double ty0 = north ? by1 : by0 - td;
                double ty1 = ty0 + td;
                double tx = x + 1.5;
                lay.terraces.push_back({tx, ty0, tx + tw, ty1});
            }
        }
    };
    std::vector<std::pair<double, double>> lot_blockers = {
        {vroad1.min_x - sw - 1, vroad1.max_x + sw + 1},
        {vroad2.min_x - sw - 1, vroad2.max_x + sw + 1}};
    add_lots(road1.max_y + sw, true, lot_blockers);
    add_lots(road2.min_y - sw, false, lot_blockers);

    lay.unpaved = {
        {0.05 * E, 0.82 * E - 1.75, 0.95 * E, 0.82 * E + 1.75},
        {0.45 * E - 1.75, 0.04 * E, 0.45 * E + 1.75, 0.22 * E},
    };
    lay.grain = {
        {0.04 * E, 0.68 * E, 0.45 * E, 0.79 * E},
        {0.55 * E, 0.68 * E, 0.96 * E, 0.79 * E},
        {0.04 * E, 0.86 * E, 0.96 * E, 0.97 * E},
        {0.04 * E, 0.04 * E, 0.41 * E, 0.17 * E},
        {0.50 * E, 0.04 * E, 0.76 * E, 0.17 * E},
    };

    // Vegetation clusters in the rural bands, kept clear of every layout
    // rectangle so canopies only shade grass and grain.
    int target = std::max(3, static_cast<int>(E * E / 2000.0));
    std::vector<Rect> avoid = lay.roads;
    for (const auto& v : {lay.sidewalks, lay.terraces, lay.buildings, lay.unpaved})
        avoid.insert(avoid.end(), v.begin(), v.end());
    int attempts = 0;
    while (static_cast<int>(lay.veg.size()) < target && attempts < target * 60) {
        ++attempts;
        double r = rng.uniform(2.5, 6.0);
        double x = rng.uniform(r + 1, E - r - 1);
        double y = rng.uniform(r + 1, E - r - 1);
        bool ok = y > 0.66 * E || y < 0.24 * E;
        for (const Rect& a : avoid) {
            if (!ok) break;
            if (x + r + 1 > a.min_x && x - r - 1 < a.max_x && y + r + 1 > a.min_y &&
                y - r - 1 < a.max_y)
                ok = false;
        }
        if (ok) lay.veg.push_back({x, y, r});
    }
    return lay;
}

void paint_rect(Raster& r, const std::string& ch, const Rect& rect, double code) {
    auto& v = r.channel(ch);
    int c0 = static_cast<int>(std::floor((rect.min_x - r.origin_x()) / r.cell_size()));
    int c1 = static_cast<int>(std::floor((rect.max_x - r.origin_x()) / r.cell_size()));
    int r0 = static_cast<int>(std::floor((rect.min_y - r.origin_y()) / r.cell_size()));
    int r1 = static_cast<int>(std::floor((rect.max_y - r.origin_y()) / r.cell_size()));
    for (int row = std::max(r0, 0); row <= std::min(r1, r.height() - 1); ++row) {
        double cy = r.cell_center_y(row);
        if (cy < rect.min_y || cy > rect.max_y) continue;
        for (int col = std::max(c0, 0); col <= std::min(c1, r.width() - 1); ++col) {
            double cx = r.cell_center_x(col);
            if (cx < rect.min_x || cx > rect.max_x) continue;
            v[r.idx(col, row)] = code;
        }
    }
}

double terrain_z(double x, double y, double extent) {
    double u = x / extent, v = y / extent;
    return 40.0 + 5.0 * std::sin(2.6 * u + 0.4) * std::cos(1.9 * v) + 2.0 * u;
}

} // namespace

World generate_world(const WorldSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Layout lay = build_layout(spec, rng);
    const double E = spec.extent;
    int cells = static_cast<int>(std::ceil(E / spec.cell_size));

    World world;
    world.classes = Raster(0.0, 0.0, spec.cell_size, cells, cells);
    world.classes.add_channel("class_tag", -1.0);
    auto& cls = world.classes.channel("class_tag");
    std::fill(cls.begin(), cls.end(), 0.0);
    for (const Rect& r : lay.grain) paint_rect(world.classes, "class_tag", r, 0.0);
    for (const Rect& r : lay.unpaved) paint_rect(world.classes, "class_tag", r, 4.0);
    for (const Rect& r : lay.roads) paint_rect(world.classes, "class_tag", r, 1.0);
    for (const Rect& r : lay.sidewalks) paint_rect(world.classes, "class_tag", r, 2.0);
    for (const Rect& r : lay.terraces) paint_rect(world.classes, "class_tag", r, 3.0);

    // Helper masks on the same grid (not part of the returned rasters).
    Raster aux(0.0, 0.0, spec.cell_size, cells, cells);
    aux.add_channel("veg", 0.0);
    aux.add_channel("building", 0.0);
    aux.add_channel("grain", 0.0);
    auto& veg_mask = aux.channel("veg");
    auto& bld_mask = aux.channel("building");
    for (const Rect& r : lay.grain) paint_rect(aux, "grain", r, 1.0);
    for (size_t i = 0; i < lay.buildings.size(); ++i)
        paint_rect(aux, "building", lay.buildings[i], static_cast<double>(i + 1));
    for (const auto& vc : lay.veg) {
        Rect box{vc.x - vc.r, vc.y - vc.r, vc.x + vc.r, vc.y + vc.r};
        int c0 = std::max(0, static_cast<int>((box.min_x) / spec.cell_size));
        int c1 = std::min(cells - 1, static_cast<int>((box.max_x) / spec.cell_size));
        int r0 = std::max(0, static_cast<int>((box.min_y) / spec.cell_size));
        int r1 = std::min(cells - 1, static_cast<int>((box.max_y) / spec.cell_size));
        for (int row = r0; row <= r1; ++row)
            for (int col = c0; col <= c1; ++col) {
                double dx = world.classes.cell_center_x(col) - vc.x;
                double dy = world.classes.cell_center_y(row) - vc.y;
                if (dx * dx + dy * dy <= vc.r * vc.r) veg_mask[aux.idx(col, row)] = 1.0;
            }
    }

    // Ortho image: palette + slow modulation + per-cell noise.
    world.ortho = Raster(0.0, 0.0, spec.cell_size, cells, cells);
    for (const char* ch : {"r", "g", "b", "nir"}) world.ortho.add_channel(ch);
    {
        auto& rr = world.ortho.channel("r");
        auto& gg = world.ortho.channel("g");
        auto& bb = world.ortho.channel("b");
        auto& nn = world.ortho.channel("nir");
        for (int row = 0; row < cells; ++row) {
            for (int col = 0; col < cells; ++col) {
                size_t i = world.ortho.idx(col, row);
                bool veg = veg_mask[i] != 0.0;
                bool bld = bld_mask[i] != 0.0;
                ClassLook look = look_of(static_cast<int>(cls[i]), veg, bld);
                double cx = world.ortho.cell_center_x(col) / E;
                double cy = world.ortho.cell_center_y(row) / E;
                double mod = 0.03 * std::sin(9.0 * cx + 3.0 * cy) * std::cos(7.0 * cy);
                rr[i] = std::clamp(look.color.r + mod + rng.normal(0.0, 0.035), 0.0, 1.0);
                gg[i] = std::clamp(look.color.g + mod + rng.normal(0.0, 0.035), 0.0, 1.0);
                bb[i] = std::clamp(look.color.b + mod + rng.normal(0.0, 0.035), 0.0, 1.0);
                nn[i] = std::clamp(look.color.nir - mod + rng.normal(0.0, 0.035), 0.0, 1.0);
            }
        }
    }

    // Points.
    size_t n_points = static_cast<size_t>(spec.density * E * E);
    world.points.records.reserve(n_points);
    std::vector<double> noise_std(spec.sensors.size());
    for (size_t s = 0; s < spec.sensors.size(); ++s)
        noise_std[s] = spec.noise_frac * spec.sensors[s].range();
    double split_x = spec.sensor_split * E;

    for (size_t i = 0; i < n_points; ++i) {
        PointRecord p;
        p.x = rng.uniform(0.0, E);
        p.y = rng.uniform(0.0, E);
        int col, row;
        world.classes.cell_of(p.x, p.y, col, row);
        col = std::clamp(col, 0, cells - 1);
        row = std::clamp(row, 0, cells - 1);
        size_t ci = world.classes.idx(col, row);
        int code = static_cast<int>(cls[ci]);
        bool veg = veg_mask[ci] != 0.0;
        int building = static_cast<int>(bld_mask[ci]);

        bool canopy = veg && rng.uniform() < spec.canopy_share;
        ClassLook look = look_of(code, canopy, building > 0);
        double z = terrain_z(p.x, p.y, E) + rng.normal(0.0, 0.02);
        if (canopy) {
            p.las_class = LasClass::Vegetation;
            z += rng.uniform(2.0, 8.0);
            p.number_of_returns = rng.uniform() < 0.5 ? 2 : 3;
            p.return_number =
                static_cast<uint8_t>(1 + rng.below(p.number_of_returns - 1));
        } else if (building > 0) {
            p.las_class = LasClass::Building;
            z += lay.building_height[building - 1];
            p.return_number = 1;
            p.number_of_returns = 1;
        } else {
            p.las_class = LasClass::Ground;
            if (veg) {
                // Last return under a canopy.
                p.number_of_returns = rng.uniform() < 0.5 ? 2 : 3;
                p.return_number = p.number_of_returns;
            } else {
                p.return_number = 1;
                p.number_of_returns = 1;
            }
        }
        p.z = z;
        int sensor = p.x < split_x ? 0 : static_cast<int>(spec.sensors.size()) - 1;
        p.sensor_id = static_cast<uint16_t>(sensor);
        double absorption =
            std::clamp(look.absorption + rng.normal(0.0, look.abs_sigma), 0.02, 0.98);
        double intensity =
            spec.sensors[sensor].apply(absorption) + rng.normal(0.0, noise_std[sensor]);
        p.intensity = std::max(intensity, 0.0);
        p.scan_angle = static_cast<int16_t>(rng.below(31)) - 15;
        world.points.records.push_back(p);
    }

    auto tag_rects = [](const std::vector<Rect>& rects, ClassTag tag, PolygonSet& set) {
        for (const Rect& r : rects) set.polys.push_back({rect_polygon(r), tag});
    };
    tag_rects(lay.roads, ClassTag::Road, world.labels);
    tag_rects(lay.sidewalks, ClassTag::Sidewalk, world.labels);
    tag_rects(lay.terraces, ClassTag::Terrace, world.labels);
    tag_rects(lay.roads, ClassTag::Road, world.roads);
    tag_rects(lay.grain, ClassTag::Rest, world.grain);
    return world;
}

} // namespace terraseg
