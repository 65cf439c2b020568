#include "terraseg/rasterize.hpp"

#include <algorithm>
#include <cmath>

#include "terraseg/parallel.hpp"

namespace terraseg {

GridSpec GridSpec::covering(const BBox& bb, double cell_size) {
    GridSpec g;
    g.origin_x = bb.min_x;
    g.origin_y = bb.min_y;
    g.cell_size = cell_size;
    g.width = static_cast<int>(std::floor((bb.max_x - bb.min_x) / cell_size)) + 1;
    g.height = static_cast<int>(std::floor((bb.max_y - bb.min_y) / cell_size)) + 1;
    return g;
}

namespace {

Raster make_raster(const GridSpec& g) {
    return Raster(g.origin_x, g.origin_y, g.cell_size, g.width, g.height);
}

// Bins point indices by cell: cells[i] holds the point ids of cell i in
// cloud order, so per-cell reductions are order-independent of threading.
std::vector<std::vector<uint32_t>> bin_points(const PointCloud& cloud, const Raster& r) {
    std::vector<std::vector<uint32_t>> cells(r.cell_count());
    for (uint32_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.records[i];
        int col, row;
        if (r.cell_of(p.x, p.y, col, row)) cells[r.idx(col, row)].push_back(i);
    }
    return cells;
}

} // namespace

Raster rasterize_features(const PointCloud& cloud, const GridSpec& grid) {
    Raster r = make_raster(grid);
    for (const char* ch : {"ground", "return_num", "z", "r", "g", "b", "nir", "intensity"})
        r.add_channel(ch);
    auto cells = bin_points(cloud, r);

    auto& ground = r.channel("ground");
    auto& retnum = r.channel("return_num");
    auto& z = r.channel("z");
    auto& cr = r.channel("r");
    auto& cg = r.channel("g");
    auto& cb = r.channel("b");
    auto& cnir = r.channel("nir");
    auto& inten = r.channel("intensity");

#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long i = 0; i < static_cast<long>(cells.size()); ++i) {
        const auto& ids = cells[i];
        if (ids.empty()) continue;
        bool all_ground = true;
        double max_ret = 0.0, sum_z = 0.0;
        double sum_c[4] = {0, 0, 0, 0};
        size_t n_color = 0, n_ground = 0;
        double sum_int = 0.0;
        for (uint32_t id : ids) {
            const auto& p = cloud.records[id];
            if (p.las_class == LasClass::Ground) {
                ++n_ground;
                sum_int += p.intensity;
            } else {
                all_ground = false;
            }
            max_ret = std::max(max_ret, static_cast<double>(p.return_number));
            sum_z += p.z;
            if (p.has_color) {
                sum_c[0] += p.color.r;
                sum_c[1] += p.color.g;
                sum_c[2] += p.color.b;
                sum_c[3] += p.color.nir;
                ++n_color;
            }
        }
        ground[i] = all_ground ? 1.0 : 0.0;
        retnum[i] = max_ret;
        z[i] = sum_z / static_cast<double>(ids.size());
        if (n_color > 0) {
            cr[i] = sum_c[0] / n_color;
            cg[i] = sum_c[1] / n_color;
            cb[i] = sum_c[2] / n_color;
            cnir[i] = sum_c[3] / n_color;
        }
        if (n_ground > 0) inten[i] = sum_int / static_cast<double>(n_ground);
    }
    return r;
}

Raster rasterize_labels(const PointCloud& cloud, const std::vector<PointLabel>& labels,
                        const GridSpec& grid) {
    if (labels.size() != cloud.size())
        throw validation_error("rasterize_labels: label count does not match cloud");
    Raster r = make_raster(grid);
    r.add_channel("label");
    r.add_channel("class_tag");
    auto cells = bin_points(cloud, r);
    auto& lab = r.channel("label");
    auto& tag = r.channel("class_tag");

#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long i = 0; i < static_cast<long>(cells.size()); ++i) {
        const auto& ids = cells[i];
        if (ids.empty()) continue;
        bool any_fortified = false;
        uint8_t max_code = 0;
        for (uint32_t id : ids) {
            if (!labels[id].fortified) continue;
            any_fortified = true;
            max_code = std::max(max_code, static_cast<uint8_t>(labels[id].tag));
        }
        lab[i] = any_fortified ? 1.0 : 0.0;
        tag[i] = static_cast<double>(max_code);
    }
    return r;
}

Raster rasterize_point_predictions(const PointCloud& cloud, const std::vector<uint32_t>& ids,
                                   const std::vector<double>& probs, const GridSpec& grid) {
    if (ids.size() != probs.size())
        throw validation_error("rasterize_point_predictions: ids/probs size mismatch");
    for (double p : probs)
        if (!(p >= 0.0 && p <= 1.0))
            throw validation_error("rasterize_point_predictions: probability outside [0, 1]");
    Raster r = make_raster(grid);
    auto& prob = r.add_channel("prob");
    double nd = r.nodata("prob");
    for (size_t k = 0; k < ids.size(); ++k) {
        const auto& p = cloud.records[ids[k]];
        int col, row;
        if (!r.cell_of(p.x, p.y, col, row)) continue;
        size_t i = r.idx(col, row);
        prob[i] = prob[i] == nd ? probs[k] : std::max(prob[i], probs[k]);
    }
    return r;
}

Raster crop_raster(const Raster& src, int col0, int row0, int width, int height) {
    if (col0 < 0 || row0 < 0 || col0 + width > src.width() || row0 + height > src.height())
        throw validation_error("crop_raster: window outside raster");
    Raster out(src.origin_x() + col0 * src.cell_size(), src.origin_y() + row0 * src.cell_size(),
               src.cell_size(), width, height);
    for (const auto& name : src.channel_names()) {
        auto& dst = out.add_channel(name, src.nodata(name));
        const auto& s = src.channel(name);
        for (int row = 0; row < height; ++row)
            for (int col = 0; col < width; ++col)
                dst[out.idx(col, row)] = s[src.idx(col0 + col, row0 + row)];
    }
    return out;
}

void normalize_z(Tensor& tile, int channel, const std::vector<uint8_t>& valid) {
    if (channel < 0 || channel >= tile.c()) throw validation_error("normalize_z: bad channel");
    if (valid.size() != static_cast<size_t>(tile.n()) * tile.h() * tile.w())
        throw validation_error("normalize_z: mask size mismatch");
    double sum = 0.0, sum2 = 0.0;
    size_t cnt = 0;
    size_t cell = 0;
    for (int n = 0; n < tile.n(); ++n)
        for (int y = 0; y < tile.h(); ++y)
            for (int x = 0; x < tile.w(); ++x, ++cell)
                if (valid[cell]) {
                    double v = tile.at(n, y, x, channel);
                    sum += v;
                    sum2 += v * v;
                    ++cnt;
                }
    double mean = cnt > 0 ? sum / cnt : 0.0;
    double var = cnt > 0 ? std::max(sum2 / cnt - mean * mean, 0.0) : 0.0;
    double denom = std::sqrt(var) + 1e-6;
    cell = 0;
    for (int n = 0; n < tile.n(); ++n)
        for (int y = 0; y < tile.h(); ++y)
            for (int x = 0; x < tile.w(); ++x, ++cell) {
                double& v = tile.at(n, y, x, channel);
                v = valid[cell] ? (v - mean) / denom : 0.0;
            }
}

} // namespace terraseg
