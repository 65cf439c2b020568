#include "terraseg/reference_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace terraseg::reference {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const int k = weight.n();
    const int pad = k / 2;
    const int cin = weight.w(), cout = weight.c();
    Tensor out(input.n(), input.h(), input.w(), cout);
    for (int n = 0; n < input.n(); ++n)
        for (int co = 0; co < cout; ++co)
            for (int y = 0; y < input.h(); ++y)
                for (int x = 0; x < input.w(); ++x) {
                    double acc = bias[co];
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            int sy = y + dy - pad, sx = x + dx - pad;
                            if (sy < 0 || sy >= input.h() || sx < 0 || sx >= input.w())
                                continue;
                            for (int ci = 0; ci < cin; ++ci)
                                acc += input.at(n, sy, sx, ci) * weight.at(dy, dx, ci, co);
                        }
                    out.at(n, y, x, co) = acc;
                }
    return out;
}

std::vector<uint32_t> radius_scan(const PointCloud& cloud, double cx, double cy, double radius) {
    std::vector<uint32_t> out;
    double r2 = radius * radius;
    for (uint32_t i = 0; i < cloud.size(); ++i) {
        double dx = cloud.records[i].x - cx;
        double dy = cloud.records[i].y - cy;
        if (dx * dx + dy * dy < r2) out.push_back(i);
    }
    return out;
}

std::array<double, 15> neighborhood_stats(const PointCloud& cloud, uint32_t point_id,
                                          double radius) {
    const auto& p = cloud.records[point_id];
    auto ids = radius_scan(cloud, p.x, p.y, radius);
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::array<double, 15> out{};
    for (int f = 0; f < 5; ++f) {
        out[3 * f + 0] = inf;
        out[3 * f + 1] = -inf;
    }
    size_t n_all = 0, n_color = 0;
    for (uint32_t id : ids) {
        const auto& q = cloud.records[id];
        out[0] = std::min(out[0], q.intensity);
        out[1] = std::max(out[1], q.intensity);
        out[2] += q.intensity;
        ++n_all;
        if (!q.has_color) continue;
        double v[4] = {q.color.r, q.color.g, q.color.b, q.color.nir};
        for (int f = 0; f < 4; ++f) {
            out[3 * (f + 1) + 0] = std::min(out[3 * (f + 1) + 0], v[f]);
            out[3 * (f + 1) + 1] = std::max(out[3 * (f + 1) + 1], v[f]);
            out[3 * (f + 1) + 2] += v[f];
        }
        ++n_color;
    }
    out[2] /= static_cast<double>(n_all);
    for (int f = 1; f < 5; ++f) out[3 * f + 2] /= static_cast<double>(n_color);
    return out;
}

Raster rasterize_features(const PointCloud& cloud, double origin_x, double origin_y,
                          double cell_size, int width, int height) {
    Raster r(origin_x, origin_y, cell_size, width, height);
    for (const char* ch : {"ground", "return_num", "z", "r", "g", "b", "nir", "intensity"})
        r.add_channel(ch);
    size_t n = r.cell_count();
    std::vector<int64_t> count(n, 0), ground_count(n, 0), color_count(n, 0);
    std::vector<double> sum_z(n, 0), max_ret(n, 0), sum_int(n, 0);
    std::vector<double> sum_c[4] = {std::vector<double>(n, 0), std::vector<double>(n, 0),
                                    std::vector<double>(n, 0), std::vector<double>(n, 0)};
    std::vector<uint8_t> all_ground(n, 1);
    for (const auto& p : cloud.records) {
        int col, row;
        if (!r.cell_of(p.x, p.y, col, row)) continue;
        size_t i = r.idx(col, row);
        ++count[i];
        sum_z[i] += p.z;
        max_ret[i] = std::max(max_ret[i], static_cast<double>(p.return_number));
        if (p.las_class == LasClass::Ground) {
            ++ground_count[i];
            sum_int[i] += p.intensity;
        } else {
            all_ground[i] = 0;
        }
        if (p.has_color) {
            ++color_count[i];
            sum_c[0][i] += p.color.r;
            sum_c[1][i] += p.color.g;
            sum_c[2][i] += p.color.b;
            sum_c[3][i] += p.color.nir;
        }
    }
    const char* color_names[4] = {"r", "g", "b", "nir"};
    for (size_t i = 0; i < n; ++i) {
        if (count[i] == 0) continue;
        r.channel("ground")[i] = all_ground[i] ? 1.0 : 0.0;
        r.channel("return_num")[i] = max_ret[i];
        r.channel("z")[i] = sum_z[i] / static_cast<double>(count[i]);
        if (color_count[i] > 0)
            for (int f = 0; f < 4; ++f)
                r.channel(color_names[f])[i] = sum_c[f][i] / static_cast<double>(color_count[i]);
        if (ground_count[i] > 0)
            r.channel("intensity")[i] = sum_int[i] / static_cast<double>(ground_count[i]);
    }
    return r;
}

std::vector<double> stitch_blend(const std::vector<std::vector<double>>& tile_probs,
                                 const std::vector<TilePlacement>& placements,
                                 const std::vector<double>& weights, int size, int width,
                                 int height) {
    std::vector<double> acc(static_cast<size_t>(width) * height, 0.0);
    std::vector<double> wsum(acc.size(), 0.0);
    for (size_t t = 0; t < placements.size(); ++t) {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                size_t cell = static_cast<size_t>(placements[t].row0 + y) * width +
                              (placements[t].col0 + x);
                double w = weights[static_cast<size_t>(y) * size + x];
                acc[cell] += w * tile_probs[t][static_cast<size_t>(y) * size + x];
                wsum[cell] += w;
            }
    }
    for (size_t i = 0; i < acc.size(); ++i)
        if (wsum[i] > 0.0) acc[i] /= wsum[i];
    return acc;
}

std::array<double, 3> power_eigenvalues(const std::array<std::array<double, 3>, 3>& m) {
    auto mul = [](const std::array<std::array<double, 3>, 3>& a,
                  const std::array<double, 3>& v) {
        std::array<double, 3> out{};
        for (int i = 0; i < 3; ++i)
            out[i] = a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2];
        return out;
    };
    auto work = m;
    std::array<double, 3> eig{};
    std::array<std::array<double, 3>, 3> vecs{};
    for (int e = 0; e < 3; ++e) {
        std::array<double, 3> v = {1.0, 0.7 + e * 0.1, 0.3 - e * 0.05};
        double lam = 0.0;
        for (int it = 0; it < 3000; ++it) {
            auto nv = mul(work, v);
            double norm = std::sqrt(nv[0] * nv[0] + nv[1] * nv[1] + nv[2] * nv[2]);
            if (norm < 1e-300) break;
            for (int i = 0; i < 3; ++i) nv[i] /= norm;
            double diff = std::abs(nv[0] - v[0]) + std::abs(nv[1] - v[1]) +
                          std::abs(nv[2] - v[2]);
            double diff_neg = std::abs(nv[0] + v[0]) + std::abs(nv[1] + v[1]) +
                              std::abs(nv[2] + v[2]);
            v = nv;
            if (std::min(diff, diff_neg) < 1e-14 && it > 4) break;
        }
        auto av = mul(work, v);
        lam = v[0] * av[0] + v[1] * av[1] + v[2] * av[2];
        eig[e] = lam;
        vecs[e] = v;
        // Deflate.
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) work[i][j] -= lam * v[i] * v[j];
    }
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

} // namespace terraseg::reference
