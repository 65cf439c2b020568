#include "terraseg/features.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "terraseg/geometry.hpp"
#include "terraseg/parallel.hpp"

namespace terraseg {

std::vector<std::string> feature_column_names() {
    std::vector<std::string> names = {"intensity", "r", "g", "b", "nir"};
    for (const char* f : {"intensity", "r", "g", "b", "nir"}) {
        names.push_back(std::string(f) + "_min");
        names.push_back(std::string(f) + "_max");
        names.push_back(std::string(f) + "_mean");
    }
    names.push_back("flatness");
    return names;
}

size_t colorize(PointCloud& cloud, const Raster& ortho) {
    for (const char* ch : {"r", "g", "b", "nir"})
        if (!ortho.has_channel(ch))
            throw validation_error(std::string("ortho raster missing channel ") + ch);
    const auto& r = ortho.channel("r");
    const auto& g = ortho.channel("g");
    const auto& b = ortho.channel("b");
    const auto& nir = ortho.channel("nir");
    const double nd_r = ortho.nodata("r"), nd_g = ortho.nodata("g");
    const double nd_b = ortho.nodata("b"), nd_nir = ortho.nodata("nir");

    size_t n = cloud.size();
    size_t missing = 0;
#pragma omp parallel for schedule(static) num_threads(thread_count()) reduction(+ : missing)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        PointRecord& p = cloud.records[i];
        int col, row;
        if (!ortho.cell_of(p.x, p.y, col, row)) {
            p.has_color = false;
            ++missing;
            continue;
        }
        size_t idx = ortho.idx(col, row);
        if (r[idx] == nd_r || g[idx] == nd_g || b[idx] == nd_b || nir[idx] == nd_nir) {
            p.has_color = false;
            ++missing;
            continue;
        }
        p.has_color = true;
        p.color = {static_cast<float>(r[idx]), static_cast<float>(g[idx]),
                   static_cast<float>(b[idx]), static_cast<float>(nir[idx])};
    }
    return missing;
}

std::array<double, 15> neighborhood_stats(const SpatialIndex& index, const PointCloud& cloud,
                                          uint32_t point_id, double radius) {
    const PointRecord& p = cloud.records[point_id];
    if (!p.has_color) throw validation_error("neighborhood_stats: point " +
                                             std::to_string(point_id) + " has no color");
    constexpr double inf = std::numeric_limits<double>::infinity();
    double mn[5] = {inf, inf, inf, inf, inf};
    double mx[5] = {-inf, -inf, -inf, -inf, -inf};
    double sum[5] = {0, 0, 0, 0, 0};
    size_t cnt_all = 0, cnt_color = 0;

    index.visit_radius(p.x, p.y, radius, [&](uint32_t id) {
        const PointRecord& q = cloud.records[id];
        mn[0] = std::min(mn[0], q.intensity);
        mx[0] = std::max(mx[0], q.intensity);
        sum[0] += q.intensity;
        ++cnt_all;
        if (!q.has_color) return;
        const double v[4] = {q.color.r, q.color.g, q.color.b, q.color.nir};
        for (int k = 0; k < 4; ++k) {
            mn[k + 1] = std::min(mn[k + 1], v[k]);
            mx[k + 1] = std::max(mx[k + 1], v[k]);
            sum[k + 1] += v[k];
        }
        ++cnt_color;
    });

    std::array<double, 15> out{};
    for (int k = 0; k < 5; ++k) {
        size_t cnt = k == 0 ? cnt_all : cnt_color;
        out[3 * k + 0] = mn[k];
        out[3 * k + 1] = mx[k];
        out[3 * k + 2] = sum[k] / static_cast<double>(cnt);
    }
    return out;
}

namespace {

// Cyclic Jacobi sweeps for a symmetric 3x3; accurate and independent of the
// characteristic-polynomial route used by the test oracle.
std::array<double, 3> jacobi_eigenvalues(double m[3][3]) {
    for (int sweep = 0; sweep < 32; ++sweep) {
        double off = std::abs(m[0][1]) + std::abs(m[0][2]) + std::abs(m[1][2]);
        if (off < 1e-300) break;
        double scale = std::abs(m[0][0]) + std::abs(m[1][1]) + std::abs(m[2][2]) + off;
        if (off <= 1e-15 * scale) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (m[p][q] == 0.0) continue;
                double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                double mpp = m[p][p], mqq = m[q][q], mpq = m[p][q];
                m[p][p] = c * c * mpp - 2.0 * s * c * mpq + s * s * mqq;
                m[q][q] = s * s * mpp + 2.0 * s * c * mpq + c * c * mqq;
                m[p][q] = 0.0;
                m[q][p] = 0.0;
                int r = 3 - p - q;
                double mrp = m[r][p], mrq = m[r][q];
                m[r][p] = c * mrp - s * mrq;
                m[p][r] = m[r][p];
                m[r][q] = s * mrp + c * mrq;
                m[q][r] = m[r][q];
            }
        }
    }
    std::array<double, 3> ev = {m[0][0], m[1][1], m[2][2]};
    std::sort(ev.begin(), ev.end());
    return ev;
}

} // namespace

double flatness(const SpatialIndex& index, const PointCloud& cloud, uint32_t point_id,
                double radius) {
    const PointRecord& p = cloud.records[point_id];
    double sx = 0, sy = 0, sz = 0;
    size_t n = 0;
    index.visit_radius(p.x, p.y, radius, [&](uint32_t id) {
        const PointRecord& q = cloud.records[id];
        sx += q.x;
        sy += q.y;
        sz += q.z;
        ++n;
    });
    if (n < 3) return 0.0;
    double cx = sx / n, cy = sy / n, cz = sz / n;
    double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    index.visit_radius(p.x, p.y, radius, [&](uint32_t id) {
        const PointRecord& q = cloud.records[id];
        double dx = q.x - cx, dy = q.y - cy, dz = q.z - cz;
        m[0][0] += dx * dx;
        m[0][1] += dx * dy;
        m[0][2] += dx * dz;
        m[1][1] += dy * dy;
        m[1][2] += dy * dz;
        m[2][2] += dz * dz;
    });
    double inv = 1.0 / static_cast<double>(n);
    m[0][0] *= inv;
    m[0][1] *= inv;
    m[0][2] *= inv;
    m[1][1] *= inv;
    m[1][2] *= inv;
    m[2][2] *= inv;
    m[1][0] = m[0][1];
    m[2][0] = m[0][2];
    m[2][1] = m[1][2];
    double trace = m[0][0] + m[1][1] + m[2][2];
    if (trace < 1e-12) return 0.0;
    auto ev = jacobi_eigenvalues(m);
    double lam_min = std::max(ev[0], 0.0);
    return lam_min / trace;
}

FeatureTable build_feature_table(const PointCloud& cloud, const SpatialIndex& index,
                                 IntensitySource source, double radius) {
    if (source == IntensitySource::Encoded && !cloud.intensity_encoded)
        throw validation_error("feature table requested encoded intensity on a raw cloud");
    if (source == IntensitySource::Raw && cloud.intensity_encoded)
        throw validation_error("feature table requested raw intensity on an encoded cloud");

    std::vector<uint32_t> ground_ids;
    for (uint32_t i = 0; i < cloud.size(); ++i)
        if (cloud.records[i].las_class == LasClass::Ground) ground_ids.push_back(i);

    FeatureTable table;
    table.rows.resize(ground_ids.size());
    table.point_ids = ground_ids;
    table.labels.assign(ground_ids.size(), 0);
    table.tags.assign(ground_ids.size(), ClassTag::Rest);

    for (uint32_t id : ground_ids)
        if (!cloud.records[id].has_color)
            throw validation_error("build_feature_table: uncolorized ground point id " +
                                   std::to_string(id));

#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long k = 0; k < static_cast<long>(ground_ids.size()); ++k) {
        uint32_t id = ground_ids[k];
        const PointRecord& p = cloud.records[id];
        FeatureVector& fv = table.rows[k];
        fv[0] = p.intensity;
        fv[1] = p.color.r;
        fv[2] = p.color.g;
        fv[3] = p.color.b;
        fv[4] = p.color.nir;
        auto stats = neighborhood_stats(index, cloud, id, radius);
        for (int i = 0; i < 15; ++i) fv[5 + i] = stats[i];
        fv[20] = flatness(index, cloud, id, radius);
    }
    return table;
}

void attach_labels(FeatureTable& table, const PointCloud& cloud, const PolygonSet& labels) {
    auto pl = label_points(cloud, labels);
    for (size_t k = 0; k < table.point_ids.size(); ++k) {
        table.labels[k] = pl[table.point_ids[k]].fortified ? 1 : 0;
        table.tags[k] = pl[table.point_ids[k]].tag;
    }
}

void save_feature_table(const std::string& path, const FeatureTable& table) {
    std::ofstream f(path);
    if (!f.good()) throw pipeline_error("cannot write feature table: " + path);
    f.precision(17);
    for (const auto& name : feature_column_names()) f << name << ',';
    f << "point_id,label,class_tag\n";
    for (size_t i = 0; i < table.rows.size(); ++i) {
        for (double v : table.rows[i]) f << v << ',';
        f << table.point_ids[i] << ',' << int(table.labels[i]) << ','
          << class_tag_name(table.tags[i]) << "\n";
    }
}

FeatureTable load_feature_table(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw validation_error("cannot open feature table: " + path);
    std::string line;
    if (!std::getline(f, line)) throw validation_error("empty feature table: " + path);
    FeatureTable table;
    size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        FeatureVector fv;
        try {
            for (int i = 0; i < kFeatureDim; ++i) {
                std::getline(ss, tok, ',');
                fv[i] = std::stod(tok);
            }
            std::getline(ss, tok, ',');
            table.point_ids.push_back(static_cast<uint32_t>(std::stoul(tok)));
            std::getline(ss, tok, ',');
            table.labels.push_back(static_cast<uint8_t>(std::stoi(tok)));
            std::getline(ss, tok, ',');
            table.tags.push_back(class_tag_from_name(tok));
        } catch (const validation_error&) {
            throw;
        } catch (const std::exception&) {
            throw validation_error(path + ":" + std::to_string(line_no) +
                                   ": malformed feature row");
        }
        table.rows.push_back(fv);
    }
    return table;
}

} // namespace terraseg
