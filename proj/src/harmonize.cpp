#include "terraseg/harmonize.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "terraseg/geometry.hpp"
#include "terraseg/nn.hpp"
#include "terraseg/parallel.hpp"

namespace terraseg {

void HarmonizeConfig::validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0)
        throw validation_error("harmonize: loss weights must be >= 0");
    if (batch_n < 8) throw validation_error("harmonize: batch_n too small");
    if (cell_size <= 0) throw validation_error("harmonize: cell_size must be > 0");
}

// ---------------------------------------------------------------------------
// Encoder MLP

EncoderModel EncoderModel::init(std::vector<uint16_t> ids, double normalizer, Rng& rng) {
    if (ids.size() < 2) throw validation_error("encoder requires at least 2 contexts");
    if (normalizer <= 0) throw validation_error("encoder normalizer must be > 0");
    EncoderModel m;
    m.sensor_ids = std::move(ids);
    m.normalizer = normalizer;
    int in = 1 + m.n_contexts();
    m.w1 = Tensor::matrix(in, kHidden);
    m.b1 = Tensor::vec(kHidden);
    m.w2 = Tensor::matrix(kHidden, kHidden);
    m.b2 = Tensor::vec(kHidden);
    m.w3 = Tensor::matrix(kHidden, 1);
    m.b3 = Tensor::vec(1);
    for (size_t i = 0; i < m.w1.size(); ++i) m.w1[i] = rng.normal(0.0, 0.2);
    for (size_t i = 0; i < m.w2.size(); ++i) m.w2[i] = rng.normal(0.0, 0.1);
    for (size_t i = 0; i < m.w3.size(); ++i) m.w3[i] = rng.normal(0.0, 0.1);
    return m;
}

int EncoderModel::context_of(uint16_t sensor_id) const {
    auto it = std::find(sensor_ids.begin(), sensor_ids.end(), sensor_id);
    return it == sensor_ids.end() ? -1 : static_cast<int>(it - sensor_ids.begin());
}

namespace {

// Forward pass carrying (value, d/dx) duals; caches what the reverse pass
// over both components needs.
struct DualTrace {
    double x = 0;
    int ctx = 0;
    double h1[EncoderModel::kHidden], h2[EncoderModel::kHidden];
    double dh1[EncoderModel::kHidden], da2[EncoderModel::kHidden], dh2[EncoderModel::kHidden];
    double y = 0, dy = 0;
};

void dual_forward(const EncoderModel& m, double x, int ctx, DualTrace& t) {
    constexpr int H = EncoderModel::kHidden;
    t.x = x;
    t.ctx = ctx;
    double a1[H], da1[H];
    for (int j = 0; j < H; ++j) {
        // u = [x, onehot(ctx)], du/dx = e0.
        double a = m.b1[j] + x * m.w1.at(0, 0, 0, j) + m.w1.at(0, 0, 1 + ctx, j);
        a1[j] = a;
        da1[j] = m.w1.at(0, 0, 0, j);
    }
    for (int j = 0; j < H; ++j) {
        t.h1[j] = std::tanh(a1[j]);
        t.dh1[j] = (1.0 - t.h1[j] * t.h1[j]) * da1[j];
    }
    double a2[H];
    for (int j = 0; j < H; ++j) {
        double a = m.b2[j], da = 0.0;
        for (int i = 0; i < H; ++i) {
            a += t.h1[i] * m.w2.at(0, 0, i, j);
            da += t.dh1[i] * m.w2.at(0, 0, i, j);
        }
        a2[j] = a;
        t.da2[j] = da;
    }
    double y = m.b3[0], dy = 1.0; // skip connection of x
    for (int j = 0; j < H; ++j) {
        t.h2[j] = std::tanh(a2[j]);
        t.dh2[j] = (1.0 - t.h2[j] * t.h2[j]) * t.da2[j];
        y += t.h2[j] * m.w3.at(0, 0, j, 0);
        dy += t.dh2[j] * m.w3.at(0, 0, j, 0);
    }
    t.y = y + x;
    t.dy = dy;
}

// Reverse pass for loss terms that depend on both E and dE/dx.
void dual_backward(const EncoderModel& m, const DualTrace& t, double gy, double gd,
                   EncoderGrads& g) {
    constexpr int H = EncoderModel::kHidden;
    double gh2[H], gdh2[H];
    for (int j = 0; j < H; ++j) {
        double w3j = m.w3.at(0, 0, j, 0);
        gh2[j] = gy * w3j;
        gdh2[j] = gd * w3j;
        g.w3.at(0, 0, j, 0) += gy * t.h2[j] + gd * t.dh2[j];
    }
    g.b3[0] += gy;

    double ga2[H], gda2[H];
    for (int j = 0; j < H; ++j) {
        double one_m = 1.0 - t.h2[j] * t.h2[j];
        ga2[j] = gh2[j] * one_m + gdh2[j] * (-2.0 * t.h2[j] * one_m * t.da2[j]);
        gda2[j] = gdh2[j] * one_m;
    }

    double gh1[H], gdh1[H];
    for (int i = 0; i < H; ++i) {
        double acc = 0.0, dacc = 0.0;
        for (int j = 0; j < H; ++j) {
            double w = m.w2.at(0, 0, i, j);
            acc += w * ga2[j];
            dacc += w * gda2[j];
        }
        gh1[i] = acc;
        gdh1[i] = dacc;
    }
    for (int j = 0; j < H; ++j) {
        g.b2[j] += ga2[j];
        for (int i = 0; i < H; ++i)
            g.w2.at(0, 0, i, j) += t.h1[i] * ga2[j] + t.dh1[i] * gda2[j];
    }

    for (int j = 0; j < H; ++j) {
        double w1_0j = m.w1.at(0, 0, 0, j);
        double one_m = 1.0 - t.h1[j] * t.h1[j];
        // dh1 = one_m * w1(0, j); a1 depends on x and the one-hot row.
        double ga1 = gh1[j] * one_m + gdh1[j] * (-2.0 * t.h1[j] * one_m * w1_0j);
        double gda1 = gdh1[j] * one_m;
        g.b1[j] += ga1;
        g.w1.at(0, 0, 0, j) += ga1 * t.x + gda1; // d a1/d w1(0,j) = x; d da1/d w1(0,j) = 1
        g.w1.at(0, 0, 1 + t.ctx, j) += ga1;
    }
}

} // namespace

double EncoderModel::encode(double x_norm, int context) const {
    DualTrace t;
    dual_forward(*this, x_norm, context, t);
    return t.y;
}

double EncoderModel::derivative(double x_norm, int context) const {
    DualTrace t;
    dual_forward(*this, x_norm, context, t);
    return t.dy;
}

double encoder_derivative(const EncoderModel& model, double x_norm, int context) {
    return model.derivative(x_norm, context);
}

void EncoderGrads::zero() {
    w1.fill(0);
    b1.fill(0);
    w2.fill(0);
    b2.fill(0);
    w3.fill(0);
    b3.fill(0);
    w = 0;
    b = 0;
}

// ---------------------------------------------------------------------------
// Cell selection and dataset assembly

namespace {

double percentile99(std::vector<double> v) {
    if (v.empty()) throw validation_error("cannot take percentile of empty data");
    size_t k = static_cast<size_t>(std::ceil(0.99 * static_cast<double>(v.size())));
    k = std::min(std::max<size_t>(k, 1), v.size()) - 1;
    std::nth_element(v.begin(), v.begin() + k, v.end());
    double p = v[k];
    return p > 0 ? p : 1.0;
}

std::vector<uint16_t> sorted_sensor_ids(const PointCloud& cloud) {
    std::vector<uint16_t> ids;
    for (const auto& p : cloud.records) ids.push_back(p.sensor_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

} // namespace

std::vector<CellStats> select_training_cells(const PointCloud& cloud, const PolygonSet& grain,
                                             const PolygonSet& roads,
                                             const HarmonizeConfig& cfg) {
    cfg.validate();
    if (cloud.empty()) throw validation_error("select_training_cells: empty cloud");
    BBox bb = cloud.bbox();
    int ncx = static_cast<int>(std::floor((bb.max_x - bb.min_x) / cfg.cell_size)) + 1;
    int ncy = static_cast<int>(std::floor((bb.max_y - bb.min_y) / cfg.cell_size)) + 1;

    std::vector<CellStats> cells(static_cast<size_t>(ncx) * ncy);
    std::vector<int> ctx_seen(cells.size(), -2); // -2 empty, -1 mixed, else context
    auto ids = sorted_sensor_ids(cloud);
    auto ctx_of = [&](uint16_t sid) {
        return static_cast<int>(std::lower_bound(ids.begin(), ids.end(), sid) - ids.begin());
    };

    auto road_lab = label_points(cloud, roads);
    auto grain_lab = label_points(cloud, grain);

    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.records[i];
        int cx = static_cast<int>(std::floor((p.x - bb.min_x) / cfg.cell_size));
        int cy = static_cast<int>(std::floor((p.y - bb.min_y) / cfg.cell_size));
        cx = std::clamp(cx, 0, ncx - 1);
        cy = std::clamp(cy, 0, ncy - 1);
        size_t ci = static_cast<size_t>(cy) * ncx + cx;
        CellStats& cell = cells[ci];
        cell.cx = cx;
        cell.cy = cy;
        int ctx = ctx_of(p.sensor_id);
        if (ctx_seen[ci] == -2)
            ctx_seen[ci] = ctx;
        else if (ctx_seen[ci] >= 0 && ctx_seen[ci] != ctx)
            ctx_seen[ci] = -1;
        if (road_lab[i].fortified)
            ++cell.road_points;
        else if (grain_lab[i].fortified)
            ++cell.field_points;
    }

    for (size_t ci = 0; ci < cells.size(); ++ci) {
        CellStats& cell = cells[ci];
        cell.cx = static_cast<int>(ci % ncx);
        cell.cy = static_cast<int>(ci / ncx);
        cell.context = ctx_seen[ci] >= 0 ? ctx_seen[ci] : -1;
        if (ctx_seen[ci] == -2) continue; // empty cell
        Rect r{bb.min_x + cell.cx * cfg.cell_size, bb.min_y + cell.cy * cfg.cell_size,
               bb.min_x + (cell.cx + 1) * cfg.cell_size, bb.min_y + (cell.cy + 1) * cfg.cell_size};
        cell.road_fraction = intersection_fraction(r, roads);
        cell.grain_fraction = intersection_fraction(r, grain);
        cell.kept = ctx_seen[ci] >= 0 && cell.road_fraction > 0 && cell.grain_fraction > 0 &&
                    cell.road_points >= static_cast<size_t>(cfg.min_points) &&
                    cell.field_points >= static_cast<size_t>(cfg.min_points);
    }
    return cells;
}

EmbedDataset build_embed_dataset(const PointCloud& cloud, const PolygonSet& grain,
                                 const PolygonSet& roads, const HarmonizeConfig& cfg) {
    cfg.validate();
    auto cells = select_training_cells(cloud, grain, roads, cfg);
    EmbedDataset ds;
    ds.sensor_ids = sorted_sensor_ids(cloud);
    int nc = ds.n_contexts();
    if (nc < 2) throw validation_error("embed dataset needs at least 2 sensor contexts");
    std::vector<double> all;
    all.reserve(cloud.size());
    for (const auto& p : cloud.records) all.push_back(p.intensity);
    ds.normalizer = percentile99(std::move(all));

    BBox bb = cloud.bbox();
    int ncx = static_cast<int>(std::floor((bb.max_x - bb.min_x) / cfg.cell_size)) + 1;
    std::vector<uint8_t> cell_kept(cells.size(), 0);
    for (size_t i = 0; i < cells.size(); ++i) cell_kept[i] = cells[i].kept ? 1 : 0;

    auto road_lab = label_points(cloud, roads);
    auto grain_lab = label_points(cloud, grain);

    ds.road_pool.assign(nc, {});
    ds.field_pool.assign(nc, {});
    ds.unknown_pool.assign(nc, {});
    auto ctx_of = [&](uint16_t sid) {
        return static_cast<int>(std::lower_bound(ds.sensor_ids.begin(), ds.sensor_ids.end(),
                                                 sid) -
                                ds.sensor_ids.begin());
    };
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.records[i];
        int ncy = static_cast<int>(cells.size()) / ncx;
        int cx = std::clamp(static_cast<int>(std::floor((p.x - bb.min_x) / cfg.cell_size)), 0,
                            ncx - 1);
        int cy = std::clamp(static_cast<int>(std::floor((p.y - bb.min_y) / cfg.cell_size)), 0,
                            ncy - 1);
        size_t ci = static_cast<size_t>(cy) * ncx + cx;
        if (!cell_kept[ci]) continue;
        int ctx = ctx_of(p.sensor_id);
        if (road_lab[i].fortified)
            ds.road_pool[ctx].push_back(p.intensity);
        else if (grain_lab[i].fortified)
            ds.field_pool[ctx].push_back(p.intensity);
        else
            ds.unknown_pool[ctx].push_back(p.intensity);
    }

    for (int c = 0; c < nc; ++c) {
        if (ds.road_pool[c].empty() || ds.field_pool[c].empty())
            throw validation_error("sensor bucket " + std::to_string(ds.sensor_ids[c]) +
                                   " has zero eligible cells");
    }

    // Subsample the larger buckets to the smallest bucket so per-sensor
    // distributions carry similar weight.
    Rng rng(cfg.seed ^ 0x5EEDCE115ULL);
    auto subsample_to = [&rng](std::vector<double>& v, size_t target) {
        if (v.size() <= target) return;
        for (size_t i = 0; i < target; ++i) {
            size_t j = i + static_cast<size_t>(rng.below(v.size() - i));
            std::swap(v[i], v[j]);
        }
        v.resize(target);
    };
    size_t min_road = SIZE_MAX, min_field = SIZE_MAX;
    for (int c = 0; c < nc; ++c) {
        min_road = std::min(min_road, ds.road_pool[c].size());
        min_field = std::min(min_field, ds.field_pool[c].size());
    }
    for (int c = 0; c < nc; ++c) {
        subsample_to(ds.road_pool[c], min_road);
        subsample_to(ds.field_pool[c], min_field);
    }
    return ds;
}

EmbedBatch sample_batch(const EmbedDataset& ds, const HarmonizeConfig& cfg, Rng& rng) {
    int nc = ds.n_contexts();
    int n = cfg.batch_n;
    int labeled = static_cast<int>(std::lround(cfg.labeled_share * n));
    int n_road = static_cast<int>(std::lround(cfg.road_share * labeled));
    int n_field = labeled - n_road;
    int n_unknown = n - labeled;

    EmbedBatch batch;
    batch.n_contexts = nc;
    batch.n = n;
    batch.x.assign(static_cast<size_t>(nc) * n, 0.0);
    batch.labeled.assign(batch.x.size(), 0);
    batch.road.assign(batch.x.size(), 0);
    for (int c = 0; c < nc; ++c) {
        auto draw = [&](const std::vector<double>& pool) {
            return pool[static_cast<size_t>(rng.below(pool.size()))];
        };
        int k = 0;
        for (int i = 0; i < n_road; ++i, ++k) {
            size_t s = batch.at(c, k);
            batch.x[s] = draw(ds.road_pool[c]);
            batch.labeled[s] = 1;
            batch.road[s] = 1;
        }
        for (int i = 0; i < n_field; ++i, ++k) {
            size_t s = batch.at(c, k);
            batch.x[s] = draw(ds.field_pool[c]);
            batch.labeled[s] = 1;
        }
        const auto& upool = ds.unknown_pool[c].empty() ? ds.field_pool[c] : ds.unknown_pool[c];
        for (int i = 0; i < n_unknown; ++i, ++k) batch.x[batch.at(c, k)] = draw(upool);
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Losses

double emd_1d(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw validation_error("emd_1d: unequal sample sizes");
    if (u.empty()) throw validation_error("emd_1d: empty samples");
    std::vector<double> a = u, b = v;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

namespace {

// Indices of `m` evenly spaced order statistics in a sorted list of size sz.
std::vector<size_t> quantile_indices(size_t sz, size_t m) {
    std::vector<size_t> idx(m);
    for (size_t t = 0; t < m; ++t)
        idx[t] = std::min(sz - 1, static_cast<size_t>((t + 0.5) * sz / m));
    return idx;
}

struct SortedView {
    std::vector<size_t> order; // sample indices sorted by encoded value
};

} // namespace

EmbedLossParts embed_loss(const EmbedBatch& batch, const EncoderModel& model,
                          const HarmonizeConfig& cfg, EncoderGrads* grads) {
    int nc = batch.n_contexts;
    int n = batch.n;
    if (nc < 2) throw validation_error("embed_loss: need at least 2 contexts");
    if (static_cast<size_t>(nc) * n != batch.x.size())
        throw validation_error("embed_loss: batch size mismatch");

    size_t total = batch.x.size();
    std::vector<DualTrace> traces(total);
    std::vector<double> enc(total), denc(total);
    for (size_t s = 0; s < total; ++s) {
        int ctx = static_cast<int>(s) / n;
        dual_forward(model, batch.x[s] / model.normalizer, ctx, traces[s]);
        enc[s] = traces[s].y;
        denc[s] = traces[s].dy;
    }

    std::vector<double> gy(total, 0.0), gd(total, 0.0);
    EmbedLossParts parts;
    int npairs = nc * (nc - 1) / 2;

    // emd over full contexts
    std::vector<SortedView> all_sorted(nc);
    for (int c = 0; c < nc; ++c) {
        auto& o = all_sorted[c].order;
        o.resize(n);
        std::iota(o.begin(), o.end(), static_cast<size_t>(c) * n);
        std::sort(o.begin(), o.end(), [&](size_t a, size_t b) { return enc[a] < enc[b]; });
    }
    double w_all = 1.0 / (static_cast<double>(npairs) * n);
    for (int i = 0; i < nc; ++i) {
        for (int j = i + 1; j < nc; ++j) {
            for (int k = 0; k < n; ++k) {
                size_t a = all_sorted[i].order[k];
                size_t b = all_sorted[j].order[k];
                double d = enc[a] - enc[b];
                parts.emd_all += std::abs(d) * w_all;
                double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                gy[a] += cfg.alpha * s * w_all;
                gy[b] -= cfg.alpha * s * w_all;
            }
        }
    }

    // emd over labeled road / field subsets, subsampled per pair
    auto labeled_term = [&](bool want_road, double& part, int& skipped) {
        std::vector<std::vector<size_t>> sel(nc);
        for (int c = 0; c < nc; ++c) {
            for (int k = 0; k < n; ++k) {
                size_t s = batch.at(c, k);
                if (batch.labeled[s] && (batch.road[s] != 0) == want_road) sel[c].push_back(s);
            }
            std::sort(sel[c].begin(), sel[c].end(),
                      [&](size_t a, size_t b) { return enc[a] < enc[b]; });
        }
        struct PairTerm {
            int i, j;
            size_t m;
        };
        std::vector<PairTerm> live;
        for (int i = 0; i < nc; ++i)
            for (int j = i + 1; j < nc; ++j) {
                size_t m = std::min(sel[i].size(), sel[j].size());
                if (m == 0)
                    ++skipped;
                else
                    live.push_back({i, j, m});
            }
        if (live.empty()) {
            if (npairs > 0)
                throw pipeline_error(std::string("embed_loss: every context pair lacks ") +
                                     (want_road ? "road" : "field") + " samples");
            return;
        }
        double pair_w = 1.0 / static_cast<double>(live.size());
        for (const auto& pt : live) {
            auto ia = quantile_indices(sel[pt.i].size(), pt.m);
            auto ib = quantile_indices(sel[pt.j].size(), pt.m);
            double wk = pair_w / static_cast<double>(pt.m);
            for (size_t t = 0; t < pt.m; ++t) {
                size_t a = sel[pt.i][ia[t]];
                size_t b = sel[pt.j][ib[t]];
                double d = enc[a] - enc[b];
                part += std::abs(d) * wk;
                double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                gy[a] += cfg.alpha * s * wk;
                gy[b] -= cfg.alpha * s * wk;
            }
        }
    };
    labeled_term(true, parts.emd_road, parts.skipped_road_pairs);
    labeled_term(false, parts.emd_field, parts.skipped_field_pairs);

    // slope penalty over every batch point
    double w_m = 1.0 / static_cast<double>(total);
    for (size_t s = 0; s < total; ++s) {
        double slope = denc[s];
        double clamped = std::max(slope, 1e-6);
        parts.grad += -std::log(clamped) * w_m;
        if (slope > 1e-6) gd[s] += cfg.beta * (-1.0 / slope) * w_m;
    }

    // co-trained linear classifier on labeled points; denominator stays
    // |c|*n even though only masked points contribute.
    for (size_t s = 0; s < total; ++s) {
        if (!batch.labeled[s]) continue;
        double z = model.w * enc[s] + model.b;
        double target = batch.road[s] ? 1.0 : 0.0;
        double softplus_pos = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        double bce = target != 0.0 ? softplus_pos - z : softplus_pos;
        parts.cls += bce * w_m;
        if (grads != nullptr) {
            double dz = sigmoid(z) - target;
            gy[s] += cfg.gamma * dz * model.w * w_m;
            grads->w += cfg.gamma * dz * enc[s] * w_m;
            grads->b += cfg.gamma * dz * w_m;
        }
    }

    parts.total = cfg.alpha * (parts.emd_all + parts.emd_road + parts.emd_field) +
                  cfg.beta * parts.grad + cfg.gamma * parts.cls;

    if (grads != nullptr) {
        for (size_t s = 0; s < total; ++s) {
            if (gy[s] == 0.0 && gd[s] == 0.0) continue;
            dual_backward(model, traces[s], gy[s], gd[s], *grads);
        }
        // Chain rule for the x normalization is not needed: gradients are
        // only taken with respect to parameters here.
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Training

EncoderModel train_encoder(const EmbedDataset& dataset, const HarmonizeConfig& cfg,
                           TrainTrace* trace) {
    cfg.validate();
    if (dataset.n_contexts() < 2)
        throw validation_error("train_encoder: need at least 2 contexts");
    Rng rng(cfg.seed ^ 0xE9C0DE2ULL);
    EncoderModel model = EncoderModel::init(dataset.sensor_ids, dataset.normalizer, rng);

    EncoderGrads grads;
    grads.w1 = Tensor::matrix(1 + model.n_contexts(), EncoderModel::kHidden);
    grads.b1 = Tensor::vec(EncoderModel::kHidden);
    grads.w2 = Tensor::matrix(EncoderModel::kHidden, EncoderModel::kHidden);
    grads.b2 = Tensor::vec(EncoderModel::kHidden);
    grads.w3 = Tensor::matrix(EncoderModel::kHidden, 1);
    grads.b3 = Tensor::vec(1);

    Tensor wb = Tensor::vec(2);
    Tensor gwb = Tensor::vec(2);
    std::vector<ParamRef> params = {
        {"enc.w1", &model.w1, &grads.w1}, {"enc.b1", &model.b1, &grads.b1},
        {"enc.w2", &model.w2, &grads.w2}, {"enc.b2", &model.b2, &grads.b2},
        {"enc.w3", &model.w3, &grads.w3}, {"enc.b3", &model.b3, &grads.b3},
        {"enc.wb", &wb, &gwb},
    };
    OptimState opt;
    opt.lr = cfg.lr;

    std::vector<double> history;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        EmbedBatch batch = sample_batch(dataset, cfg, rng);
        grads.zero();
        auto parts = embed_loss(batch, model, cfg, &grads);
        if (!std::isfinite(parts.total))
            throw pipeline_error("train_encoder: loss diverged (non-finite)");
        history.push_back(parts.total);

        wb[0] = model.w;
        wb[1] = model.b;
        gwb[0] = grads.w;
        gwb[1] = grads.b;
        optimizer_step(params, opt);
        model.w = std::clamp(wb[0], -1.0, 1.0);
        model.b = wb[1];
        wb[0] = model.w;

        if (history.size() >= 11) {
            double mean_impr = 0.0;
            size_t e = history.size() - 1;
            for (size_t t = e - 9; t <= e; ++t) {
                double prev = history[t - 1];
                mean_impr += (prev - history[t]) / std::max(std::abs(prev), 1e-12);
            }
            mean_impr /= 10.0;
            if (mean_impr < cfg.tolerance) {
                if (trace != nullptr) trace->converged = true;
                break;
            }
        }
    }
    model.trained = true;
    if (trace != nullptr) {
        trace->loss = history;
        trace->epochs = static_cast<int>(history.size());
    }
    return model;
}

void encode_cloud(const EncoderModel& model, PointCloud& cloud) {
    if (cloud.intensity_encoded)
        throw validation_error("encode_cloud: cloud intensity already encoded");
    std::vector<int> ctx(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        int c = model.context_of(cloud.records[i].sensor_id);
        if (c < 0)
            throw validation_error("encode_cloud: unknown sensor_id " +
                                   std::to_string(cloud.records[i].sensor_id));
        ctx[i] = c;
    }
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long i = 0; i < static_cast<long>(cloud.size()); ++i) {
        auto& p = cloud.records[i];
        p.intensity = model.encode(p.intensity / model.normalizer, ctx[i]);
    }
    cloud.intensity_encoded = true;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {
constexpr char kEncMagic[4] = {'T', 'S', 'H', 'C'};
}

void save_encoder(const std::string& path, const EncoderModel& model) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw pipeline_error("cannot write encoder checkpoint: " + path);
    f.write(kEncMagic, 4);
    uint32_t version = 1;
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&model.normalizer), 8);
    f.write(reinterpret_cast<const char*>(&model.w), 8);
    f.write(reinterpret_cast<const char*>(&model.b), 8);
    uint16_t nctx = static_cast<uint16_t>(model.sensor_ids.size());
    f.write(reinterpret_cast<const char*>(&nctx), 2);
    for (uint16_t sid : model.sensor_ids) f.write(reinterpret_cast<const char*>(&sid), 2);
    f.close();

    // TSNN body appended to the same file.
    std::vector<LayerDesc> arch = {
        {LayerKind::Dense, 1 + model.n_contexts(), EncoderModel::kHidden},
        {LayerKind::Tanh},
        {LayerKind::Dense, EncoderModel::kHidden, EncoderModel::kHidden},
        {LayerKind::Tanh},
        {LayerKind::Dense, EncoderModel::kHidden, 1},
    };
    std::string tmp = path + ".nn";
    write_checkpoint(tmp, kArchEncoderMlp, {model.n_contexts()}, arch,
                     {&model.w1, &model.b1, &model.w2, &model.b2, &model.w3, &model.b3});
    std::ifstream nn(tmp, std::ios::binary);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << nn.rdbuf();
    nn.close();
    std::remove(tmp.c_str());
}

EncoderModel load_encoder(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw validation_error("cannot open encoder checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f.good() || std::memcmp(magic, kEncMagic, 4) != 0)
        throw validation_error("bad encoder checkpoint magic: " + path);
    uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw validation_error("unsupported encoder checkpoint version");
    EncoderModel m;
    f.read(reinterpret_cast<char*>(&m.normalizer), 8);
    f.read(reinterpret_cast<char*>(&m.w), 8);
    f.read(reinterpret_cast<char*>(&m.b), 8);
    uint16_t nctx = 0;
    f.read(reinterpret_cast<char*>(&nctx), 2);
    m.sensor_ids.resize(nctx);
    for (auto& sid : m.sensor_ids) f.read(reinterpret_cast<char*>(&sid), 2);
    if (!f.good()) throw validation_error("truncated encoder checkpoint: " + path);

    // Remaining bytes are the TSNN body; copy them out and reuse the reader.
    std::string rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::string tmp = path + ".nn";
    {
        std::ofstream t(tmp, std::ios::binary);
        t.write(rest.data(), static_cast<std::streamsize>(rest.size()));
    }
    Checkpoint cp = read_checkpoint(tmp);
    std::remove(tmp.c_str());
    if (cp.arch_tag != kArchEncoderMlp || cp.blobs.size() != 6)
        throw validation_error("encoder checkpoint body mismatch: " + path);
    m.w1 = cp.blobs[0];
    m.b1 = cp.blobs[1];
    m.w2 = cp.blobs[2];
    m.b2 = cp.blobs[3];
    m.w3 = cp.blobs[4];
    m.b3 = cp.blobs[5];
    m.trained = true;
    return m;
}

} // namespace terraseg
