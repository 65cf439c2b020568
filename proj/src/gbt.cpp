#include "terraseg/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>

#include "terraseg/nn.hpp"
#include "terraseg/parallel.hpp"

namespace terraseg {

void GbtConfig::validate() const {
    if (num_bins < 2) throw validation_error("gbt: num_bins must be >= 2");
    if (num_trees < 0 || max_depth < 1 || min_leaf < 1)
        throw validation_error("gbt: bad tree limits");
    if (learning_rate <= 0) throw validation_error("gbt: learning_rate must be > 0");
    if (l2_lambda < 0) throw validation_error("gbt: l2_lambda must be >= 0");
}

double GbtTree::eval(const double* features) const {
    int32_t i = 0;
    while (nodes[i].feature >= 0)
        i = features[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
}

double GbtModel::raw_score(const double* features) const {
    double s = base_score;
    for (const auto& t : trees) s += learning_rate * t.eval(features);
    return s;
}

double GbtModel::predict(const FeatureVector& fv) const {
    if (static_cast<int>(fv.size()) != n_features)
        throw validation_error("predict_gbt: feature dimension mismatch");
    return sigmoid(raw_score(fv.data()));
}

namespace {

// Equal-frequency bin edges; each edge is a midpoint between straddling
// sample values so x <= edge reproduces the training partition exactly.
std::vector<double> quantile_edges(std::vector<double> values, int num_bins) {
    std::sort(values.begin(), values.end());
    std::vector<double> distinct = values;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<double> edges;
    if (static_cast<int>(distinct.size()) <= num_bins) {
        for (size_t i = 0; i + 1 < distinct.size(); ++i)
            edges.push_back(0.5 * (distinct[i] + distinct[i + 1]));
        return edges;
    }
    size_t n = values.size();
    for (int b = 1; b < num_bins; ++b) {
        size_t pos = static_cast<size_t>(static_cast<double>(b) * n / num_bins);
        pos = std::clamp<size_t>(pos, 1, n - 1);
        double e = 0.5 * (values[pos - 1] + values[pos]);
        if (edges.empty() || e > edges.back()) edges.push_back(e);
    }
    return edges;
}

uint16_t bin_of(const std::vector<double>& edges, double x) {
    // First edge >= x; values above all edges land in the last bin.
    return static_cast<uint16_t>(std::lower_bound(edges.begin(), edges.end(), x) -
                                 edges.begin());
}

struct HistBin {
    double g = 0, h = 0;
    int64_t count = 0;
};

struct SplitChoice {
    double gain = 0.0;
    int feature = -1;
    int bin = -1;
};

struct TreeBuilder {
    const std::vector<std::vector<uint16_t>>& bins; // [feature][row]
    const std::vector<std::vector<double>>& edges;
    const std::vector<double>& grad;
    const std::vector<double>& hess;
    const GbtConfig& cfg;
    GbtTree tree;

    int32_t build(std::vector<uint32_t>& rows, int depth) {
        double g_sum = 0, h_sum = 0;
        for (uint32_t r : rows) {
            g_sum += grad[r];
            h_sum += hess[r];
        }
        auto make_leaf = [&]() {
            GbtNode leaf;
            leaf.value = -g_sum / (h_sum + cfg.l2_lambda);
            tree.nodes.push_back(leaf);
            return static_cast<int32_t>(tree.nodes.size() - 1);
        };
        if (depth >= cfg.max_depth || rows.size() < 2 * static_cast<size_t>(cfg.min_leaf))
            return make_leaf();

        int n_features = static_cast<int>(bins.size());
        double parent = g_sum * g_sum / (h_sum + cfg.l2_lambda);
        std::vector<SplitChoice> per_feature(n_features);
#pragma omp parallel for schedule(static) num_threads(thread_count())
        for (int f = 0; f < n_features; ++f) {
            size_t nb = edges[f].size() + 1;
            std::vector<HistBin> hist(nb);
            const auto& fb = bins[f];
            for (uint32_t r : rows) {
                HistBin& hbin = hist[fb[r]];
                hbin.g += grad[r];
                hbin.h += hess[r];
                hbin.count += 1;
            }
            SplitChoice best;
            double gl = 0, hl = 0;
            int64_t cl = 0;
            for (size_t b = 0; b + 1 < nb; ++b) {
                gl += hist[b].g;
                hl += hist[b].h;
                cl += hist[b].count;
                int64_t cr = static_cast<int64_t>(rows.size()) - cl;
                if (cl < cfg.min_leaf || cr < cfg.min_leaf) continue;
                double gr = g_sum - gl, hr = h_sum - hl;
                double gain = gl * gl / (hl + cfg.l2_lambda) +
                              gr * gr / (hr + cfg.l2_lambda) - parent;
                if (gain > best.gain) {
                    best.gain = gain;
                    best.feature = f;
                    best.bin = static_cast<int>(b);
                }
            }
            per_feature[f] = best;
        }
        SplitChoice best;
        for (int f = 0; f < n_features; ++f)
            if (per_feature[f].feature >= 0 && per_feature[f].gain > best.gain) {
                best = per_feature[f];
            }
        if (best.feature < 0 || best.gain <= 0.0) return make_leaf();

        std::vector<uint32_t> left, right;
        left.reserve(rows.size());
        const auto& fb = bins[best.feature];
        for (uint32_t r : rows)
            (fb[r] <= static_cast<uint16_t>(best.bin) ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();

        int32_t me = static_cast<int32_t>(tree.nodes.size());
        GbtNode node;
        node.feature = best.feature;
        node.threshold = edges[best.feature][best.bin];
        tree.nodes.push_back(node);
        int32_t l = build(left, depth + 1);
        int32_t r = build(right, depth + 1);
        tree.nodes[me].left = l;
        tree.nodes[me].right = r;
        return me;
    }
};

double logit(double p) { return std::log(p / (1.0 - p)); }

} // namespace

GbtModel fit_gbt(const FeatureTable& train, const FeatureTable& valid, const GbtConfig& cfg,
                 GbtFitTrace* trace) {
    cfg.validate();
    size_t n = train.rows.size();
    if (n == 0) throw validation_error("fit_gbt: empty training table");
    for (uint8_t l : train.labels)
        if (l > 1) throw validation_error("fit_gbt: labels must be binary");

    GbtModel model;
    model.learning_rate = cfg.learning_rate;
    size_t pos = std::accumulate(train.labels.begin(), train.labels.end(), size_t{0});
    double prior = std::clamp(static_cast<double>(pos) / n, 1e-6, 1.0 - 1e-6);
    model.base_score = logit(prior);
    if (pos == 0 || pos == n) {
        std::cerr << "fit_gbt: single-class training labels, returning prior-only model\n";
        model.single_class = true;
        if (trace != nullptr) trace->best_round = 0;
        return model;
    }

    // Bin the features once from the training distribution.
    std::vector<std::vector<double>> edges(kFeatureDim);
    std::vector<std::vector<uint16_t>> train_bins(kFeatureDim);
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (int f = 0; f < kFeatureDim; ++f) {
        std::vector<double> col(n);
        for (size_t i = 0; i < n; ++i) col[i] = train.rows[i][f];
        edges[f] = quantile_edges(col, cfg.num_bins);
        train_bins[f].resize(n);
        for (size_t i = 0; i < n; ++i) train_bins[f][i] = bin_of(edges[f], col[i]);
    }

    std::vector<double> score_train(n, model.base_score);
    std::vector<double> score_valid(valid.rows.size(), model.base_score);
    std::vector<double> grad(n), hess(n);

    auto valid_accuracy = [&]() {
        if (valid.rows.empty()) return 0.0;
        size_t ok = 0;
        for (size_t i = 0; i < valid.rows.size(); ++i) {
            bool hat = score_valid[i] >= 0.0; // sigmoid(s) >= 0.5
            if (hat == (valid.labels[i] != 0)) ++ok;
        }
        return static_cast<double>(ok) / static_cast<double>(valid.rows.size());
    };

    double best_acc = valid_accuracy();
    int best_round = 0;
    int since_best = 0;

    for (int round = 0; round < cfg.num_trees; ++round) {
        for (size_t i = 0; i < n; ++i) {
            double p = sigmoid(score_train[i]);
            grad[i] = p - static_cast<double>(train.labels[i]);
            hess[i] = p * (1.0 - p);
        }
        TreeBuilder builder{train_bins, edges, grad, hess, cfg, {}};
        std::vector<uint32_t> rows(n);
        std::iota(rows.begin(), rows.end(), 0u);
        builder.build(rows, 0);
        model.trees.push_back(std::move(builder.tree));
        const GbtTree& t = model.trees.back();

        for (size_t i = 0; i < n; ++i)
            score_train[i] += cfg.learning_rate * t.eval(train.rows[i].data());
        for (size_t i = 0; i < valid.rows.size(); ++i)
            score_valid[i] += cfg.learning_rate * t.eval(valid.rows[i].data());

        if (trace != nullptr) {
            double loss = 0.0;
            for (size_t i = 0; i < n; ++i) {
                double z = score_train[i];
                double y = train.labels[i];
                double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
                loss += y != 0 ? softplus - z : softplus;
            }
            trace->train_loss.push_back(loss / static_cast<double>(n));
        }

        double acc = valid_accuracy();
        if (trace != nullptr) trace->valid_accuracy.push_back(acc);
        if (acc > best_acc) {
            best_acc = acc;
            best_round = round + 1;
            since_best = 0;
        } else {
            ++since_best;
            if (!valid.rows.empty() && since_best >= cfg.patience) break;
        }
    }
    if (!valid.rows.empty()) model.trees.resize(best_round);
    if (trace != nullptr) trace->best_round = static_cast<int>(model.trees.size());
    return model;
}

std::vector<double> predict_gbt(const GbtModel& model, const FeatureTable& table) {
    std::vector<double> out(table.rows.size());
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long i = 0; i < static_cast<long>(table.rows.size()); ++i)
        out[i] = model.predict(table.rows[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr char kGbtMagic[4] = {'T', 'S', 'G', 'B'};

template <typename T>
void wr(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rd(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is.good()) throw validation_error("truncated gbt model file");
    return v;
}

void write_node(std::ostream& os, const GbtTree& t, int32_t i) {
    const GbtNode& n = t.nodes[i];
    if (n.feature < 0) {
        wr<uint8_t>(os, 1);
        wr(os, n.value);
    } else {
        wr<uint8_t>(os, 0);
        wr(os, n.feature);
        wr(os, n.threshold);
        write_node(os, t, n.left);
        write_node(os, t, n.right);
    }
}

int32_t read_node(std::istream& is, GbtTree& t) {
    uint8_t leaf = rd<uint8_t>(is);
    int32_t me = static_cast<int32_t>(t.nodes.size());
    t.nodes.emplace_back();
    if (leaf != 0) {
        t.nodes[me].value = rd<double>(is);
    } else {
        t.nodes[me].feature = rd<int32_t>(is);
        t.nodes[me].threshold = rd<double>(is);
        int32_t l = read_node(is, t);
        int32_t r = read_node(is, t);
        t.nodes[me].left = l;
        t.nodes[me].right = r;
    }
    return me;
}
} // namespace

void save_gbt(const std::string& path, const GbtModel& model, const GbtConfig& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw pipeline_error("cannot write gbt model: " + path);
    f.write(kGbtMagic, 4);
    wr<uint32_t>(f, 1);
    wr<int32_t>(f, cfg.num_trees);
    wr(f, cfg.learning_rate);
    wr<int32_t>(f, cfg.max_depth);
    wr<int32_t>(f, cfg.min_leaf);
    wr<int32_t>(f, cfg.num_bins);
    wr(f, cfg.l2_lambda);
    wr<int32_t>(f, cfg.patience);
    wr<uint64_t>(f, cfg.seed);
    wr(f, model.base_score);
    wr(f, model.learning_rate);
    wr<int32_t>(f, model.n_features);
    wr<uint8_t>(f, model.single_class ? 1 : 0);
    wr<uint32_t>(f, static_cast<uint32_t>(model.trees.size()));
    for (const auto& t : model.trees) write_node(f, t, 0);
}

GbtModel load_gbt(const std::string& path, GbtConfig* cfg_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw validation_error("cannot open gbt model: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f.good() || std::memcmp(magic, kGbtMagic, 4) != 0)
        throw validation_error("bad gbt model magic: " + path);
    uint32_t version = rd<uint32_t>(f);
    if (version != 1) throw validation_error("unsupported gbt model version");
    GbtConfig cfg;
    cfg.num_trees = rd<int32_t>(f);
    cfg.learning_rate = rd<double>(f);
    cfg.max_depth = rd<int32_t>(f);
    cfg.min_leaf = rd<int32_t>(f);
    cfg.num_bins = rd<int32_t>(f);
    cfg.l2_lambda = rd<double>(f);
    cfg.patience = rd<int32_t>(f);
    cfg.seed = rd<uint64_t>(f);
    if (cfg_out != nullptr) *cfg_out = cfg;
    GbtModel model;
    model.base_score = rd<double>(f);
    model.learning_rate = rd<double>(f);
    model.n_features = rd<int32_t>(f);
    model.single_class = rd<uint8_t>(f) != 0;
    uint32_t ntrees = rd<uint32_t>(f);
    model.trees.resize(ntrees);
    for (auto& t : model.trees) read_node(f, t);
    return model;
}

} // namespace terraseg
