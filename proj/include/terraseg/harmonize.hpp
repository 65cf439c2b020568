#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "terraseg/rng.hpp"
#include "terraseg/tensor.hpp"
#include "terraseg/types.hpp"

namespace terraseg {

// Shared MLP taking (normalized intensity, one-hot context) to one value,
// with a skip of the input so training starts near the identity. The linear
// road/field classifier (w, b) is co-trained; w stays in [-1, 1].
struct EncoderModel {
    std::vector<uint16_t> sensor_ids; // training contexts, sorted
    double normalizer = 1.0;          // 99th-percentile intensity divisor
    double w = 0.0, b = 0.0;
    Tensor w1, b1, w2, b2, w3, b3;    // (1+|c|) -> 32 -> 32 -> 1, tanh hidden
    bool trained = false;

    static constexpr int kHidden = 32;

    static EncoderModel init(std::vector<uint16_t> sensor_ids, double normalizer, Rng& rng);

    int n_contexts() const { return static_cast<int>(sensor_ids.size()); }
    int context_of(uint16_t sensor_id) const; // -1 when unknown

    // E and dE/dx on the normalized intensity scale.
    double encode(double x_norm, int context) const;
    double derivative(double x_norm, int context) const;
    double encode_raw(double raw_intensity, int context) const {
        return encode(raw_intensity / normalizer, context);
    }
};

// Exact analytic derivative of the encoder with respect to its intensity
// input (context held fixed).
double encoder_derivative(const EncoderModel& model, double x_norm, int context);

struct EmbedBatch {
    int n_contexts = 0;
    int n = 0;                   // samples per context
    std::vector<double> x;       // raw intensity, index = context * n + k
    std::vector<uint8_t> labeled;    // M
    std::vector<uint8_t> road;       // C, valid where M = 1

    size_t at(int context, int k) const { return static_cast<size_t>(context) * n + k; }
};

struct HarmonizeConfig {
    double alpha = 1.0, beta = 0.3, gamma = 1.0;
    int batch_n = 512;
    int max_epochs = 1500;
    double tolerance = 1e-4;   // mean relative improvement over 10 epochs
    double lr = 1e-3;
    double cell_size = 1000.0; // selection grid (1 km in the source data)
    int min_points = 50;       // road and field points required per cell
    double match_slack = 0.10; // allowed bucket imbalance after subsampling
    double road_share = 0.2;   // share of labeled batch points that are road
    double labeled_share = 0.5;
    uint64_t seed = 0;

    void validate() const;
};

// Per-context training pools drawn from the selected cells.
struct EmbedDataset {
    std::vector<uint16_t> sensor_ids;
    double normalizer = 1.0;
    // Raw intensities per context.
    std::vector<std::vector<double>> road_pool, field_pool, unknown_pool;

    int n_contexts() const { return static_cast<int>(sensor_ids.size()); }
};

struct CellStats {
    int cx = 0, cy = 0;
    int context = -1;           // -1 when points from several sensors
    size_t road_points = 0, field_points = 0;
    double road_fraction = 0, grain_fraction = 0;
    bool kept = false;
};

// Implements the cell sampling scheme: single-sensor cells with enough road
// and field points, buckets subsampled to matching point counts.
std::vector<CellStats> select_training_cells(const PointCloud& cloud, const PolygonSet& grain,
                                             const PolygonSet& roads,
                                             const HarmonizeConfig& cfg);

EmbedDataset build_embed_dataset(const PointCloud& cloud, const PolygonSet& grain,
                                 const PolygonSet& roads, const HarmonizeConfig& cfg);

// Road points oversampled to cfg.road_share of the labeled draw.
EmbedBatch sample_batch(const EmbedDataset& ds, const HarmonizeConfig& cfg, Rng& rng);

// Mean absolute difference of sorted order statistics (the closed-form 1-D
// Earth Mover Distance for equal-size samples).
double emd_1d(const std::vector<double>& u, const std::vector<double>& v);

struct EmbedLossParts {
    double emd_all = 0, emd_road = 0, emd_field = 0, grad = 0, cls = 0;
    double total = 0;
    int skipped_road_pairs = 0, skipped_field_pairs = 0;
};

struct EncoderGrads {
    Tensor w1, b1, w2, b2, w3, b3;
    double w = 0, b = 0;
    void zero();
};

EmbedLossParts embed_loss(const EmbedBatch& batch, const EncoderModel& model,
                          const HarmonizeConfig& cfg, EncoderGrads* grads = nullptr);

struct TrainTrace {
    std::vector<double> loss;
    int epochs = 0;
    bool converged = false;
};

EncoderModel train_encoder(const EmbedDataset& dataset, const HarmonizeConfig& cfg,
                           TrainTrace* trace = nullptr);

// intensity := E(intensity / normalizer, context); other fields untouched.
// Rejects unknown sensors and double application.
void encode_cloud(const EncoderModel& model, PointCloud& cloud);

// Checkpoint: "TSHC" header chunk (normalizer, contexts, w, b) followed by
// the TSNN body holding the MLP weights.
void save_encoder(const std::string& path, const EncoderModel& model);
EncoderModel load_encoder(const std::string& path);

} // namespace terraseg
