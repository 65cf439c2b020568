#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "terraseg/nn.hpp"
#include "terraseg/types.hpp"

namespace terraseg {

// Two 3x3 convolutions, each followed by batchnorm and relu; the first conv
// changes the channel count.
struct ConvBlock {
    ConvBlock(int in_ch, int out_ch, Rng& rng);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& gout);
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
    void collect_state(std::vector<Tensor*>& out);
    void zero_grad();
    void describe(std::vector<LayerDesc>& out) const;

    Conv2dLayer conv_a, conv_b;
    BatchNormLayer bn_a, bn_b;
    ReluLayer relu_a, relu_b;
};

struct UNetConfig {
    int k = 3;       // downsampling levels (3 or 5)
    int c0 = 16;     // channels of the first block
    int in_channels = 8;
    uint64_t seed = 0;
};

class UNetModel {
public:
    explicit UNetModel(const UNetConfig& cfg);

    // Input (n, h, w, d) with h, w divisible by 2^k; output (n, h, w, 1)
    // logits.
    Tensor forward(const Tensor& x, Mode mode);
    void backward(const Tensor& glogits);

    std::vector<ParamRef> params();
    std::vector<Tensor*> state();
    void zero_grad();
    size_t parameter_count();

    int k() const { return cfg_.k; }
    int c0() const { return cfg_.c0; }
    int in_channels() const { return cfg_.in_channels; }

    void save(const std::string& path);
    static UNetModel load(const std::string& path);

    // Deep copy of parameters and running stats from another instance of the
    // same architecture.
    void copy_weights_from(UNetModel& other);

private:
    UNetConfig cfg_;
    std::vector<std::unique_ptr<ConvBlock>> enc_;    // k+1 blocks
    std::vector<std::unique_ptr<MaxPool2Layer>> pool_;
    std::vector<std::unique_ptr<ConvBlock>> dec_;    // k+1 blocks, index = level
    std::vector<std::unique_ptr<BilinearUp2Layer>> up_;
    std::unique_ptr<Conv2dLayer> head1_, head2_;
    std::unique_ptr<ReluLayer> head_relu_;
    std::vector<int> concat_ca_; // encoder channel count per level for split
};

struct Tile {
    Tensor input;                // (1, size, size, d)
    Tensor target;               // (1, size, size, 1)
    std::vector<uint8_t> valid;  // label coverage mask, size*size
    int col0 = 0, row0 = 0;      // placement in the source raster
};

struct TileSet {
    std::vector<Tile> tiles;
    int size = 96;
    std::vector<std::string> channels;
};

// Crops aligned feature/label rasters into training tiles on a regular
// stride grid. Tiles with no labeled cell are dropped; the z channel is
// standardized per tile and nodata cells become 0.
TileSet crop_tiles(const Raster& features, const Raster& labels,
                   const std::vector<std::string>& channels, int size = 96, int stride = 48);

struct UNetTrainConfig {
    int epochs = 50;
    int patience = 10;
    int batch_size = 4;
    double lr = 1e-3;
    double gamma_f = 2.0;
    double alpha_f = 0.25;
    double threshold = 0.5;
    bool metric_accuracy = false; // early-stop metric: F1 by default
    uint64_t seed = 0;
};

struct UNetTrainTrace {
    std::vector<double> epoch_loss;
    std::vector<double> valid_metric;
    double best_metric = 0.0;
    int best_epoch = 0;
};

// Focal-loss training with per-epoch validation and best-snapshot return.
UNetModel train_unet(UNetModel& model, const TileSet& train, const TileSet& valid,
                     const UNetTrainConfig& cfg, UNetTrainTrace* trace = nullptr);

// Validation metric (F1 or accuracy) of a model over a tile set.
double eval_tiles(UNetModel& model, const TileSet& tiles, double threshold,
                  bool metric_accuracy);

} // namespace terraseg
