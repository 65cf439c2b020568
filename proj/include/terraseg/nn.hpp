#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "terraseg/rng.hpp"
#include "terraseg/tensor.hpp"

namespace terraseg {

enum class LayerKind : uint8_t {
    Dense = 0,
    Conv3x3 = 1,
    Conv1x1 = 2,
    BatchNorm = 3,
    Relu = 4,
    MaxPool2 = 5,
    BilinearUp2 = 6,
    Concat = 7,
    Tanh = 8,
};

enum class Mode { Train, Eval };

struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

struct LayerDesc {
    LayerKind kind;
    int32_t p0 = 0, p1 = 0, p2 = 0, p3 = 0;
    bool operator==(const LayerDesc&) const = default;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual LayerDesc describe() const = 0;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    // Accumulates parameter gradients, returns the input gradient. Requires
    // a recorded forward pass.
    virtual Tensor backward(const Tensor& gout) = 0;
    virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {}
    // Persistent non-trainable state (batchnorm running stats).
    virtual void collect_state(std::vector<Tensor*>& out) {}
    virtual void zero_grad() {}

protected:
    bool recorded_ = false;
    void require_recorded(const char* who) const;
};

class DenseLayer : public Layer {
public:
    DenseLayer(int in_features, int out_features, Rng& rng);
    LayerDesc describe() const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gout) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void zero_grad() override;

    Tensor weight, bias, gweight, gbias; // weight (in, out)
private:
    int in_, out_;
    Tensor input_;
};

class Conv2dLayer : public Layer {
public:
    Conv2dLayer(int ksize, int in_ch, int out_ch, Rng& rng);
    LayerDesc describe() const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gout) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void zero_grad() override;

    Tensor weight, bias, gweight, gbias; // weight (k, k, cin, cout)
private:
    int k_, cin_, cout_, pad_;
    Tensor input_;
};

class BatchNormLayer : public Layer {
public:
    explicit BatchNormLayer(int channels);
    LayerDesc describe() const override;
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gout) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_state(std::vector<Tensor*>& out) override;
    void zero_grad() override;

    static constexpr double kEps = 1e-9;
    static constexpr double kMomentum = 0.1;

    Tensor scale, offset, gscale, goffset;
    Tensor running_mean, running_var;

private:
    int c_;
    Tensor xhat_;
    std::vector<double> invstd_;
    bool train_recorded_ = false;
};

class ReluLayer : public Layer {
public:
    LayerDesc describe() const override { return {LayerKind::Relu}; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gout) override;

private:
    Tensor output_;
};

class TanhLayer : public Layer {
public:
    LayerDesc describe() const override { return {LayerKind::Tanh}; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gout) override;

private:
    Tensor output_;
};

class MaxPool2Layer : public Layer {
public:
    LayerDesc describe() const override { return {LayerKind::MaxPool2}; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gout) override;

private:
    std::vector<uint8_t> argmax_; // 0..3 within each 2x2 window
    int in_n_ = 0, in_h_ = 0, in_w_ = 0, in_c_ = 0;
};

class BilinearUp2Layer : public Layer {
public:
    LayerDesc describe() const override { return {LayerKind::BilinearUp2}; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gout) override;

private:
    int in_n_ = 0, in_h_ = 0, in_w_ = 0, in_c_ = 0;
};

// Channel concatenation; wired explicitly by the U-Net.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb);

struct FocalResult {
    double loss = 0.0;
    Tensor grad; // d loss / d logit
};

// Mean over masked cells of -alpha_t (1 - p_t)^gamma ln(p_t) with
// p = sigmoid(logit). gamma_f = 0, alpha_f = 0.5 halves plain binary cross
// entropy. Throws when the mask selects nothing.
FocalResult focal_loss(const Tensor& logits, const Tensor& targets,
                       const std::vector<uint8_t>& mask, double gamma_f, double alpha_f);

struct OptimState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<Tensor> m, v;
};

// Adam update in parameter order; throws on non-finite gradients, naming
// the parameter.
void optimizer_step(std::vector<ParamRef>& params, OptimState& state);

// Checkpoint container:
//   magic "TSNN", u32 version=1, u8 arch_tag, u16 meta count, i32 metas,
//   u32 layer count, per layer {u8 kind, 4x i32}, u32 blob count,
//   per blob {4x i32 shape, f64 data}; little-endian.
void write_checkpoint(const std::string& path, uint8_t arch_tag,
                      const std::vector<int32_t>& meta, const std::vector<LayerDesc>& arch,
                      const std::vector<const Tensor*>& blobs);

struct Checkpoint {
    uint8_t arch_tag = 0;
    std::vector<int32_t> meta;
    std::vector<LayerDesc> arch;
    std::vector<Tensor> blobs;
};

Checkpoint read_checkpoint(const std::string& path);

constexpr uint8_t kArchUNet = 1;
constexpr uint8_t kArchEncoderMlp = 2;

double sigmoid(double z);

} // namespace terraseg
