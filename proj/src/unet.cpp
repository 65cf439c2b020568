#include "terraseg/unet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "terraseg/metrics.hpp"
#include "terraseg/rasterize.hpp"

namespace terraseg {

ConvBlock::ConvBlock(int in_ch, int out_ch, Rng& rng)
    : conv_a(3, in_ch, out_ch, rng), conv_b(3, out_ch, out_ch, rng), bn_a(out_ch),
      bn_b(out_ch) {}

Tensor ConvBlock::forward(const Tensor& x, Mode mode) {
    Tensor t = conv_a.forward(x, mode);
    t = bn_a.forward(t, mode);
    t = relu_a.forward(t, mode);
    t = conv_b.forward(t, mode);
    t = bn_b.forward(t, mode);
    return relu_b.forward(t, mode);
}

Tensor ConvBlock::backward(const Tensor& gout) {
    Tensor g = relu_b.backward(gout);
    g = bn_b.backward(g);
    g = conv_b.backward(g);
    g = relu_a.backward(g);
    g = bn_a.backward(g);
    return conv_a.backward(g);
}

void ConvBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    conv_a.collect_params(prefix + ".conv_a", out);
    bn_a.collect_params(prefix + ".bn_a", out);
    conv_b.collect_params(prefix + ".conv_b", out);
    bn_b.collect_params(prefix + ".bn_b", out);
}

void ConvBlock::collect_state(std::vector<Tensor*>& out) {
    bn_a.collect_state(out);
    bn_b.collect_state(out);
}

void ConvBlock::zero_grad() {
    conv_a.zero_grad();
    bn_a.zero_grad();
    conv_b.zero_grad();
    bn_b.zero_grad();
}

void ConvBlock::describe(std::vector<LayerDesc>& out) const {
    out.push_back(conv_a.describe());
    out.push_back(bn_a.describe());
    out.push_back({LayerKind::Relu});
    out.push_back(conv_b.describe());
    out.push_back(bn_b.describe());
    out.push_back({LayerKind::Relu});
}

UNetModel::UNetModel(const UNetConfig& cfg) : cfg_(cfg) {
    if (cfg.k != 3 && cfg.k != 5) throw validation_error("unet: k must be 3 or 5");
    if (cfg.c0 < 1 || cfg.in_channels < 1) throw validation_error("unet: bad channel counts");
    Rng rng(cfg.seed ^ 0x0115E7ULL);
    int ch = cfg.c0;
    enc_.push_back(std::make_unique<ConvBlock>(cfg.in_channels, ch, rng));
    for (int i = 1; i <= cfg.k; ++i) {
        enc_.push_back(std::make_unique<ConvBlock>(ch, ch * 2, rng));
        ch *= 2;
    }
    // Decoder mirrors encoder widths; block i outputs c0 * 2^i channels.
    dec_.resize(cfg.k + 1);
    concat_ca_.assign(cfg.k + 1, 0);
    for (int i = cfg.k; i >= 0; --i) {
        int ci = cfg.c0 << i;
        int in_ch = i == cfg.k ? ci : ci + (ci * 2); // e_i concat upsampled d_{i+1}
        dec_[i] = std::make_unique<ConvBlock>(in_ch, ci, rng);
        concat_ca_[i] = ci;
    }
    for (int i = 0; i < cfg.k; ++i) {
        pool_.push_back(std::make_unique<MaxPool2Layer>());
        up_.push_back(std::make_unique<BilinearUp2Layer>());
    }
    head1_ = std::make_unique<Conv2dLayer>(1, cfg.c0, cfg.c0, rng);
    head_relu_ = std::make_unique<ReluLayer>();
    head2_ = std::make_unique<Conv2dLayer>(1, cfg.c0, 1, rng);
}

Tensor UNetModel::forward(const Tensor& x, Mode mode) {
    if (x.c() != cfg_.in_channels) throw validation_error("unet: input channel mismatch");
    int div = 1 << cfg_.k;
    if (x.h() % div != 0 || x.w() % div != 0)
        throw validation_error("unet: spatial dims must be divisible by 2^k");

    std::vector<Tensor> e(cfg_.k + 1);
    e[0] = enc_[0]->forward(x, mode);
    for (int i = 1; i <= cfg_.k; ++i)
        e[i] = enc_[i]->forward(pool_[i - 1]->forward(e[i - 1], mode), mode);

    Tensor d = dec_[cfg_.k]->forward(e[cfg_.k], mode);
    for (int i = cfg_.k - 1; i >= 0; --i) {
        Tensor u = up_[i]->forward(d, mode);
        d = dec_[i]->forward(concat_channels(e[i], u), mode);
    }
    Tensor h = head1_->forward(d, mode);
    h = head_relu_->forward(h, mode);
    return head2_->forward(h, mode);
}

void UNetModel::backward(const Tensor& glogits) {
    Tensor g = head2_->backward(glogits);
    g = head_relu_->backward(g);
    g = head1_->backward(g);

    // Mirror of the decoder: gradients flowing into each e_i accumulate from
    // the skip concat and from the deeper path.
    std::vector<Tensor> ge(cfg_.k + 1);
    for (int i = 0; i < cfg_.k; ++i) {
        Tensor gcat = dec_[i]->backward(g);
        Tensor gu;
        split_channels(gcat, concat_ca_[i], ge[i], gu);
        g = up_[i]->backward(gu);
    }
    {
        Tensor gtop = dec_[cfg_.k]->backward(g);
        ge[cfg_.k] = std::move(gtop);
    }
    for (int i = cfg_.k; i >= 1; --i) {
        Tensor gin = enc_[i]->backward(ge[i]);
        Tensor gpool = pool_[i - 1]->backward(gin);
        for (size_t j = 0; j < gpool.size(); ++j) ge[i - 1][j] += gpool[j];
    }
    enc_[0]->backward(ge[0]);
}

std::vector<ParamRef> UNetModel::params() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < enc_.size(); ++i)
        enc_[i]->collect_params("enc" + std::to_string(i), out);
    for (size_t i = 0; i < dec_.size(); ++i)
        dec_[i]->collect_params("dec" + std::to_string(i), out);
    head1_->collect_params("head1", out);
    head2_->collect_params("head2", out);
    return out;
}

std::vector<Tensor*> UNetModel::state() {
    std::vector<Tensor*> out;
    for (auto& b : enc_) b->collect_state(out);
    for (auto& b : dec_) b->collect_state(out);
    return out;
}

void UNetModel::zero_grad() {
    for (auto& b : enc_) b->zero_grad();
    for (auto& b : dec_) b->zero_grad();
    head1_->zero_grad();
    head2_->zero_grad();
}

size_t UNetModel::parameter_count() {
    size_t n = 0;
    for (const auto& p : params()) n += p.value->size();
    return n;
}

void UNetModel::copy_weights_from(UNetModel& other) {
    auto dst = params();
    auto src = other.params();
    if (dst.size() != src.size()) throw validation_error("unet copy: architecture mismatch");
    for (size_t i = 0; i < dst.size(); ++i) *dst[i].value = *src[i].value;
    auto dst_state = state();
    auto src_state = other.state();
    for (size_t i = 0; i < dst_state.size(); ++i) *dst_state[i] = *src_state[i];
}

void UNetModel::save(const std::string& path) {
    std::vector<LayerDesc> arch;
    for (const auto& b : enc_) b->describe(arch);
    for (const auto& b : dec_) b->describe(arch);
    arch.push_back(head1_->describe());
    arch.push_back({LayerKind::Relu});
    arch.push_back(head2_->describe());

    std::vector<const Tensor*> blobs;
    for (const auto& p : params()) blobs.push_back(p.value);
    for (const auto& s : state()) blobs.push_back(s);
    write_checkpoint(path, kArchUNet,
                     {cfg_.k, cfg_.c0, cfg_.in_channels, static_cast<int32_t>(cfg_.seed)}, arch,
                     blobs);
}

UNetModel UNetModel::load(const std::string& path) {
    Checkpoint cp = read_checkpoint(path);
    if (cp.arch_tag != kArchUNet) throw validation_error("not a unet checkpoint: " + path);
    if (cp.meta.size() < 4) throw validation_error("unet checkpoint meta corrupt");
    UNetConfig cfg;
    cfg.k = cp.meta[0];
    cfg.c0 = cp.meta[1];
    cfg.in_channels = cp.meta[2];
    cfg.seed = static_cast<uint64_t>(cp.meta[3]);
    UNetModel model(cfg);
    auto prm = model.params();
    auto st = model.state();
    if (cp.blobs.size() != prm.size() + st.size())
        throw validation_error("unet checkpoint blob count mismatch");
    for (size_t i = 0; i < prm.size(); ++i) {
        if (!prm[i].value->same_shape(cp.blobs[i]))
            throw validation_error("unet checkpoint blob shape mismatch at " + prm[i].name);
        *prm[i].value = cp.blobs[i];
    }
    for (size_t i = 0; i < st.size(); ++i) *st[i] = cp.blobs[prm.size() + i];
    return model;
}

// ---------------------------------------------------------------------------
// Tiles

TileSet crop_tiles(const Raster& features, const Raster& labels,
                   const std::vector<std::string>& channels, int size, int stride) {
    if (!features.aligned_with(labels)) throw validation_error("crop_tiles: misaligned rasters");
    if (features.width() < size || features.height() < size)
        throw validation_error("crop_tiles: raster smaller than one tile");
    if (stride < 1) throw validation_error("crop_tiles: stride must be >= 1");

    TileSet set;
    set.size = size;
    set.channels = channels;
    const auto& lab = labels.channel("label");
    double nd_label = labels.nodata("label");

    int z_channel = -1;
    for (size_t c = 0; c < channels.size(); ++c)
        if (channels[c] == "z") z_channel = static_cast<int>(c);

    for (int row0 = 0; row0 + size <= features.height(); row0 += stride) {
        for (int col0 = 0; col0 + size <= features.width(); col0 += stride) {
            Tile tile;
            tile.col0 = col0;
            tile.row0 = row0;
            tile.input = Tensor(1, size, size, static_cast<int>(channels.size()));
            tile.target = Tensor(1, size, size, 1);
            tile.valid.assign(static_cast<size_t>(size) * size, 0);

            bool any_label = false;
            std::vector<uint8_t> z_valid(static_cast<size_t>(size) * size, 0);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    size_t src = features.idx(col0 + x, row0 + y);
                    size_t cell = static_cast<size_t>(y) * size + x;
                    for (size_t c = 0; c < channels.size(); ++c) {
                        const auto& ch = features.channel(channels[c]);
                        double nd = features.nodata(channels[c]);
                        double v = ch[src];
                        if (v == nd) {
                            tile.input.at(0, y, x, static_cast<int>(c)) = 0.0;
                        } else {
                            tile.input.at(0, y, x, static_cast<int>(c)) = v;
                            if (static_cast<int>(c) == z_channel) z_valid[cell] = 1;
                        }
                    }
                    if (lab[src] != nd_label) {
                        tile.valid[cell] = 1;
                        tile.target.at(0, y, x, 0) = lab[src] != 0.0 ? 1.0 : 0.0;
                        any_label = true;
                    }
                }
            }
            if (!any_label) continue; // fully outside labeled coverage
            if (z_channel >= 0) normalize_z(tile.input, z_channel, z_valid);
            set.tiles.push_back(std::move(tile));
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct BatchView {
    Tensor input, target;
    std::vector<uint8_t> valid;
};

BatchView assemble(const TileSet& set, const std::vector<size_t>& ids) {
    int size = set.size;
    BatchView b;
    int n = static_cast<int>(ids.size());
    int d = set.tiles[ids[0]].input.c();
    b.input = Tensor(n, size, size, d);
    b.target = Tensor(n, size, size, 1);
    b.valid.assign(static_cast<size_t>(n) * size * size, 0);
    for (int i = 0; i < n; ++i) {
        const Tile& t = set.tiles[ids[i]];
        std::copy(t.input.data(), t.input.data() + t.input.size(),
                  b.input.data() + static_cast<size_t>(i) * t.input.size());
        std::copy(t.target.data(), t.target.data() + t.target.size(),
                  b.target.data() + static_cast<size_t>(i) * t.target.size());
        std::copy(t.valid.begin(), t.valid.end(),
                  b.valid.begin() + static_cast<size_t>(i) * t.valid.size());
    }
    return b;
}

} // namespace

double eval_tiles(UNetModel& model, const TileSet& tiles, double threshold,
                  bool metric_accuracy) {
    ConfusionCounts c;
    for (const Tile& t : tiles.tiles) {
        Tensor logits = const_cast<UNetModel&>(model).forward(t.input, Mode::Eval);
        for (int y = 0; y < logits.h(); ++y)
            for (int x = 0; x < logits.w(); ++x) {
                size_t cell = static_cast<size_t>(y) * logits.w() + x;
                if (!t.valid[cell]) continue;
                bool hat = sigmoid(logits.at(0, y, x, 0)) >= threshold;
                bool truth = t.target.at(0, y, x, 0) != 0.0;
                if (hat && truth)
                    ++c.tp;
                else if (hat && !truth)
                    ++c.fp;
                else if (!hat && truth)
                    ++c.fn;
                else
                    ++c.tn;
            }
    }
    Scores s = scores(c);
    return metric_accuracy ? s.accuracy : s.f1;
}

UNetModel train_unet(UNetModel& model, const TileSet& train, const TileSet& valid,
                     const UNetTrainConfig& cfg, UNetTrainTrace* trace) {
    if (train.tiles.empty() || valid.tiles.empty())
        throw validation_error("train_unet: empty tile set");
    int div = 1 << model.k();
    if (train.size % div != 0)
        throw validation_error("train_unet: tile size not divisible by 2^k");

    Rng rng(cfg.seed ^ 0x7261696EULL);
    auto prm = model.params();
    OptimState opt;
    opt.lr = cfg.lr;

    UNetModel best(UNetConfig{model.k(), model.c0(), model.in_channels(), 0});
    best.copy_weights_from(model);
    double best_metric = -1.0;
    int best_epoch = 0;
    int since_best = 0;

    std::vector<size_t> order(train.tiles.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t batches = 0;
        for (size_t i0 = 0; i0 < order.size(); i0 += cfg.batch_size) {
            std::vector<size_t> ids(order.begin() + i0,
                                    order.begin() + std::min(order.size(),
                                                             i0 + cfg.batch_size));
            BatchView b = assemble(train, ids);
            model.zero_grad();
            Tensor logits = model.forward(b.input, Mode::Train);
            FocalResult fr = focal_loss(logits, b.target, b.valid, cfg.gamma_f, cfg.alpha_f);
            if (!std::isfinite(fr.loss)) throw pipeline_error("train_unet: loss diverged");
            model.backward(fr.grad);
            optimizer_step(prm, opt);
            epoch_loss += fr.loss;
            ++batches;
        }
        epoch_loss /= static_cast<double>(batches);

        double metric = eval_tiles(model, valid, cfg.threshold, cfg.metric_accuracy);
        if (trace != nullptr) {
            trace->epoch_loss.push_back(epoch_loss);
            trace->valid_metric.push_back(metric);
        }
        if (metric > best_metric) {
            best_metric = metric;
            best_epoch = epoch;
            best.copy_weights_from(model);
            since_best = 0;
        } else {
            ++since_best;
        }
        if (since_best >= cfg.patience) break;
    }
    if (trace != nullptr) {
        trace->best_metric = best_metric;
        trace->best_epoch = best_epoch;
    }
    return best;
}

} // namespace terraseg
