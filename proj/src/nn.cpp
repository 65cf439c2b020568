#include "terraseg/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <omp.h>

#include "terraseg/common.hpp"
#include "terraseg/parallel.hpp"

namespace terraseg {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

namespace {
// log(sigmoid(z)) without overflow.
double log_sigmoid(double z) {
    if (z >= 0) return -std::log1p(std::exp(-z));
    return z - std::log1p(std::exp(z));
}

void he_init(Tensor& w, int fan_in, Rng& rng) {
    double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, s);
}
} // namespace

void Layer::require_recorded(const char* who) const {
    if (!recorded_) throw validation_error(std::string(who) + ": backward without forward");
}

// ---------------------------------------------------------------------------
// Dense

DenseLayer::DenseLayer(int in_features, int out_features, Rng& rng)
    : weight(Tensor::matrix(in_features, out_features)), bias(Tensor::vec(out_features)),
      gweight(Tensor::matrix(in_features, out_features)), gbias(Tensor::vec(out_features)),
      in_(in_features), out_(out_features) {
    he_init(weight, in_features, rng);
}

LayerDesc DenseLayer::describe() const { return {LayerKind::Dense, in_, out_}; }

Tensor DenseLayer::forward(const Tensor& x, Mode) {
    if (x.c() != in_ || x.h() != 1 || x.w() != 1)
        throw validation_error("dense: input shape mismatch");
    input_ = x;
    recorded_ = true;
    Tensor y = Tensor::matrix(x.n(), out_);
    for (int n = 0; n < x.n(); ++n) {
        double* yo = y.slot(n, 0, 0);
        std::memcpy(yo, bias.data(), sizeof(double) * out_);
        const double* xi = x.slot(n, 0, 0);
        for (int i = 0; i < in_; ++i) {
            double a = xi[i];
            const double* wr = weight.slot(0, 0, i);
            for (int o = 0; o < out_; ++o) yo[o] += a * wr[o];
        }
    }
    return y;
}

Tensor DenseLayer::backward(const Tensor& gout) {
    require_recorded("dense");
    Tensor gin = Tensor::matrix(input_.n(), in_);
    for (int n = 0; n < input_.n(); ++n) {
        const double* go = gout.slot(n, 0, 0);
        const double* xi = input_.slot(n, 0, 0);
        double* gi = gin.slot(n, 0, 0);
        for (int o = 0; o < out_; ++o) gbias[o] += go[o];
        for (int i = 0; i < in_; ++i) {
            const double* wr = weight.slot(0, 0, i);
            double* gw = gweight.slot(0, 0, i);
            double acc = 0.0;
            for (int o = 0; o < out_; ++o) {
                gw[o] += xi[i] * go[o];
                acc += wr[o] * go[o];
            }
            gi[i] = acc;
        }
    }
    return gin;
}

void DenseLayer::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight, &gweight});
    out.push_back({prefix + ".bias", &bias, &gbias});
}

void DenseLayer::zero_grad() {
    gweight.fill(0.0);
    gbias.fill(0.0);
}

// ---------------------------------------------------------------------------
// Conv2d (same padding, kernel 1 or 3)

Conv2dLayer::Conv2dLayer(int ksize, int in_ch, int out_ch, Rng& rng)
    : weight(Tensor(ksize, ksize, in_ch, out_ch)), bias(Tensor::vec(out_ch)),
      gweight(Tensor(ksize, ksize, in_ch, out_ch)), gbias(Tensor::vec(out_ch)), k_(ksize),
      cin_(in_ch), cout_(out_ch), pad_(ksize / 2) {
    if (ksize != 1 && ksize != 3) throw validation_error("conv kernels are 3x3 or 1x1 only");
    he_init(weight, ksize * ksize * in_ch, rng);
}

LayerDesc Conv2dLayer::describe() const {
    return {k_ == 3 ? LayerKind::Conv3x3 : LayerKind::Conv1x1, cin_, cout_};
}

Tensor Conv2dLayer::forward(const Tensor& x, Mode) {
    if (x.c() != cin_) throw validation_error("conv: channel mismatch");
    input_ = x;
    recorded_ = true;
    const int N = x.n(), H = x.h(), W = x.w();
    Tensor y(N, H, W, cout_);
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_count())
    for (int n = 0; n < N; ++n) {
        for (int yy = 0; yy < H; ++yy) {
            for (int xx = 0; xx < W; ++xx) {
                double* out = y.slot(n, yy, xx);
                std::memcpy(out, bias.data(), sizeof(double) * cout_);
                for (int dy = 0; dy < k_; ++dy) {
                    int sy = yy + dy - pad_;
                    if (sy < 0 || sy >= H) continue;
                    for (int dx = 0; dx < k_; ++dx) {
                        int sx = xx + dx - pad_;
                        if (sx < 0 || sx >= W) continue;
                        const double* in = x.slot(n, sy, sx);
                        for (int ci = 0; ci < cin_; ++ci) {
                            double a = in[ci];
                            const double* wr = &weight.at(dy, dx, ci, 0);
                            for (int co = 0; co < cout_; ++co) out[co] += a * wr[co];
                        }
                    }
                }
            }
        }
    }
    return y;
}

Tensor Conv2dLayer::backward(const Tensor& gout) {
    require_recorded("conv");
    const int N = input_.n(), H = input_.h(), W = input_.w();
    if (gout.n() != N || gout.h() != H || gout.w() != W || gout.c() != cout_)
        throw validation_error("conv backward: gradient shape mismatch");

    // Transposed copy (k, k, cout, cin) makes the input-gradient inner loop
    // contiguous.
    Tensor wt(k_, k_, cout_, cin_);
    for (int dy = 0; dy < k_; ++dy)
        for (int dx = 0; dx < k_; ++dx)
            for (int ci = 0; ci < cin_; ++ci)
                for (int co = 0; co < cout_; ++co)
                    wt.at(dy, dx, co, ci) = weight.at(dy, dx, ci, co);

    Tensor gin(N, H, W, cin_);
#pragma omp parallel for collapse(2) schedule(static) num_threads(thread_count())
    for (int n = 0; n < N; ++n) {
        for (int sy = 0; sy < H; ++sy) {
            for (int sx = 0; sx < W; ++sx) {
                double* gi = gin.slot(n, sy, sx);
                for (int dy = 0; dy < k_; ++dy) {
                    int yy = sy - (dy - pad_);
                    if (yy < 0 || yy >= H) continue;
                    for (int dx = 0; dx < k_; ++dx) {
                        int xx = sx - (dx - pad_);
                        if (xx < 0 || xx >= W) continue;
                        const double* go = gout.slot(n, yy, xx);
                        for (int co = 0; co < cout_; ++co) {
                            double g = go[co];
                            const double* wr = &wt.at(dy, dx, co, 0);
                            for (int ci = 0; ci < cin_; ++ci) gi[ci] += g * wr[ci];
                        }
                    }
                }
            }
        }
    }

    // Weight gradient: threads own disjoint co ranges, accumulation order in
    // (n, y, x) is fixed, so results do not depend on the thread count.
#pragma omp parallel num_threads(thread_count())
    {
        int tid = omp_get_thread_num();
        int nth = omp_get_num_threads();
        int co0 = static_cast<int>(static_cast<long>(cout_) * tid / nth);
        int co1 = static_cast<int>(static_cast<long>(cout_) * (tid + 1) / nth);
        if (co1 > co0) {
            for (int n = 0; n < N; ++n) {
                for (int yy = 0; yy < H; ++yy) {
                    for (int xx = 0; xx < W; ++xx) {
                        const double* go = gout.slot(n, yy, xx);
                        for (int dy = 0; dy < k_; ++dy) {
                            int sy = yy + dy - pad_;
                            if (sy < 0 || sy >= H) continue;
                            for (int dx = 0; dx < k_; ++dx) {
                                int sx = xx + dx - pad_;
                                if (sx < 0 || sx >= W) continue;
                                const double* in = input_.slot(n, sy, sx);
                                for (int ci = 0; ci < cin_; ++ci) {
                                    double a = in[ci];
                                    double* gw = &gweight.at(dy, dx, ci, 0);
                                    for (int co = co0; co < co1; ++co) gw[co] += a * go[co];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    for (int n = 0; n < N; ++n)
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) {
                const double* go = gout.slot(n, yy, xx);
                for (int co = 0; co < cout_; ++co) gbias[co] += go[co];
            }
    return gin;
}

void Conv2dLayer::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight, &gweight});
    out.push_back({prefix + ".bias", &bias, &gbias});
}

void Conv2dLayer::zero_grad() {
    gweight.fill(0.0);
    gbias.fill(0.0);
}

// ---------------------------------------------------------------------------
// BatchNorm over (n, h, w) per channel

BatchNormLayer::BatchNormLayer(int channels)
    : scale(Tensor::vec(channels)), offset(Tensor::vec(channels)), gscale(Tensor::vec(channels)),
      goffset(Tensor::vec(channels)), running_mean(Tensor::vec(channels)),
      running_var(Tensor::vec(channels)), c_(channels) {
    scale.fill(1.0);
    running_var.fill(1.0);
}

LayerDesc BatchNormLayer::describe() const { return {LayerKind::BatchNorm, c_}; }

Tensor BatchNormLayer::forward(const Tensor& x, Mode mode) {
    if (x.c() != c_) throw validation_error("batchnorm: channel mismatch");
    const size_t slots = x.size() / c_;
    Tensor y = x;
    if (mode == Mode::Train) {
        std::vector<double> mean(c_, 0.0), var(c_, 0.0);
        const double* xd = x.data();
        for (size_t s = 0; s < slots; ++s) {
            const double* row = xd + s * c_;
            for (int c = 0; c < c_; ++c) mean[c] += row[c];
        }
        for (int c = 0; c < c_; ++c) mean[c] /= static_cast<double>(slots);
        for (size_t s = 0; s < slots; ++s) {
            const double* row = xd + s * c_;
            for (int c = 0; c < c_; ++c) {
                double d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        for (int c = 0; c < c_; ++c) var[c] /= static_cast<double>(slots);

        invstd_.assign(c_, 0.0);
        for (int c = 0; c < c_; ++c) invstd_[c] = 1.0 / std::sqrt(var[c] + kEps);
        xhat_ = Tensor(x.n(), x.h(), x.w(), x.c());
        double* xh = xhat_.data();
        double* yd = y.data();
        for (size_t s = 0; s < slots; ++s) {
            const double* row = xd + s * c_;
            double* xr = xh + s * c_;
            double* yr = yd + s * c_;
            for (int c = 0; c < c_; ++c) {
                xr[c] = (row[c] - mean[c]) * invstd_[c];
                yr[c] = scale[c] * xr[c] + offset[c];
            }
        }
        for (int c = 0; c < c_; ++c) {
            running_mean[c] = (1.0 - kMomentum) * running_mean[c] + kMomentum * mean[c];
            running_var[c] = (1.0 - kMomentum) * running_var[c] + kMomentum * var[c];
        }
        recorded_ = true;
        train_recorded_ = true;
    } else {
        double* yd = y.data();
        for (size_t s = 0; s < slots; ++s) {
            double* yr = yd + s * c_;
            for (int c = 0; c < c_; ++c) {
                double inv = 1.0 / std::sqrt(running_var[c] + kEps);
                yr[c] = scale[c] * (yr[c] - running_mean[c]) * inv + offset[c];
            }
        }
        train_recorded_ = false;
    }
    return y;
}

Tensor BatchNormLayer::backward(const Tensor& gout) {
    require_recorded("batchnorm");
    if (!train_recorded_)
        throw validation_error("batchnorm: backward after eval-mode forward");
    const size_t slots = gout.size() / c_;
    const double m = static_cast<double>(slots);

    std::vector<double> sum_g(c_, 0.0), sum_gx(c_, 0.0);
    const double* gd = gout.data();
    const double* xh = xhat_.data();
    for (size_t s = 0; s < slots; ++s) {
        const double* gr = gd + s * c_;
        const double* xr = xh + s * c_;
        for (int c = 0; c < c_; ++c) {
            sum_g[c] += gr[c];
            sum_gx[c] += gr[c] * xr[c];
        }
    }
    for (int c = 0; c < c_; ++c) {
        goffset[c] += sum_g[c];
        gscale[c] += sum_gx[c];
    }

    Tensor gin(gout.n(), gout.h(), gout.w(), gout.c());
    double* gi = gin.data();
    for (size_t s = 0; s < slots; ++s) {
        const double* gr = gd + s * c_;
        const double* xr = xh + s * c_;
        double* gir = gi + s * c_;
        for (int c = 0; c < c_; ++c) {
            gir[c] = scale[c] * invstd_[c] *
                     (gr[c] - sum_g[c] / m - xr[c] * sum_gx[c] / m);
        }
    }
    return gin;
}

void BatchNormLayer::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".scale", &scale, &gscale});
    out.push_back({prefix + ".offset", &offset, &goffset});
}

void BatchNormLayer::collect_state(std::vector<Tensor*>& out) {
    out.push_back(&running_mean);
    out.push_back(&running_var);
}

void BatchNormLayer::zero_grad() {
    gscale.fill(0.0);
    goffset.fill(0.0);
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor ReluLayer::forward(const Tensor& x, Mode) {
    Tensor y = x;
    for (size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
    output_ = y;
    recorded_ = true;
    return y;
}

Tensor ReluLayer::backward(const Tensor& gout) {
    require_recorded("relu");
    Tensor gin = gout;
    for (size_t i = 0; i < gin.size(); ++i)
        if (output_[i] <= 0.0) gin[i] = 0.0;
    return gin;
}

Tensor TanhLayer::forward(const Tensor& x, Mode) {
    Tensor y = x;
    for (size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
    output_ = y;
    recorded_ = true;
    return y;
}

Tensor TanhLayer::backward(const Tensor& gout) {
    require_recorded("tanh");
    Tensor gin = gout;
    for (size_t i = 0; i < gin.size(); ++i) gin[i] *= 1.0 - output_[i] * output_[i];
    return gin;
}

// ---------------------------------------------------------------------------
// MaxPool 2x2 stride 2

Tensor MaxPool2Layer::forward(const Tensor& x, Mode) {
    if (x.h() % 2 != 0 || x.w() % 2 != 0)
        throw validation_error("maxpool2: odd spatial dimensions");
    in_n_ = x.n();
    in_h_ = x.h();
    in_w_ = x.w();
    in_c_ = x.c();
    const int oh = x.h() / 2, ow = x.w() / 2;
    Tensor y(x.n(), oh, ow, x.c());
    argmax_.assign(y.size(), 0);
    size_t oi = 0;
    for (int n = 0; n < x.n(); ++n) {
        for (int yy = 0; yy < oh; ++yy) {
            for (int xx = 0; xx < ow; ++xx) {
                const double* p00 = x.slot(n, 2 * yy, 2 * xx);
                const double* p01 = x.slot(n, 2 * yy, 2 * xx + 1);
                const double* p10 = x.slot(n, 2 * yy + 1, 2 * xx);
                const double* p11 = x.slot(n, 2 * yy + 1, 2 * xx + 1);
                double* out = y.slot(n, yy, xx);
                for (int c = 0; c < x.c(); ++c, ++oi) {
                    // First max wins on ties.
                    double best = p00[c];
                    uint8_t arg = 0;
                    if (p01[c] > best) { best = p01[c]; arg = 1; }
                    if (p10[c] > best) { best = p10[c]; arg = 2; }
                    if (p11[c] > best) { best = p11[c]; arg = 3; }
                    out[c] = best;
                    argmax_[oi] = arg;
                }
            }
        }
    }
    recorded_ = true;
    return y;
}

Tensor MaxPool2Layer::backward(const Tensor& gout) {
    require_recorded("maxpool2");
    Tensor gin(in_n_, in_h_, in_w_, in_c_);
    size_t oi = 0;
    for (int n = 0; n < gout.n(); ++n) {
        for (int yy = 0; yy < gout.h(); ++yy) {
            for (int xx = 0; xx < gout.w(); ++xx) {
                const double* go = gout.slot(n, yy, xx);
                for (int c = 0; c < gout.c(); ++c, ++oi) {
                    uint8_t a = argmax_[oi];
                    gin.at(n, 2 * yy + (a >> 1), 2 * xx + (a & 1), c) += go[c];
                }
            }
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// Bilinear 2x upsampling (half-pixel centers, edges clamped)

namespace {
struct UpAxis {
    std::vector<int> i0;
    std::vector<double> w1; // weight of i0 + 1 (clamped)
};

UpAxis up_axis(int in_len) {
    UpAxis ax;
    int out_len = in_len * 2;
    ax.i0.resize(out_len);
    ax.w1.resize(out_len);
    for (int o = 0; o < out_len; ++o) {
        double src = (o + 0.5) / 2.0 - 0.5;
        double f = std::floor(src);
        int i0 = static_cast<int>(f);
        double w1 = src - f;
        if (i0 < 0) {
            i0 = 0;
            w1 = 0.0;
        }
        if (i0 >= in_len - 1) {
            i0 = in_len - 1;
            w1 = 0.0;
        }
        ax.i0[o] = i0;
        ax.w1[o] = w1;
    }
    return ax;
}
} // namespace

Tensor BilinearUp2Layer::forward(const Tensor& x, Mode) {
    in_n_ = x.n();
    in_h_ = x.h();
    in_w_ = x.w();
    in_c_ = x.c();
    UpAxis ay = up_axis(x.h());
    UpAxis axx = up_axis(x.w());
    Tensor y(x.n(), x.h() * 2, x.w() * 2, x.c());
    for (int n = 0; n < x.n(); ++n) {
        for (int oy = 0; oy < y.h(); ++oy) {
            int y0 = ay.i0[oy];
            int y1 = std::min(y0 + 1, x.h() - 1);
            double wy = ay.w1[oy];
            for (int ox = 0; ox < y.w(); ++ox) {
                int x0 = axx.i0[ox];
                int x1 = std::min(x0 + 1, x.w() - 1);
                double wx = axx.w1[ox];
                const double* p00 = x.slot(n, y0, x0);
                const double* p01 = x.slot(n, y0, x1);
                const double* p10 = x.slot(n, y1, x0);
                const double* p11 = x.slot(n, y1, x1);
                double* out = y.slot(n, oy, ox);
                double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
                double w10 = wy * (1 - wx), w11 = wy * wx;
                for (int c = 0; c < x.c(); ++c)
                    out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
            }
        }
    }
    recorded_ = true;
    return y;
}

Tensor BilinearUp2Layer::backward(const Tensor& gout) {
    require_recorded("bilinear_up2");
    UpAxis ay = up_axis(in_h_);
    UpAxis ax = up_axis(in_w_);
    Tensor gin(in_n_, in_h_, in_w_, in_c_);
    for (int n = 0; n < gout.n(); ++n) {
        for (int oy = 0; oy < gout.h(); ++oy) {
            int y0 = ay.i0[oy];
            int y1 = std::min(y0 + 1, in_h_ - 1);
            double wy = ay.w1[oy];
            for (int ox = 0; ox < gout.w(); ++ox) {
                int x0 = ax.i0[ox];
                int x1 = std::min(x0 + 1, in_w_ - 1);
                double wx = ax.w1[ox];
                const double* go = gout.slot(n, oy, ox);
                double* g00 = gin.slot(n, y0, x0);
                double* g01 = gin.slot(n, y0, x1);
                double* g10 = gin.slot(n, y1, x0);
                double* g11 = gin.slot(n, y1, x1);
                double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
                double w10 = wy * (1 - wx), w11 = wy * wx;
                for (int c = 0; c < in_c_; ++c) {
                    double g = go[c];
                    g00[c] += w00 * g;
                    g01[c] += w01 * g;
                    g10[c] += w10 * g;
                    g11[c] += w11 * g;
                }
            }
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
        throw validation_error("concat: spatial shape mismatch");
    Tensor y(a.n(), a.h(), a.w(), a.c() + b.c());
    for (int n = 0; n < a.n(); ++n)
        for (int h = 0; h < a.h(); ++h)
            for (int w = 0; w < a.w(); ++w) {
                double* out = y.slot(n, h, w);
                std::memcpy(out, a.slot(n, h, w), sizeof(double) * a.c());
                std::memcpy(out + a.c(), b.slot(n, h, w), sizeof(double) * b.c());
            }
    return y;
}

void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb) {
    ga = Tensor(g.n(), g.h(), g.w(), ca);
    gb = Tensor(g.n(), g.h(), g.w(), g.c() - ca);
    for (int n = 0; n < g.n(); ++n)
        for (int h = 0; h < g.h(); ++h)
            for (int w = 0; w < g.w(); ++w) {
                const double* in = g.slot(n, h, w);
                std::memcpy(ga.slot(n, h, w), in, sizeof(double) * ca);
                std::memcpy(gb.slot(n, h, w), in + ca, sizeof(double) * (g.c() - ca));
            }
}

FocalResult focal_loss(const Tensor& logits, const Tensor& targets,
                       const std::vector<uint8_t>& mask, double gamma_f, double alpha_f) {
    if (!logits.same_shape(targets)) throw validation_error("focal_loss: shape mismatch");
    if (mask.size() != logits.size()) throw validation_error("focal_loss: mask size mismatch");
    size_t m = 0;
    for (uint8_t v : mask) m += v ? 1 : 0;
    if (m == 0) throw validation_error("focal_loss: empty mask");

    FocalResult res;
    res.grad = Tensor(logits.n(), logits.h(), logits.w(), logits.c());
    double acc = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        if (!mask[i]) continue;
        double z = logits[i];
        double y = targets[i];
        double s = sigmoid(z);
        if (y != 0.0) {
            double q = 1.0 - s;
            acc += -alpha_f * std::pow(q, gamma_f) * log_sigmoid(z);
            // d/dz of -alpha (1-s)^g ln s
            res.grad[i] = alpha_f * std::pow(q, gamma_f) *
                          (gamma_f * s * log_sigmoid(z) - q) / static_cast<double>(m);
        } else {
            double q = 1.0 - s; // p_t
            acc += -(1.0 - alpha_f) * std::pow(s, gamma_f) * log_sigmoid(-z);
            res.grad[i] = (1.0 - alpha_f) * std::pow(s, gamma_f) *
                          (s - gamma_f * q * log_sigmoid(-z)) / static_cast<double>(m);
        }
    }
    res.loss = acc / static_cast<double>(m);
    return res;
}

void optimizer_step(std::vector<ParamRef>& params, OptimState& state) {
    if (state.m.empty()) {
        for (auto& p : params) {
            state.m.emplace_back(p.value->n(), p.value->h(), p.value->w(), p.value->c());
            state.v.emplace_back(p.value->n(), p.value->h(), p.value->w(), p.value->c());
        }
    }
    if (state.m.size() != params.size())
        throw validation_error("optimizer_step: state/parameter count mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& val = *params[k].value;
        const Tensor& g = *params[k].grad;
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        if (!val.same_shape(g) || !val.same_shape(m))
            throw validation_error("optimizer_step: shape mismatch for " + params[k].name);
        for (size_t i = 0; i < val.size(); ++i) {
            double gi = g[i];
            if (!std::isfinite(gi))
                throw pipeline_error("non-finite gradient in parameter " + params[k].name);
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            val[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kNnMagic[4] = {'T', 'S', 'N', 'N'};

template <typename T>
void wr(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rd(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is.good()) throw validation_error(std::string("truncated checkpoint at ") + what);
    return v;
}
} // namespace

void write_checkpoint(const std::string& path, uint8_t arch_tag,
                      const std::vector<int32_t>& meta, const std::vector<LayerDesc>& arch,
                      const std::vector<const Tensor*>& blobs) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw pipeline_error("cannot write checkpoint: " + path);
    f.write(kNnMagic, 4);
    wr<uint32_t>(f, 1);
    wr<uint8_t>(f, arch_tag);
    wr<uint16_t>(f, static_cast<uint16_t>(meta.size()));
    for (int32_t v : meta) wr(f, v);
    wr<uint32_t>(f, static_cast<uint32_t>(arch.size()));
    for (const auto& d : arch) {
        wr<uint8_t>(f, static_cast<uint8_t>(d.kind));
        wr(f, d.p0);
        wr(f, d.p1);
        wr(f, d.p2);
        wr(f, d.p3);
    }
    wr<uint32_t>(f, static_cast<uint32_t>(blobs.size()));
    for (const Tensor* t : blobs) {
        wr<int32_t>(f, t->n());
        wr<int32_t>(f, t->h());
        wr<int32_t>(f, t->w());
        wr<int32_t>(f, t->c());
        f.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw validation_error("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f.good() || std::memcmp(magic, kNnMagic, 4) != 0)
        throw validation_error("bad checkpoint magic: " + path);
    uint32_t version = rd<uint32_t>(f, "version");
    if (version != 1) throw validation_error("unsupported checkpoint version");
    Checkpoint cp;
    cp.arch_tag = rd<uint8_t>(f, "arch tag");
    uint16_t nmeta = rd<uint16_t>(f, "meta count");
    cp.meta.resize(nmeta);
    for (auto& v : cp.meta) v = rd<int32_t>(f, "meta");
    uint32_t nlayers = rd<uint32_t>(f, "layer count");
    cp.arch.resize(nlayers);
    for (auto& d : cp.arch) {
        d.kind = static_cast<LayerKind>(rd<uint8_t>(f, "layer kind"));
        d.p0 = rd<int32_t>(f, "p0");
        d.p1 = rd<int32_t>(f, "p1");
        d.p2 = rd<int32_t>(f, "p2");
        d.p3 = rd<int32_t>(f, "p3");
    }
    uint32_t nblobs = rd<uint32_t>(f, "blob count");
    cp.blobs.reserve(nblobs);
    for (uint32_t i = 0; i < nblobs; ++i) {
        int32_t n = rd<int32_t>(f, "blob n");
        int32_t h = rd<int32_t>(f, "blob h");
        int32_t w = rd<int32_t>(f, "blob w");
        int32_t c = rd<int32_t>(f, "blob c");
        Tensor t(n, h, w, c);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!f.good()) throw validation_error("truncated checkpoint blob in " + path);
        cp.blobs.push_back(std::move(t));
    }
    return cp;
}

} // namespace terraseg
