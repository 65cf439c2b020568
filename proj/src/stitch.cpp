#include "terraseg/stitch.hpp"

#include <algorithm>
#include <cmath>

#include "terraseg/parallel.hpp"
#include "terraseg/rasterize.hpp"

namespace terraseg {

std::vector<int> axis_placements(int dim, int size, int stride) {
    if (dim < size) throw validation_error("tile_cover: region smaller than a tile");
    std::vector<int> pos;
    for (int p = 0; p + size <= dim; p += stride) pos.push_back(p);
    if (pos.back() + size < dim) pos.push_back(dim - size);
    return pos;
}

std::vector<TilePlacement> tile_cover(int width, int height, int size, int stride) {
    auto xs = axis_placements(width, size, stride);
    auto ys = axis_placements(height, size, stride);
    std::vector<TilePlacement> out;
    out.reserve(xs.size() * ys.size());
    for (int y : ys)
        for (int x : xs) out.push_back({x, y});
    return out;
}

std::vector<double> blend_weights(int size) {
    if (size < 2) throw validation_error("blend_weights: size must be >= 2");
    double half = std::ceil(static_cast<double>(size) / 2.0);
    std::vector<double> t(size);
    for (int i = 0; i < size; ++i)
        t[i] = static_cast<double>(std::min(i + 1, size - i)) / half;
    std::vector<double> w(static_cast<size_t>(size) * size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) w[static_cast<size_t>(r) * size + c] = t[r] * t[c];
    return w;
}

namespace {

// Same tile preparation as training crops: selected channels, per-tile z
// standardization, nodata to 0.
Tensor prepare_tile(const Raster& features, const std::vector<std::string>& channels, int col0,
                    int row0, int size) {
    Tensor input(1, size, size, static_cast<int>(channels.size()));
    int z_channel = -1;
    for (size_t c = 0; c < channels.size(); ++c)
        if (channels[c] == "z") z_channel = static_cast<int>(c);
    std::vector<uint8_t> z_valid(static_cast<size_t>(size) * size, 0);
    for (size_t c = 0; c < channels.size(); ++c) {
        const auto& ch = features.channel(channels[c]);
        double nd = features.nodata(channels[c]);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double v = ch[features.idx(col0 + x, row0 + y)];
                if (v == nd) {
                    input.at(0, y, x, static_cast<int>(c)) = 0.0;
                } else {
                    input.at(0, y, x, static_cast<int>(c)) = v;
                    if (static_cast<int>(c) == z_channel)
                        z_valid[static_cast<size_t>(y) * size + x] = 1;
                }
            }
    }
    if (z_channel >= 0) normalize_z(input, z_channel, z_valid);
    return input;
}

} // namespace

Raster stitch_predictions(UNetModel& model, const Raster& features,
                          const std::vector<std::string>& channels, int size, int stride) {
    if (static_cast<int>(channels.size()) != model.in_channels())
        throw validation_error("stitch_predictions: channel count does not match model");
    auto placements = tile_cover(features.width(), features.height(), size, stride);
    auto weights = blend_weights(size);

    // Tile probabilities computed independently, then blended per cell in
    // fixed placement order.
    std::vector<std::vector<double>> tile_prob(placements.size());
    for (size_t t = 0; t < placements.size(); ++t) {
        Tensor input = prepare_tile(features, channels, placements[t].col0, placements[t].row0,
                                    size);
        Tensor logits = model.forward(input, Mode::Eval);
        auto& probs = tile_prob[t];
        probs.resize(static_cast<size_t>(size) * size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                probs[static_cast<size_t>(y) * size + x] = sigmoid(logits.at(0, y, x, 0));
    }

    Raster out(features.origin_x(), features.origin_y(), features.cell_size(), features.width(),
               features.height());
    auto& prob = out.add_channel("prob");
    auto xs = axis_placements(features.width(), size, stride);
    auto ys = axis_placements(features.height(), size, stride);

#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (int row = 0; row < features.height(); ++row) {
        for (int col = 0; col < features.width(); ++col) {
            double acc = 0.0, wsum = 0.0;
            for (size_t iy = 0; iy < ys.size(); ++iy) {
                int ty = row - ys[iy];
                if (ty < 0 || ty >= size) continue;
                for (size_t ix = 0; ix < xs.size(); ++ix) {
                    int tx = col - xs[ix];
                    if (tx < 0 || tx >= size) continue;
                    size_t t = iy * xs.size() + ix;
                    double w = weights[static_cast<size_t>(ty) * size + tx];
                    acc += w * tile_prob[t][static_cast<size_t>(ty) * size + tx];
                    wsum += w;
                }
            }
            prob[out.idx(col, row)] = acc / wsum;
        }
    }
    return out;
}

} // namespace terraseg
