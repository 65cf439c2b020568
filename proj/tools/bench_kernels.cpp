// Timings of the OpenMP kernels against their serial references.
#include <chrono>
#include <cstdio>
#include <functional>

#include "terraseg/features.hpp"
#include "terraseg/grid_index.hpp"
#include "terraseg/nn.hpp"
#include "terraseg/parallel.hpp"
#include "terraseg/rasterize.hpp"
#include "terraseg/reference_kernels.hpp"
#include "terraseg/rng.hpp"
#include "terraseg/stitch.hpp"
#include "terraseg/synth.hpp"

using namespace terraseg;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warmup
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void row(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms);
}

} // namespace

int main() {
    std::printf("threads: %d\n", thread_count());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    Rng rng(42);

    // conv3x3 forward, 96x96x16 -> 32
    {
        Conv2dLayer conv(3, 16, 32, rng);
        Tensor x(1, 96, 96, 16);
        for (size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
        double s = time_ms([&] { reference::conv2d_forward(x, conv.weight, conv.bias); }, 3);
        double p = time_ms([&] { conv.forward(x, Mode::Eval); }, 3);
        row("conv3x3 96x96 16->32", s, p);
    }

    WorldSpec spec;
    spec.extent = 120;
    spec.density = 6;
    World world = generate_world(spec);
    colorize(world.points, world.ortho);
    SpatialIndex index = build_index(world.points, 1.0);

    // neighborhood stats over 20k points
    {
        std::vector<uint32_t> ids;
        for (uint32_t i = 0; i < world.points.size() && ids.size() < 20000; i += 7)
            if (world.points.records[i].has_color) ids.push_back(i);
        double s = time_ms(
            [&] {
                for (uint32_t id : ids) reference::neighborhood_stats(world.points, id, 1.0);
            },
            1);
        double p = time_ms(
            [&] {
#pragma omp parallel for schedule(static) num_threads(thread_count())
                for (long k = 0; k < static_cast<long>(ids.size()); ++k)
                    neighborhood_stats(index, world.points, ids[k], 1.0);
            },
            1);
        row("neighborhood stats x20k", s, p);
    }

    // feature rasterization
    {
        GridSpec grid = GridSpec::covering(world.points.bbox(), 0.2);
        double s = time_ms(
            [&] {
                reference::rasterize_features(world.points, grid.origin_x, grid.origin_y,
                                              grid.cell_size, grid.width, grid.height);
            },
            2);
        double p = time_ms([&] { rasterize_features(world.points, grid); }, 2);
        row("rasterize features", s, p);
    }

    // stitched blending, 240x240 cells of fake tile probabilities
    {
        int size = 96, stride = 48, w = 240, h = 240;
        auto placements = tile_cover(w, h, size, stride);
        auto weights = blend_weights(size);
        std::vector<std::vector<double>> probs(placements.size());
        for (auto& t : probs) {
            t.resize(static_cast<size_t>(size) * size);
            for (auto& v : t) v = rng.uniform();
        }
        auto xs = axis_placements(w, size, stride);
        auto ys = axis_placements(h, size, stride);
        double s = time_ms(
            [&] { reference::stitch_blend(probs, placements, weights, size, w, h); }, 5);
        double p = time_ms(
            [&] {
                std::vector<double> out(static_cast<size_t>(w) * h, 0.0);
#pragma omp parallel for schedule(static) num_threads(thread_count())
                for (int row_i = 0; row_i < h; ++row_i)
                    for (int col = 0; col < w; ++col) {
                        double acc = 0.0, wsum = 0.0;
                        for (size_t iy = 0; iy < ys.size(); ++iy) {
                            int ty = row_i - ys[iy];
                            if (ty < 0 || ty >= size) continue;
                            for (size_t ix = 0; ix < xs.size(); ++ix) {
                                int tx = col - xs[ix];
                                if (tx < 0 || tx >= size) continue;
                                double wgt = weights[static_cast<size_t>(ty) * size + tx];
                                acc += wgt * probs[iy * xs.size() + ix]
                                                  [static_cast<size_t>(ty) * size + tx];
                                wsum += wgt;
                            }
                        }
                        out[static_cast<size_t>(row_i) * w + col] = acc / wsum;
                    }
            },
            5);
        row("stitch blend 240x240", s, p);
    }
    return 0;
}
