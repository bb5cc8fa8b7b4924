#pragma once

#include "support.hpp"

#include "fffvdi/flowlab.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace support {

// Smooth random flow: a few low-frequency sinusoids per component, amplitude up to `amp`.
inline torch::Tensor smooth_flow(std::mt19937_64& rng, int h, int w, double amp) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto f = torch::zeros({2, h, w}, torch::kFloat64);
    auto ys = torch::arange(h, torch::kFloat64).view({h, 1});
    auto xs = torch::arange(w, torch::kFloat64).view({1, w});
    for (int c = 0; c < 2; ++c) {
        for (int k = 0; k < 3; ++k) {
            double fx = u(rng) * 2.0 / w;
            double fy = u(rng) * 2.0 / h;
            double ph = u(rng) * 6.283185307179586;
            double a = (u(rng) * 2 - 1) * amp / 3.0;
            f[c] += a * torch::sin(6.283185307179586 * (fx * xs + fy * ys) + ph);
        }
    }
    return f;
}

struct CaseErrors {
    double warp = 0.0;
    double validity = 0.0;
    double compose = 0.0;
    int cases = 0;
};

// `n` random warp instances and `n` random compositions on grids up to 16x16,
// each compared against the scalar oracle.
inline CaseErrors run_warp_cases(int n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> side(2, 16);
    std::uniform_int_distribution<int> chans(1, 4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    CaseErrors e;
    for (int i = 0; i < n; ++i) {
        const int h = side(rng);
        const int w = side(rng);
        const int d = chans(rng);
        auto field = torch::empty({d, h, w}, torch::kFloat64);
        auto flow = torch::empty({2, h, w}, torch::kFloat64);
        auto fa = field.accessor<double, 3>();
        auto wa = flow.accessor<double, 3>();
        for (int c = 0; c < d; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) fa[c][y][x] = u(rng);
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    // some vectors land exactly on integer offsets to probe the edge rule
                    double v = 3.0 * u(rng);
                    wa[c][y][x] = (rng() % 5 == 0) ? std::round(v) : v;
                }
        auto got = fffvdi::flowlab::warp(field, flow);
        auto [want, valid] = oracle::warp(to_grid(field), to_grid(flow));
        e.warp = std::max(e.warp, max_abs(want, got.values));
        e.validity = std::max(e.validity, max_abs(valid, got.validity));

        auto a = smooth_flow(rng, h, w, 3.0);
        auto b = smooth_flow(rng, h, w, 3.0);
        auto composed = fffvdi::flowlab::compose_pair(a, b);
        e.compose = std::max(e.compose, max_abs(oracle::compose(to_grid(a), to_grid(b)), composed));
        ++e.cases;
    }
    return e;
}

}  // namespace support
