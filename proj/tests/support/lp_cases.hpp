#pragma once

#include "fffvdi/fff.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>

namespace support {

// Flows chained to frame 1 for a scene moving u cells per frame.
inline torch::Tensor shift_flows(int frames, double u, int h, int w) {
    auto f = torch::zeros({frames - 1, 2, h, w}, torch::kFloat64);
    for (int k = 0; k < frames - 1; ++k) f[k][0].fill_(u * (k + 1));
    return f;
}

// square of side `side` at column x0 + step*i in frame i, rows 2..2+side
inline torch::Tensor moving_masks(int frames, int h, int w, int x0, int step, int side) {
    auto m = torch::zeros({frames, 1, h, w}, torch::kFloat64);
    for (int i = 0; i < frames; ++i) {
        int x = x0 + step * i;
        m[i][0].slice(0, 2, 2 + side).slice(1, std::max(0, x), std::min(w, x + side)).fill_(1.0);
    }
    return m;
}

struct TraceResult {
    double max_error = 0.0;
    int filled = 0;
    int unfilled_mismatch = 0;
};

// Background translating +2 cells per frame under a fixed square mask. Every
// masked frame-1 cell is traced cell by cell: the first later frame i (0-based)
// whose source cell x + 2i is in the grid and unmasked supplies the value.
inline TraceResult trace_translating(uint64_t seed, int S = 4, int h = 10, int w = 14, int C = 3) {
    torch::manual_seed(seed);
    auto bg = torch::randn({C, h, w + 2 * S}, torch::kFloat64);
    auto z = torch::zeros({S, C, h, w}, torch::kFloat64);
    for (int i = 0; i < S; ++i) z[i] = bg.slice(2, 2 * S - 2 * i, 2 * S - 2 * i + w);
    auto m = moving_masks(S, h, w, 3, 0, 4);
    auto p = fffvdi::fff::latent_propagate(z, m, shift_flows(S, 2.0, h, w));

    auto za = z.accessor<double, 4>();
    auto ma = m.accessor<double, 4>();
    auto fa = p.frame.accessor<double, 3>();
    auto ua = p.unfilled.accessor<double, 3>();
    TraceResult r;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (ma[0][0][y][x] < 0.5) continue;
            int from = -1;
            for (int i = 1; i < S && from < 0; ++i) {
                int xs = x + 2 * i;
                if (xs < w && ma[i][0][y][xs] < 0.5) from = i;
            }
            if (from < 0) {
                r.unfilled_mismatch += ua[0][y][x] != 1.0;
                continue;
            }
            r.unfilled_mismatch += ua[0][y][x] != 0.0;
            ++r.filled;
            for (int c = 0; c < C; ++c) {
                r.max_error = std::max(r.max_error, std::abs(fa[c][y][x] - za[from][c][y][x + 2 * from]));
            }
        }
    }
    return r;
}

// Frame 1 fully masked, frame 2 clear, zero flow: frame 1 must become frame 2.
inline double full_mask_copy_error(uint64_t seed) {
    torch::manual_seed(seed);
    auto z = torch::randn({2, 4, 8, 8}, torch::kFloat64);
    auto m = torch::zeros({2, 1, 8, 8}, torch::kFloat64);
    m[0].fill_(1.0);
    auto p = fffvdi::fff::latent_propagate(z, m, torch::zeros({1, 2, 8, 8}, torch::kFloat64));
    return (p.frame - z[1]).abs().max().item<double>();
}

// Zero masks through the whole first-frame-filling pass, with and without DNA.
inline bool zero_mask_identity(uint64_t seed) {
    torch::manual_seed(seed);
    auto z = torch::randn({2, 3, 4, 6, 6});
    auto zero = torch::zeros({2, 3, 1, 6, 6});
    auto flows = torch::randn({2, 2, 2, 6, 6});
    auto eps = torch::randn_like(z);
    fffvdi::fff::Dna dna(fffvdi::fff::DnaConfig{});
    torch::NoGradGuard g;
    for (auto& p : dna->parameters()) p.add_(0.1 * torch::randn_like(p));
    bool lp = torch::equal(fffvdi::fff::fff_forward(z, zero, flows, eps, nullptr, {true, false}), z);
    bool full = torch::equal(fffvdi::fff::fff_forward(z, zero, flows, eps, &dna, {true, true}), z);
    return lp && full;
}

}  // namespace support
