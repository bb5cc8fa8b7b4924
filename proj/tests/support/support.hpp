#pragma once

#include "oracles.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace support {

// [C, H, W] tensor -> oracle grid (float64 copy).
inline oracle::Grid to_grid(const torch::Tensor& t) {
    auto d = t.detach().to(torch::kFloat64).contiguous();
    oracle::Grid g(static_cast<int>(d.size(0)), static_cast<int>(d.size(1)), static_cast<int>(d.size(2)));
    std::copy(d.data_ptr<double>(), d.data_ptr<double>() + d.numel(), g.v.begin());
    return g;
}

inline std::vector<oracle::Grid> to_grids(const torch::Tensor& t) {
    std::vector<oracle::Grid> out;
    for (int64_t i = 0; i < t.size(0); ++i) {
        out.push_back(to_grid(t[i]));
    }
    return out;
}

inline torch::Tensor from_grid(const oracle::Grid& g) {
    return torch::tensor(g.v, torch::kFloat64).reshape({g.c, g.h, g.w});
}

inline double max_abs(const torch::Tensor& a, const torch::Tensor& b) {
    return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline double max_abs(const oracle::Grid& a, const torch::Tensor& b) { return max_abs(from_grid(a), b); }

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fffvdi_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace support
