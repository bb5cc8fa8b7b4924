#pragma once

#include "fffvdi/types.hpp"

#include <filesystem>

namespace fffvdi::io {

/// Writes a [3, H, W] float image in [0, 1] as 8-bit RGB PNG.
void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Writes a [1, H, W] binary mask as a 1-bit grayscale PNG.
void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask);

/// Reads any 8/16-bit gray/RGB(A) or 1-bit PNG into a float [C, H, W] tensor
/// in [0, 1] with C = 3 for colour and 1 for grayscale input.
torch::Tensor read_png(const std::filesystem::path& path);

/// Middlebury `.flo`: float 202021.25, int32 W, int32 H, then interleaved
/// float32 (u, v) row-major. Tensors are [2, H, W].
void write_flo(const std::filesystem::path& path, const torch::Tensor& flow);
torch::Tensor read_flo(const std::filesystem::path& path);

}  // namespace fffvdi::io
