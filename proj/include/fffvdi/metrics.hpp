#pragma once

#include "fffvdi/types.hpp"

namespace fffvdi::metrics {

inline constexpr double kPsnrCap = 99.0;

/// 10*log10(1/MSE) per frame, averaged over frames; identical frames give the
/// 99 dB cap. Inputs are [S, C, H, W] in [0, 1].
double psnr(const torch::Tensor& a, const torch::Tensor& b);

/// PSNR over the masked pixels of the whole clip (masks [S, 1, H, W]).
/// Returns the cap when nothing is masked.
double psnr_masked(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& masks);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Mean SSIM map (valid-region Gaussian filtering), averaged over channels and
/// then frames. Throws Error(Data) for frames smaller than the window.
double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});

/// Flow warping error: frame i+1 is pulled onto frame i's grid with flows[i]
/// and compared with frame i over pixels where `valid` [S-1, 1, H, W] is set and
/// the warp stayed in bounds. Mean over pairs of the per-pair mean squared
/// difference; multiply by 1e3 for the usual reporting convention.
double e_warp(const torch::Tensor& clip, const torch::Tensor& flows, const torch::Tensor& valid);

/// 1 where forward and backward flows agree: |f(x) + b(x + f(x))| < threshold.
torch::Tensor consistency_mask(const torch::Tensor& forward, const torch::Tensor& backward, double threshold = 1.0);

/// Tr((A B)^{1/2}) for symmetric positive semi-definite A, B, computed as
/// Tr((A^{1/2} B A^{1/2})^{1/2}).
double trace_sqrt_product(const torch::Tensor& a, const torch::Tensor& b);

/// Fréchet distance between Gaussian fits of feature rows [n, d]; both
/// covariances get eps*I added. Clamped to be non-negative.
double frechet_distance(const torch::Tensor& features_a, const torch::Tensor& features_b, double eps = 1e-6);

}  // namespace fffvdi::metrics
