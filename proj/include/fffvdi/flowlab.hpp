#pragma once

#include "fffvdi/types.hpp"

#include <span>

// Flow fields are [2, H, W] (or batched [N, 2, H, W]) with channel 0 = u
// (horizontal, +x) and channel 1 = v (vertical, +y), in pixels of the grid they
// live on. A field O_{a->b} is sampled on frame a's grid and points into frame
// b: content of b is pulled onto a's grid by sampling b at x + O_{a->b}(x).
namespace fffvdi::flowlab {

enum class BorderPolicy {
    Clamp,        // sample coordinates clamped into the grid
    Zeros,        // out-of-range corners contribute zero (deformable conv padding)
    ZeroInvalid,  // any out-of-range corner with nonzero weight invalidates the sample
};

struct Sampled {
    torch::Tensor values;  // [N, D, Q...]
    torch::Tensor bad;     // [N, Q...] bool, true where ZeroInvalid rejected the sample
};

/// Bilinear sampling of `field` [N, D, H, W] at absolute positions (sx, sy),
/// each [N, Q...]. Differentiable with respect to the field and positions.
Sampled bilinear_sample(const torch::Tensor& field, const torch::Tensor& sx, const torch::Tensor& sy,
                        BorderPolicy policy);

struct WarpResult {
    torch::Tensor values;    // same shape as the field
    torch::Tensor validity;  // [N, 1, H, W] (or [1, H, W] for unbatched input)
};

/// Backward warp: out(x) = field(x + flow(x)). Output validity is the bilinear
/// sample of `source_valid` (all ones when undefined), forced to zero where a
/// used corner falls outside the source grid; values are zero where validity
/// is zero.
WarpResult warp(const torch::Tensor& field, const torch::Tensor& flow, const torch::Tensor& source_valid = {});

/// One composition step: result(x) = prefix(x) + next(x + prefix(x)) with
/// clamp-to-border bilinear sampling of `next`.
torch::Tensor compose_pair(const torch::Tensor& prefix, const torch::Tensor& next);

/// Left fold of compose_pair over the chain. chain[0] lives on the output
/// grid; chain[k] lives on the grid chain[k-1] points into.
torch::Tensor compose_flows(std::span<const torch::Tensor> chain);

/// Given adjacent fields [S-1, 2, H, W] where row k maps frame k+1's grid into
/// frame k+2 (1-based frames), returns [S-1, 2, H, W] whose row k maps frame
/// 1's grid into frame k+2, i.e. O'_{k+2 -> 1} in the propagation naming.
torch::Tensor chain_to_first(const torch::Tensor& adjacent);

struct CompletionOptions {
    double tolerance = 1e-6;  // max |neighbour mean - value| over filled cells
    int max_iterations = 50000;
    double relaxation = 1.85;
};

enum class CompletionStatus { Ok, AllMasked, NotConverged };

struct CompletionResult {
    torch::Tensor flow;
    CompletionStatus status = CompletionStatus::Ok;
    int iterations = 0;
    double residual = 0.0;
};

/// Harmonic (discrete Laplace) fill of masked vectors from the unmasked
/// boundary, with reflecting image borders. Unmasked vectors are returned
/// untouched. A fully masked field is filled with zero flow and flagged.
CompletionResult complete_flow(const torch::Tensor& flow, const torch::Tensor& mask,
                               const CompletionOptions& options = {});

/// Area-average over factor x factor blocks, then divide vectors by factor.
torch::Tensor downsample_flow(const torch::Tensor& flow, int factor);

/// Max-pool: a coarse cell is masked iff any covered pixel is masked.
torch::Tensor downsample_mask(const torch::Tensor& mask, int factor);

}  // namespace fffvdi::flowlab
