#pragma once

#include "fffvdi/types.hpp"

#include <functional>

// Latent tensors here are single clips [S, C, h, w] unless noted; masks are
// [S, 1, h, w] at latent resolution; `to_first` holds the chained fields
// [S-1, 2, h, w] where row k maps frame 1's grid into frame k+2.
namespace fffvdi::fff {

/// Frame 1 after propagation. `filled` marks masked cells that received a
/// warped value, `unfilled` the masked cells no later frame could supply.
struct PropagatedFrame {
    torch::Tensor frame;     // [C, h, w]
    torch::Tensor filled;    // [1, h, w]
    torch::Tensor unfilled;  // [1, h, w]
};

inline constexpr double kAcceptValidity = 0.5;

/// Z1p = (1 - M1) Z1 + M1 Fill. Frames 2..S are visited in order; each warps
/// (1 - Mi) Zi onto frame 1 and writes the still-empty masked cells whose
/// warped validity reaches 0.5. Unfilled cells stay zero.
PropagatedFrame latent_propagate(const torch::Tensor& zm, const torch::Tensor& masks, const torch::Tensor& to_first);

/// Frames 2..S become Zm + eps * M, then frame 1 is prepended.
torch::Tensor noise_fill_concat(const torch::Tensor& frame1, const torch::Tensor& zm_rest,
                                const torch::Tensor& masks_rest, const torch::Tensor& eps_rest);

struct DnaConfig {
    int channels = 4;
    int kernel = 3;
    double max_offset = 4.0;  // offsets are soft-clamped to +-max_offset cells
    int hidden = 32;

    void validate() const;
    std::string to_json() const;
    static DnaConfig from_json(const std::string& text);
};

struct Offsets {
    torch::Tensor dx, dy;       // [B, S, K*K, h, w]
    torch::Tensor modulation;  // [B, S, K*K, h, w], in [0, 1]
};

/// Deformable noise alignment. Constructed as an identity: the fusion conv
/// passes Z^p, predicted offsets are zero, the kernel is a centre tap and the
/// refinement residual is zero.
class DnaImpl : public torch::nn::Module {
public:
    explicit DnaImpl(DnaConfig config = {});

    const DnaConfig& config() const { return config_; }

    /// 1x1 fusion of Z^m and Z^p, both [B, S, C, h, w].
    torch::Tensor fuse(const torch::Tensor& zm, const torch::Tensor& zp);

    /// Offsets and modulation from 3D convolutions over [feature, mask].
    Offsets predict_offsets(const torch::Tensor& feature, const torch::Tensor& masks);

    /// Modulated deformable convolution of x [B, C, h, w] with per-tap offsets
    /// and modulation [B, K*K, h, w].
    torch::Tensor deform(const torch::Tensor& x, const torch::Tensor& dx, const torch::Tensor& dy,
                         const torch::Tensor& modulation);

    /// R(aligned, current) = current + residual(aligned, current).
    torch::Tensor refine(const torch::Tensor& aligned, const torch::Tensor& current);

    /// Z' = (1 - M) Zm + M Zhat with the backward recursion over frames.
    /// Inputs [B, S, C, h, w], masks [B, S, 1, h, w].
    torch::Tensor forward(const torch::Tensor& zp, const torch::Tensor& zm, const torch::Tensor& masks);

    torch::nn::Conv2d fusion{nullptr};
    torch::nn::Conv3d offset_hidden{nullptr}, offset_out{nullptr};
    torch::Tensor kernel_weight;  // [C, C*K*K]
    torch::Tensor kernel_bias;    // [C]
    torch::nn::Conv2d refine_hidden{nullptr}, refine_out{nullptr};

private:
    DnaConfig config_;
};
TORCH_MODULE(Dna);

struct FffOptions {
    bool propagate = true;
    bool align = true;
    bool fill = true;  // false: plain conditional path, the pass is skipped
};

/// Full first-frame-filling pass over a batch [B, S, C, h, w]. Unfilled
/// frame-1 cells and masked cells of later frames receive Zm + eps; without
/// propagation every masked frame-1 cell is unfilled. With fill off the input
/// is returned unchanged.
torch::Tensor fff_forward(const torch::Tensor& zm, const torch::Tensor& masks, const torch::Tensor& to_first,
                          const torch::Tensor& eps, Dna* dna, const FffOptions& options);

/// State projection used by the sampler and the training target: frame-1
/// cells that propagation fills are replaced by the propagated values of the
/// state itself; all other cells are left alone. x is [S, C, h, w].
torch::Tensor project_propagated(const torch::Tensor& x, const torch::Tensor& masks, const torch::Tensor& to_first);

}  // namespace fffvdi::fff
