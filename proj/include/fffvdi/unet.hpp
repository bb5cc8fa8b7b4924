#pragma once

#include "fffvdi/types.hpp"

#include <string>
#include <vector>

namespace fffvdi::unet {

struct DenoiserConfig {
    int latent_channels = 4;
    std::vector<int> widths{32, 64, 128};  // one per resolution level
    std::vector<int> temporal_levels{1, 2};
    int heads = 4;
    int time_dim = 128;
    int groups = 8;
    int max_frames = 16;  // length of the learned temporal position table

    void validate() const;
    std::string to_json() const;
    static DenoiserConfig from_json(const std::string& text);
};

enum class FreezePolicy { None, TemporalOnly };

/// "none" or "temporal_only"; anything else throws Error(Config).
FreezePolicy parse_freeze_policy(const std::string& name);
std::string to_string(FreezePolicy policy);

/// Sinusoidal embedding [B, dim] of integer timesteps [B].
torch::Tensor timestep_embedding(const torch::Tensor& t, int dim);

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int in, int out, int time_dim, int groups);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

private:
    torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
    torch::nn::Linear modulation_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Self-attention along the frame axis at every spatial location. The output
/// projection starts at zero so a fresh block is the identity.
class TemporalAttentionImpl : public torch::nn::Module {
public:
    TemporalAttentionImpl(int channels, int heads, int max_frames);
    /// x is [B*S, C, h, w].
    torch::Tensor forward(const torch::Tensor& x, int64_t frames);

private:
    int heads_;
    torch::nn::LayerNorm norm_{nullptr};
    torch::nn::Linear qkv_{nullptr}, out_{nullptr};
    torch::Tensor position_;
};
TORCH_MODULE(TemporalAttention);

/// eps_theta: 2D UNet applied per frame with temporal attention blocks mixing
/// frames, plus the 1x1 merge convolution that folds the conditional latent
/// into the noisy latent.
class DenoiserImpl : public torch::nn::Module {
public:
    explicit DenoiserImpl(DenoiserConfig config = {});

    const DenoiserConfig& config() const { return config_; }

    /// Concatenate along channels and apply the 2C -> C 1x1 convolution per
    /// frame. Inputs are [..., C, h, w] of equal shape.
    torch::Tensor merge_condition(const torch::Tensor& noisy, const torch::Tensor& conditional);

    /// x is [B, S, C, h, w], t is [B] (int64). Returns eps_hat of x's shape.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);

    /// Unbatched convenience: x is [S, C, h, w].
    torch::Tensor denoise(const torch::Tensor& x, int t);

    torch::nn::Conv2d merge{nullptr};

private:
    DenoiserConfig config_;
    torch::nn::Sequential time_mlp_{nullptr};
    torch::nn::Conv2d in_{nullptr};
    torch::nn::ModuleList down_blocks_{nullptr}, down_temporal_{nullptr}, downsample_{nullptr};
    ResBlock mid1_{nullptr}, mid2_{nullptr};
    TemporalAttention mid_temporal_{nullptr};
    torch::nn::ModuleList up_blocks_{nullptr}, up_temporal_{nullptr}, upsample_{nullptr};
    torch::nn::GroupNorm out_norm_{nullptr};
    torch::nn::Conv2d out_{nullptr};
    std::vector<bool> temporal_at_;
};
TORCH_MODULE(Denoiser);

/// Parameter names the temporal_only policy leaves trainable: temporal
/// attention blocks and the merge convolution.
bool trainable_under(FreezePolicy policy, const std::string& parameter_name);

/// Sets requires_grad on every parameter according to the policy.
void apply_freeze_policy(torch::nn::Module& model, FreezePolicy policy);

std::vector<torch::Tensor> trainable_parameters(const torch::nn::Module& model);

}  // namespace fffvdi::unet
