#pragma once

#include "fffvdi/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fffvdi::vae {

struct AutoencoderConfig {
    int image_channels = 3;
    int latent_channels = 4;
    int factor = 4;                           // spatial downsample, a power of two
    std::vector<int> widths{128, 128, 128};  // hidden conv widths at latent resolution
    double kl_weight = 1e-6;

    void validate() const;
    std::string to_json() const;
    static AutoencoderConfig from_json(const std::string& text);
};

/// Per-frame convolutional autoencoder. Frames are [N, 3, H, W] in [0, 1];
/// latents are [N, C, H/f, W/f] multiplied by the stored latent scale.
/// The encoder folds each f x f patch into channels (space-to-depth) and the
/// decoder unfolds them again, so every conv runs at latent resolution.
class AutoencoderImpl : public torch::nn::Module {
public:
    explicit AutoencoderImpl(AutoencoderConfig config = {});

    const AutoencoderConfig& config() const { return config_; }
    double latent_scale() const { return scale_.item<double>(); }
    void set_latent_scale(double scale);

    /// Unscaled posterior mean and log-variance.
    std::pair<torch::Tensor, torch::Tensor> moments(const torch::Tensor& frames);

    /// Posterior mean times the latent scale; deterministic.
    torch::Tensor encode(const torch::Tensor& frames);

    /// Inverse of encode; output clamped to [0, 1].
    torch::Tensor decode(const torch::Tensor& latents);

    /// Decoder on unscaled latents without clamping (training path).
    torch::Tensor decode_unscaled(const torch::Tensor& z);

    /// Spatially pooled activations of the last hidden encoder layer, [N, widths.back()].
    torch::Tensor features(const torch::Tensor& frames);

private:
    void check_frames(const torch::Tensor& frames) const;

    AutoencoderConfig config_;
    torch::nn::Sequential trunk_{nullptr};
    torch::nn::Conv2d to_moments_{nullptr};
    torch::nn::Sequential decoder_{nullptr};
    torch::Tensor scale_;
};
TORCH_MODULE(Autoencoder);

LatentClip encode_clip(Autoencoder& ae, const VideoClip& clip);
VideoClip decode_clip(Autoencoder& ae, const LatentClip& latents, int fps = 8);

/// L^m = E(I * (1 - M)) * (1 - downsample_mask(M, f)). Exactly zero on masked
/// latent cells; equal to encode(frames) when nothing is masked.
torch::Tensor masked_conditional_latent(Autoencoder& ae, const torch::Tensor& frames, const torch::Tensor& masks);

struct TrainConfig {
    int steps = 2000;
    int batch = 16;
    double lr = 1e-3;
    uint64_t seed = 0;
};

/// Adam on MSE + L1 + kl_weight * KL over a pool of frames [N, 3, H, W].
/// Batches are drawn from per-epoch shuffles of the pool. Returns the loss of
/// every step; a non-finite loss throws Error(Numeric).
std::vector<double> train_autoencoder(Autoencoder& ae, const torch::Tensor& frames, const TrainConfig& cfg,
                                      const std::function<void(int, double)>& on_step = {});

/// Sets the latent scale so the encoded pool has unit standard deviation.
double calibrate_latent_scale(Autoencoder& ae, const torch::Tensor& frames);

}  // namespace fffvdi::vae
