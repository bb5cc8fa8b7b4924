#include "fffvdi/vae.hpp"

#include "fffvdi/datagen.hpp"
#include "fffvdi/flowlab.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numeric>

namespace fffvdi::vae {
namespace {

namespace nn = torch::nn;

nn::Conv2d conv(int in, int out, int k, int stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding((k - 1) / 2));
}

int log2_exact(int f) {
    int n = 0;
    while ((1 << n) < f) {
        ++n;
    }
    return (1 << n) == f ? n : -1;
}

}  // namespace

void AutoencoderConfig::validate() const {
    require(image_channels >= 1 && latent_channels >= 1, ErrorKind::Config, "autoencoder: channel counts must be >= 1");
    require(log2_exact(factor) >= 0, ErrorKind::Config,
            "autoencoder: factor must be a power of two, got " + std::to_string(factor));
    require(!widths.empty(), ErrorKind::Config, "autoencoder: need at least one hidden width");
    for (int w : widths) {
        require(w >= 1, ErrorKind::Config, "autoencoder: widths must be positive");
    }
    require(kl_weight >= 0, ErrorKind::Config, "autoencoder: kl_weight must be >= 0");
}

std::string AutoencoderConfig::to_json() const {
    nlohmann::json j{{"image_channels", image_channels}, {"C", latent_channels},    {"f", factor},
                     {"widths", widths},                  {"kl_weight", kl_weight}};
    return j.dump();
}

AutoencoderConfig AutoencoderConfig::from_json(const std::string& text) {
    try {
        auto j = nlohmann::json::parse(text);
        AutoencoderConfig c;
        c.image_channels = j.at("image_channels").get<int>();
        c.latent_channels = j.at("C").get<int>();
        c.factor = j.at("f").get<int>();
        c.widths = j.at("widths").get<std::vector<int>>();
        c.kl_weight = j.at("kl_weight").get<double>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("autoencoder descriptor: ") + e.what());
    }
}

AutoencoderImpl::AutoencoderImpl(AutoencoderConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto& w = config_.widths;
    const int C = config_.latent_channels;

    const int f = config_.factor;
    const int folded = config_.image_channels * f * f;

    trunk_ = nn::Sequential();
    trunk_->push_back(nn::PixelUnshuffle(nn::PixelUnshuffleOptions(f)));
    trunk_->push_back(conv(folded, w[0], 3));
    trunk_->push_back(nn::SiLU());
    for (size_t i = 1; i < w.size(); ++i) {
        trunk_->push_back(conv(w[i - 1], w[i], 3));
        trunk_->push_back(nn::SiLU());
    }
    to_moments_ = conv(w.back(), 2 * C, 3);
    {
        // start near-deterministic so reconstruction is learned before the posterior widens
        torch::NoGradGuard no_grad;
        to_moments_->bias.slice(0, C).fill_(-10.0);
    }

    decoder_ = nn::Sequential();
    decoder_->push_back(conv(C, w.back(), 3));
    decoder_->push_back(nn::SiLU());
    for (size_t i = w.size() - 1; i > 0; --i) {
        decoder_->push_back(conv(w[i], w[i - 1], 3));
        decoder_->push_back(nn::SiLU());
    }
    decoder_->push_back(conv(w[0], folded, 3));
    decoder_->push_back(nn::PixelShuffle(nn::PixelShuffleOptions(f)));

    register_module("trunk", trunk_);
    register_module("to_moments", to_moments_);
    register_module("decoder", decoder_);
    scale_ = register_buffer("latent_scale", torch::ones({}));
}

void AutoencoderImpl::set_latent_scale(double scale) {
    require(std::isfinite(scale) && scale > 0, ErrorKind::Numeric, "autoencoder: latent scale must be positive");
    torch::NoGradGuard no_grad;
    scale_.fill_(scale);
}

void AutoencoderImpl::check_frames(const torch::Tensor& frames) const {
    require(frames.dim() == 4 && frames.size(1) == config_.image_channels, ErrorKind::Data,
            "autoencoder: expected [N," + std::to_string(config_.image_channels) + ",H,W], got " + shape_str(frames));
    require(frames.size(2) % config_.factor == 0 && frames.size(3) % config_.factor == 0, ErrorKind::Data,
            "autoencoder: frame size " + shape_str(frames) + " not divisible by f=" + std::to_string(config_.factor));
}

std::pair<torch::Tensor, torch::Tensor> AutoencoderImpl::moments(const torch::Tensor& frames) {
    check_frames(frames);
    auto m = to_moments_(trunk_->forward(2 * frames - 1));
    auto parts = m.chunk(2, 1);
    return {parts[0], parts[1].clamp(-30, 20)};
}

torch::Tensor AutoencoderImpl::encode(const torch::Tensor& frames) {
    return moments(frames).first * scale_;
}

torch::Tensor AutoencoderImpl::decode_unscaled(const torch::Tensor& z) {
    require(z.dim() == 4 && z.size(1) == config_.latent_channels, ErrorKind::Data,
            "autoencoder: expected latents [N," + std::to_string(config_.latent_channels) + ",h,w], got " +
                shape_str(z));
    return 0.5 + 0.5 * decoder_->forward(z);
}

torch::Tensor AutoencoderImpl::decode(const torch::Tensor& latents) {
    return decode_unscaled(latents / scale_).clamp(0, 1);
}

torch::Tensor AutoencoderImpl::features(const torch::Tensor& frames) {
    check_frames(frames);
    return trunk_->forward(2 * frames - 1).mean({2, 3});
}

LatentClip encode_clip(Autoencoder& ae, const VideoClip& clip) {
    torch::NoGradGuard no_grad;
    return LatentClip{ae->encode(clip.frames), ae->latent_scale()};
}

VideoClip decode_clip(Autoencoder& ae, const LatentClip& latents, int fps) {
    torch::NoGradGuard no_grad;
    return VideoClip{ae->decode(latents.codes), fps};
}

torch::Tensor masked_conditional_latent(Autoencoder& ae, const torch::Tensor& frames, const torch::Tensor& masks) {
    require(masks.dim() == 4 && masks.size(1) == 1 && masks.size(0) == frames.size(0) &&
                masks.size(2) == frames.size(2) && masks.size(3) == frames.size(3),
            ErrorKind::Data, "masked_conditional_latent: mask " + shape_str(masks) + " vs frames " + shape_str(frames));
    auto keep = 1 - masks.to(frames.scalar_type());
    auto latent = ae->encode(frames * keep);
    auto keep_lat = 1 - flowlab::downsample_mask(masks.to(frames.scalar_type()), ae->config().factor);
    return latent * keep_lat;
}

std::vector<double> train_autoencoder(Autoencoder& ae, const torch::Tensor& frames, const TrainConfig& cfg,
                                      const std::function<void(int, double)>& on_step) {
    require(frames.dim() == 4 && frames.size(0) > 0, ErrorKind::Data, "train_autoencoder: empty frame pool");
    require(cfg.steps >= 0 && cfg.batch >= 1 && cfg.lr >= 0, ErrorKind::Config, "train_autoencoder: bad train config");
    torch::manual_seed(cfg.seed);
    datagen::Rng rng(cfg.seed ^ 0x5eedae);
    ae->train();
    torch::optim::Adam opt(ae->parameters(), torch::optim::AdamOptions(cfg.lr));

    const int64_t n = frames.size(0);
    std::vector<int64_t> order(n);
    size_t cursor = order.size();
    std::vector<double> losses;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int64_t> pick;
        while (static_cast<int>(pick.size()) < std::min<int64_t>(cfg.batch, n)) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), 0);
                for (int64_t i = n - 1; i > 0; --i) {
                    std::swap(order[i], order[rng.integer(0, i)]);
                }
                cursor = 0;
            }
            pick.push_back(order[cursor++]);
        }
        auto x = frames.index_select(0, torch::tensor(pick, torch::kLong));
        auto [mean, logvar] = ae->moments(x);
        auto z = mean + torch::exp(0.5 * logvar) * torch::randn_like(mean);
        auto recon = ae->decode_unscaled(z);
        auto kl = 0.5 * (mean.pow(2) + logvar.exp() - 1 - logvar).sum({1, 2, 3}).mean();
        auto loss = (recon - x).pow(2).mean() + (recon - x).abs().mean() + ae->config().kl_weight * kl;
        double value = loss.item<double>();
        if (!std::isfinite(value)) {
            throw numeric_error("train_autoencoder: loss became " + std::to_string(value) + " at step " +
                                std::to_string(step) + " (lr=" + std::to_string(cfg.lr) + ")");
        }
        opt.zero_grad();
        loss.backward();
        opt.step();
        losses.push_back(value);
        if (on_step) {
            on_step(step, value);
        }
    }
    ae->eval();
    return losses;
}

double calibrate_latent_scale(Autoencoder& ae, const torch::Tensor& frames) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> chunks;
    for (int64_t i = 0; i < frames.size(0); i += 64) {
        chunks.push_back(ae->moments(frames.slice(0, i, std::min<int64_t>(i + 64, frames.size(0)))).first);
    }
    double sd = torch::cat(chunks).std().item<double>();
    require(std::isfinite(sd) && sd > 0, ErrorKind::Numeric, "calibrate_latent_scale: degenerate latents");
    ae->set_latent_scale(1.0 / sd);
    return 1.0 / sd;
}

}  // namespace fffvdi::vae
