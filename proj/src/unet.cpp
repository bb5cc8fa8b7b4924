#include "fffvdi/unet.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fffvdi::unet {
namespace {

namespace nn = torch::nn;

nn::Conv2d conv3(int in, int out, int stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

void zero_(nn::Module& m) {
    torch::NoGradGuard no_grad;
    for (auto& p : m.parameters()) {
        p.zero_();
    }
}

}  // namespace

void DenoiserConfig::validate() const {
    require(latent_channels >= 1, ErrorKind::Config, "denoiser: latent_channels must be >= 1");
    require(!widths.empty(), ErrorKind::Config, "denoiser: widths must be non-empty");
    require(heads >= 1 && time_dim >= 2 && time_dim % 2 == 0, ErrorKind::Config, "denoiser: bad heads/time_dim");
    require(groups >= 1 && max_frames >= 2, ErrorKind::Config, "denoiser: bad groups/max_frames");
    for (int w : widths) {
        require(w >= 1 && w % groups == 0 && w % heads == 0, ErrorKind::Config,
                "denoiser: width " + std::to_string(w) + " must be divisible by groups and heads");
    }
    for (int l : temporal_levels) {
        require(l >= 0 && l < static_cast<int>(widths.size()), ErrorKind::Config,
                "denoiser: temporal level " + std::to_string(l) + " out of range");
    }
}

std::string DenoiserConfig::to_json() const {
    nlohmann::json j{{"C", latent_channels}, {"widths", widths},         {"temporal_levels", temporal_levels},
                     {"heads", heads},       {"time_dim", time_dim},     {"groups", groups},
                     {"max_frames", max_frames}};
    return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
    try {
        auto j = nlohmann::json::parse(text);
        DenoiserConfig c;
        c.latent_channels = j.at("C").get<int>();
        c.widths = j.at("widths").get<std::vector<int>>();
        c.temporal_levels = j.at("temporal_levels").get<std::vector<int>>();
        c.heads = j.at("heads").get<int>();
        c.time_dim = j.at("time_dim").get<int>();
        c.groups = j.at("groups").get<int>();
        c.max_frames = j.at("max_frames").get<int>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("denoiser descriptor: ") + e.what());
    }
}

FreezePolicy parse_freeze_policy(const std::string& name) {
    if (name == "none") {
        return FreezePolicy::None;
    }
    if (name == "temporal_only") {
        return FreezePolicy::TemporalOnly;
    }
    throw config_error("unknown freeze policy '" + name + "' (expected none or temporal_only)");
}

std::string to_string(FreezePolicy policy) {
    return policy == FreezePolicy::None ? "none" : "temporal_only";
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
    const int half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat64) / half);
    auto args = t.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
    return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

ResBlockImpl::ResBlockImpl(int in, int out, int time_dim, int groups) {
    norm1_ = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(std::gcd(groups, in), in)));
    conv1_ = register_module("conv1", conv3(in, out));
    norm2_ = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(groups, out)));
    conv2_ = register_module("conv2", conv3(out, out));
    modulation_ = register_module("modulation", nn::Linear(time_dim, 2 * out));
    if (in != out) {
        skip_ = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in, out, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1_(torch::silu(norm1_(x)));
    auto mod = modulation_(temb).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
    h = norm2_(h) * (1 + mod[0]) + mod[1];
    h = conv2_(torch::silu(h));
    return (skip_ ? skip_(x) : x) + h;
}

TemporalAttentionImpl::TemporalAttentionImpl(int channels, int heads, int max_frames) : heads_(heads) {
    norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({channels})));
    qkv_ = register_module("qkv", nn::Linear(channels, 3 * channels));
    out_ = register_module("out", nn::Linear(channels, channels));
    position_ = register_parameter("position", 0.02 * torch::randn({max_frames, channels}));
    zero_(*out_);
}

torch::Tensor TemporalAttentionImpl::forward(const torch::Tensor& x, int64_t frames) {
    const int64_t BS = x.size(0);
    const int64_t C = x.size(1);
    const int64_t h = x.size(2);
    const int64_t w = x.size(3);
    const int64_t B = BS / frames;
    require(frames <= position_.size(0), ErrorKind::Data,
            "temporal attention: " + std::to_string(frames) + " frames exceed the position table");
    // [B*S, C, h, w] -> [B*h*w, S, C]
    auto seq = x.reshape({B, frames, C, h * w}).permute({0, 3, 1, 2}).reshape({B * h * w, frames, C});
    auto q_in = norm_(seq) + position_.slice(0, 0, frames).unsqueeze(0);
    auto qkv = qkv_(q_in).reshape({B * h * w, frames, 3, heads_, C / heads_}).permute({2, 0, 3, 1, 4});
    auto q = qkv[0];
    auto k = qkv[1];
    auto v = qkv[2];
    auto att = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(C / heads_)), -1);
    auto mixed = torch::matmul(att, v).permute({0, 2, 1, 3}).reshape({B * h * w, frames, C});
    auto y = seq + out_(mixed);
    return y.reshape({B, h * w, frames, C}).permute({0, 2, 3, 1}).reshape({BS, C, h, w});
}

DenoiserImpl::DenoiserImpl(DenoiserConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto& W = config_.widths;
    const int L = static_cast<int>(W.size());
    const int C = config_.latent_channels;
    const int td = config_.time_dim;
    const int g = config_.groups;
    temporal_at_.assign(L, false);
    for (int l : config_.temporal_levels) {
        temporal_at_[l] = true;
    }

    merge = register_module("merge", nn::Conv2d(nn::Conv2dOptions(2 * C, C, 1).bias(false)));
    {
        torch::NoGradGuard no_grad;
        merge->weight.zero_();
        for (int c = 0; c < C; ++c) {
            merge->weight[c][c].fill_(1.0);
        }
    }
    time_mlp_ = register_module(
        "time_mlp", nn::Sequential(nn::Linear(td / 2, td), nn::SiLU(), nn::Linear(td, td)));
    in_ = register_module("in", conv3(C, W[0]));

    down_blocks_ = nn::ModuleList();
    down_temporal_ = nn::ModuleList();
    downsample_ = nn::ModuleList();
    up_blocks_ = nn::ModuleList();
    up_temporal_ = nn::ModuleList();
    upsample_ = nn::ModuleList();
    int prev = W[0];
    for (int l = 0; l < L; ++l) {
        down_blocks_->push_back(ResBlock(prev, W[l], td, g));
        if (temporal_at_[l]) {
            down_temporal_->push_back(TemporalAttention(W[l], config_.heads, config_.max_frames));
        }
        if (l + 1 < L) {
            downsample_->push_back(conv3(W[l], W[l], 2));
        }
        prev = W[l];
    }
    mid1_ = ResBlock(W[L - 1], W[L - 1], td, g);
    mid_temporal_ = TemporalAttention(W[L - 1], config_.heads, config_.max_frames);
    mid2_ = ResBlock(W[L - 1], W[L - 1], td, g);
    for (int l = L - 1; l >= 0; --l) {
        up_blocks_->push_back(ResBlock(prev + W[l], W[l], td, g));
        if (temporal_at_[l]) {
            up_temporal_->push_back(TemporalAttention(W[l], config_.heads, config_.max_frames));
        }
        if (l > 0) {
            upsample_->push_back(conv3(W[l], W[l - 1]));
        }
        prev = l > 0 ? W[l - 1] : W[l];
    }
    register_module("down", down_blocks_);
    register_module("down_temporal", down_temporal_);
    register_module("downsample", downsample_);
    register_module("mid1", mid1_);
    register_module("mid_temporal", mid_temporal_);
    register_module("mid2", mid2_);
    register_module("up", up_blocks_);
    register_module("up_temporal", up_temporal_);
    register_module("upsample", upsample_);
    out_norm_ = register_module("out_norm", nn::GroupNorm(nn::GroupNormOptions(g, W[0])));
    out_ = register_module("out", conv3(W[0], C));
    zero_(*out_);
}

torch::Tensor DenoiserImpl::merge_condition(const torch::Tensor& noisy, const torch::Tensor& conditional) {
    require(noisy.sizes() == conditional.sizes(), ErrorKind::Data,
            "merge_condition: shape mismatch " + shape_str(noisy) + " vs " + shape_str(conditional));
    require(noisy.dim() >= 4 && noisy.size(-3) == config_.latent_channels, ErrorKind::Data,
            "merge_condition: expected [...," + std::to_string(config_.latent_channels) + ",h,w], got " +
                shape_str(noisy));
    auto lead = noisy.sizes().vec();
    auto flat_n = noisy.reshape({-1, noisy.size(-3), noisy.size(-2), noisy.size(-1)});
    auto flat_c = conditional.reshape(flat_n.sizes());
    return merge(torch::cat({flat_n, flat_c}, 1)).reshape(lead);
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
    require(x.dim() == 5 && x.size(2) == config_.latent_channels, ErrorKind::Data,
            "denoiser: expected [B,S," + std::to_string(config_.latent_channels) + ",h,w], got " + shape_str(x));
    require(t.dim() == 1 && t.size(0) == x.size(0), ErrorKind::Data, "denoiser: need one timestep per batch row");
    const int64_t B = x.size(0);
    const int64_t S = x.size(1);
    const int L = static_cast<int>(config_.widths.size());
    const int64_t div = int64_t{1} << (L - 1);
    require(x.size(3) % div == 0 && x.size(4) % div == 0, ErrorKind::Data,
            "denoiser: latent size must be divisible by " + std::to_string(div));

    auto temb = time_mlp_->forward(timestep_embedding(t, config_.time_dim / 2).to(x.scalar_type()));
    temb = temb.repeat_interleave(S, 0);

    auto h = in_(x.reshape({B * S, x.size(2), x.size(3), x.size(4)}));
    std::vector<torch::Tensor> skips;
    size_t attn = 0;
    for (int l = 0; l < L; ++l) {
        h = down_blocks_[l]->as<ResBlock>()->forward(h, temb);
        if (temporal_at_[l]) {
            h = down_temporal_[attn++]->as<TemporalAttention>()->forward(h, S);
        }
        skips.push_back(h);
        if (l + 1 < L) {
            h = downsample_[l]->as<nn::Conv2d>()->forward(h);
        }
    }
    h = mid1_(h, temb);
    h = mid_temporal_(h, S);
    h = mid2_(h, temb);
    attn = 0;
    for (int i = 0; i < L; ++i) {
        int l = L - 1 - i;
        h = up_blocks_[i]->as<ResBlock>()->forward(torch::cat({h, skips[l]}, 1), temb);
        if (temporal_at_[l]) {
            h = up_temporal_[attn++]->as<TemporalAttention>()->forward(h, S);
        }
        if (l > 0) {
            h = torch::upsample_nearest2d(h, std::vector<int64_t>{h.size(2) * 2, h.size(3) * 2});
            h = upsample_[i]->as<nn::Conv2d>()->forward(h);
        }
    }
    h = out_(torch::silu(out_norm_(h)));
    return h.reshape(x.sizes());
}

torch::Tensor DenoiserImpl::denoise(const torch::Tensor& x, int t) {
    auto tt = torch::full({1}, t, torch::kLong);
    return forward(x.unsqueeze(0), tt).squeeze(0);
}

bool trainable_under(FreezePolicy policy, const std::string& parameter_name) {
    if (policy == FreezePolicy::None) {
        return true;
    }
    return parameter_name.find("temporal") != std::string::npos || parameter_name.rfind("merge.", 0) == 0;
}

void apply_freeze_policy(torch::nn::Module& model, FreezePolicy policy) {
    for (auto& p : model.named_parameters(true)) {
        p.value().set_requires_grad(trainable_under(policy, p.key()));
    }
}

std::vector<torch::Tensor> trainable_parameters(const torch::nn::Module& model) {
    std::vector<torch::Tensor> out;
    for (const auto& p : model.parameters(true)) {
        if (p.requires_grad()) {
            out.push_back(p);
        }
    }
    return out;
}

}  // namespace fffvdi::unet
