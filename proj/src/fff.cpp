#include "fffvdi/fff.hpp"

#include "fffvdi/flowlab.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace fffvdi::fff {
namespace {

namespace nn = torch::nn;

void check_clip(const torch::Tensor& zm, const torch::Tensor& masks, const torch::Tensor& to_first) {
    require(zm.dim() == 4, ErrorKind::Data, "fff: latent clip must be [S,C,h,w], got " + shape_str(zm));
    const int64_t S = zm.size(0);
    require(masks.dim() == 4 && masks.size(0) == S && masks.size(1) == 1 && masks.size(2) == zm.size(2) &&
                masks.size(3) == zm.size(3),
            ErrorKind::Data, "fff: mask " + shape_str(masks) + " does not match latent " + shape_str(zm));
    require(to_first.dim() == 4 && to_first.size(0) == S - 1 && to_first.size(1) == 2 &&
                to_first.size(2) == zm.size(2) && to_first.size(3) == zm.size(3),
            ErrorKind::Data, "fff: flows " + shape_str(to_first) + " do not match latent " + shape_str(zm));
}

}  // namespace

PropagatedFrame latent_propagate(const torch::Tensor& zm, const torch::Tensor& masks, const torch::Tensor& to_first) {
    check_clip(zm, masks, to_first);
    const int64_t S = zm.size(0);
    auto keep = 1 - masks;
    auto frame = keep[0] * zm[0];
    auto need = masks[0] > 0.5;
    auto filled = torch::zeros_like(need);
    for (int64_t i = 1; i < S; ++i) {
        if (!need.any().item<bool>()) {
            break;
        }
        auto source = (keep[i] * zm[i]).unsqueeze(0);
        auto warped = flowlab::warp(source, to_first[i - 1].unsqueeze(0), keep[i].unsqueeze(0));
        auto accept = need & (warped.validity[0] >= kAcceptValidity);
        frame = torch::where(accept, warped.values[0], frame);
        filled = filled | accept;
        need = need & ~accept;
    }
    auto dtype = zm.scalar_type();
    return {frame, filled.to(dtype), need.to(dtype)};
}

torch::Tensor noise_fill_concat(const torch::Tensor& frame1, const torch::Tensor& zm_rest,
                                const torch::Tensor& masks_rest, const torch::Tensor& eps_rest) {
    require(eps_rest.sizes() == zm_rest.sizes(), ErrorKind::Data,
            "noise_fill_concat: eps " + shape_str(eps_rest) + " vs latents " + shape_str(zm_rest));
    require(masks_rest.size(0) == zm_rest.size(0) && masks_rest.size(1) == 1, ErrorKind::Data,
            "noise_fill_concat: mask " + shape_str(masks_rest) + " vs latents " + shape_str(zm_rest));
    require(frame1.dim() == 3 && frame1.sizes() == zm_rest[0].sizes(), ErrorKind::Data,
            "noise_fill_concat: frame 1 " + shape_str(frame1) + " vs latents " + shape_str(zm_rest));
    auto rest = zm_rest + eps_rest * masks_rest;
    return torch::cat({frame1.unsqueeze(0), rest}, 0);
}

void DnaConfig::validate() const {
    require(channels >= 1 && hidden >= 1, ErrorKind::Config, "dna: channels and hidden must be >= 1");
    require(kernel >= 1 && kernel % 2 == 1, ErrorKind::Config, "dna: kernel must be odd");
    require(max_offset > 0, ErrorKind::Config, "dna: max_offset must be positive");
}

std::string DnaConfig::to_json() const {
    return nlohmann::json{{"C", channels}, {"K", kernel}, {"max_offset", max_offset}, {"hidden", hidden}}.dump();
}

DnaConfig DnaConfig::from_json(const std::string& text) {
    try {
        auto j = nlohmann::json::parse(text);
        DnaConfig c;
        c.channels = j.at("C").get<int>();
        c.kernel = j.at("K").get<int>();
        c.max_offset = j.at("max_offset").get<double>();
        c.hidden = j.at("hidden").get<int>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("dna descriptor: ") + e.what());
    }
}

DnaImpl::DnaImpl(DnaConfig config) : config_(config) {
    config_.validate();
    const int C = config_.channels;
    const int KK = config_.kernel * config_.kernel;
    fusion = register_module("fusion", nn::Conv2d(nn::Conv2dOptions(2 * C, C, 1).bias(false)));
    offset_hidden = register_module("offset_hidden",
                                    nn::Conv3d(nn::Conv3dOptions(C + 1, config_.hidden, 3).padding(1)));
    offset_out = register_module("offset_out", nn::Conv3d(nn::Conv3dOptions(config_.hidden, 3 * KK, 3).padding(1)));
    kernel_weight = register_parameter("kernel_weight", torch::zeros({C, C * KK}));
    kernel_bias = register_parameter("kernel_bias", torch::zeros({C}));
    refine_hidden = register_module("refine_hidden", nn::Conv2d(nn::Conv2dOptions(2 * C, config_.hidden, 3).padding(1)));
    refine_out = register_module("refine_out", nn::Conv2d(nn::Conv2dOptions(config_.hidden, C, 3).padding(1)));

    torch::NoGradGuard no_grad;
    fusion->weight.zero_();
    const int center = (KK - 1) / 2;
    for (int c = 0; c < C; ++c) {
        fusion->weight[c][C + c].fill_(1.0);
        kernel_weight[c][c * KK + center].fill_(1.0);
    }
    offset_out->weight.zero_();
    offset_out->bias.zero_();
    refine_out->weight.zero_();
    refine_out->bias.zero_();
}

torch::Tensor DnaImpl::fuse(const torch::Tensor& zm, const torch::Tensor& zp) {
    require(zm.sizes() == zp.sizes() && zm.dim() == 5, ErrorKind::Data,
            "dna: Zm " + shape_str(zm) + " and Zp " + shape_str(zp) + " must both be [B,S,C,h,w]");
    auto lead = zm.sizes().vec();
    auto x = torch::cat({zm, zp}, 2).flatten(0, 1);
    return fusion(x).reshape(lead);
}

Offsets DnaImpl::predict_offsets(const torch::Tensor& feature, const torch::Tensor& masks) {
    const int KK = config_.kernel * config_.kernel;
    auto x = torch::cat({feature, masks.to(feature.scalar_type())}, 2).permute({0, 2, 1, 3, 4});
    auto raw = offset_out(torch::silu(offset_hidden(x))).permute({0, 2, 1, 3, 4});
    auto parts = raw.split(KK, 2);
    const double R = config_.max_offset;
    return {R * torch::tanh(parts[0] / R), R * torch::tanh(parts[1] / R), torch::sigmoid(parts[2])};
}

torch::Tensor DnaImpl::deform(const torch::Tensor& x, const torch::Tensor& dx, const torch::Tensor& dy,
                              const torch::Tensor& modulation) {
    const int K = config_.kernel;
    const int KK = K * K;
    const int r = K / 2;
    const int64_t B = x.size(0);
    const int64_t C = x.size(1);
    const int64_t h = x.size(2);
    const int64_t w = x.size(3);
    require(dx.sizes() == torch::IntArrayRef({B, KK, h, w}) && dy.sizes() == dx.sizes() &&
                modulation.sizes() == dx.sizes(),
            ErrorKind::Data, "dna: offsets " + shape_str(dx) + " do not match feature " + shape_str(x));
    auto opts = x.options();
    auto ys = torch::arange(h, opts).view({1, 1, h, 1});
    auto xs = torch::arange(w, opts).view({1, 1, 1, w});
    std::vector<double> tap_x, tap_y;
    for (int ky = -r; ky <= r; ++ky) {
        for (int kx = -r; kx <= r; ++kx) {
            tap_x.push_back(kx);
            tap_y.push_back(ky);
        }
    }
    auto tx = torch::tensor(tap_x, torch::kFloat64).to(x.scalar_type()).view({1, KK, 1, 1});
    auto ty = torch::tensor(tap_y, torch::kFloat64).to(x.scalar_type()).view({1, KK, 1, 1});
    auto sx = xs + tx + dx;
    auto sy = ys + ty + dy;
    auto sampled = flowlab::bilinear_sample(x, sx, sy, flowlab::BorderPolicy::Zeros).values;  // [B,C,KK,h,w]
    sampled = sampled * modulation.unsqueeze(1);
    auto cols = sampled.reshape({B, C * KK, h * w});
    auto out = torch::matmul(kernel_weight, cols) + kernel_bias.view({1, -1, 1});
    return out.reshape({B, kernel_weight.size(0), h, w});
}

torch::Tensor DnaImpl::refine(const torch::Tensor& aligned, const torch::Tensor& current) {
    return current + refine_out(torch::silu(refine_hidden(torch::cat({aligned, current}, 1))));
}

torch::Tensor DnaImpl::forward(const torch::Tensor& zp, const torch::Tensor& zm, const torch::Tensor& masks) {
    require(zp.dim() == 5 && zp.size(2) == config_.channels, ErrorKind::Data,
            "dna: expected [B,S," + std::to_string(config_.channels) + ",h,w], got " + shape_str(zp));
    require(masks.dim() == 5 && masks.size(1) == zp.size(1) && masks.size(2) == 1, ErrorKind::Data,
            "dna: mask " + shape_str(masks) + " vs latents " + shape_str(zp));
    const int64_t S = zp.size(1);
    auto zhat = fuse(zm, zp);
    auto off = predict_offsets(zhat, masks);
    std::vector<torch::Tensor> out(S);
    out[S - 1] = zhat.select(1, S - 1);
    for (int64_t s = S - 2; s >= 0; --s) {
        auto aligned = deform(out[s + 1], off.dx.select(1, s), off.dy.select(1, s), off.modulation.select(1, s));
        out[s] = refine(aligned, zhat.select(1, s));
    }
    auto refined = torch::stack(out, 1);
    return torch::where(masks > 0.5, refined, zm);
}

torch::Tensor fff_forward(const torch::Tensor& zm, const torch::Tensor& masks, const torch::Tensor& to_first,
                          const torch::Tensor& eps, Dna* dna, const FffOptions& options) {
    if (!options.fill) {
        return zm;
    }
    require(zm.dim() == 5 && eps.sizes() == zm.sizes(), ErrorKind::Data,
            "fff_forward: expected matching [B,S,C,h,w] latents and noise, got " + shape_str(zm) + " / " +
                shape_str(eps));
    require(masks.dim() == 5 && masks.size(0) == zm.size(0), ErrorKind::Data,
            "fff_forward: masks " + shape_str(masks) + " vs latents " + shape_str(zm));
    const int64_t B = zm.size(0);
    const int64_t S = zm.size(1);
    std::vector<torch::Tensor> rows;
    for (int64_t b = 0; b < B; ++b) {
        auto z = zm[b];
        auto m = masks[b];
        auto e = eps[b];
        auto noisy1 = z[0] + e[0];
        torch::Tensor frame1;
        if (options.propagate) {
            auto p = latent_propagate(z, m, to_first[b]);
            frame1 = torch::where(p.unfilled > 0.5, noisy1, p.frame);
        } else {
            frame1 = torch::where(m[0] > 0.5, noisy1, z[0]);
        }
        rows.push_back(noise_fill_concat(frame1, z.slice(0, 1, S), m.slice(0, 1, S), e.slice(0, 1, S)));
    }
    auto zp = torch::stack(rows, 0);
    if (!options.align) {
        return zp;
    }
    require(dna != nullptr && !dna->is_empty(), ErrorKind::Config, "fff_forward: alignment requested without DNA weights");
    return (*dna)->forward(zp, zm, masks);
}

torch::Tensor project_propagated(const torch::Tensor& x, const torch::Tensor& masks, const torch::Tensor& to_first) {
    auto p = latent_propagate(x, masks, to_first);
    auto frame1 = torch::where(p.filled > 0.5, p.frame, x[0]);
    return torch::cat({frame1.unsqueeze(0), x.slice(0, 1, x.size(0))}, 0);
}

}  // namespace fffvdi::fff
