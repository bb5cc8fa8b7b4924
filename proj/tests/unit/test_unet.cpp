#include "fffvdi/unet.hpp"

#include "model_checks.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace fffvdi;
using namespace fffvdi::unet;

namespace {

void set_merge(Denoiser& net, bool take_noisy) {
    torch::NoGradGuard g;
    const int C = net->config().latent_channels;
    net->merge->weight.zero_();
    for (int c = 0; c < C; ++c) {
        net->merge->weight[c][take_noisy ? c : C + c].fill_(1.0);
    }
}

}  // namespace

TEST(Merge, IdentityOnNoisyHalf) {
    Denoiser net(support::tiny_denoiser());
    set_merge(net, true);
    auto lt = torch::randn({3, 4, 5, 5});
    auto lm = torch::randn({3, 4, 5, 5});
    EXPECT_TRUE(torch::equal(net->merge_condition(lt, lm), lt));
}

TEST(Merge, IdentityOnConditionalHalf) {
    Denoiser net(support::tiny_denoiser());
    set_merge(net, false);
    auto lt = torch::randn({3, 4, 5, 5});
    auto lm = torch::randn({3, 4, 5, 5});
    EXPECT_TRUE(torch::equal(net->merge_condition(lt, lm), lm));
}

TEST(Merge, RandomWeightsMatchMatmulOracle) {
    torch::manual_seed(2);
    Denoiser net(support::tiny_denoiser());
    auto lt = torch::randn({2, 4, 3, 3});
    auto lm = torch::randn({2, 4, 3, 3});
    auto got = net->merge_condition(lt, lm);
    auto w = net->merge->weight.detach().to(torch::kFloat64).squeeze(-1).squeeze(-1);
    std::vector<std::vector<double>> rows(4, std::vector<double>(8));
    for (int o = 0; o < 4; ++o)
        for (int k = 0; k < 8; ++k) rows[o][k] = w[o][k].item<double>();
    for (int s = 0; s < 2; ++s) {
        auto in = support::to_grid(torch::cat({lt[s], lm[s]}, 0));
        EXPECT_LT(support::max_abs(oracle::pointwise(in, rows), got[s]), 1e-6);
    }
}

TEST(Merge, HasNoBias) {
    Denoiser net(support::tiny_denoiser());
    EXPECT_FALSE(net->merge->bias.defined());
}

TEST(Denoiser, ShapeContract) {
    torch::NoGradGuard g;
    Denoiser net(DenoiserConfig{});
    auto x = torch::randn({5, 4, 16, 16});
    EXPECT_EQ(net->denoise(x, 500).sizes(), x.sizes());
    auto xb = torch::randn({2, 3, 4, 16, 16});
    EXPECT_EQ(net->forward(xb, torch::tensor({1, 999}, torch::kLong)).sizes(), xb.sizes());
}

TEST(Denoiser, RejectsBadInput) {
    Denoiser net(support::tiny_denoiser());
    EXPECT_THROW(net->forward(torch::randn({1, 2, 3, 4, 4}), torch::tensor({1}, torch::kLong)), Error);
    EXPECT_THROW(net->forward(torch::randn({1, 2, 4, 5, 5}), torch::tensor({1}, torch::kLong)), Error);
    auto bad = support::tiny_denoiser();
    bad.temporal_levels = {5};
    EXPECT_THROW(Denoiser{bad}, Error);
}

TEST(Denoiser, DescriptorRoundTrip) {
    auto c = support::tiny_denoiser();
    auto back = DenoiserConfig::from_json(c.to_json());
    EXPECT_EQ(back.widths, c.widths);
    EXPECT_EQ(back.temporal_levels, c.temporal_levels);
    EXPECT_EQ(back.heads, c.heads);
}

TEST(Denoiser, TemporalAttentionMixesFrames) {
    torch::manual_seed(1);
    Denoiser net(support::tiny_denoiser());
    {
        torch::NoGradGuard g;
        for (auto& p : net->parameters()) p.add_(0.1 * torch::randn_like(p));
    }
    torch::NoGradGuard g;
    auto x = torch::randn({1, 3, 4, 4, 4});
    auto y = x.clone();
    y[0][2] += 1.0;
    auto t = torch::tensor({10}, torch::kLong);
    auto d = (net->forward(x, t)[0][0] - net->forward(y, t)[0][0]).abs().max().item<float>();
    EXPECT_GT(d, 0.0f);
}

TEST(Denoiser, GradientMatchesFiniteDifferences) {
    auto r = support::gradient_check(11);
    EXPECT_EQ(r.checked, 10);
    EXPECT_LT(r.max_relative_error, 0.01);
}

TEST(Freeze, PolicyNoneTrainsEverything) {
    Denoiser net(support::tiny_denoiser());
    apply_freeze_policy(*net, FreezePolicy::None);
    EXPECT_EQ(trainable_parameters(*net).size(), net->parameters().size());
}

TEST(Freeze, TemporalOnlySelection) {
    Denoiser net(support::tiny_denoiser());
    apply_freeze_policy(*net, FreezePolicy::TemporalOnly);
    int trainable = 0;
    for (const auto& kv : net->named_parameters()) {
        bool temporal = kv.key().find("temporal") != std::string::npos;
        bool merge = kv.key().rfind("merge.", 0) == 0;
        EXPECT_EQ(kv.value().requires_grad(), temporal || merge) << kv.key();
        trainable += kv.value().requires_grad();
    }
    EXPECT_GT(trainable, 1);
    EXPECT_TRUE(net->merge->weight.requires_grad());
}

TEST(Freeze, ParsePolicy) {
    EXPECT_EQ(parse_freeze_policy("none"), FreezePolicy::None);
    EXPECT_EQ(parse_freeze_policy("temporal_only"), FreezePolicy::TemporalOnly);
    EXPECT_THROW(parse_freeze_policy("spatial"), Error);
    EXPECT_EQ(to_string(FreezePolicy::TemporalOnly), "temporal_only");
}

TEST(Freeze, OneStepKeepsFrozenWeights) {
    auto r = support::freeze_check(1, true);
    EXPECT_EQ(r.losses, 1);
    EXPECT_GT(r.frozen, 0);
    EXPECT_EQ(r.frozen_changed, 0);
    EXPECT_GT(r.trainable_changed, 0);
}
