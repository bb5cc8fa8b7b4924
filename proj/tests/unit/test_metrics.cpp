#include "fffvdi/metrics.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace fffvdi;
using namespace fffvdi::metrics;

namespace {

std::vector<double> flat(const torch::Tensor& t) {
    auto d = t.to(torch::kFloat64).contiguous();
    return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

torch::Tensor smooth_clip(int s, int h, int w, uint64_t seed) {
    torch::manual_seed(seed);
    auto coarse = torch::rand({s, 3, h / 4, w / 4}, torch::kFloat64);
    return torch::nn::functional::interpolate(
        coarse, torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kBilinear).align_corners(false));
}

}  // namespace

TEST(Psnr, IdenticalIsCapped) {
    auto a = torch::rand({2, 3, 8, 8});
    EXPECT_EQ(psnr(a, a), kPsnrCap);
}

TEST(Psnr, KnownValue) {
    auto a = torch::zeros({1, 3, 4, 4});
    EXPECT_NEAR(psnr(a, torch::full_like(a, 0.1)), 20.0, 1e-6);
}

TEST(Psnr, MatchesOracle) {
    auto a = torch::rand({3, 3, 9, 7}, torch::kFloat64);
    auto b = (a + 0.05 * torch::randn_like(a)).clamp(0, 1);
    EXPECT_NEAR(psnr(a, b), oracle::psnr(support::to_grids(a), support::to_grids(b)), 1e-6);
}

TEST(Psnr, MaskedRegionOnly) {
    auto a = torch::zeros({2, 3, 4, 4});
    auto b = a.clone();
    auto m = torch::zeros({2, 1, 4, 4});
    m[1][0][0][0] = 1;
    b[1].select(1, 0).select(1, 0).fill_(0.1);
    EXPECT_NEAR(psnr_masked(a, b, m), 20.0, 1e-6);
    EXPECT_EQ(psnr_masked(a, b, torch::zeros_like(m)), kPsnrCap);
    b[0][0][3][3] = 1.0;  // outside the mask
    EXPECT_NEAR(psnr_masked(a, b, m), 20.0, 1e-6);
}

TEST(Ssim, IdenticalIsOne) {
    auto a = smooth_clip(2, 16, 16, 1);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    auto c = torch::full({1, 3, 12, 12}, 0.5);
    EXPECT_NEAR(ssim(c, c), 1.0, 1e-12);
}

TEST(Ssim, MatchesOracle) {
    auto a = smooth_clip(2, 16, 20, 2);
    auto b = (a + 0.1 * torch::randn_like(a)).clamp(0, 1);
    EXPECT_NEAR(ssim(a, b), oracle::ssim(support::to_grids(a), support::to_grids(b)), 1e-6);
}

TEST(Ssim, TooSmallThrows) { EXPECT_THROW(ssim(torch::rand({1, 3, 8, 8}), torch::rand({1, 3, 8, 8})), Error); }

TEST(EWarp, StaticClipIsZero) {
    auto frame = torch::rand({1, 3, 8, 8});
    auto clip = frame.expand({4, 3, 8, 8}).contiguous();
    EXPECT_EQ(e_warp(clip, torch::zeros({3, 2, 8, 8}), torch::ones({3, 1, 8, 8})), 0.0);
}

TEST(EWarp, TranslationWithItsOwnFlowIsSmall) {
    const int h = 12, w = 16;
    auto bg = smooth_clip(1, h, w + 8, 3)[0];
    auto clip = torch::zeros({4, 3, h, w}, torch::kFloat64);
    for (int i = 0; i < 4; ++i) clip[i] = bg.slice(2, 8 - 2 * i, 8 - 2 * i + w);
    auto flows = torch::zeros({3, 2, h, w}, torch::kFloat64);
    flows.select(1, 0).fill_(2.0);
    EXPECT_LT(e_warp(clip, flows, torch::ones({3, 1, h, w})) * 1e3, 1e-3);
}

TEST(EWarp, MatchesOracle) {
    torch::manual_seed(6);
    auto clip = torch::rand({3, 3, 8, 9}, torch::kFloat64);
    auto flows = torch::randn({2, 2, 8, 9}, torch::kFloat64) * 2;
    auto valid = (torch::rand({2, 1, 8, 9}, torch::kFloat64) < 0.7).to(torch::kFloat64);
    EXPECT_NEAR(e_warp(clip, flows, valid),
                oracle::e_warp(support::to_grids(clip), support::to_grids(flows), support::to_grids(valid)), 1e-6);
}

TEST(Consistency, AgreeingFlows) {
    auto f = torch::zeros({2, 6, 6});
    f[0].fill_(1.0);
    auto m = consistency_mask(f, -f);
    EXPECT_EQ(m.sum().item<float>(), 36.0f);
    EXPECT_EQ(consistency_mask(f, f).sum().item<float>(), 0.0f);
}

TEST(Fid, SameSampleIsZero) {
    auto a = torch::randn({200, 6}, torch::kFloat64);
    EXPECT_LT(frechet_distance(a, a), 1e-6);
}

TEST(Fid, OneDimensionalShift) {
    torch::manual_seed(11);
    auto a = torch::randn({10000, 1}, torch::kFloat64);
    auto b = torch::randn({10000, 1}, torch::kFloat64) + 1.0;
    EXPECT_NEAR(frechet_distance(a, b), 1.0, 0.1);
}

TEST(Fid, TraceSqrtMatchesOracle) {
    torch::manual_seed(12);
    auto x = torch::randn({8, 8}, torch::kFloat64);
    auto y = torch::randn({8, 8}, torch::kFloat64);
    auto A = x.mm(x.t()) + 0.1 * torch::eye(8, torch::kFloat64);
    auto B = y.mm(y.t()) + 0.1 * torch::eye(8, torch::kFloat64);
    EXPECT_NEAR(trace_sqrt_product(A, B), oracle::trace_sqrt_product(flat(A), flat(B), 8), 1e-6);
}
