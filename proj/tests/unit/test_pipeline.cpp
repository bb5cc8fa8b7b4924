#include "fffvdi/metrics.hpp"
#include "fffvdi/pipeline.hpp"

#include "model_checks.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace fffvdi;
using namespace fffvdi::pipeline;

namespace {

InferenceRequest request_for(const corpus::ClipData& c, int steps, uint64_t seed) {
    InferenceRequest r;
    r.clip = c.clip;
    r.masks = c.masks;
    r.steps = steps;
    r.seed = seed;
    r.flows = c.gt.flows;
    return r;
}

}  // namespace

TEST(Infer, UnmaskedPixelsAreCopied) {
    torch::manual_seed(0);
    InpaintingModel model(support::tiny_model());
    auto clips = support::tiny_clips(2, 3, 16, 40);
    for (const auto& c : clips) {
        auto out = infer(model, request_for(c, 3, 1), {});
        auto keep = (c.masks.masks < 0.5).expand_as(c.clip.frames);
        EXPECT_TRUE(torch::equal(out.frames.masked_select(keep), c.clip.frames.masked_select(keep)));
        EXPECT_EQ(out.frames.sizes(), c.clip.frames.sizes());
    }
}

TEST(Infer, EmptyMaskReturnsInput) {
    InpaintingModel model(support::tiny_model());
    auto c = support::tiny_clips(1, 3, 16, 41)[0];
    auto r = request_for(c, 2, 0);
    r.masks.masks = torch::zeros_like(r.masks.masks);
    EXPECT_TRUE(torch::equal(infer(model, r, {}).frames, c.clip.frames));
}

TEST(Infer, SeededRunsAgree) {
    torch::manual_seed(0);
    InpaintingModel model(support::tiny_model());
    auto c = support::tiny_clips(1, 3, 16, 42)[0];
    auto a = infer(model, request_for(c, 2, 9), {true, true, false});
    auto b = infer(model, request_for(c, 2, 9), {true, true, false});
    EXPECT_TRUE(torch::equal(a.frames, b.frames));
}

TEST(Infer, RejectsMismatchedMasks) {
    InpaintingModel model(support::tiny_model());
    auto c = support::tiny_clips(1, 3, 16, 43)[0];
    auto r = request_for(c, 2, 0);
    r.masks.masks = r.masks.masks.slice(0, 0, 2);
    try {
        infer(model, r, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Data);
    }
}

TEST(Checkpoint, RoundTrip) {
    torch::manual_seed(1);
    InpaintingModel model(support::tiny_model());
    {
        torch::NoGradGuard g;
        for (auto& p : model.denoiser->parameters()) p.add_(torch::randn_like(p));
    }
    model.info.phase = "finetune";
    model.info.variant = "lp_dna";
    model.info.steps = 17;
    model.info.config_hash = "abc";
    auto dir = support::scratch_dir("ckpt");
    model.save(dir / "m.ckpt");
    auto back = InpaintingModel::load(dir / "m.ckpt");
    EXPECT_EQ(back.info.phase, "finetune");
    EXPECT_EQ(back.info.variant, "lp_dna");
    EXPECT_EQ(back.info.steps, 17);
    EXPECT_EQ(back.info.config_hash, "abc");
    EXPECT_EQ(back.descriptor(), model.descriptor());
    EXPECT_EQ(support::checksums(*back.denoiser, ""), support::checksums(*model.denoiser, ""));
    EXPECT_EQ(support::checksums(*back.autoencoder, ""), support::checksums(*model.autoencoder, ""));
    EXPECT_EQ(support::checksums(*back.dna, ""), support::checksums(*model.dna, ""));
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, MissingFileIsDataError) {
    try {
        InpaintingModel::load("/nonexistent/model.ckpt");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Data);
    }
}

TEST(Merge, OneConvolutionForEveryFrame) {
    torch::manual_seed(2);
    InpaintingModel model(support::tiny_model());
    torch::NoGradGuard g;
    auto lt = torch::randn({4, 4, 4, 4});
    auto lm = torch::randn({4, 4, 4, 4});
    auto all = model.denoiser->merge_condition(lt, lm);
    for (int s = 0; s < 4; ++s) {
        auto one = model.denoiser->merge_condition(lt.slice(0, s, s + 1), lm.slice(0, s, s + 1));
        EXPECT_LT((one[0] - all[s]).abs().max().item<float>(), 1e-6f);
    }
    int merges = 0;
    for (const auto& kv : model.denoiser->named_parameters()) merges += kv.key().rfind("merge.", 0) == 0;
    EXPECT_EQ(merges, 1);
}

TEST(Training, LossIsFiniteAndPositive) {
    torch::manual_seed(3);
    InpaintingModel model(support::tiny_model());
    auto clips = support::tiny_clips(2, 3, 16, 60);
    TrainLoopConfig cfg;
    cfg.steps = 3;
    cfg.batch = 2;
    cfg.fff = {true, true};
    int seen = 0;
    auto losses = train_denoiser(model, clips, cfg, [&](int, double) { ++seen; });
    ASSERT_EQ(losses.size(), 3u);
    EXPECT_EQ(seen, 3);
    for (double l : losses) {
        EXPECT_TRUE(std::isfinite(l));
        EXPECT_GT(l, 0.0);
    }
}

TEST(Training, PhaseParametersFollowPolicy) {
    InpaintingModel model(support::tiny_model());
    auto all = phase_parameters(model, unet::FreezePolicy::None, {false, false});
    EXPECT_EQ(all.size(), model.denoiser->parameters().size());
    auto ft = phase_parameters(model, unet::FreezePolicy::TemporalOnly, {true, true});
    EXPECT_EQ(ft.size(), unet::trainable_parameters(*model.denoiser).size() + model.dna->parameters().size());
    auto lp = phase_parameters(model, unet::FreezePolicy::TemporalOnly, {true, false});
    EXPECT_EQ(lp.size(), unet::trainable_parameters(*model.denoiser).size());
}

TEST(Training, VariantNames) {
    EXPECT_FALSE(parse_variant("no_fff").fff.propagate);
    EXPECT_TRUE(parse_variant("no_fff").fff.fill);
    EXPECT_TRUE(parse_variant("lp").fff.propagate);
    EXPECT_FALSE(parse_variant("lp").fff.align);
    EXPECT_TRUE(parse_variant("lp_dna").fff.align);
    EXPECT_THROW(parse_variant("dna"), Error);
}

TEST(Flows, PrepareShapesAndZeroMotion) {
    auto flows = torch::zeros({2, 2, 16, 16});
    auto masks = torch::zeros({3, 1, 16, 16});
    auto f = prepare_flows(flows, masks, 4);
    EXPECT_EQ(f.sizes(), torch::IntArrayRef({2, 2, 4, 4}));
    EXPECT_EQ(f.abs().max().item<float>(), 0.0f);
    auto shift = torch::zeros({2, 2, 16, 16});
    shift.select(1, 0).fill_(4.0);
    auto g = prepare_flows(shift, masks, 4);
    EXPECT_NEAR(g[1][0][1][0].item<double>(), 2.0, 1e-6);
}

TEST(Evaluate, PerfectPrediction) {
    auto c = support::tiny_clips(2, 3, 16, 70);
    std::vector<EvalItem> items;
    for (const auto& x : c) {
        items.push_back({x.id, x.clip.frames, x.clip.frames, x.masks.masks, x.gt.flows, x.gt.flows_backward});
    }
    auto r = evaluate(items, nullptr);
    ASSERT_EQ(r.clips.size(), 2u);
    EXPECT_EQ(r.aggregate.psnr, metrics::kPsnrCap);
    EXPECT_NEAR(r.aggregate.ssim, 1.0, 1e-9);
    EXPECT_TRUE(std::isnan(r.aggregate.vfid_proxy));
    EXPECT_EQ(r.aggregate.clip_id, "aggregate");
}

TEST(Evaluate, EmptyIsError) {
    EXPECT_THROW(evaluate({}, nullptr), Error);
}
