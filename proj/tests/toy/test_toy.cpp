// Checks against the toy run produced by the toy_recipe fixture.

#include "fffvdi/config.hpp"
#include "fffvdi/corpus.hpp"
#include "fffvdi/metrics.hpp"
#include "fffvdi/pipeline.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace fffvdi;

namespace {

config::RunConfig toy_config() { return config::load(FFFVDI_TOY_CONFIG); }

}  // namespace

TEST(Toy, AutoencoderHeldOutPsnr) {
    auto rc = toy_config();
    auto model = pipeline::InpaintingModel::load(rc.run_dir() / "vae.ckpt");
    model.eval();
    torch::NoGradGuard g;
    double sum = 0;
    auto clips = corpus::load(rc.eval_dir);
    for (const auto& c : clips) {
        auto rec = model.autoencoder->decode(model.autoencoder->encode(c.clip.frames));
        sum += metrics::psnr(rec, c.clip.frames);
    }
    double mean = sum / clips.size();
    RecordProperty("held_out_psnr", std::to_string(mean));
    EXPECT_GE(mean, 30.0);
}

TEST(Toy, SamplesAreNotDegenerate) {
    auto rc = toy_config();
    auto model = pipeline::InpaintingModel::load(rc.run_dir() / "finetune_lp_dna.ckpt");
    model.eval();
    torch::NoGradGuard g;
    auto c = corpus::load(rc.eval_dir).front();
    auto cond = pipeline::condition(model, c.clip.frames * (1 - c.masks.masks), c.masks.masks, c.gt.flows);
    auto gen = at::detail::createCPUGenerator(3);
    auto start = torch::randn(cond.conditional.sizes(), gen);
    auto fill = torch::randn(cond.conditional.sizes(), gen);
    auto eps = pipeline::make_eps_model(model, cond, fill, model.info.fff);
    auto clean = diffusion::ddim_sample(eps, NoisyLatent{start, model.schedule().T(), Provenance::Random}, 50,
                                        model.schedule());
    auto frames = model.autoencoder->decode(clean.codes);
    EXPECT_GE(frames.min().item<float>(), 0.0f);
    EXPECT_LE(frames.max().item<float>(), 1.0f);
    EXPECT_GT(frames.var().item<double>(), 0.01);
}

TEST(Toy, LossCurvesMatchSteps) {
    auto rc = toy_config();
    for (const auto& [file, steps] : std::vector<std::pair<std::string, int>>{
             {"vae_loss.csv", rc.autoencoder_train.steps},
             {"pretrain_loss.csv", rc.pretrain.steps},
             {"finetune_lp_loss.csv", rc.finetune.steps}}) {
        std::ifstream in(rc.run_dir() / file);
        ASSERT_TRUE(in.good()) << file;
        std::string line;
        int rows = -1;
        while (std::getline(in, line)) rows += !line.empty();
        EXPECT_EQ(rows, steps) << file;
    }
}

TEST(Toy, AblationIsReproducible) {
    auto rc = toy_config();
    auto clips = corpus::load(rc.eval_dir);
    clips.resize(2);
    auto entries = pipeline::standard_ablation(rc.run_dir());
    entries.resize(1);
    auto a = pipeline::run_ablation(entries, clips, 5, 0);
    auto b = pipeline::run_ablation(entries, clips, 5, 0);
    for (size_t i = 0; i < a[0].report.clips.size(); ++i) {
        EXPECT_EQ(a[0].report.clips[i].psnr_masked, b[0].report.clips[i].psnr_masked);
    }
}
