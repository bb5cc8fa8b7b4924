// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// usage: fffvdi_acceptance <run config>   (FFFVDI_OUTPUT_ROOT selects the toy run)

#include "fffvdi/config.hpp"
#include "fffvdi/corpus.hpp"
#include "fffvdi/diffusion.hpp"
#include "fffvdi/metrics.hpp"
#include "fffvdi/pipeline.hpp"

#include "lp_cases.hpp"
#include "model_checks.hpp"
#include "support.hpp"
#include "warp_cases.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

using namespace fffvdi;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Verdict warp_suite() {
    auto t0 = Clock::now();
    auto e = support::run_warp_cases(1000, 20240601);
    double secs = seconds_since(t0);
    bool ok = e.cases >= 1000 && e.warp <= 1e-6 && e.validity <= 1e-6 && e.compose <= 1e-6 && secs < 60;
    return {ok, fmt("%d cases, max |warp| %.2e, |validity| %.2e, |compose| %.2e, %.1f s", e.cases, e.warp, e.validity,
                    e.compose, secs)};
}

Verdict terminal_statistics() {
    torch::manual_seed(0);
    diffusion::NoiseSchedule s;
    auto z0 = torch::randn({100, 4, 16, 16}, torch::kFloat64);
    auto zt = diffusion::add_noise(LatentClip{z0, 1.0}, s.T(), torch::randn_like(z0), s).codes;
    double mean = zt.mean().item<double>();
    double sd = zt.std().item<double>();
    return {zt.numel() >= 100000 && std::abs(mean) < 0.05 && std::abs(sd - 1) < 0.05,
            fmt("%lld elements, mean %.4f, std %.4f", static_cast<long long>(zt.numel()), mean, sd)};
}

Verdict unmasked_preservation(pipeline::InpaintingModel& model, const std::vector<corpus::ClipData>& clips,
                              const config::RunConfig& rc) {
    int pairs = 0, broken = 0;
    const int per_clip = (100 + static_cast<int>(clips.size()) - 1) / static_cast<int>(clips.size());
    for (const auto& c : clips) {
        for (int k = 0; k < per_clip; ++k) {
            pipeline::InferenceRequest r;
            r.clip = c.clip;
            r.masks = pipeline::sample_training_mask(77, k, pairs, rc.corpus, rc.masks);
            r.steps = 2;
            r.seed = static_cast<uint64_t>(pairs);
            r.flows = c.gt.flows;
            pipeline::InferenceOptions opts{k % 2 == 0, k % 3 != 0, k % 4 != 1};
            auto out = pipeline::infer(model, r, opts);
            auto keep = (r.masks.masks < 0.5).expand_as(c.clip.frames);
            broken += !torch::equal(out.frames.masked_select(keep), c.clip.frames.masked_select(keep));
            ++pairs;
        }
    }
    return {pairs >= 100 && broken == 0, fmt("%d (clip, mask) pairs, %d with changed unmasked pixels", pairs, broken)};
}

Verdict lp_reductions() {
    bool identity = support::zero_mask_identity(3);
    double copy = support::full_mask_copy_error(5);
    double trace = 0.0;
    int mismatched = 0, filled = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto r = support::trace_translating(seed);
        trace = std::max(trace, r.max_error);
        mismatched += r.unfilled_mismatch;
        filled += r.filled;
    }
    return {identity && copy <= 1e-6 && trace <= 1e-4 && mismatched == 0 && filled > 0,
            fmt("zero-mask identity %s, frame-2 copy %.2e, tracing %.2e over %d cells", identity ? "exact" : "broken",
                copy, trace, filled)};
}

Verdict ddim_round_trip(pipeline::InpaintingModel& model, const std::vector<corpus::ClipData>& clips) {
    torch::NoGradGuard g;
    model.eval();
    const auto& s = model.schedule();
    double worst = 0.0, sum = 0.0;
    const int n = std::min<int>(4, static_cast<int>(clips.size()));
    for (int i = 0; i < n; ++i) {
        const auto& c = clips[i];
        auto cond = pipeline::condition(model, c.clip.frames * (1 - c.masks.masks), c.masks.masks, c.gt.flows);
        auto z0 = model.autoencoder->encode(c.clip.frames);
        auto fill = torch::randn(z0.sizes(), at::detail::createCPUGenerator(i));
        auto eps = pipeline::make_eps_model(model, cond, fill, model.info.fff);
        auto inv = diffusion::ddim_invert(eps, LatentClip{z0, model.autoencoder->latent_scale()}, 50, s);
        auto back = diffusion::ddim_sample(eps, inv, 50, s);
        double rel = ((back.codes - z0).norm() / z0.norm()).item<double>();
        worst = std::max(worst, rel);
        sum += rel;
    }
    return {worst < 0.05, fmt("relative L2 over %d clips: mean %.4f, worst %.4f (50 steps, %s model)", n, sum / n,
                              worst, model.info.variant.c_str())};
}

Verdict gradient() {
    auto r = support::gradient_check(11);
    return {r.checked == 10 && r.max_relative_error < 0.01,
            fmt("%d sampled weights, max relative error %.2e", r.checked, r.max_relative_error)};
}

Verdict freeze() {
    auto r = support::freeze_check(100, true);
    return {r.losses == 100 && r.frozen > 0 && r.frozen_changed == 0 && r.trainable_changed > 0,
            fmt("100 steps: %d frozen tensors (%d changed), %d trainable (%d changed)", r.frozen, r.frozen_changed,
                r.trainable, r.trainable_changed)};
}

constexpr double kSmokeBudgetSeconds = 900.0;

Verdict training_smoke(const fs::path& vae_ckpt, const std::vector<corpus::ClipData>& train,
                       const config::RunConfig& rc) {
    auto model = pipeline::InpaintingModel::load(vae_ckpt);
    std::vector<corpus::ClipData> eight(train.begin(), train.begin() + std::min<size_t>(8, train.size()));
    pipeline::TrainLoopConfig loop;
    loop.steps = 500;
    loop.batch = rc.pretrain.batch;
    loop.lr = rc.pretrain.lr;
    loop.seed = 1;
    loop.first_frame_only = true;
    loop.masks = rc.masks;
    auto t0 = Clock::now();
    auto losses = pipeline::train_denoiser(model, eight, loop);
    double secs = seconds_since(t0);
    double lead = 0, trail = 0;
    for (int i = 0; i < 50; ++i) {
        lead += losses[i] / 50;
        trail += losses[losses.size() - 50 + i] / 50;
    }
    bool ok = eight.size() == 8 && losses.size() == 500 && trail < 0.5 * lead && secs < kSmokeBudgetSeconds;
    return {ok, fmt("8 clips, 500 steps: leading-50 %.4f, trailing-50 %.4f (ratio %.3f), %.0f s of %.0f s budget", lead,
                    trail, trail / lead, secs, kSmokeBudgetSeconds)};
}

Verdict ablation_ordering(const fs::path& file) {
    std::ifstream in(file);
    if (!in) return {false, "missing " + file.string()};
    auto j = nlohmann::json::parse(in);
    std::map<std::string, double> psnr;
    size_t clips = 0;
    for (const auto& v : j["variants"]) {
        psnr[v["variant"].get<std::string>()] = v["aggregate"]["psnr_masked"].get<double>();
        clips = v["clips"].size();
    }
    for (const char* k : {"no_fff", "lp", "lp_dna", "lp_dna_inv"}) {
        if (!psnr.count(k)) return {false, std::string("ablation has no ") + k + " row"};
    }
    bool ok = clips >= 20 && psnr["no_fff"] < psnr["lp"] && psnr["lp"] <= psnr["lp_dna"] &&
              psnr["lp_dna_inv"] >= psnr["lp_dna"] - 0.2;
    return {ok, fmt("%zu clips, masked PSNR no_fff %.3f, lp %.3f, lp_dna %.3f, lp_dna_inv %.3f", clips, psnr["no_fff"],
                    psnr["lp"], psnr["lp_dna"], psnr["lp_dna_inv"])};
}

Verdict metric_oracles() {
    std::vector<std::string> failed;
    auto check = [&](bool ok, const std::string& name) {
        if (!ok) failed.push_back(name);
    };
    torch::manual_seed(21);
    auto a = torch::rand({3, 3, 16, 20}, torch::kFloat64);
    auto b = (a + 0.05 * torch::randn_like(a)).clamp(0, 1);
    check(metrics::psnr(a, a) == metrics::kPsnrCap, "psnr identical");
    check(std::abs(metrics::psnr(torch::zeros_like(a), torch::full_like(a, 0.1)) - 20.0) < 1e-6, "psnr 20 dB");
    check(std::abs(metrics::psnr(a, b) - oracle::psnr(support::to_grids(a), support::to_grids(b))) < 1e-6,
          "psnr oracle");

    auto smooth = torch::nn::functional::interpolate(
        torch::rand({2, 3, 4, 5}, torch::kFloat64),
        torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{16, 20}).mode(torch::kBilinear).align_corners(false));
    auto noisy = (smooth + 0.1 * torch::randn_like(smooth)).clamp(0, 1);
    auto half = torch::full({1, 3, 12, 12}, 0.5, torch::kFloat64);
    check(std::abs(metrics::ssim(smooth, smooth) - 1.0) < 1e-12, "ssim identical");
    check(std::abs(metrics::ssim(half, half) - 1.0) < 1e-12, "ssim constant");
    check(std::abs(metrics::ssim(smooth, noisy) - oracle::ssim(support::to_grids(smooth), support::to_grids(noisy))) <
              1e-6,
          "ssim oracle");

    auto still = a[0].unsqueeze(0).expand({4, 3, 16, 20}).contiguous();
    check(metrics::e_warp(still, torch::zeros({3, 2, 16, 20}, torch::kFloat64), torch::ones({3, 1, 16, 20})) == 0.0,
          "e_warp static");
    auto wide = torch::nn::functional::interpolate(
        torch::rand({1, 3, 4, 7}, torch::kFloat64),
        torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{16, 28}).mode(torch::kBilinear).align_corners(false))[0];
    auto moving = torch::zeros({4, 3, 16, 20}, torch::kFloat64);
    for (int i = 0; i < 4; ++i) moving[i] = wide.slice(2, 8 - 2 * i, 28 - 2 * i);
    auto shift = torch::zeros({3, 2, 16, 20}, torch::kFloat64);
    shift.select(1, 0).fill_(2.0);
    check(metrics::e_warp(moving, shift, torch::ones({3, 1, 16, 20})) < 1e-3, "e_warp self-warp");
    auto flows = torch::randn({2, 2, 16, 20}, torch::kFloat64) * 2;
    auto valid = (torch::rand({2, 1, 16, 20}, torch::kFloat64) < 0.7).to(torch::kFloat64);
    check(std::abs(metrics::e_warp(a, flows, valid) -
                   oracle::e_warp(support::to_grids(a), support::to_grids(flows), support::to_grids(valid))) < 1e-6,
          "e_warp oracle");

    auto fa = torch::randn({300, 8}, torch::kFloat64);
    double same = metrics::frechet_distance(fa, fa);
    check(same < 1e-6, "vfid_proxy(A,A)");
    auto u = torch::randn({10000, 1}, torch::kFloat64);
    auto v = torch::randn({10000, 1}, torch::kFloat64) + 1.0;
    check(std::abs(metrics::frechet_distance(u, v) - 1.0) < 0.1, "vfid 1-D");
    auto x = torch::randn({8, 8}, torch::kFloat64);
    auto y = torch::randn({8, 8}, torch::kFloat64);
    auto A = x.mm(x.t()) + 0.1 * torch::eye(8, torch::kFloat64);
    auto B = y.mm(y.t()) + 0.1 * torch::eye(8, torch::kFloat64);
    auto flat = [](const torch::Tensor& t) {
        auto c = t.contiguous();
        return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
    };
    check(std::abs(metrics::trace_sqrt_product(A, B) - oracle::trace_sqrt_product(flat(A), flat(B), 8)) < 1e-6,
          "vfid trace-sqrt oracle");

    std::string detail = fmt("13 checks, vfid_proxy(A,A) = %.1e", same);
    for (const auto& f : failed) detail += "; failed: " + f;
    return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: %s <run config>\n", argv[0]);
        return 2;
    }
    torch::set_num_threads(1);
    config::RunConfig rc;
    std::vector<corpus::ClipData> eval, train;
    try {
        rc = config::load(argv[1]);
        eval = corpus::load(rc.eval_dir);
        train = corpus::load(rc.corpus_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "acceptance: %s\n", e.what());
        return 2;
    }
    const auto run = rc.run_dir();

    std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"warp_compose_oracle_suite", warp_suite},
        {"forward_process_terminal_statistics", terminal_statistics},
        {"unmasked_preservation",
         [&] {
             auto model = pipeline::InpaintingModel::load(run / "finetune_lp_dna.ckpt");
             return unmasked_preservation(model, eval, rc);
         }},
        {"latent_propagation_reductions", lp_reductions},
        {"ddim_round_trip",
         [&] {
             auto model = pipeline::InpaintingModel::load(run / "finetune_lp_dna.ckpt");
             return ddim_round_trip(model, eval);
         }},
        {"denoiser_gradient_check", gradient},
        {"freeze_policy_checksums", freeze},
        {"training_smoke", [&] { return training_smoke(run / "vae.ckpt", train, rc); }},
        {"ablation_ordering", [&] { return ablation_ordering(run / "ablation" / "ablation.json"); }},
        {"metrics_oracles", metric_oracles},
    };

    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failures += !v.pass;
        std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
