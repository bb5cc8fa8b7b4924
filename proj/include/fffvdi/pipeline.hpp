#pragma once

#include "fffvdi/config.hpp"
#include "fffvdi/corpus.hpp"
#include "fffvdi/diffusion.hpp"
#include "fffvdi/fff.hpp"
#include "fffvdi/unet.hpp"
#include "fffvdi/vae.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fffvdi::pipeline {

struct ModelConfig {
    vae::AutoencoderConfig autoencoder;
    unet::DenoiserConfig denoiser;
    fff::DnaConfig dna;
    diffusion::ScheduleConfig schedule;
};

ModelConfig model_config(const config::RunConfig& rc);

struct Variant {
    std::string name;  // no_fff | lp | lp_dna
    fff::FffOptions fff;
};

Variant parse_variant(const std::string& name);

/// What a checkpoint holds besides weights.
struct CheckpointInfo {
    std::string phase = "init";  // init | vae | pretrain | finetune
    std::string variant;
    unet::FreezePolicy freeze = unet::FreezePolicy::None;
    fff::FffOptions fff{false, false, false};
    int frames_train = 0;
    int steps = 0;
    std::string config_hash;
    std::string corpus_hash;
};

/// Autoencoder, denoiser (with its merge convolution) and DNA weights: the
/// single training unit stored in one checkpoint file.
class InpaintingModel {
public:
    explicit InpaintingModel(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const diffusion::NoiseSchedule& schedule() const { return schedule_; }

    std::string descriptor() const;
    /// Atomic write of weights + descriptor.json.
    void save(const std::filesystem::path& path) const;
    /// Throws Error(Data) when the file is missing or inconsistent.
    static InpaintingModel load(const std::filesystem::path& path);

    void eval();

    vae::Autoencoder autoencoder;
    unet::Denoiser denoiser;
    fff::Dna dna;
    CheckpointInfo info;

private:
    ModelConfig config_;
    diffusion::NoiseSchedule schedule_;
};

/// Completes each adjacent pixel flow under its frame's mask, downsamples to
/// latent resolution and chains toward frame 1: [S-1, 2, h, w].
torch::Tensor prepare_flows(const torch::Tensor& flows, const torch::Tensor& masks, int factor);

/// Per-clip conditioning shared by training and inference.
struct Conditioning {
    torch::Tensor conditional;   // L^m [S, C, h, w]
    torch::Tensor latent_masks;  // [S, 1, h, w]
    torch::Tensor to_first;      // [S-1, 2, h, w]
};

/// `flows` may be undefined, in which case zero motion is assumed.
Conditioning condition(InpaintingModel& model, const torch::Tensor& frames, const torch::Tensor& masks,
                       const torch::Tensor& flows);

/// eps_theta(fff(merge(x, L^m)), t) over a single clip state x [S, C, h, w].
diffusion::EpsModel make_eps_model(InpaintingModel& model, const Conditioning& cond, const torch::Tensor& fill_eps,
                                   const fff::FffOptions& options);

struct TrainBatch {
    torch::Tensor clean;         // L_0 [B, S, C, h, w]
    torch::Tensor conditional;   // L^m [B, S, C, h, w]
    torch::Tensor latent_masks;  // [B, S, 1, h, w]
    torch::Tensor to_first;      // [B, S-1, 2, h, w]
    std::vector<int> t;
    torch::Tensor eps;       // forward-process noise
    torch::Tensor fill_eps;  // noise for FFF fills
};

struct TrainSample {
    torch::Tensor frames;  // [S, 3, H, W]
    torch::Tensor masks;   // [S, 1, H, W]
    torch::Tensor flows;   // [S-1, 2, H, W] pixel flows, may be undefined
};

/// Encodes samples and draws t uniformly in [1, T] plus both noises from `gen`.
TrainBatch make_batch(InpaintingModel& model, std::span<const TrainSample> samples, torch::Generator& gen);

/// Parameters the optimizer should see for a phase: denoiser parameters left
/// trainable by the freeze policy, plus DNA weights when alignment is on.
std::vector<torch::Tensor> phase_parameters(InpaintingModel& model, unet::FreezePolicy policy,
                                            const fff::FffOptions& options);

/// Loss over every latent cell, then one optimizer step. With propagation on,
/// the target noise of frame-1 cells filled by propagation is the propagated
/// noise, matching what the sampler's state projection enforces. A non-finite
/// loss throws Error(Numeric).
double train_step(InpaintingModel& model, const TrainBatch& batch, torch::optim::Optimizer& optimizer,
                  const fff::FffOptions& options);

struct TrainLoopConfig {
    int steps = 0;
    int batch = 1;
    double lr = 1e-4;
    uint64_t seed = 0;
    unet::FreezePolicy freeze = unet::FreezePolicy::None;
    fff::FffOptions fff{false, false, false};
    bool first_frame_only = false;  // pretraining layout: frame 1 visible, the rest masked
    datagen::MaskConfig masks;
};

/// Random inpainting mask for (seed, step, row): stationary or object, rectangle or brush.
MaskSequence sample_training_mask(uint64_t seed, int step, int row, const datagen::CorpusConfig& geometry,
                                  const datagen::MaskConfig& masks);

std::vector<double> train_denoiser(InpaintingModel& model, const std::vector<corpus::ClipData>& clips,
                                   const TrainLoopConfig& cfg, const std::function<void(int, double)>& on_step = {});

struct InferenceRequest {
    VideoClip clip;  // raw or already zeroed inside the mask
    MaskSequence masks;
    int steps = 50;
    uint64_t seed = 0;
    torch::Tensor flows;  // optional adjacent pixel flows [S-1, 2, H, W]
};

struct InferenceOptions {
    bool propagate = true;
    bool align = true;
    bool invert = true;
};

/// Testing stage: L^m, inversion of L^m for frames 2..S, random noise for
/// frame 1, DDIM sampling through merge + FFF, decode, then compositing so
/// pixels outside the mask are the input pixels.
VideoClip infer(InpaintingModel& model, const InferenceRequest& request, const InferenceOptions& options);

struct ClipMetrics {
    std::string clip_id;
    double psnr = 0;  // full frame
    double psnr_masked = 0;
    double ssim = 0;
    double e_warp_x1e3 = 0;
    double vfid_proxy = 0;
};

struct MetricReport {
    std::vector<ClipMetrics> clips;
    ClipMetrics aggregate;  // clip_id "aggregate": means, vfid_proxy over clip-level features
};

struct EvalItem {
    std::string id;
    torch::Tensor prediction;  // [S, 3, H, W]
    torch::Tensor truth;
    torch::Tensor masks;  // [S, 1, H, W], may be undefined (psnr_masked then equals the cap)
    torch::Tensor flows;  // forward flows [S-1, 2, H, W]
    torch::Tensor flows_backward;
};

/// Per-frame pooled encoder features [S, F] used by the vfid proxy.
torch::Tensor frame_features(vae::Autoencoder& extractor, const torch::Tensor& frames);
/// Clip-level vector: mean frame feature and mean absolute temporal change.
torch::Tensor clip_feature(vae::Autoencoder& extractor, const torch::Tensor& frames);

/// `extractor` may be empty, in which case vfid_proxy is NaN.
MetricReport evaluate(const std::vector<EvalItem>& items, vae::Autoencoder* extractor);

void write_report_csv(const std::filesystem::path& path, const MetricReport& report);
config::Json report_json(const MetricReport& report);

struct AblationEntry {
    std::string name;
    std::filesystem::path checkpoint;
    InferenceOptions options;
};

struct AblationRow {
    std::string variant;
    MetricReport report;
};

/// The four table rows: no_fff, lp, lp_dna, lp_dna_inv; the last two share
/// the lp_dna checkpoint.
std::vector<AblationEntry> standard_ablation(const std::filesystem::path& run_dir);

std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& entries,
                                      const std::vector<corpus::ClipData>& clips, int steps, uint64_t seed);

/// Writes ablation.csv and ablation.json into `dir`.
void write_ablation(const std::filesystem::path& dir, const std::vector<AblationRow>& rows,
                    const config::Json& meta);

}  // namespace fffvdi::pipeline
