#include "fffvdi/pipeline.hpp"

#include "fffvdi/archive.hpp"
#include "fffvdi/flowlab.hpp"
#include "fffvdi/metrics.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

namespace fffvdi::pipeline {
namespace {

namespace fs = std::filesystem;
using config::Json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Json schedule_json(const diffusion::ScheduleConfig& s) {
    return {{"T", s.steps}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}};
}

torch::Tensor randn(std::vector<int64_t> shape, torch::Generator& gen) {
    return torch::randn(shape, gen, torch::TensorOptions().dtype(torch::kFloat32));
}

Json metrics_json(const ClipMetrics& m) {
    return {{"clip_id", m.clip_id},         {"psnr", m.psnr},
            {"psnr_masked", m.psnr_masked}, {"ssim", m.ssim},
            {"e_warp_x1e3", m.e_warp_x1e3}, {"vfid_proxy", m.vfid_proxy}};
}

std::string csv_number(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string metrics_csv(const ClipMetrics& m) {
    return m.clip_id + "," + csv_number(m.psnr) + "," + csv_number(m.psnr_masked) + "," + csv_number(m.ssim) + "," +
           csv_number(m.e_warp_x1e3) + "," + csv_number(m.vfid_proxy);
}

void check_finite_loss(double value, const TrainBatch& batch) {
    if (std::isfinite(value)) {
        return;
    }
    std::string ts;
    for (int t : batch.t) {
        ts += (ts.empty() ? "" : ",") + std::to_string(t);
    }
    throw numeric_error("train_step: loss is " + std::to_string(value) + " (t=" + ts +
                        ", |L0|max=" + std::to_string(batch.clean.abs().max().item<double>()) + ")");
}

}  // namespace

ModelConfig model_config(const config::RunConfig& rc) {
    return {rc.autoencoder, rc.denoiser, rc.dna, rc.schedule};
}

Variant parse_variant(const std::string& name) {
    if (name == "no_fff") return {name, {false, false}};
    if (name == "lp") return {name, {true, false}};
    if (name == "lp_dna") return {name, {true, true}};
    throw config_error("unknown fine-tune variant '" + name + "' (expected no_fff, lp or lp_dna)");
}

InpaintingModel::InpaintingModel(const ModelConfig& config)
    : autoencoder(config.autoencoder),
      denoiser(config.denoiser),
      dna(config.dna),
      config_(config),
      schedule_(config.schedule) {
    require(config.autoencoder.latent_channels == config.denoiser.latent_channels &&
                config.dna.channels == config.denoiser.latent_channels,
            ErrorKind::Config, "model: autoencoder, denoiser and dna disagree on latent channels");
}

std::string InpaintingModel::descriptor() const {
    Json j{{"autoencoder", Json::parse(config_.autoencoder.to_json())},
           {"denoiser", Json::parse(config_.denoiser.to_json())},
           {"dna", Json::parse(config_.dna.to_json())},
           {"schedule", schedule_json(config_.schedule)},
           {"latent_scale", autoencoder->latent_scale()},
           {"phase", info.phase},
           {"variant", info.variant},
           {"freeze_policy", unet::to_string(info.freeze)},
           {"fff", {{"propagate", info.fff.propagate}, {"align", info.fff.align}, {"fill", info.fff.fill}}},
           {"S_train", info.frames_train},
           {"steps", info.steps},
           {"config_hash", info.config_hash},
           {"corpus_hash", info.corpus_hash}};
    return j.dump(2);
}

void InpaintingModel::save(const fs::path& path) const {
    archive::Archive a;
    archive::store_module(a, "vae", *autoencoder);
    archive::store_module(a, "denoiser", *denoiser);
    archive::store_module(a, "dna", *dna);
    a.texts["descriptor.json"] = descriptor();
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    archive::save(path, a);
}

InpaintingModel InpaintingModel::load(const fs::path& path) {
    require(fs::exists(path), ErrorKind::Data, "checkpoint not found: " + path.string());
    auto a = archive::load(path);
    auto it = a.texts.find("descriptor.json");
    require(it != a.texts.end(), ErrorKind::Data, path.string() + ": missing descriptor.json");
    Json d;
    try {
        d = Json::parse(it->second);
        ModelConfig cfg;
        cfg.autoencoder = vae::AutoencoderConfig::from_json(d.at("autoencoder").dump());
        cfg.denoiser = unet::DenoiserConfig::from_json(d.at("denoiser").dump());
        cfg.dna = fff::DnaConfig::from_json(d.at("dna").dump());
        cfg.schedule.steps = d.at("schedule").at("T");
        cfg.schedule.beta_start = d.at("schedule").at("beta_start");
        cfg.schedule.beta_end = d.at("schedule").at("beta_end");
        InpaintingModel model(cfg);
        archive::restore_module(a, "vae", *model.autoencoder);
        archive::restore_module(a, "denoiser", *model.denoiser);
        archive::restore_module(a, "dna", *model.dna);
        model.info.phase = d.at("phase");
        model.info.variant = d.at("variant");
        model.info.freeze = unet::parse_freeze_policy(d.at("freeze_policy"));
        model.info.fff = {d.at("fff").at("propagate"), d.at("fff").at("align"), d.at("fff").at("fill")};
        model.info.frames_train = d.at("S_train");
        model.info.steps = d.at("steps");
        model.info.config_hash = d.at("config_hash");
        model.info.corpus_hash = d.at("corpus_hash");
        model.eval();
        return model;
    } catch (const Json::exception& e) {
        throw data_error(path.string() + ": bad descriptor: " + e.what());
    }
}

void InpaintingModel::eval() {
    autoencoder->eval();
    denoiser->eval();
    dna->eval();
}

torch::Tensor prepare_flows(const torch::Tensor& flows, const torch::Tensor& masks, int factor) {
    require(flows.dim() == 4 && flows.size(1) == 2 && flows.size(0) == masks.size(0) - 1, ErrorKind::Data,
            "prepare_flows: flows " + shape_str(flows) + " do not pair with masks " + shape_str(masks));
    std::vector<torch::Tensor> completed;
    for (int64_t i = 0; i < flows.size(0); ++i) {
        completed.push_back(flowlab::complete_flow(flows[i], masks[i]).flow);
    }
    return flowlab::chain_to_first(flowlab::downsample_flow(torch::stack(completed), factor));
}

Conditioning condition(InpaintingModel& model, const torch::Tensor& frames, const torch::Tensor& masks,
                       const torch::Tensor& flows) {
    torch::NoGradGuard no_grad;
    const int f = model.config().autoencoder.factor;
    Conditioning c;
    c.conditional = vae::masked_conditional_latent(model.autoencoder, frames, masks);
    c.latent_masks = flowlab::downsample_mask(masks, f);
    if (flows.defined()) {
        c.to_first = prepare_flows(flows, masks, f);
    } else {
        c.to_first = torch::zeros({frames.size(0) - 1, 2, c.conditional.size(2), c.conditional.size(3)});
    }
    return c;
}

diffusion::EpsModel make_eps_model(InpaintingModel& model, const Conditioning& cond, const torch::Tensor& fill_eps,
                                   const fff::FffOptions& options) {
    return [&model, cond, fill_eps, options](const torch::Tensor& x, int t) {
        auto zm = model.denoiser->merge_condition(x, cond.conditional).unsqueeze(0);
        auto z = fff::fff_forward(zm, cond.latent_masks.unsqueeze(0), cond.to_first.unsqueeze(0),
                                  fill_eps.unsqueeze(0), &model.dna, options);
        return model.denoiser->forward(z, torch::full({1}, t, torch::kLong)).squeeze(0);
    };
}

TrainBatch make_batch(InpaintingModel& model, std::span<const TrainSample> samples, torch::Generator& gen) {
    require(!samples.empty(), ErrorKind::Data, "make_batch: no samples");
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> clean, cond, lmask, chain;
    for (const auto& s : samples) {
        auto c = condition(model, s.frames, s.masks, s.flows);
        clean.push_back(model.autoencoder->encode(s.frames));
        cond.push_back(c.conditional);
        lmask.push_back(c.latent_masks);
        chain.push_back(c.to_first);
    }
    TrainBatch b;
    b.clean = torch::stack(clean);
    b.conditional = torch::stack(cond);
    b.latent_masks = torch::stack(lmask);
    b.to_first = torch::stack(chain);
    auto shape = b.clean.sizes().vec();
    auto t = torch::randint(1, model.schedule().T() + 1, {static_cast<int64_t>(samples.size())}, gen,
                            torch::TensorOptions().dtype(torch::kLong));
    for (int64_t i = 0; i < t.size(0); ++i) {
        b.t.push_back(static_cast<int>(t[i].item<int64_t>()));
    }
    b.eps = randn(shape, gen);
    b.fill_eps = randn(shape, gen);
    return b;
}

std::vector<torch::Tensor> phase_parameters(InpaintingModel& model, unet::FreezePolicy policy,
                                            const fff::FffOptions& options) {
    for (auto& p : model.autoencoder->parameters()) {
        p.set_requires_grad(false);
    }
    unet::apply_freeze_policy(*model.denoiser, policy);
    auto params = unet::trainable_parameters(*model.denoiser);
    for (auto& p : model.dna->parameters()) {
        p.set_requires_grad(options.align);
        if (options.align) {
            params.push_back(p);
        }
    }
    return params;
}

double train_step(InpaintingModel& model, const TrainBatch& batch, torch::optim::Optimizer& optimizer,
                  const fff::FffOptions& options) {
    model.denoiser->train();
    model.dna->train();
    const int64_t B = batch.clean.size(0);
    auto lt = diffusion::add_noise(batch.clean, batch.t, batch.eps, model.schedule());
    auto zm = model.denoiser->merge_condition(lt, batch.conditional);
    auto z = fff::fff_forward(zm, batch.latent_masks, batch.to_first, batch.fill_eps, &model.dna, options);
    std::vector<int64_t> ts(batch.t.begin(), batch.t.end());
    auto pred = model.denoiser->forward(z, torch::tensor(ts, torch::kLong));

    auto target = batch.eps;
    if (options.propagate) {
        std::vector<torch::Tensor> rows;
        for (int64_t b = 0; b < B; ++b) {
            rows.push_back(fff::project_propagated(batch.eps[b], batch.latent_masks[b], batch.to_first[b]));
        }
        target = torch::stack(rows);
    }
    auto loss = diffusion::loss(target, pred);
    double value = loss.item<double>();
    check_finite_loss(value, batch);
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    return value;
}

MaskSequence sample_training_mask(uint64_t seed, int step, int row, const datagen::CorpusConfig& geometry,
                                  const datagen::MaskConfig& masks) {
    datagen::Rng rng(seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(step) * 1000003ull +
                     static_cast<uint64_t>(row) * 7919ull + 11);
    corpus::ClipEntry e;
    e.mask_kind = rng.uniform() < 0.5 ? corpus::MaskKind::Stationary : corpus::MaskKind::Object;
    e.family = rng.uniform() < 0.5 ? datagen::StrokeFamily::Rectangle : datagen::StrokeFamily::Brush;
    e.mask_seed = rng.bits();
    return corpus::make_mask(e, geometry, masks);
}

std::vector<double> train_denoiser(InpaintingModel& model, const std::vector<corpus::ClipData>& clips,
                                   const TrainLoopConfig& cfg, const std::function<void(int, double)>& on_step) {
    require(!clips.empty(), ErrorKind::Data, "train: empty corpus");
    require(cfg.steps >= 0 && cfg.batch >= 1 && cfg.lr >= 0, ErrorKind::Config, "train: bad loop config");
    torch::manual_seed(cfg.seed);
    auto gen = at::detail::createCPUGenerator(cfg.seed);
    auto params = phase_parameters(model, cfg.freeze, cfg.fff);
    require(!params.empty(), ErrorKind::Config, "train: no trainable parameters under this policy");
    torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.lr));

    const auto& first = clips.front().clip.frames;
    datagen::CorpusConfig geometry;
    geometry.frames = static_cast<int>(first.size(0));
    geometry.height = static_cast<int>(first.size(2));
    geometry.width = static_cast<int>(first.size(3));

    datagen::Rng rng(cfg.seed ^ 0xC0FFEEull);
    const int64_t n = static_cast<int64_t>(clips.size());
    std::vector<int64_t> order(n);
    size_t cursor = order.size();
    std::vector<double> losses;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TrainSample> samples;
        for (int row = 0; row < cfg.batch; ++row) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), 0);
                for (int64_t i = n - 1; i > 0; --i) {
                    std::swap(order[i], order[rng.integer(0, i)]);
                }
                cursor = 0;
            }
            const auto& c = clips[order[cursor++]];
            TrainSample s;
            s.frames = c.clip.frames;
            s.flows = c.gt.flows;
            s.masks = cfg.first_frame_only
                          ? datagen::first_frame_mask(geometry.frames, geometry.height, geometry.width).masks
                          : sample_training_mask(cfg.seed, step, row, geometry, cfg.masks).masks;
            samples.push_back(std::move(s));
        }
        auto batch = make_batch(model, samples, gen);
        double loss = train_step(model, batch, opt, cfg.fff);
        losses.push_back(loss);
        if (on_step) {
            on_step(step, loss);
        }
    }
    model.eval();
    return losses;
}

VideoClip infer(InpaintingModel& model, const InferenceRequest& request, const InferenceOptions& options) {
    const auto& frames = request.clip.frames;
    const auto& masks = request.masks.masks;
    require(request.steps >= 1, ErrorKind::Config, "infer: steps must be >= 1");
    require(frames.dim() == 4 && frames.size(1) == 3, ErrorKind::Data, "infer: frames must be [S,3,H,W]");
    require(masks.dim() == 4 && masks.size(0) == frames.size(0), ErrorKind::Data,
            "infer: " + std::to_string(masks.size(0)) + " masks for " + std::to_string(frames.size(0)) + " frames");
    require(masks.size(1) == 1 && masks.size(2) == frames.size(2) && masks.size(3) == frames.size(3), ErrorKind::Data,
            "infer: mask " + shape_str(masks) + " does not match frames " + shape_str(frames));
    require(((masks == 0) | (masks == 1)).all().item<bool>(), ErrorKind::Data, "infer: masks must be binary");
    if (!(masks > 0.5).any().item<bool>()) {
        return VideoClip{frames.clone(), request.clip.fps};
    }

    torch::NoGradGuard no_grad;
    model.eval();
    auto cond = condition(model, frames * (1 - masks), masks, request.flows);
    const auto shape = cond.conditional.sizes().vec();
    const int64_t S = shape[0];
    auto gen = at::detail::createCPUGenerator(request.seed);
    auto noise_first = randn({1, shape[1], shape[2], shape[3]}, gen);
    auto fill_eps = randn(shape, gen);

    fff::FffOptions fopts{options.propagate, options.align};
    auto eps_model = make_eps_model(model, cond, fill_eps, fopts);
    diffusion::StateProjection project;
    if (options.propagate) {
        project = [cond](const torch::Tensor& x) { return fff::project_propagated(x, cond.latent_masks, cond.to_first); };
    }

    const auto& sched = model.schedule();
    NoisyLatent start;
    if (options.invert) {
        auto inverted = diffusion::ddim_invert(eps_model, LatentClip{cond.conditional, model.autoencoder->latent_scale()},
                                               request.steps, sched, project);
        start = {torch::cat({noise_first, inverted.codes.slice(0, 1, S)}), sched.T(), Provenance::Inverted};
    } else {
        auto rest = randn({S - 1, shape[1], shape[2], shape[3]}, gen);
        start = {torch::cat({noise_first, rest}), sched.T(), Provenance::Random};
    }
    auto clean = diffusion::ddim_sample(eps_model, start, request.steps, sched, project);
    auto decoded = model.autoencoder->decode(clean.codes);
    return VideoClip{torch::where(masks > 0.5, decoded, frames), request.clip.fps};
}

torch::Tensor frame_features(vae::Autoencoder& extractor, const torch::Tensor& frames) {
    torch::NoGradGuard no_grad;
    extractor->eval();
    return extractor->features(frames.to(torch::kFloat32)).to(torch::kFloat64);
}

torch::Tensor clip_feature(vae::Autoencoder& extractor, const torch::Tensor& frames) {
    auto f = frame_features(extractor, frames);
    auto change = (f.slice(0, 1) - f.slice(0, 0, f.size(0) - 1)).abs().mean(0);
    return torch::cat({f.mean(0), change});
}

MetricReport evaluate(const std::vector<EvalItem>& items, vae::Autoencoder* extractor) {
    require(!items.empty(), ErrorKind::Data, "evaluate: nothing to evaluate");
    MetricReport report;
    std::vector<torch::Tensor> pred_clip, truth_clip;
    for (const auto& it : items) {
        require(it.flows.defined() && it.flows_backward.defined(), ErrorKind::Data,
                "evaluate: " + it.id + " has no flows for e_warp");
        ClipMetrics m;
        m.clip_id = it.id;
        m.psnr = metrics::psnr(it.prediction, it.truth);
        m.psnr_masked = it.masks.defined() ? metrics::psnr_masked(it.prediction, it.truth, it.masks) : metrics::kPsnrCap;
        m.ssim = metrics::ssim(it.prediction, it.truth);
        auto valid = metrics::consistency_mask(it.flows, it.flows_backward);
        m.e_warp_x1e3 = 1e3 * metrics::e_warp(it.prediction, it.flows, valid);
        if (extractor && !extractor->is_empty()) {
            m.vfid_proxy = metrics::frechet_distance(frame_features(*extractor, it.prediction),
                                                     frame_features(*extractor, it.truth));
            pred_clip.push_back(clip_feature(*extractor, it.prediction));
            truth_clip.push_back(clip_feature(*extractor, it.truth));
        } else {
            m.vfid_proxy = kNaN;
        }
        report.clips.push_back(m);
    }
    auto& agg = report.aggregate;
    agg.clip_id = "aggregate";
    const double n = static_cast<double>(report.clips.size());
    for (const auto& m : report.clips) {
        agg.psnr += m.psnr / n;
        agg.psnr_masked += m.psnr_masked / n;
        agg.ssim += m.ssim / n;
        agg.e_warp_x1e3 += m.e_warp_x1e3 / n;
    }
    agg.vfid_proxy = pred_clip.size() >= 2
                         ? metrics::frechet_distance(torch::stack(pred_clip), torch::stack(truth_clip))
                         : kNaN;
    return report;
}

void write_report_csv(const fs::path& path, const MetricReport& report) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    require(out.good(), ErrorKind::Data, "cannot write " + path.string());
    out << "clip_id,psnr,psnr_masked,ssim,e_warp_x1e3,vfid_proxy\n";
    for (const auto& m : report.clips) {
        out << metrics_csv(m) << "\n";
    }
    out << metrics_csv(report.aggregate) << "\n";
}

Json report_json(const MetricReport& report) {
    Json clips = Json::array();
    for (const auto& m : report.clips) {
        clips.push_back(metrics_json(m));
    }
    return {{"clips", clips}, {"aggregate", metrics_json(report.aggregate)}};
}

std::vector<AblationEntry> standard_ablation(const fs::path& run_dir) {
    return {
        {"no_fff", run_dir / "finetune_no_fff.ckpt", {false, false, false}},
        {"lp", run_dir / "finetune_lp.ckpt", {true, false, false}},
        {"lp_dna", run_dir / "finetune_lp_dna.ckpt", {true, true, false}},
        {"lp_dna_inv", run_dir / "finetune_lp_dna.ckpt", {true, true, true}},
    };
}

std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& entries,
                                      const std::vector<corpus::ClipData>& clips, int steps, uint64_t seed) {
    require(!entries.empty() && !clips.empty(), ErrorKind::Data, "ablation: need variants and clips");
    for (const auto& e : entries) {
        require(fs::exists(e.checkpoint), ErrorKind::Data,
                "ablation: missing checkpoint for " + e.name + ": " + e.checkpoint.string());
    }
    std::map<fs::path, std::shared_ptr<InpaintingModel>> cache;
    auto model_for = [&](const fs::path& p) {
        auto& slot = cache[p];
        if (!slot) {
            slot = std::make_shared<InpaintingModel>(InpaintingModel::load(p));
        }
        return slot;
    };
    auto extractor = model_for(entries.front().checkpoint)->autoencoder;

    std::vector<AblationRow> rows;
    for (const auto& e : entries) {
        auto model = model_for(e.checkpoint);
        std::vector<EvalItem> items;
        for (size_t i = 0; i < clips.size(); ++i) {
            const auto& c = clips[i];
            InferenceRequest req{c.clip, c.masks, steps, seed + i, c.gt.flows};
            auto out = infer(*model, req, e.options);
            items.push_back({c.id, out.frames, c.clip.frames, c.masks.masks, c.gt.flows, c.gt.flows_backward});
        }
        rows.push_back({e.name, evaluate(items, &extractor)});
    }
    return rows;
}

void write_ablation(const fs::path& dir, const std::vector<AblationRow>& rows, const Json& meta) {
    fs::create_directories(dir);
    std::ofstream csv(dir / "ablation.csv");
    require(csv.good(), ErrorKind::Data, "cannot write " + (dir / "ablation.csv").string());
    csv << "variant,clip_id,psnr,psnr_masked,ssim,e_warp_x1e3,vfid_proxy\n";
    Json variants = Json::array();
    for (const auto& r : rows) {
        for (const auto& m : r.report.clips) {
            csv << r.variant << "," << metrics_csv(m) << "\n";
        }
        csv << r.variant << "," << metrics_csv(r.report.aggregate) << "\n";
        auto j = report_json(r.report);
        j["variant"] = r.variant;
        variants.push_back(j);
    }
    std::ofstream js(dir / "ablation.json");
    js << Json{{"meta", meta}, {"variants", variants}}.dump(2) << "\n";
    require(js.good(), ErrorKind::Data, "cannot write " + (dir / "ablation.json").string());
}

}  // namespace fffvdi::pipeline
