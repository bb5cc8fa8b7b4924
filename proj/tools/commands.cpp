#include "commands.hpp"

#include "fffvdi/archive.hpp"
#include "fffvdi/config.hpp"
#include "fffvdi/corpus.hpp"
#include "fffvdi/image_io.hpp"
#include "fffvdi/metrics.hpp"
#include "fffvdi/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

namespace fffvdi::cli {
namespace {

namespace fs = std::filesystem;
using config::Json;

config::RunConfig load_config(const std::string& path) {
    auto rc = path.empty() ? config::from_json(Json::object()) : config::load(path);
    torch::set_num_threads(rc.workers);
    return rc;
}

std::optional<Json> read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in.good()) {
        return std::nullopt;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return Json::parse(ss.str());
    } catch (const Json::parse_error& e) {
        throw data_error(file.string() + ": " + e.what());
    }
}

void write_json(const fs::path& file, const Json& j) {
    auto tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        out << j.dump(2) << "\n";
        require(out.good(), ErrorKind::Data, "cannot write " + tmp.string());
    }
    fs::rename(tmp, file);
}

int existing_rows(const fs::path& csv) {
    std::ifstream in(csv);
    int rows = -1;  // header
    for (std::string line; std::getline(in, line);) {
        rows += line.empty() ? 0 : 1;
    }
    return std::max(rows, 0);
}

void write_losses(const fs::path& csv, const std::vector<double>& losses, bool append) {
    int offset = append && fs::exists(csv) ? existing_rows(csv) : 0;
    std::ofstream out(csv, offset > 0 ? std::ios::app : std::ios::trunc);
    require(out.good(), ErrorKind::Data, "cannot write " + csv.string());
    if (offset == 0) {
        out << "step,loss\n";
    }
    char buf[64];
    for (size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.8g\n", offset + i, losses[i]);
        out << buf;
    }
}

std::function<void(int, double)> progress(const std::string& phase, int steps) {
    const int every = std::max(1, steps / 20);
    return [phase, steps, every](int step, double loss) {
        if ((step + 1) % every == 0 || step + 1 == steps) {
            std::fprintf(stderr, "[%s] step %d/%d loss %.5f\n", phase.c_str(), step + 1, steps, loss);
        }
    };
}

double reconstruction_psnr(vae::Autoencoder& ae, const std::vector<corpus::ClipData>& clips) {
    torch::NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& c : clips) {
        total += metrics::psnr(ae->decode(ae->encode(c.clip.frames)), c.clip.frames);
    }
    return total / static_cast<double>(clips.size());
}

torch::Tensor read_flow_source(const fs::path& source) {
    if (fs::is_directory(source)) {
        std::vector<torch::Tensor> flows;
        for (int i = 0;; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "flow_%04d.flo", i);
            if (!fs::exists(source / name)) {
                break;
            }
            flows.push_back(io::read_flo(source / name));
        }
        require(!flows.empty(), ErrorKind::Data, "no flow_*.flo files in " + source.string());
        return torch::stack(flows);
    }
    return corpus::read_ground_truth(source).flows;
}

std::string corpus_hash_near(const fs::path& clip_dir) {
    auto j = read_json(clip_dir.parent_path() / "corpus.json");
    return j ? j->value("corpus_hash", "") : "";
}

}  // namespace

void gen_data(const GenDataArgs& args) {
    auto rc = load_config(args.config);
    fs::path out = !args.out.empty() ? fs::path(args.out) : (args.eval ? rc.eval_dir : rc.corpus_dir);
    int clips = args.clips.value_or(args.eval ? rc.eval_clips : rc.train_clips);
    uint64_t seed = args.seed.value_or(args.eval ? rc.eval_seed : rc.train_seed);
    int threads = torch::get_num_threads();
    torch::set_num_threads(1);
    auto m = corpus::generate(out, rc, clips, seed, args.force, rc.workers);
    torch::set_num_threads(threads);
    std::printf("wrote %d clips to %s (corpus %s, config %s)\n", clips, out.string().c_str(), m.corpus_hash.c_str(),
                m.config_hash.c_str());
}

void train(const TrainArgs& args) {
    auto rc = load_config(args.config);
    const fs::path run = rc.run_dir();
    const fs::path corpus_dir = args.corpus.empty() ? rc.corpus_dir : fs::path(args.corpus);
    auto manifest = corpus::read_manifest(corpus_dir);
    auto clips = corpus::load(corpus_dir);
    fs::create_directories(run);

    auto prerequisite = [&](const fs::path& p, const std::string& phase) {
        require(fs::exists(p), ErrorKind::Data,
                "missing prerequisite checkpoint " + p.string() + " (run train --phase " + phase + " first)");
        return p;
    };

    if (args.phase == "vae") {
        const auto ckpt = run / "vae.ckpt";
        auto model = args.resume && fs::exists(ckpt) ? pipeline::InpaintingModel::load(ckpt)
                                                     : pipeline::InpaintingModel(pipeline::model_config(rc));
        std::vector<torch::Tensor> pool;
        for (const auto& c : clips) {
            pool.push_back(c.clip.frames);
        }
        auto frames = torch::cat(pool);
        auto tc = rc.autoencoder_train;
        tc.seed = rc.seed + static_cast<uint64_t>(model.info.steps);
        auto losses = vae::train_autoencoder(model.autoencoder, frames, tc, progress("vae", tc.steps));
        double scale = vae::calibrate_latent_scale(model.autoencoder, frames);
        model.info.phase = "vae";
        model.info.steps += static_cast<int>(losses.size());
        model.info.frames_train = rc.corpus.frames;
        model.info.config_hash = rc.hash;
        model.info.corpus_hash = manifest.corpus_hash;
        model.save(ckpt);
        write_losses(run / "vae_loss.csv", losses, args.resume);
        std::printf("vae: %zu steps, latent scale %.4f, train PSNR %.2f dB", losses.size(), scale,
                    reconstruction_psnr(model.autoencoder, clips));
        if (fs::exists(rc.eval_dir / "corpus.json")) {
            std::printf(", held-out PSNR %.2f dB", reconstruction_psnr(model.autoencoder, corpus::load(rc.eval_dir)));
        }
        std::printf("\nsaved %s\n", ckpt.string().c_str());
        return;
    }

    pipeline::TrainLoopConfig loop;
    loop.masks = rc.masks;
    fs::path ckpt;
    fs::path init;
    std::string name;
    if (args.phase == "pretrain") {
        ckpt = run / "pretrain.ckpt";
        init = args.resume && fs::exists(ckpt) ? ckpt : prerequisite(run / "vae.ckpt", "vae");
        loop.steps = rc.pretrain.steps;
        loop.batch = rc.pretrain.batch;
        loop.lr = rc.pretrain.lr;
        loop.freeze = rc.pretrain.freeze;
        loop.fff = {false, false, false};
        loop.first_frame_only = true;
        name = "pretrain";
    } else if (args.phase == "finetune") {
        auto variant = pipeline::parse_variant(args.variant.empty() ? rc.finetune_variant : args.variant);
        ckpt = run / ("finetune_" + variant.name + ".ckpt");
        init = args.resume && fs::exists(ckpt) ? ckpt : prerequisite(run / "pretrain.ckpt", "pretrain");
        loop.steps = rc.finetune.steps;
        loop.batch = rc.finetune.batch;
        loop.lr = rc.finetune.lr;
        loop.freeze = unet::FreezePolicy::TemporalOnly;
        loop.fff = variant.fff;
        name = "finetune_" + variant.name;
    } else {
        throw config_error("unknown phase '" + args.phase + "' (expected vae, pretrain or finetune)");
    }

    auto model = pipeline::InpaintingModel::load(init);
    const bool continuing = init == ckpt;
    loop.seed = rc.seed + static_cast<uint64_t>(continuing ? model.info.steps : 0);
    auto losses = pipeline::train_denoiser(model, clips, loop, progress(name, loop.steps));
    model.info.phase = args.phase;
    model.info.variant = args.phase == "finetune" ? name.substr(9) : "";
    model.info.freeze = loop.freeze;
    model.info.fff = loop.fff;
    model.info.steps = (continuing ? model.info.steps : 0) + static_cast<int>(losses.size());
    model.info.frames_train = rc.corpus.frames;
    model.info.config_hash = rc.hash;
    model.info.corpus_hash = manifest.corpus_hash;
    model.save(ckpt);
    write_losses(run / (name + "_loss.csv"), losses, continuing);
    std::printf("%s: %zu steps, final loss %.5f\nsaved %s\n", name.c_str(), losses.size(),
                losses.empty() ? 0.0 : losses.back(), ckpt.string().c_str());
}

void infer(const InferArgs& args) {
    auto model = pipeline::InpaintingModel::load(args.checkpoint);
    const fs::path input(args.input);
    const fs::path mask_dir = args.mask.empty() ? input : fs::path(args.mask);
    pipeline::InferenceRequest req;
    req.clip.frames = corpus::read_frames(input);
    req.masks.masks = corpus::read_masks(mask_dir);
    require(req.masks.masks.size(0) == req.clip.frames.size(0), ErrorKind::Data,
            "infer: " + std::to_string(req.masks.masks.size(0)) + " masks for " +
                std::to_string(req.clip.frames.size(0)) + " frames");
    req.steps = args.steps;
    req.seed = args.seed;
    if (!args.flows.empty()) {
        req.flows = read_flow_source(args.flows);
    } else if (fs::exists(input / "gt.npz")) {
        req.flows = corpus::read_ground_truth(input / "gt.npz").flows;
    }
    pipeline::InferenceOptions opts{!args.no_lp, !args.no_dna, !args.no_inversion};
    auto out = pipeline::infer(model, req, opts);

    const fs::path out_dir = args.out.empty() ? fs::path(input.filename().string() + "_inpainted") : fs::path(args.out);
    corpus::write_frames(out_dir, out.frames);
    std::string hash = corpus_hash_near(input);
    write_json(out_dir / "manifest.json",
               {{"config_hash", model.info.config_hash},
                {"corpus_hash", hash.empty() ? model.info.corpus_hash : hash},
                {"model_corpus_hash", model.info.corpus_hash},
                {"checkpoint", args.checkpoint},
                {"steps", args.steps},
                {"seed", args.seed},
                {"flows", req.flows.defined()},
                {"options", {{"lp", opts.propagate}, {"dna", opts.align}, {"inversion", opts.invert}}}});
    std::printf("wrote %lld frames to %s\n", static_cast<long long>(out.frames.size(0)), out_dir.string().c_str());
}

void eval(const EvalArgs& args) {
    const fs::path pred(args.pred);
    const fs::path gt(args.gt);
    require(fs::is_directory(pred) && fs::is_directory(gt), ErrorKind::Data, "eval: --pred and --gt must be directories");
    std::vector<std::string> ids;
    std::string gt_hash;
    if (auto m = read_json(gt / "corpus.json")) {
        auto manifest = corpus::Manifest::from_json(*m);
        gt_hash = manifest.corpus_hash;
        for (const auto& c : manifest.clips) {
            ids.push_back(c.id);
        }
        require(!ids.empty(), ErrorKind::Data, "eval: " + gt.string() + " lists no clips");
    } else {
        ids.push_back("");
        gt_hash = corpus_hash_near(gt);
    }

    std::set<std::string> pred_configs;
    std::vector<pipeline::EvalItem> items;
    for (const auto& id : ids) {
        const auto pd = id.empty() ? pred : pred / id;
        const auto gd = id.empty() ? gt : gt / id;
        if (auto pm = read_json(pd / "manifest.json")) {
            pred_configs.insert(pm->value("config_hash", ""));
            std::string ph = pm->value("corpus_hash", "");
            require(args.allow_mixed || gt_hash.empty() || ph.empty() || ph == gt_hash, ErrorKind::Config,
                    "eval: prediction " + pd.string() + " comes from corpus " + ph + " but ground truth is " + gt_hash +
                        " (use --allow-mixed)");
        }
        pipeline::EvalItem item;
        item.id = id.empty() ? gd.filename().string() : id;
        item.prediction = corpus::read_frames(pd);
        item.truth = corpus::read_frames(gd);
        require(item.prediction.sizes() == item.truth.sizes(), ErrorKind::Data,
                "eval: " + item.id + " prediction " + shape_str(item.prediction) + " vs ground truth " +
                    shape_str(item.truth));
        if (fs::exists(gd / "mask_0000.png")) {
            item.masks = corpus::read_masks(gd);
        }
        fs::path flows = !args.flows.empty() && id.empty() ? fs::path(args.flows) : gd / "gt.npz";
        if (!args.flows.empty() && !id.empty()) {
            flows = fs::path(args.flows) / id / "gt.npz";
        }
        require(fs::exists(flows), ErrorKind::Data, "eval: missing flows for " + item.id + " (" + flows.string() + ")");
        auto truth = corpus::read_ground_truth(flows);
        item.flows = truth.flows;
        item.flows_backward = truth.flows_backward;
        items.push_back(std::move(item));
    }
    require(args.allow_mixed || pred_configs.size() <= 1, ErrorKind::Config,
            "eval: predictions come from " + std::to_string(pred_configs.size()) +
                " different configs (use --allow-mixed)");

    std::optional<pipeline::InpaintingModel> extractor_model;
    vae::Autoencoder* extractor = nullptr;
    if (!args.checkpoint.empty()) {
        extractor_model.emplace(pipeline::InpaintingModel::load(args.checkpoint));
        extractor = &extractor_model->autoencoder;
    } else {
        std::fprintf(stderr, "eval: no --checkpoint given, vfid_proxy is reported as nan\n");
    }
    auto report = pipeline::evaluate(items, extractor);
    fs::path out = args.out.empty() ? fs::path("report.csv") : fs::path(args.out);
    pipeline::write_report_csv(out, report);
    auto json_path = out;
    json_path.replace_extension(".json");
    write_json(json_path, pipeline::report_json(report));
    const auto& a = report.aggregate;
    std::printf("%zu clips: psnr %.3f, psnr_masked %.3f, ssim %.4f, e_warp_x1e3 %.4f, vfid_proxy %.5f\n",
                report.clips.size(), a.psnr, a.psnr_masked, a.ssim, a.e_warp_x1e3, a.vfid_proxy);
}

void ablation(const AblationArgs& args) {
    auto rc = load_config(args.config);
    const fs::path run = args.run_dir.empty() ? rc.run_dir() : fs::path(args.run_dir);
    const fs::path eval_dir = args.eval_corpus.empty() ? rc.eval_dir : fs::path(args.eval_corpus);
    auto manifest = corpus::read_manifest(eval_dir);
    auto clips = corpus::load(eval_dir);
    if (args.clips && *args.clips < static_cast<int>(clips.size())) {
        clips.resize(std::max(*args.clips, 2));
    }
    const int steps = args.steps.value_or(rc.ddim_steps);
    const uint64_t seed = args.seed.value_or(rc.inference_seed);
    auto rows = pipeline::run_ablation(pipeline::standard_ablation(run), clips, steps, seed);
    const fs::path out = args.out.empty() ? run / "ablation" : fs::path(args.out);
    pipeline::write_ablation(out,
                             rows,
                             {{"config_hash", rc.hash},
                              {"corpus_hash", manifest.corpus_hash},
                              {"clips", clips.size()},
                              {"ddim_steps", steps},
                              {"seed", seed}});
    std::printf("%-12s %9s %12s %8s %12s %11s\n", "variant", "psnr", "psnr_masked", "ssim", "e_warp_x1e3", "vfid_proxy");
    for (const auto& r : rows) {
        const auto& a = r.report.aggregate;
        std::printf("%-12s %9.3f %12.3f %8.4f %12.4f %11.5f\n", r.variant.c_str(), a.psnr, a.psnr_masked, a.ssim,
                    a.e_warp_x1e3, a.vfid_proxy);
    }
    std::printf("wrote %s\n", (out / "ablation.csv").string().c_str());
}

void schema() { std::cout << config::schema_text(); }

}  // namespace fffvdi::cli
