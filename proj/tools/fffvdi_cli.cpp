#include "commands.hpp"

#include "fffvdi/types.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>

namespace {

int exit_code(fffvdi::ErrorKind kind) {
    switch (kind) {
        case fffvdi::ErrorKind::Config: return 2;
        case fffvdi::ErrorKind::Data: return 3;
        case fffvdi::ErrorKind::Numeric: return 4;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace fffvdi::cli;
    CLI::App app{"fffvdi: first-frame-filling video inpainting at desk scale"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* g = app.add_subcommand("gen-data", "render a synthetic corpus");
    g->add_option("--config", gen.config, "run config JSON");
    g->add_option("--out", gen.out, "output directory");
    g->add_option("--clips", gen.clips, "number of clips");
    g->add_option("--seed", gen.seed, "first clip seed");
    g->add_flag("--eval", gen.eval, "use the evaluation corpus defaults");
    g->add_flag("--force", gen.force, "replace an existing corpus");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train one phase");
    t->add_option("--config", tr.config, "run config JSON");
    t->add_option("--phase", tr.phase, "vae | pretrain | finetune")->required()->check(
        CLI::IsMember({"vae", "pretrain", "finetune"}));
    t->add_option("--variant", tr.variant, "finetune variant: no_fff | lp | lp_dna");
    t->add_option("--corpus", tr.corpus, "training corpus directory");
    t->add_flag("--resume", tr.resume, "continue from this phase's checkpoint");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "inpaint one clip");
    i->add_option("--checkpoint", inf.checkpoint, "model checkpoint")->required();
    i->add_option("--input", inf.input, "directory of frame_%04d.png")->required();
    i->add_option("--mask", inf.mask, "directory of mask_%04d.png (default: --input)");
    i->add_option("--out", inf.out, "output directory");
    i->add_option("--flows", inf.flows, "gt.npz or directory of flow_%04d.flo (default: <input>/gt.npz if present)");
    i->add_option("--steps", inf.steps, "DDIM steps")->check(CLI::PositiveNumber);
    i->add_option("--seed", inf.seed, "noise seed");
    i->add_flag("--no-inversion", inf.no_inversion, "random noise for every frame");
    i->add_flag("--no-dna", inf.no_dna, "skip deformable noise alignment");
    i->add_flag("--no-lp", inf.no_lp, "skip latent propagation into frame 1");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "score predictions against ground truth");
    e->add_option("--pred", ev.pred, "prediction clip or corpus directory")->required();
    e->add_option("--gt", ev.gt, "ground-truth clip or corpus directory")->required();
    e->add_option("--flows", ev.flows, "gt.npz (single clip) or corpus directory holding <id>/gt.npz");
    e->add_option("--out", ev.out, "report CSV path (a .json twin is written alongside)");
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint whose encoder provides vfid_proxy features");
    e->add_flag("--allow-mixed", ev.allow_mixed, "accept predictions from different configs or corpora");

    AblationArgs ab;
    auto* a = app.add_subcommand("ablation", "run the four-row ablation on the evaluation corpus");
    a->add_option("--config", ab.config, "run config JSON");
    a->add_option("--eval-corpus", ab.eval_corpus, "evaluation corpus directory");
    a->add_option("--run-dir", ab.run_dir, "directory holding finetune_*.ckpt");
    a->add_option("--out", ab.out, "report directory");
    a->add_option("--steps", ab.steps, "DDIM steps");
    a->add_option("--seed", ab.seed, "noise seed");
    a->add_option("--clips", ab.clips, "use the first N clips");

    auto* s = app.add_subcommand("schema", "print the run-config JSON schema");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        int rc = app.exit(err);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (g->parsed()) gen_data(gen);
        if (t->parsed()) train(tr);
        if (i->parsed()) infer(inf);
        if (e->parsed()) eval(ev);
        if (a->parsed()) ablation(ab);
        if (s->parsed()) schema();
    } catch (const fffvdi::Error& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return exit_code(err.kind());
    } catch (const std::filesystem::filesystem_error& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 3;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "internal error: %s\n", err.what());
        return 1;
    }
    return 0;
}
