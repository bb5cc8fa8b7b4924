#pragma once

#include "fffvdi/datagen.hpp"
#include "fffvdi/diffusion.hpp"
#include "fffvdi/fff.hpp"
#include "fffvdi/unet.hpp"
#include "fffvdi/vae.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace fffvdi::config {

using Json = nlohmann::json;

/// The published run-config schema (draft 2020-12 subset).
const std::string& schema_text();

/// Checks `doc` against `schema` for the keywords the run config uses: type,
/// properties, additionalProperties, items, enum, minimum, maximum,
/// exclusiveMinimum, exclusiveMaximum. Throws Error(Config) naming the path.
void validate(const Json& doc, const Json& schema, const std::string& path = "$");

/// Copies every schema "default" into `doc` where the key is absent.
Json with_defaults(const Json& doc, const Json& schema);

/// FNV-1a 64 of the canonical (sorted-key, compact) dump, as 16 hex digits.
std::string hash(const Json& doc);

struct PhaseConfig {
    int steps = 0;
    int batch = 1;
    double lr = 0;
    unet::FreezePolicy freeze = unet::FreezePolicy::None;
};

struct RunConfig {
    Json document;  // validated, defaults filled
    std::string hash;

    uint64_t seed = 0;
    int workers = 1;
    std::filesystem::path output_root;
    std::filesystem::path corpus_dir;
    std::filesystem::path eval_dir;
    std::string run_name;

    datagen::CorpusConfig corpus;
    int train_clips = 0;
    int eval_clips = 0;
    uint64_t train_seed = 0;
    uint64_t eval_seed = 0;
    datagen::MaskConfig masks;

    vae::AutoencoderConfig autoencoder;
    vae::TrainConfig autoencoder_train;
    unet::DenoiserConfig denoiser;
    fff::DnaConfig dna;
    diffusion::ScheduleConfig schedule;
    PhaseConfig pretrain;
    PhaseConfig finetune;
    std::string finetune_variant;
    int ddim_steps = 50;
    uint64_t inference_seed = 0;

    std::filesystem::path run_dir() const { return output_root / run_name; }
};

/// Validates, fills defaults and applies FFFVDI_OUTPUT_ROOT / FFFVDI_WORKERS.
RunConfig from_json(const Json& doc);
RunConfig load(const std::filesystem::path& path);

}  // namespace fffvdi::config
