#pragma once

#include "fffvdi/config.hpp"
#include "fffvdi/datagen.hpp"

#include <filesystem>
#include <string>
#include <vector>

// On-disk corpus: <dir>/corpus.json plus one directory per clip holding
// frame_%04d.png, mask_%04d.png and gt.npz (flows (S-1,H,W,2),
// flows_backward (S-1,H,W,2), visibility (S-1,H,W), background (S,H,W,3)).
namespace fffvdi::corpus {

enum class MaskKind { Stationary, Object };

struct ClipEntry {
    std::string id;
    uint64_t seed = 0;
    uint64_t mask_seed = 0;
    MaskKind mask_kind = MaskKind::Stationary;
    datagen::StrokeFamily family = datagen::StrokeFamily::Rectangle;
};

struct Manifest {
    config::Json data_config;  // {"corpus": ..., "masks": ...}
    std::string corpus_hash;   // hash of data_config
    std::string config_hash;   // hash of the full run config
    uint64_t seed = 0;
    std::vector<ClipEntry> clips;

    config::Json to_json() const;
    static Manifest from_json(const config::Json& j);
};

struct ClipData {
    std::string id;
    VideoClip clip;
    MaskSequence masks;
    datagen::GroundTruth gt;
};

config::Json data_section(const config::RunConfig& rc);

/// Deterministic entry list: clip i uses seed + i, masks alternate between
/// stationary and object kinds and between rectangle and brush strokes.
std::vector<ClipEntry> plan(int clips, uint64_t seed);

MaskSequence make_mask(const ClipEntry& entry, const datagen::CorpusConfig& cfg, const datagen::MaskConfig& masks);

/// Renders and writes `clips` clips. A non-empty `out` is refused unless
/// `force`, in which case previous clip directories and the manifest are
/// replaced.
Manifest generate(const std::filesystem::path& out, const config::RunConfig& rc, int clips, uint64_t seed,
                  bool force, int workers);

Manifest read_manifest(const std::filesystem::path& dir);

void write_frames(const std::filesystem::path& dir, const torch::Tensor& frames);
void write_masks(const std::filesystem::path& dir, const torch::Tensor& masks);
/// Reads frame_%04d.png (or mask_%04d.png) in order; throws Error(Data) when none exist.
torch::Tensor read_frames(const std::filesystem::path& dir);
torch::Tensor read_masks(const std::filesystem::path& dir);

void write_ground_truth(const std::filesystem::path& file, const datagen::GroundTruth& gt);
datagen::GroundTruth read_ground_truth(const std::filesystem::path& file);

ClipData load_clip(const std::filesystem::path& dir, const std::string& id);
std::vector<ClipData> load(const std::filesystem::path& dir);

/// Runs fn(i) for i in [0, n) on up to `workers` threads; the first exception is rethrown.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace fffvdi::corpus
