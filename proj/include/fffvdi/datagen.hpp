#pragma once

#include "fffvdi/types.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace fffvdi::datagen {

/// Portable RNG: mt19937_64 bit stream with our own real/normal mapping, so a
/// seed produces the same corpus on every standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}
    uint64_t bits() { return engine_(); }
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int64_t integer(int64_t lo, int64_t hi) {  // inclusive bounds
        return lo + static_cast<int64_t>(engine_() % static_cast<uint64_t>(hi - lo + 1));
    }
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

struct CorpusConfig {
    int frames = 8;
    int height = 64;
    int width = 64;
    int latent_factor = 4;
    int shapes = 2;
    int max_shape_speed = 2;   // px/frame per axis, integer motion keeps flows exact
    int background_speed = 1;  // px/frame per axis for the camera pan
    int texture_components = 10;
    double texture_max_cycles = 3.0;  // cycles across the frame width
    double texture_amplitude = 0.3;
    int fps = 8;

    void validate() const;
};

struct GroundTruth {
    torch::Tensor background;      // [S,3,H,W] scene with every shape removed
    torch::Tensor flows;           // [S-1,2,H,W] on frame i's grid, pointing into frame i+1
    torch::Tensor flows_backward;  // [S-1,2,H,W] on frame i+1's grid, pointing into frame i
    torch::Tensor visibility;      // [S-1,1,H,W] 1 where frame i content stays visible in frame i+1
};

struct TextureComponent {
    double fx = 0, fy = 0;  // cycles per pixel
    double phase = 0;
    std::array<double, 3> amplitude{};
};

struct Texture {
    std::array<double, 3> base{0.5, 0.5, 0.5};
    std::vector<TextureComponent> components;

    double sample(int channel, double x, double y) const;
};

struct ShapeSpec {
    enum class Kind { Rect, Disk } kind = Kind::Rect;
    double cx = 0, cy = 0;            // centre at frame 0, pixel units
    double half_w = 4, half_h = 4;    // for Disk half_w is the radius
    int vx = 0, vy = 0;               // px per frame
    std::array<double, 3> color{1, 1, 1};

    /// Anti-aliased coverage in [0,1] of pixel centre (x, y) at frame `i`.
    double coverage(double x, double y, int i) const;
};

struct Scene {
    Texture texture;
    int bg_vx = 0, bg_vy = 0;
    std::vector<ShapeSpec> shapes;  // later entries are drawn on top
};

Scene sample_scene(uint64_t seed, const CorpusConfig& cfg);
std::pair<VideoClip, GroundTruth> render_scene(const Scene& scene, const CorpusConfig& cfg);

/// Deterministic for fixed (seed, cfg). Throws Error(Config) for S < 2 or
/// frame sizes not divisible by the latent factor.
std::pair<VideoClip, GroundTruth> gen_clip(uint64_t seed, const CorpusConfig& cfg);

enum class StrokeFamily { Rectangle, Brush };

struct MaskConfig {
    double min_coverage = 0.1;
    double max_coverage = 0.3;
    StrokeFamily family = StrokeFamily::Rectangle;
    double max_step = 3.0;  // object masks: max centroid displacement per frame
    double deform = 0.12;   // object masks: relative radius modulation

    void validate() const;
};

MaskSequence gen_stationary_mask(uint64_t seed, int frames, int height, int width, const MaskConfig& cfg);
MaskSequence gen_object_mask(uint64_t seed, int frames, int height, int width, const MaskConfig& cfg);

/// Explicit object-mask trajectory: a blob whose radius is modulated by
/// second/third harmonics, translating by (vx, vy) per frame and bouncing off
/// the frame border.
struct BlobTrack {
    double cx = 0, cy = 0, radius = 8;
    double vx = 0, vy = 0;
    std::array<double, 2> harmonic_amp{0, 0};
    std::array<double, 2> harmonic_phase{0, 0};
    double phase_speed = 0;  // radians per frame
};

MaskSequence render_blob(const BlobTrack& track, int frames, int height, int width);

/// Mask with frame 0 fully visible and every later frame fully masked, the
/// conditioning layout of first-frame-conditioned video generation.
MaskSequence first_frame_mask(int frames, int height, int width);

double coverage(const torch::Tensor& mask);

}  // namespace fffvdi::datagen
