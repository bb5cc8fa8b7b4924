#include "fffvdi/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fffvdi::datagen {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Layer index of the topmost layer owning a pixel (-1 = background) and
// whether every layer's coverage there is exactly 0 or 1.
struct PixelLayer {
    int top = -1;
    bool pure = true;
};

PixelLayer layer_at(const Scene& scene, double x, double y, int frame) {
    PixelLayer out;
    for (size_t k = 0; k < scene.shapes.size(); ++k) {
        double a = scene.shapes[k].coverage(x, y, frame);
        if (a > 0.0 && a < 1.0) {
            out.pure = false;
        }
        if (a >= 0.5) {
            out.top = static_cast<int>(k);
        }
    }
    return out;
}

std::pair<int, int> layer_velocity(const Scene& scene, int layer) {
    if (layer < 0) {
        return {scene.bg_vx, scene.bg_vy};
    }
    return {scene.shapes[layer].vx, scene.shapes[layer].vy};
}

}  // namespace

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
}

void CorpusConfig::validate() const {
    require(frames >= 2, ErrorKind::Config, "corpus: need at least 2 frames, got " + std::to_string(frames));
    require(latent_factor >= 1, ErrorKind::Config, "corpus: latent_factor must be positive");
    require(height > 0 && width > 0 && height % latent_factor == 0 && width % latent_factor == 0, ErrorKind::Config,
            "corpus: frame size " + std::to_string(height) + "x" + std::to_string(width) +
                " not divisible by latent factor " + std::to_string(latent_factor));
    require(shapes >= 0, ErrorKind::Config, "corpus: shape count must be >= 0");
    require(max_shape_speed >= 0 && background_speed >= 0, ErrorKind::Config, "corpus: speeds must be >= 0");
    require(texture_amplitude >= 0 && texture_amplitude <= 0.45, ErrorKind::Config,
            "corpus: texture_amplitude must lie in [0, 0.45]");
}

double Texture::sample(int channel, double x, double y) const {
    double v = base[channel];
    for (const auto& c : components) {
        v += c.amplitude[channel] * std::cos(kTwoPi * (c.fx * x + c.fy * y) + c.phase);
    }
    return v;
}

double ShapeSpec::coverage(double x, double y, int i) const {
    double px = x - (cx + vx * i);
    double py = y - (cy + vy * i);
    double sd = 0.0;
    if (kind == Kind::Rect) {
        sd = std::max(std::abs(px) - half_w, std::abs(py) - half_h);
    } else {
        sd = std::hypot(px, py) - half_w;
    }
    return std::clamp(0.5 - sd, 0.0, 1.0);
}

Scene sample_scene(uint64_t seed, const CorpusConfig& cfg) {
    cfg.validate();
    Rng rng(seed * 0x9E3779B97F4A7C15ull + 0x1234567ull);
    Scene scene;
    for (auto& b : scene.texture.base) {
        b = rng.uniform(0.35, 0.65);
    }
    int n = std::max(cfg.texture_components, 0);
    std::vector<double> weights(n);
    double total = 0.0;
    for (auto& w : weights) {
        w = rng.uniform(0.2, 1.0);
        total += w;
    }
    for (int k = 0; k < n; ++k) {
        TextureComponent comp;
        double cycles = rng.uniform(0.5, std::max(cfg.texture_max_cycles, 0.5));
        double angle = rng.uniform(0.0, kTwoPi);
        comp.fx = cycles * std::cos(angle) / cfg.width;
        comp.fy = cycles * std::sin(angle) / cfg.width;
        comp.phase = rng.uniform(0.0, kTwoPi);
        for (auto& a : comp.amplitude) {
            // per-channel amplitudes sum to at most texture_amplitude, keeping values in [0,1]
            a = cfg.texture_amplitude * weights[k] / total * rng.uniform(-1.0, 1.0);
        }
        scene.texture.components.push_back(comp);
    }
    scene.bg_vx = static_cast<int>(rng.integer(-cfg.background_speed, cfg.background_speed));
    scene.bg_vy = static_cast<int>(rng.integer(-cfg.background_speed, cfg.background_speed));

    for (int k = 0; k < cfg.shapes; ++k) {
        ShapeSpec s;
        s.kind = rng.uniform() < 0.5 ? ShapeSpec::Kind::Rect : ShapeSpec::Kind::Disk;
        double scale = std::min(cfg.width, cfg.height) / 64.0;
        s.half_w = rng.uniform(4.0, 10.0) * scale;
        s.half_h = s.kind == ShapeSpec::Kind::Rect ? rng.uniform(4.0, 10.0) * scale : s.half_w;
        s.cx = rng.uniform(0.2, 0.8) * (cfg.width - 1);
        s.cy = rng.uniform(0.2, 0.8) * (cfg.height - 1);
        s.vx = static_cast<int>(rng.integer(-cfg.max_shape_speed, cfg.max_shape_speed));
        s.vy = static_cast<int>(rng.integer(-cfg.max_shape_speed, cfg.max_shape_speed));
        for (auto& c : s.color) {
            c = rng.uniform(0.05, 0.95);
        }
        scene.shapes.push_back(s);
    }
    return scene;
}

std::pair<VideoClip, GroundTruth> render_scene(const Scene& scene, const CorpusConfig& cfg) {
    cfg.validate();
    const int S = cfg.frames;
    const int H = cfg.height;
    const int W = cfg.width;
    auto opts = torch::TensorOptions().dtype(torch::kFloat32);
    auto frames = torch::empty({S, 3, H, W}, opts);
    auto background = torch::empty({S, 3, H, W}, opts);
    auto flows = torch::zeros({S - 1, 2, H, W}, opts);
    auto flows_bwd = torch::zeros({S - 1, 2, H, W}, opts);
    auto visibility = torch::zeros({S - 1, 1, H, W}, opts);
    auto fa = frames.accessor<float, 4>();
    auto ba = background.accessor<float, 4>();
    auto flow_a = flows.accessor<float, 4>();
    auto bwd_a = flows_bwd.accessor<float, 4>();
    auto vis_a = visibility.accessor<float, 4>();

    for (int i = 0; i < S; ++i) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                // the texture is fixed to the world; the camera pan moves it by bg_v per frame
                double tx = x - scene.bg_vx * i;
                double ty = y - scene.bg_vy * i;
                std::array<double, 3> rgb{};
                for (int c = 0; c < 3; ++c) {
                    rgb[c] = std::clamp(scene.texture.sample(c, tx, ty), 0.0, 1.0);
                    ba[i][c][y][x] = static_cast<float>(rgb[c]);
                }
                for (const auto& shape : scene.shapes) {
                    double a = shape.coverage(x, y, i);
                    for (int c = 0; c < 3; ++c) {
                        rgb[c] = (1.0 - a) * rgb[c] + a * shape.color[c];
                    }
                }
                for (int c = 0; c < 3; ++c) {
                    fa[i][c][y][x] = static_cast<float>(rgb[c]);
                }
            }
        }
    }

    for (int i = 0; i + 1 < S; ++i) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                PixelLayer here = layer_at(scene, x, y, i);
                auto [vx, vy] = layer_velocity(scene, here.top);
                flow_a[i][0][y][x] = static_cast<float>(vx);
                flow_a[i][1][y][x] = static_cast<float>(vy);
                int nx = x + vx;
                int ny = y + vy;
                bool visible = here.pure && nx >= 0 && nx < W && ny >= 0 && ny < H;
                if (visible) {
                    PixelLayer there = layer_at(scene, nx, ny, i + 1);
                    visible = there.pure && there.top == here.top;
                }
                vis_a[i][0][y][x] = visible ? 1.0f : 0.0f;

                PixelLayer next = layer_at(scene, x, y, i + 1);
                auto [bx, by] = layer_velocity(scene, next.top);
                bwd_a[i][0][y][x] = static_cast<float>(-bx);
                bwd_a[i][1][y][x] = static_cast<float>(-by);
            }
        }
    }

    VideoClip clip{frames, cfg.fps};
    GroundTruth gt{background, flows, flows_bwd, visibility};
    return {clip, gt};
}

std::pair<VideoClip, GroundTruth> gen_clip(uint64_t seed, const CorpusConfig& cfg) {
    return render_scene(sample_scene(seed, cfg), cfg);
}

void MaskConfig::validate() const {
    require(min_coverage > 0.0 && max_coverage <= 0.9 && min_coverage <= max_coverage, ErrorKind::Config,
            "mask: coverage bounds must satisfy 0 < min <= max <= 0.9");
    require(max_step >= 0.0, ErrorKind::Config, "mask: max_step must be >= 0");
    require(deform >= 0.0 && deform < 0.5, ErrorKind::Config, "mask: deform must lie in [0, 0.5)");
}

double coverage(const torch::Tensor& mask) { return mask.to(torch::kFloat64).mean().item<double>(); }

MaskSequence gen_stationary_mask(uint64_t seed, int frames, int height, int width, const MaskConfig& cfg) {
    cfg.validate();
    require(frames >= 1 && height > 0 && width > 0, ErrorKind::Config, "mask: bad dimensions");
    Rng rng(seed * 0xD1B54A32D192ED03ull + 77);
    const double area = static_cast<double>(height) * width;
    const double target = rng.uniform(cfg.min_coverage, cfg.max_coverage) * area;
    const double min_area = cfg.min_coverage * area;
    const double max_area = cfg.max_coverage * area;
    auto plane = torch::zeros({height, width}, torch::kFloat32);
    auto pa = plane.accessor<float, 2>();

    if (cfg.family == StrokeFamily::Rectangle) {
        double aspect = std::exp(rng.uniform(-std::log(2.0), std::log(2.0)));
        int best_w = 1;
        int best_h = 1;
        double best_err = 1e300;
        // choose the integer rectangle nearest the target area, preferring ones inside the bounds
        for (int w = 1; w <= width; ++w) {
            int h = std::clamp(static_cast<int>(std::lround(target / w)), 1, height);
            double a = static_cast<double>(w) * h;
            double err = std::abs(a - target) + 4.0 * std::abs(std::log(static_cast<double>(w) / h / aspect));
            if (a < min_area || a > max_area) {
                err += area;
            }
            if (err < best_err) {
                best_err = err;
                best_w = w;
                best_h = h;
            }
        }
        int x0 = static_cast<int>(rng.integer(0, width - best_w));
        int y0 = static_cast<int>(rng.integer(0, height - best_h));
        for (int y = y0; y < y0 + best_h; ++y) {
            for (int x = x0; x < x0 + best_w; ++x) {
                pa[y][x] = 1.0f;
            }
        }
    } else {
        int covered = 0;
        auto stamp = [&](double cx, double cy, double r) {
            std::vector<std::pair<int, int>> fresh;
            int r_ceil = static_cast<int>(std::ceil(r));
            for (int y = static_cast<int>(cy) - r_ceil; y <= static_cast<int>(cy) + r_ceil; ++y) {
                for (int x = static_cast<int>(cx) - r_ceil; x <= static_cast<int>(cx) + r_ceil; ++x) {
                    if (x >= 0 && x < width && y >= 0 && y < height && pa[y][x] == 0.0f &&
                        std::hypot(x - cx, y - cy) <= r) {
                        fresh.emplace_back(x, y);
                    }
                }
            }
            if (covered + static_cast<double>(fresh.size()) > max_area) {
                return false;
            }
            for (auto [x, y] : fresh) {
                pa[y][x] = 1.0f;
            }
            covered += static_cast<int>(fresh.size());
            return true;
        };
        int stalls = 0;
        while (covered < target && stalls < 64) {
            double x = rng.uniform(0, width - 1);
            double y = rng.uniform(0, height - 1);
            double r = rng.uniform(2.5, 6.0) * std::min(width, height) / 64.0;
            double heading = rng.uniform(0, kTwoPi);
            int length = static_cast<int>(rng.integer(6, 20));
            bool progressed = false;
            for (int k = 0; k < length && covered < target; ++k) {
                double radius = r;
                while (radius >= 0.0 && !stamp(x, y, radius)) {
                    radius -= 1.0;  // shrink the brush rather than overshoot max coverage
                }
                progressed = progressed || radius >= 0.0;
                heading += rng.uniform(-0.6, 0.6);
                x = std::clamp(x + 0.8 * r * std::cos(heading), 0.0, width - 1.0);
                y = std::clamp(y + 0.8 * r * std::sin(heading), 0.0, height - 1.0);
            }
            stalls = progressed ? 0 : stalls + 1;
        }
    }
    return MaskSequence{plane.expand({frames, 1, height, width}).contiguous()};
}

MaskSequence render_blob(const BlobTrack& track, int frames, int height, int width) {
    auto masks = torch::zeros({frames, 1, height, width}, torch::kFloat32);
    auto ma = masks.accessor<float, 4>();
    double extent = track.radius * (1.0 + std::abs(track.harmonic_amp[0]) + std::abs(track.harmonic_amp[1])) + 1.0;
    double lo_x = std::min(extent, (width - 1) / 2.0);
    double hi_x = std::max(width - 1 - extent, lo_x);
    double lo_y = std::min(extent, (height - 1) / 2.0);
    double hi_y = std::max(height - 1 - extent, lo_y);
    double cx = track.cx;
    double cy = track.cy;
    double vx = track.vx;
    double vy = track.vy;
    for (int i = 0; i < frames; ++i) {
        if (i > 0) {
            if (cx + vx < lo_x || cx + vx > hi_x) {
                vx = -vx;
            }
            if (cy + vy < lo_y || cy + vy > hi_y) {
                vy = -vy;
            }
            cx += vx;
            cy += vy;
        }
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double dx = x - cx;
                double dy = y - cy;
                double theta = std::atan2(dy, dx);
                double r = track.radius;
                for (int k = 0; k < 2; ++k) {
                    r += track.radius * track.harmonic_amp[k] *
                         std::cos((k + 2) * theta + track.harmonic_phase[k] + track.phase_speed * i);
                }
                if (std::hypot(dx, dy) < r) {
                    ma[i][0][y][x] = 1.0f;
                }
            }
        }
    }
    return MaskSequence{masks};
}

MaskSequence gen_object_mask(uint64_t seed, int frames, int height, int width, const MaskConfig& cfg) {
    cfg.validate();
    require(frames >= 1 && height > 0 && width > 0, ErrorKind::Config, "mask: bad dimensions");
    Rng rng(seed * 0xA0761D6478BD642Full + 991);
    const double target = rng.uniform(cfg.min_coverage, cfg.max_coverage) * height * width;
    BlobTrack track;
    track.radius = std::sqrt(target / std::numbers::pi);
    for (int k = 0; k < 2; ++k) {
        track.harmonic_amp[k] = rng.uniform(0.0, cfg.deform);
        track.harmonic_phase[k] = rng.uniform(0.0, kTwoPi);
    }
    double extent = track.radius * (1.0 + track.harmonic_amp[0] + track.harmonic_amp[1]) + 1.0;
    track.cx = rng.uniform(std::min(extent, width / 2.0), std::max(width - 1 - extent, width / 2.0));
    track.cy = rng.uniform(std::min(extent, height / 2.0), std::max(height - 1 - extent, height / 2.0));
    double speed = rng.uniform(0.5, 1.0) * cfg.max_step;
    double heading = rng.uniform(0.0, kTwoPi);
    track.vx = speed * std::cos(heading);
    track.vy = speed * std::sin(heading);
    track.phase_speed = cfg.max_step > 0.0 ? rng.uniform(-0.3, 0.3) : 0.0;
    return render_blob(track, frames, height, width);
}

MaskSequence first_frame_mask(int frames, int height, int width) {
    auto m = torch::ones({frames, 1, height, width}, torch::kFloat32);
    m[0].zero_();
    return MaskSequence{m};
}

}  // namespace fffvdi::datagen
