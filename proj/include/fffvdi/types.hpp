#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fffvdi {

/// Failure category. The CLI maps each kind to its exit code.
enum class ErrorKind { Config, Data, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error config_error(const std::string& what) { return Error(ErrorKind::Config, what); }
inline Error data_error(const std::string& what) { return Error(ErrorKind::Data, what); }
inline Error numeric_error(const std::string& what) { return Error(ErrorKind::Numeric, what); }

/// S frames stored channels-first as [S, 3, H, W], float, values in [0, 1].
struct VideoClip {
    torch::Tensor frames;
    int fps = 8;

    int64_t num_frames() const { return frames.size(0); }
    int64_t height() const { return frames.size(2); }
    int64_t width() const { return frames.size(3); }
};

/// [S, 1, H, W] with values exactly 0 or 1; 1 marks the region to inpaint.
struct MaskSequence {
    torch::Tensor masks;

    int64_t num_frames() const { return masks.size(0); }
    int64_t height() const { return masks.size(2); }
    int64_t width() const { return masks.size(3); }
};

/// Per-frame latent codes [S, C, h, w], already multiplied by `scale`.
struct LatentClip {
    torch::Tensor codes;
    double scale = 1.0;
};

enum class Provenance { Clean, Random, Inverted };

/// A latent clip tagged with its diffusion timestep (0 = clean).
struct NoisyLatent {
    torch::Tensor codes;
    int t = 0;
    Provenance provenance = Provenance::Random;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) {
        throw Error(kind, what);
    }
}

inline std::string shape_str(const torch::Tensor& t) {
    std::string s = "[";
    for (int64_t i = 0; i < t.dim(); ++i) {
        s += (i ? "," : "") + std::to_string(t.size(i));
    }
    return s + "]";
}

}  // namespace fffvdi
