#pragma once

#include "fffvdi/types.hpp"

#include <functional>
#include <vector>

namespace fffvdi::diffusion {

struct ScheduleConfig {
    int steps = 1000;  // T
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

/// Linear-beta DDPM schedule. Timesteps run 1..T; alpha_bar(0) is defined as 1
/// so t = 0 denotes a clean latent.
class NoiseSchedule {
public:
    explicit NoiseSchedule(ScheduleConfig config = {});

    int T() const { return config_.steps; }
    const ScheduleConfig& config() const { return config_; }
    double beta(int t) const;
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const;

    /// Evenly strided ascending sub-schedule t_1 < ... < t_n = T.
    std::vector<int> ddim_timesteps(int steps) const;

private:
    ScheduleConfig config_;
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;  // index t, alpha_bars_[0] = 1
};

/// Z_t = sqrt(abar_t) Z_0 + sqrt(1 - abar_t) eps.
NoisyLatent add_noise(const LatentClip& clean, int t, const torch::Tensor& eps, const NoiseSchedule& schedule);

/// Batched forward process: `clean` and `eps` are [B, ...] and `t` holds one
/// timestep per batch row.
torch::Tensor add_noise(const torch::Tensor& clean, const std::vector<int>& t, const torch::Tensor& eps,
                        const NoiseSchedule& schedule);

/// Mean squared error over every element.
torch::Tensor loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pred);

/// eps-prediction network evaluated on a noisy latent at timestep t. Any
/// conditioning is bound into the closure.
using EpsModel = std::function<torch::Tensor(const torch::Tensor& x_t, int t)>;

/// Optional map applied to the sampler state before every model evaluation
/// (and to the final result), e.g. to keep propagated cells tied to their
/// sources.
using StateProjection = std::function<torch::Tensor(const torch::Tensor& x)>;

/// Deterministic (eta = 0) DDIM from `start.t` down to 0.
LatentClip ddim_sample(const EpsModel& model, const NoisyLatent& start, int steps, const NoiseSchedule& schedule,
                       const StateProjection& project = {});

/// DDIM recursion run forward from t = 0 to T. steps == 0 returns the input.
/// Each step starts from the explicit update (model queried at the
/// destination timestep with the current latent) and is then refined as a
/// fixed point x_t = move(x_prev, eps(x_t, t)), so that ddim_sample undoes it.
NoisyLatent ddim_invert(const EpsModel& model, const LatentClip& clean, int steps, const NoiseSchedule& schedule,
                        const StateProjection& project = {}, int refinements = 3);

}  // namespace fffvdi::diffusion
