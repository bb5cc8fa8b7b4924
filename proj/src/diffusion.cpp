#include "fffvdi/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace fffvdi::diffusion {
namespace {

void check_finite(const torch::Tensor& eps, int t) {
    if (!torch::isfinite(eps).all().item<bool>()) {
        throw numeric_error("diffusion: non-finite model output at t=" + std::to_string(t));
    }
}

// One deterministic DDIM move of x from timestep `from` to `to` given eps.
torch::Tensor ddim_move(const torch::Tensor& x, const torch::Tensor& eps, double abar_from, double abar_to) {
    auto x0 = (x - std::sqrt(1.0 - abar_from) * eps) / std::sqrt(abar_from);
    return std::sqrt(abar_to) * x0 + std::sqrt(1.0 - abar_to) * eps;
}

}  // namespace

NoiseSchedule::NoiseSchedule(ScheduleConfig config) : config_(config) {
    require(config_.steps >= 1, ErrorKind::Config, "schedule: T must be >= 1");
    require(config_.beta_start > 0 && config_.beta_end < 1 && config_.beta_start <= config_.beta_end, ErrorKind::Config,
            "schedule: need 0 < beta_start <= beta_end < 1");
    const int T = config_.steps;
    betas_.resize(T + 1, 0.0);
    alpha_bars_.resize(T + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        betas_[t] = config_.beta_start + frac * (config_.beta_end - config_.beta_start);
        alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - betas_[t]);
    }
}

double NoiseSchedule::beta(int t) const {
    require(t >= 1 && t <= T(), ErrorKind::Config, "schedule: beta index " + std::to_string(t) + " out of range");
    return betas_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
    require(t >= 0 && t <= T(), ErrorKind::Config, "schedule: timestep " + std::to_string(t) + " out of range");
    return alpha_bars_[t];
}

std::vector<int> NoiseSchedule::ddim_timesteps(int steps) const {
    require(steps >= 1 && steps <= T(), ErrorKind::Config,
            "ddim: steps must lie in [1, " + std::to_string(T()) + "], got " + std::to_string(steps));
    std::vector<int> ts;
    for (int k = 1; k <= steps; ++k) {
        ts.push_back(static_cast<int>(std::lround(static_cast<double>(k) * T() / steps)));
    }
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    return ts;
}

NoisyLatent add_noise(const LatentClip& clean, int t, const torch::Tensor& eps, const NoiseSchedule& schedule) {
    require(eps.sizes() == clean.codes.sizes(), ErrorKind::Data,
            "add_noise: eps " + shape_str(eps) + " does not match latent " + shape_str(clean.codes));
    double abar = schedule.alpha_bar(t);
    return NoisyLatent{std::sqrt(abar) * clean.codes + std::sqrt(1.0 - abar) * eps, t, Provenance::Random};
}

torch::Tensor add_noise(const torch::Tensor& clean, const std::vector<int>& t, const torch::Tensor& eps,
                        const NoiseSchedule& schedule) {
    require(eps.sizes() == clean.sizes(), ErrorKind::Data, "add_noise: eps/latent shape mismatch");
    require(static_cast<int64_t>(t.size()) == clean.size(0), ErrorKind::Data, "add_noise: one timestep per row");
    std::vector<double> a(t.size());
    std::vector<double> s(t.size());
    for (size_t i = 0; i < t.size(); ++i) {
        double abar = schedule.alpha_bar(t[i]);
        a[i] = std::sqrt(abar);
        s[i] = std::sqrt(1.0 - abar);
    }
    std::vector<int64_t> view(clean.dim(), 1);
    view[0] = clean.size(0);
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto at = torch::tensor(a, opts).to(clean.scalar_type()).view(view);
    auto st = torch::tensor(s, opts).to(clean.scalar_type()).view(view);
    return at * clean + st * eps;
}

torch::Tensor loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pred) {
    require(eps_true.sizes() == eps_pred.sizes(), ErrorKind::Data,
            "loss: shape mismatch " + shape_str(eps_true) + " vs " + shape_str(eps_pred));
    return (eps_true - eps_pred).pow(2).mean();
}

LatentClip ddim_sample(const EpsModel& model, const NoisyLatent& start, int steps, const NoiseSchedule& schedule,
                       const StateProjection& project) {
    require(steps >= 1, ErrorKind::Config, "ddim_sample: steps must be >= 1");
    require(start.t >= 1 && start.t <= schedule.T(), ErrorKind::Config,
            "ddim_sample: start timestep " + std::to_string(start.t) + " out of range");
    std::vector<int> seq;
    for (int t : schedule.ddim_timesteps(steps)) {
        if (t < start.t) {
            seq.push_back(t);
        }
    }
    seq.push_back(start.t);

    torch::NoGradGuard no_grad;
    auto x = start.codes;
    for (int k = static_cast<int>(seq.size()) - 1; k >= 0; --k) {
        int t = seq[k];
        int t_prev = k > 0 ? seq[k - 1] : 0;
        if (project) {
            x = project(x);
        }
        auto eps = model(x, t);
        check_finite(eps, t);
        x = ddim_move(x, eps, schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
    }
    if (project) {
        x = project(x);
    }
    return LatentClip{x, 1.0};
}

NoisyLatent ddim_invert(const EpsModel& model, const LatentClip& clean, int steps, const NoiseSchedule& schedule,
                        const StateProjection& project, int refinements) {
    if (steps == 0) {
        return NoisyLatent{clean.codes, 0, Provenance::Inverted};
    }
    require(refinements >= 0, ErrorKind::Config, "ddim_invert: refinements must be >= 0");
    torch::NoGradGuard no_grad;
    auto x = clean.codes;
    int t_prev = 0;
    for (int t : schedule.ddim_timesteps(steps)) {
        if (project) {
            x = project(x);
        }
        const double from = schedule.alpha_bar(t_prev);
        const double to = schedule.alpha_bar(t);
        auto eps = model(x, t);
        check_finite(eps, t);
        auto next = ddim_move(x, eps, from, to);
        for (int k = 0; k < refinements; ++k) {
            eps = model(project ? project(next) : next, t);
            check_finite(eps, t);
            next = ddim_move(x, eps, from, to);
        }
        x = next;
        t_prev = t;
    }
    return NoisyLatent{x, t_prev, Provenance::Inverted};
}

}  // namespace fffvdi::diffusion
