#include "knowexpert/optim.hpp"

#include <cmath>

namespace knowexpert {

double linear_schedule(long step, long total) {
    if (total <= 0) return 1.0;
    const double f = 1.0 - static_cast<double>(step) / static_cast<double>(total);
    return f < 0.0 ? 0.0 : (f > 1.0 ? 1.0 : f);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const TrainConfig& cfg, double schedule_factor) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient");

    state.step += 1;
    const double lr = cfg.lr * schedule_factor;
    const double b1c = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double b2c = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / b1c;
        const double vhat = state.v[i] / b2c;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
}

double clip_global_norm(std::span<std::span<double>> grads, double max_norm) {
    double sq = 0.0;
    for (auto g : grads)
        for (double x : g) sq += x * x;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto g : grads)
            for (double& x : g) x *= s;
    }
    return norm;
}

}  // namespace knowexpert
