#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace knowexpert {

struct TrainConfig {
    std::string stage;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 50;
    int patience = 5;
    int batch_size = 8;
    uint64_t seed = 0;
    bool linear_decay = true;   // lr factor decays linearly to zero
    double clip_norm = 1.0;     // global-norm clipping; <= 0 disables

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
        if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    }
};

struct AdamState {
    std::vector<double> m, v;
    long step = 0;

    explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Returns 1 at step 0 and 0 at step total, clamped to [0, 1].
double linear_schedule(long step, long total);

// Standard bias-corrected Adam; the learning rate is cfg.lr * schedule_factor.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const TrainConfig& cfg, double schedule_factor);

// Scales grads in place so the global L2 norm is at most max_norm.
// Returns the pre-clip norm. A span list lets callers clip a parameter tree.
double clip_global_norm(std::span<std::span<double>> grads, double max_norm);

}  // namespace knowexpert
