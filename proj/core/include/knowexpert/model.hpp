#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knowexpert/common.hpp"
#include "knowexpert/dialog.hpp"
#include "knowexpert/routing.hpp"
#include "knowexpert/vocab.hpp"

namespace knowexpert {

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int h = 128;          // hidden dim
    int d = 64;           // adapter bottleneck
    int n_experts = 4;    // L
    int lm_vocab = 0;
    int max_seq_len = 256;
    int n_type_ids = 2;

    void validate() const;
};

// Offsets into the flat backbone parameter buffer.
struct BackboneLayout {
    struct Block {
        size_t ln1_g, ln1_b;
        size_t wq, bq, wk, bk, wv, bv, wo, bo;
        size_t ln2_g, ln2_b;
        size_t w_fc1, b_fc1, w_fc2, b_fc2;
    };
    size_t wte, wpe, wtt;
    std::vector<Block> blocks;
    size_t lnf_g, lnf_b, w_lm;
    size_t total;

    static BackboneLayout make(const ModelConfig& cfg);
};

// Per-expert adapter parameters, one block per transformer layer.
struct ExpertLayout {
    struct Block {
        size_t ln_g, ln_b, w_hd, w_dh;
    };
    std::vector<Block> blocks;
    size_t total;

    static ExpertLayout make(const ModelConfig& cfg);
};

enum class RouteMode { Weighted, OneHot, NoExpert };
enum class Freeze { None, Backbone, Experts };

struct Model {
    ModelConfig cfg;
    BackboneLayout bl;
    ExpertLayout el;
    std::vector<double> backbone;
    std::vector<std::vector<double>> experts;

    // Random small-normal backbone; experts start as exact identities
    // (w_dh zero), so an untrained expert never perturbs the backbone.
    static Model init(const ModelConfig& cfg, uint64_t seed);

    std::span<double> expert_params(int l) { return experts.at(static_cast<size_t>(l)); }
    std::span<const double> expert_params(int l) const { return experts.at(static_cast<size_t>(l)); }
};

struct Gradients {
    std::vector<double> backbone;
    std::vector<std::vector<double>> experts;

    static Gradients zeros_like(const Model& m);
    void check_finite() const;
};

// A(H) = ReLU(LN(H) W_hd) W_dh + H, using expert l's adapter at the given layer.
Mat adapter_apply(const Model& m, int expert, int layer, const Mat& H);

// Weighted sum of expert outputs; zero weights are skipped so a one-hot
// vector reproduces the single expert output bit-exactly.
Mat mix_experts(const TopicWeights& w, const std::vector<Mat>& expert_outputs);

// Causal decoder forward; logits for every position.
Mat forward(const Model& m, const TokenSeq& seq, const TopicWeights& w, RouteMode mode);

// Logits at the final position only (generation path).
std::vector<double> next_token_logits(const Model& m, const TokenSeq& seq,
                                      const TopicWeights& w, RouteMode mode);

// Mean over masked rows of -log softmax(logits[t])[targets[t]].
// targets/mask may be shorter than logits.rows; extra rows are ignored.
double loss_nll(const Mat& logits, const std::vector<int>& targets,
                const std::vector<uint8_t>& mask);

// Next-token targets/mask aligned with logits rows (row t predicts token t+1).
void shift_targets(const SerializedSample& s, std::vector<int>& targets,
                   std::vector<uint8_t>& mask);

struct TrainItem {
    const SerializedSample* sample;
    TopicWeights w;
};

// Accumulates gradients of the mean per-sample loss into grads (which must be
// zeros_like the model) and returns that loss. Frozen blocks stay zero.
double backward(const Model& m, std::span<const TrainItem> batch, RouteMode mode,
                Freeze freeze, Gradients& grads);

// Convenience for finite-difference checks and validation loops.
double batch_loss(const Model& m, std::span<const TrainItem> batch, RouteMode mode);

uint64_t backbone_checksum(const Model& m);
uint64_t expert_checksum(const Model& m, int l);
uint64_t experts_checksum(const Model& m);

// Versioned binary checkpoint; save -> load round trips bit-exactly. Expert
// parameters live in their own delimited sections.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

// Copies the expert sections of src into dst (layouts must match).
void replace_experts(Model& dst, const Model& src);

}  // namespace knowexpert
