#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "knowexpert/common.hpp"
#include "knowexpert/optim.hpp"
#include "knowexpert/routing.hpp"
#include "knowexpert/vocab.hpp"

namespace knowexpert {

struct EncoderLayout {
    size_t w1, b1, w_mu, b_mu, w_lv, b_lv;
    size_t total;

    static EncoderLayout make(int in_dim, int hidden, int n_topics);
};

// Variational topic model over bag-of-words input: a softplus MLP encoder maps
// counts (plus an optional context vector) to a logistic-normal posterior, and
// the document distribution is softmax(theta . beta). The prior is the Laplace
// approximation of a symmetric Dirichlet(1/L).
struct ProdLda {
    int n_topics = 4;
    int hidden = 100;
    int context_dim = 0;
    Vocab vocab;  // BoW vocabulary

    EncoderLayout enc;
    size_t beta_off = 0;
    std::vector<double> params;
    double prior_var = 0.0;  // diagonal prior variance, shared across topics

    std::vector<double> elbo_per_epoch;  // mean training ELBO trajectory

    int in_dim() const { return vocab.size() + context_dim; }
    const double* beta() const { return params.data() + beta_off; }

    static ProdLda init(const Vocab& bow_vocab, int n_topics, int hidden,
                        int context_dim, uint64_t seed);
};

// Same encoder architecture with its own parameters, fed history-only features.
struct InferenceEncoder {
    int n_topics = 0;
    int hidden = 0;
    int context_dim = 0;
    int input_vocab = 0;
    EncoderLayout enc;
    std::vector<double> params;
    std::vector<double> mse_per_epoch;

    int in_dim() const { return input_vocab + context_dim; }
};

ProdLda train_topic_model(const std::vector<Bow>& bows,
                          const std::vector<std::vector<double>>* context,
                          const Vocab& bow_vocab, int n_topics, const TrainConfig& cfg,
                          int hidden = 100);

// w = softmax of the posterior mean; an all-zero BoW falls back to uniform.
TopicWeights infer_topics(const ProdLda& model, const Bow& bow,
                          const std::vector<double>* context = nullptr);
TopicWeights infer_topics(const InferenceEncoder& encoder, const Bow& bow,
                          const std::vector<double>* context = nullptr);

// Per-cluster words with the largest beta weight; k is clipped to the
// content vocabulary size.
std::vector<std::vector<std::string>> top_words(const ProdLda& model, int k);

// Initialised from the (frozen) topic model encoder, then fit with MSE between
// its posterior mean on the history and the topic model's mean on the full text.
InferenceEncoder train_inference_encoder(
    const ProdLda& model, const std::vector<std::pair<Bow, Bow>>& pairs,
    const TrainConfig& cfg);

double encoder_pair_mse(const ProdLda& model, const InferenceEncoder& encoder,
                        const std::vector<std::pair<Bow, Bow>>& pairs);

// ELBO for one document under fixed reparameterization noise; when grad is
// non-null, d(elbo)/d(params) is accumulated into it. Training maximises this.
double elbo_with_noise(const ProdLda& model, const std::vector<double>& x_dense,
                       const std::vector<double>* context, const std::vector<double>& eps,
                       std::vector<double>* grad);

// Topic-side artifacts bundled for routing and checkpointing.
struct TopicArtifacts {
    ProdLda model;
    std::optional<InferenceEncoder> encoder;

    TopicWeights route_history(const std::string& history_text) const;
};

void save_topics(const TopicArtifacts& t, const std::string& path);
TopicArtifacts load_topics(const std::string& path);

}  // namespace knowexpert
