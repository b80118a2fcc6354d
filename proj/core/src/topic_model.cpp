#include "knowexpert/topic_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace knowexpert {

namespace {

constexpr uint32_t kTopicMagic = 0x4B58544D;  // "KXTM"
constexpr uint32_t kTopicVersion = 1;

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct EncoderOut {
    std::vector<double> h_pre, h, mu, lv;
};

void encoder_forward(const double* p, const EncoderLayout& lay, const double* x,
                     int in, int hidden, int L, EncoderOut& out) {
    out.h_pre.assign(static_cast<size_t>(hidden), 0.0);
    matmul(x, p + lay.w1, out.h_pre.data(), 1, in, hidden);
    for (int j = 0; j < hidden; ++j) out.h_pre[static_cast<size_t>(j)] += p[lay.b1 + static_cast<size_t>(j)];
    out.h.resize(static_cast<size_t>(hidden));
    for (int j = 0; j < hidden; ++j) out.h[static_cast<size_t>(j)] = softplus(out.h_pre[static_cast<size_t>(j)]);

    out.mu.assign(static_cast<size_t>(L), 0.0);
    out.lv.assign(static_cast<size_t>(L), 0.0);
    matmul(out.h.data(), p + lay.w_mu, out.mu.data(), 1, hidden, L);
    matmul(out.h.data(), p + lay.w_lv, out.lv.data(), 1, hidden, L);
    for (int l = 0; l < L; ++l) {
        out.mu[static_cast<size_t>(l)] += p[lay.b_mu + static_cast<size_t>(l)];
        out.lv[static_cast<size_t>(l)] += p[lay.b_lv + static_cast<size_t>(l)];
    }
}

// Accumulates encoder parameter gradients given d_mu / d_lv (either may be null).
void encoder_backward(const double* p, const EncoderLayout& lay, const double* x,
                      const EncoderOut& fw, const double* d_mu, const double* d_lv,
                      int in, int hidden, int L, double* grad) {
    std::vector<double> dh(static_cast<size_t>(hidden), 0.0);
    if (d_mu)
        matmul_backward(fw.h.data(), p + lay.w_mu, d_mu, dh.data(), grad + lay.w_mu,
                        grad + lay.b_mu, 1, hidden, L);
    if (d_lv)
        matmul_backward(fw.h.data(), p + lay.w_lv, d_lv, dh.data(), grad + lay.w_lv,
                        grad + lay.b_lv, 1, hidden, L);
    for (int j = 0; j < hidden; ++j) dh[static_cast<size_t>(j)] *= sigmoid(fw.h_pre[static_cast<size_t>(j)]);
    matmul_backward(x, p + lay.w1, dh.data(), nullptr, grad + lay.w1, grad + lay.b1, 1,
                    in, hidden);
}

std::vector<double> dense_input(const Bow& bow, int vocab_size,
                                const std::vector<double>* context, int context_dim) {
    std::vector<double> x = bow_to_dense(bow, vocab_size);
    if (context_dim > 0) {
        if (!context || static_cast<int>(context->size()) != context_dim)
            throw std::invalid_argument("topic model: context vector size mismatch");
        x.insert(x.end(), context->begin(), context->end());
    }
    return x;
}

}  // namespace

EncoderLayout EncoderLayout::make(int in_dim, int hidden, int n_topics) {
    EncoderLayout lay;
    size_t c = 0;
    auto take = [&c](size_t count) {
        const size_t at = c;
        c += count;
        return at;
    };
    lay.w1 = take(static_cast<size_t>(in_dim) * hidden);
    lay.b1 = take(static_cast<size_t>(hidden));
    lay.w_mu = take(static_cast<size_t>(hidden) * n_topics);
    lay.b_mu = take(static_cast<size_t>(n_topics));
    lay.w_lv = take(static_cast<size_t>(hidden) * n_topics);
    lay.b_lv = take(static_cast<size_t>(n_topics));
    lay.total = c;
    return lay;
}

ProdLda ProdLda::init(const Vocab& bow_vocab, int n_topics, int hidden, int context_dim,
                      uint64_t seed) {
    if (n_topics < 2) throw std::invalid_argument("topic model: L must be >= 2");
    if (hidden < 1) throw std::invalid_argument("topic model: hidden must be >= 1");
    ProdLda m;
    m.n_topics = n_topics;
    m.hidden = hidden;
    m.context_dim = context_dim;
    m.vocab = bow_vocab;
    m.enc = EncoderLayout::make(m.in_dim(), hidden, n_topics);
    m.beta_off = m.enc.total;
    m.params.assign(m.enc.total + static_cast<size_t>(n_topics) * m.vocab.size(), 0.0);

    // Laplace approximation of symmetric Dirichlet(alpha), alpha = 1/L:
    // mu0 = 0, var0 = (1/alpha)(1 - 2/L) + L/(alpha L^2) = L - 1.
    m.prior_var = static_cast<double>(n_topics) - 1.0;

    Rng rng(seed);
    const double std = 0.02;
    for (double& v : m.params) v = std * rng_normal(rng);
    // biases start at zero
    const auto zero = [&](size_t off, size_t count) {
        std::fill(m.params.begin() + static_cast<long>(off),
                  m.params.begin() + static_cast<long>(off + count), 0.0);
    };
    zero(m.enc.b1, static_cast<size_t>(hidden));
    zero(m.enc.b_mu, static_cast<size_t>(n_topics));
    zero(m.enc.b_lv, static_cast<size_t>(n_topics));
    return m;
}

double elbo_with_noise(const ProdLda& m, const std::vector<double>& x_dense,
                       const std::vector<double>* context, const std::vector<double>& eps,
                       std::vector<double>* grad) {
    const int L = m.n_topics;
    const int V = m.vocab.size();
    if (static_cast<int>(eps.size()) != L)
        throw std::invalid_argument("elbo_with_noise: eps size mismatch");

    std::vector<double> x = x_dense;
    if (m.context_dim > 0) {
        if (!context || static_cast<int>(context->size()) != m.context_dim)
            throw std::invalid_argument("elbo_with_noise: context size mismatch");
        x.insert(x.end(), context->begin(), context->end());
    }
    if (static_cast<int>(x.size()) != m.in_dim())
        throw std::invalid_argument("elbo_with_noise: input size mismatch");

    EncoderOut fw;
    encoder_forward(m.params.data(), m.enc, x.data(), m.in_dim(), m.hidden, L, fw);

    std::vector<double> sigma(static_cast<size_t>(L)), z(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        sigma[static_cast<size_t>(l)] = std::exp(0.5 * fw.lv[static_cast<size_t>(l)]);
        z[static_cast<size_t>(l)] = fw.mu[static_cast<size_t>(l)] +
                                    eps[static_cast<size_t>(l)] * sigma[static_cast<size_t>(l)];
    }
    std::vector<double> theta = z;
    softmax_inplace(theta.data(), L);

    const double* beta = m.beta();
    std::vector<double> eta(static_cast<size_t>(V), 0.0);
    for (int l = 0; l < L; ++l) {
        const double th = theta[static_cast<size_t>(l)];
        const double* br = beta + static_cast<size_t>(l) * V;
        for (int v = 0; v < V; ++v) eta[static_cast<size_t>(v)] += th * br[v];
    }
    const double lse = log_sum_exp(eta.data(), V);

    double recon = 0.0;
    double n_words = 0.0;
    for (int v = 0; v < V; ++v) {
        const double cv = x_dense[static_cast<size_t>(v)];
        if (cv == 0.0) continue;
        recon += cv * (eta[static_cast<size_t>(v)] - lse);
        n_words += cv;
    }

    double kl = 0.0;
    for (int l = 0; l < L; ++l) {
        const double mu = fw.mu[static_cast<size_t>(l)];
        const double lv = fw.lv[static_cast<size_t>(l)];
        kl += 0.5 * ((std::exp(lv) + mu * mu) / m.prior_var - 1.0 +
                     std::log(m.prior_var) - lv);
    }
    const double elbo = recon - kl;
    if (!grad) return elbo;

    // d(elbo)/d(eta_v) = x_v - n_words * softmax(eta)_v
    std::vector<double> d_eta(static_cast<size_t>(V));
    for (int v = 0; v < V; ++v)
        d_eta[static_cast<size_t>(v)] =
            x_dense[static_cast<size_t>(v)] - n_words * std::exp(eta[static_cast<size_t>(v)] - lse);

    double* g = grad->data();
    std::vector<double> d_theta(static_cast<size_t>(L), 0.0);
    for (int l = 0; l < L; ++l) {
        const double* br = beta + static_cast<size_t>(l) * V;
        double* gb = g + m.beta_off + static_cast<size_t>(l) * V;
        const double th = theta[static_cast<size_t>(l)];
        double acc = 0.0;
        for (int v = 0; v < V; ++v) {
            acc += d_eta[static_cast<size_t>(v)] * br[v];
            gb[v] += th * d_eta[static_cast<size_t>(v)];
        }
        d_theta[static_cast<size_t>(l)] = acc;
    }

    double dot = 0.0;
    for (int l = 0; l < L; ++l) dot += d_theta[static_cast<size_t>(l)] * theta[static_cast<size_t>(l)];
    std::vector<double> d_mu(static_cast<size_t>(L)), d_lv(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        const double dz = theta[static_cast<size_t>(l)] * (d_theta[static_cast<size_t>(l)] - dot);
        const double mu = fw.mu[static_cast<size_t>(l)];
        const double lv = fw.lv[static_cast<size_t>(l)];
        d_mu[static_cast<size_t>(l)] = dz - mu / m.prior_var;
        d_lv[static_cast<size_t>(l)] = dz * eps[static_cast<size_t>(l)] * 0.5 * sigma[static_cast<size_t>(l)] -
                                       0.5 * (std::exp(lv) / m.prior_var - 1.0);
    }
    encoder_backward(m.params.data(), m.enc, x.data(), fw, d_mu.data(), d_lv.data(),
                     m.in_dim(), m.hidden, L, g);
    return elbo;
}

ProdLda train_topic_model(const std::vector<Bow>& bows,
                          const std::vector<std::vector<double>>* context,
                          const Vocab& bow_vocab, int n_topics, const TrainConfig& cfg,
                          int hidden) {
    cfg.validate();
    if (context && context->size() != bows.size())
        throw std::invalid_argument("train_topic_model: context count mismatch");

    std::vector<size_t> usable;
    for (size_t i = 0; i < bows.size(); ++i) {
        if (bow_l1(bows[i]) == 0) {
            std::cerr << "warning: skipping all-zero BoW document " << i << "\n";
            continue;
        }
        usable.push_back(i);
    }
    if (static_cast<int>(usable.size()) < n_topics)
        throw std::runtime_error("train_topic_model: fewer usable documents than topics");

    const int context_dim = context && !context->empty()
                                ? static_cast<int>(context->front().size())
                                : 0;
    ProdLda model = ProdLda::init(bow_vocab, n_topics, hidden, context_dim, cfg.seed);
    const int L = n_topics;

    std::vector<std::vector<double>> dense(usable.size());
    for (size_t i = 0; i < usable.size(); ++i)
        dense[i] = bow_to_dense(bows[usable[i]], bow_vocab.size());

    Rng rng(cfg.seed + 0x9e3779b97f4a7c15ull);
    AdamState adam(model.params.size());
    std::vector<double> grad(model.params.size());
    std::vector<double> eps(static_cast<size_t>(L));
    std::vector<size_t> order(usable.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const long steps_per_epoch =
        static_cast<long>((order.size() + cfg.batch_size - 1) / cfg.batch_size);
    const long total_steps = steps_per_epoch * cfg.epochs;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // in-place Fisher-Yates keeps the shuffle reproducible
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = rng_below(rng, i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_elbo = 0.0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_elbo = 0.0;
            for (size_t b = at; b < end; ++b) {
                const size_t idx = order[b];
                for (int l = 0; l < L; ++l) eps[static_cast<size_t>(l)] = rng_normal(rng);
                const std::vector<double>* ctx =
                    context ? &(*context)[usable[idx]] : nullptr;
                batch_elbo += elbo_with_noise(model, dense[idx], ctx, eps, &grad);
            }
            const double inv = 1.0 / static_cast<double>(end - at);
            // gradient ascent on the ELBO == descent on -ELBO
            for (double& gv : grad) gv *= -inv;
            if (cfg.clip_norm > 0.0) {
                std::span<double> spans[] = {grad};
                clip_global_norm(spans, cfg.clip_norm);
            }
            adam_step(model.params, grad, adam, cfg,
                      cfg.linear_decay ? linear_schedule(step, total_steps) : 1.0);
            ++step;
            epoch_elbo += batch_elbo;
        }
        model.elbo_per_epoch.push_back(epoch_elbo / static_cast<double>(order.size()));
    }
    return model;
}

namespace {

TopicWeights weights_from_mu(const std::vector<double>& mu) {
    std::vector<double> w = mu;
    softmax_inplace(w.data(), static_cast<int>(w.size()));
    return TopicWeights(std::move(w));
}

}  // namespace

TopicWeights infer_topics(const ProdLda& m, const Bow& bow,
                          const std::vector<double>* context) {
    if (bow_l1(bow) == 0) {
        std::cerr << "warning: all-zero BoW at inference, routing uniformly\n";
        return TopicWeights::uniform(m.n_topics);
    }
    const auto x = dense_input(bow, m.vocab.size(), context, m.context_dim);
    EncoderOut fw;
    encoder_forward(m.params.data(), m.enc, x.data(), m.in_dim(), m.hidden, m.n_topics, fw);
    return weights_from_mu(fw.mu);
}

TopicWeights infer_topics(const InferenceEncoder& e, const Bow& bow,
                          const std::vector<double>* context) {
    if (bow_l1(bow) == 0) {
        std::cerr << "warning: all-zero BoW at inference, routing uniformly\n";
        return TopicWeights::uniform(e.n_topics);
    }
    const auto x = dense_input(bow, e.input_vocab, context, e.context_dim);
    EncoderOut fw;
    encoder_forward(e.params.data(), e.enc, x.data(), e.in_dim(), e.hidden, e.n_topics, fw);
    return weights_from_mu(fw.mu);
}

std::vector<std::vector<std::string>> top_words(const ProdLda& m, int k) {
    const int V = m.vocab.size();
    std::vector<int> content;
    for (int v = kNumSpecials; v < V; ++v) content.push_back(v);
    const int kk = std::min<int>(k, static_cast<int>(content.size()));

    std::vector<std::vector<std::string>> out(static_cast<size_t>(m.n_topics));
    for (int l = 0; l < m.n_topics; ++l) {
        const double* br = m.beta() + static_cast<size_t>(l) * V;
        std::vector<int> ids = content;
        std::stable_sort(ids.begin(), ids.end(),
                         [&](int a, int b) { return br[a] > br[b]; });
        for (int i = 0; i < kk; ++i)
            out[static_cast<size_t>(l)].push_back(m.vocab.word(ids[static_cast<size_t>(i)]));
    }
    return out;
}

double encoder_pair_mse(const ProdLda& model, const InferenceEncoder& encoder,
                        const std::vector<std::pair<Bow, Bow>>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("encoder_pair_mse: no pairs");
    const int L = model.n_topics;
    double total = 0.0;
    EncoderOut hist_fw, full_fw;
    for (const auto& [hist, full] : pairs) {
        const auto xh = dense_input(hist, encoder.input_vocab, nullptr, 0);
        const auto xf = dense_input(full, model.vocab.size(), nullptr, 0);
        encoder_forward(encoder.params.data(), encoder.enc, xh.data(), encoder.in_dim(),
                        encoder.hidden, L, hist_fw);
        encoder_forward(model.params.data(), model.enc, xf.data(), model.in_dim(),
                        model.hidden, L, full_fw);
        for (int l = 0; l < L; ++l) {
            const double diff = hist_fw.mu[static_cast<size_t>(l)] - full_fw.mu[static_cast<size_t>(l)];
            total += diff * diff / L;
        }
    }
    return total / static_cast<double>(pairs.size());
}

InferenceEncoder train_inference_encoder(const ProdLda& model,
                                         const std::vector<std::pair<Bow, Bow>>& pairs,
                                         const TrainConfig& cfg) {
    cfg.validate();
    if (pairs.empty()) throw std::invalid_argument("train_inference_encoder: no pairs");
    if (model.context_dim != 0)
        throw std::invalid_argument(
            "train_inference_encoder: context-conditioned topic models are not supported here");

    InferenceEncoder e;
    e.n_topics = model.n_topics;
    e.hidden = model.hidden;
    e.context_dim = 0;
    e.input_vocab = model.vocab.size();
    e.enc = model.enc;
    e.params.assign(model.params.begin(),
                    model.params.begin() + static_cast<long>(model.enc.total));

    // Frozen targets: posterior means of the topic model on the full text.
    const int L = model.n_topics;
    std::vector<std::vector<double>> targets(pairs.size());
    std::vector<std::vector<double>> hist_x(pairs.size());
    EncoderOut fw;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto xf = dense_input(pairs[i].second, model.vocab.size(), nullptr, 0);
        encoder_forward(model.params.data(), model.enc, xf.data(), model.in_dim(),
                        model.hidden, L, fw);
        targets[i] = fw.mu;
        hist_x[i] = dense_input(pairs[i].first, e.input_vocab, nullptr, 0);
    }

    Rng rng(cfg.seed + 0x2545f4914f6cdd1dull);
    AdamState adam(e.params.size());
    std::vector<double> grad(e.params.size());
    std::vector<double> d_mu(static_cast<size_t>(L));
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const long steps_per_epoch =
        static_cast<long>((order.size() + cfg.batch_size - 1) / cfg.batch_size);
    const long total_steps = steps_per_epoch * cfg.epochs;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = rng_below(rng, i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_mse = 0.0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            const double inv = 1.0 / static_cast<double>(end - at);
            for (size_t b = at; b < end; ++b) {
                const size_t idx = order[b];
                encoder_forward(e.params.data(), e.enc, hist_x[idx].data(), e.in_dim(),
                                e.hidden, L, fw);
                for (int l = 0; l < L; ++l) {
                    const double diff = fw.mu[static_cast<size_t>(l)] - targets[idx][static_cast<size_t>(l)];
                    epoch_mse += diff * diff / L;
                    d_mu[static_cast<size_t>(l)] = 2.0 * diff / L * inv;
                }
                encoder_backward(e.params.data(), e.enc, hist_x[idx].data(), fw,
                                 d_mu.data(), nullptr, e.in_dim(), e.hidden, L,
                                 grad.data());
            }
            if (cfg.clip_norm > 0.0) {
                std::span<double> spans[] = {grad};
                clip_global_norm(spans, cfg.clip_norm);
            }
            adam_step(e.params, grad, adam, cfg,
                      cfg.linear_decay ? linear_schedule(step, total_steps) : 1.0);
            ++step;
        }
        e.mse_per_epoch.push_back(epoch_mse / static_cast<double>(order.size()));
    }
    return e;
}

TopicWeights TopicArtifacts::route_history(const std::string& history_text) const {
    const Bow bow = bow_vector(model.vocab, history_text);
    if (encoder) return infer_topics(*encoder, bow);
    return infer_topics(model, bow);
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

namespace {

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_i32(std::ostream& out, int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
int32_t read_i32(std::istream& in) {
    int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    write_u64(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in) {
    const uint64_t count = read_u64(in);
    std::vector<double> v(count);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("topic checkpoint: truncated file");
    return v;
}

}  // namespace

void save_topics(const TopicArtifacts& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    write_u32(out, kTopicMagic);
    write_u32(out, kTopicVersion);
    write_i32(out, t.model.n_topics);
    write_i32(out, t.model.hidden);
    write_i32(out, t.model.context_dim);
    write_i32(out, t.model.vocab.size());
    for (int v = kNumSpecials; v < t.model.vocab.size(); ++v) {
        const std::string& w = t.model.vocab.word(v);
        write_u32(out, static_cast<uint32_t>(w.size()));
        out.write(w.data(), static_cast<std::streamsize>(w.size()));
    }
    write_doubles(out, t.model.params);
    const uint8_t has_enc = t.encoder ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&has_enc), 1);
    if (t.encoder) write_doubles(out, t.encoder->params);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

TopicArtifacts load_topics(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    if (read_u32(in) != kTopicMagic) throw std::runtime_error("not a topic checkpoint: " + path);
    if (read_u32(in) != kTopicVersion)
        throw std::runtime_error("unsupported topic checkpoint version: " + path);

    const int n_topics = read_i32(in);
    const int hidden = read_i32(in);
    const int context_dim = read_i32(in);
    const int vocab_size = read_i32(in);

    std::vector<std::string> words;
    for (int v = kNumSpecials; v < vocab_size; ++v) {
        const uint32_t len = read_u32(in);
        std::string w(len, '\0');
        in.read(w.data(), static_cast<std::streamsize>(len));
        words.push_back(std::move(w));
    }
    const Vocab vocab = Vocab::from_content_words(words);

    TopicArtifacts t;
    t.model = ProdLda::init(vocab, n_topics, hidden, context_dim, 0);
    t.model.params = read_doubles(in);
    if (t.model.params.size() !=
        t.model.enc.total + static_cast<size_t>(n_topics) * vocab.size())
        throw std::runtime_error("topic checkpoint: parameter size mismatch");

    uint8_t has_enc = 0;
    in.read(reinterpret_cast<char*>(&has_enc), 1);
    if (!in) throw std::runtime_error("topic checkpoint: truncated file");
    if (has_enc) {
        InferenceEncoder e;
        e.n_topics = n_topics;
        e.hidden = hidden;
        e.context_dim = 0;
        e.input_vocab = vocab.size();
        e.enc = t.model.enc;
        e.params = read_doubles(in);
        if (e.params.size() != e.enc.total)
            throw std::runtime_error("topic checkpoint: encoder size mismatch");
        t.encoder = std::move(e);
    }
    return t;
}

}  // namespace knowexpert
