#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "knowexpert/model.hpp"
#include "test_util.hpp"

using namespace knowexpert;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.h = 8;
    cfg.d = 4;
    cfg.n_experts = 2;
    cfg.lm_vocab = 11;
    cfg.max_seq_len = 8;
    return cfg;
}

// Deterministic token sequence with a few masked loss positions.
SerializedSample make_sample(uint64_t seed, int len, int vocab) {
    Rng rng(seed);
    SerializedSample s;
    s.input.ids.push_back(kBos);
    s.input.type_ids.push_back(0);
    s.loss_mask.push_back(0);
    for (int i = 1; i < len; ++i) {
        s.input.ids.push_back(static_cast<int>(rng_below(rng, static_cast<uint64_t>(vocab))));
        s.input.type_ids.push_back(i > len / 2 ? 1 : 0);
        s.loss_mask.push_back(i > len / 2 ? 1 : 0);
    }
    return s;
}

// Gives the experts some trained-looking (nonzero) parameters.
void randomize_experts(Model& m, uint64_t seed) {
    Rng rng(seed);
    for (auto& e : m.experts)
        for (double& v : e) v = 0.05 * rng_normal(rng);
}

TopicWeights w_pair(double a, double b) { return TopicWeights({a, b}); }

}  // namespace

TEST(AdapterApply, ZeroWdhIsIdentity) {
    const Model m = Model::init(tiny_config(), 1);  // w_dh starts at zero
    Mat H(3, 8);
    Rng rng(2);
    for (double& v : H.a) v = rng_normal(rng);
    const Mat out = adapter_apply(m, 0, 1, H);
    ASSERT_EQ(out.rows, H.rows);
    for (size_t i = 0; i < H.a.size(); ++i) EXPECT_EQ(out.a[i], H.a[i]);
}

TEST(AdapterApply, MatchesScalarReference) {
    ModelConfig cfg = tiny_config();
    cfg.h = 4;
    cfg.d = 2;
    cfg.n_heads = 1;
    Model m = Model::init(cfg, 1);

    const auto& blk = m.el.blocks[0];
    double* ep = m.experts[0].data();
    const double ln_g[4] = {0.5, 1.0, 1.5, 2.0};
    const double ln_b[4] = {0.1, -0.1, 0.2, 0.0};
    const double w_hd[4][2] = {{0.3, -0.2}, {0.1, 0.4}, {-0.5, 0.2}, {0.2, 0.1}};
    const double w_dh[2][4] = {{0.4, -0.1, 0.3, 0.2}, {-0.3, 0.5, 0.1, -0.2}};
    for (int j = 0; j < 4; ++j) {
        ep[blk.ln_g + static_cast<size_t>(j)] = ln_g[j];
        ep[blk.ln_b + static_cast<size_t>(j)] = ln_b[j];
        for (int k = 0; k < 2; ++k) ep[blk.w_hd + static_cast<size_t>(j) * 2 + k] = w_hd[j][k];
    }
    for (int k = 0; k < 2; ++k)
        for (int j = 0; j < 4; ++j) ep[blk.w_dh + static_cast<size_t>(k) * 4 + j] = w_dh[k][j];

    Mat H(1, 4);
    H.a = {1.0, 2.0, 3.0, 4.0};

    // independent scalar arithmetic for one row
    double mean = 0.0;
    for (double v : H.a) mean += v;
    mean /= 4.0;
    double var = 0.0;
    for (double v : H.a) var += (v - mean) * (v - mean);
    var /= 4.0;
    const double rstd = 1.0 / std::sqrt(var + 1e-5);
    double u[4];
    for (int j = 0; j < 4; ++j) u[j] = ln_g[j] * (H.a[static_cast<size_t>(j)] - mean) * rstd + ln_b[j];
    double hid[2];
    for (int k = 0; k < 2; ++k) {
        hid[k] = 0.0;
        for (int j = 0; j < 4; ++j) hid[k] += u[j] * w_hd[j][k];
        hid[k] = hid[k] > 0.0 ? hid[k] : 0.0;
    }
    double want[4];
    for (int j = 0; j < 4; ++j) {
        want[j] = H.a[static_cast<size_t>(j)];
        for (int k = 0; k < 2; ++k) want[j] += hid[k] * w_dh[k][j];
    }

    const Mat out = adapter_apply(m, 0, 0, H);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(out.a[static_cast<size_t>(j)], want[j], 1e-12);
}

TEST(AdapterApply, PreservesShape) {
    Model m = Model::init(tiny_config(), 3);
    randomize_experts(m, 4);
    for (int rows : {1, 2, 5}) {
        Mat H(rows, 8);
        Rng rng(static_cast<uint64_t>(rows));
        for (double& v : H.a) v = rng_normal(rng);
        const Mat out = adapter_apply(m, 1, 0, H);
        EXPECT_EQ(out.rows, rows);
        EXPECT_EQ(out.cols, 8);
    }
    Mat bad(2, 5);
    EXPECT_THROW(adapter_apply(m, 0, 0, bad), std::invalid_argument);
}

TEST(MixExperts, OneHotSelectsExactOutput) {
    std::vector<Mat> outs;
    Rng rng(5);
    for (int l = 0; l < 3; ++l) {
        Mat o(2, 4);
        for (double& v : o.a) v = rng_normal(rng);
        outs.push_back(o);
    }
    const Mat mixed = mix_experts(TopicWeights::one_hot(3, 2), outs);
    for (size_t i = 0; i < mixed.a.size(); ++i) EXPECT_EQ(mixed.a[i], outs[2].a[i]);
}

TEST(MixExperts, ConvexityOnIdenticalOutputs) {
    Mat o(2, 3);
    Rng rng(6);
    for (double& v : o.a) v = rng_normal(rng);
    const std::vector<Mat> outs = {o, o, o, o};
    const Mat mixed = mix_experts(TopicWeights({0.25, 0.25, 0.25, 0.25}), outs);
    for (size_t i = 0; i < o.a.size(); ++i) EXPECT_NEAR(mixed.a[i], o.a[i], 1e-12);
}

TEST(MixExperts, SharedResidualIdentity) {
    // mix(w, {f_l(H) + H}) == H + sum_l w_l f_l(H) because the weights sum to 1
    Rng rng(7);
    Mat H(3, 4);
    for (double& v : H.a) v = rng_normal(rng);
    std::vector<Mat> f(3, Mat(3, 4)), full(3, Mat(3, 4));
    for (int l = 0; l < 3; ++l) {
        for (size_t i = 0; i < f[static_cast<size_t>(l)].a.size(); ++i) {
            f[static_cast<size_t>(l)].a[i] = rng_normal(rng);
            full[static_cast<size_t>(l)].a[i] = f[static_cast<size_t>(l)].a[i] + H.a[i];
        }
    }
    const TopicWeights w({0.2, 0.3, 0.5});
    const Mat mixed = mix_experts(w, full);
    for (size_t i = 0; i < H.a.size(); ++i) {
        double want = H.a[i];
        for (int l = 0; l < 3; ++l) want += w.w[static_cast<size_t>(l)] * f[static_cast<size_t>(l)].a[i];
        EXPECT_NEAR(mixed.a[i], want, 1e-6);
    }
}

TEST(MixExperts, CountMismatchFails) {
    std::vector<Mat> outs(2, Mat(1, 2));
    EXPECT_THROW(mix_experts(TopicWeights({1.0, 0.0, 0.0}), outs), std::invalid_argument);
}

TEST(Forward, CausalMasking) {
    Model m = Model::init(tiny_config(), 11);
    randomize_experts(m, 12);
    SerializedSample a = make_sample(1, 8, 11);
    SerializedSample b = a;
    b.input.ids[6] = (b.input.ids[6] + 3) % 11;
    b.input.ids[7] = (b.input.ids[7] + 5) % 11;

    const Mat la = forward(m, a.input, w_pair(0.4, 0.6), RouteMode::Weighted);
    const Mat lb = forward(m, b.input, w_pair(0.4, 0.6), RouteMode::Weighted);
    for (int t = 0; t < 6; ++t)
        for (int v = 0; v < 11; ++v) EXPECT_EQ(la.at(t, v), lb.at(t, v)) << t << " " << v;
}

TEST(Forward, OneHotEqualsWeightedIndicator) {
    Model m = Model::init(tiny_config(), 13);
    randomize_experts(m, 14);
    const SerializedSample s = make_sample(2, 7, 11);
    const Mat one_hot = forward(m, s.input, w_pair(0.2, 0.8), RouteMode::OneHot);
    const Mat weighted = forward(m, s.input, w_pair(0.0, 1.0), RouteMode::Weighted);
    ASSERT_EQ(one_hot.a.size(), weighted.a.size());
    EXPECT_EQ(std::memcmp(one_hot.a.data(), weighted.a.data(),
                          one_hot.a.size() * sizeof(double)),
              0);
}

TEST(Forward, IdentityExpertsMatchNoExpertMode) {
    const Model m = Model::init(tiny_config(), 15);  // w_dh all zero
    const SerializedSample s = make_sample(3, 6, 11);
    const Mat with = forward(m, s.input, w_pair(0.3, 0.7), RouteMode::Weighted);
    const Mat without = forward(m, s.input, w_pair(0.3, 0.7), RouteMode::NoExpert);
    for (size_t i = 0; i < with.a.size(); ++i) EXPECT_EQ(with.a[i], without.a[i]);
}

TEST(Forward, RejectsOverlongSequence) {
    const Model m = Model::init(tiny_config(), 16);
    const SerializedSample s = make_sample(4, 8, 11);
    TokenSeq seq = s.input;
    seq.ids.push_back(1);
    seq.type_ids.push_back(0);
    EXPECT_EQ(kxtest::thrown_message([&] {
                  forward(m, seq, w_pair(0.5, 0.5), RouteMode::Weighted);
              }),
              "sequence too long");
}

TEST(Forward, Deterministic) {
    Model m = Model::init(tiny_config(), 17);
    randomize_experts(m, 18);
    const SerializedSample s = make_sample(5, 7, 11);
    const Mat a = forward(m, s.input, w_pair(0.6, 0.4), RouteMode::Weighted);
    const Mat b = forward(m, s.input, w_pair(0.6, 0.4), RouteMode::Weighted);
    EXPECT_EQ(std::memcmp(a.a.data(), b.a.data(), a.a.size() * sizeof(double)), 0);
}

TEST(Forward, NextTokenLogitsMatchLastRow) {
    Model m = Model::init(tiny_config(), 19);
    randomize_experts(m, 20);
    const SerializedSample s = make_sample(6, 6, 11);
    const Mat full = forward(m, s.input, w_pair(0.5, 0.5), RouteMode::Weighted);
    const auto last = next_token_logits(m, s.input, w_pair(0.5, 0.5), RouteMode::Weighted);
    for (int v = 0; v < 11; ++v) EXPECT_EQ(full.at(full.rows - 1, v), last[static_cast<size_t>(v)]);
}

TEST(LossNll, UniformLogitsGiveLogVocab) {
    Mat logits(3, 50);  // all zeros -> uniform
    const double loss = loss_nll(logits, {1, 2, 3}, {1, 1, 1});
    EXPECT_NEAR(loss, std::log(50.0), 1e-12);
}

TEST(LossNll, LargeMarginGoesToZero) {
    Mat logits(1, 4);
    logits.at(0, 2) = 1000.0;
    EXPECT_LT(loss_nll(logits, {2}, {1}), 1e-9);
}

TEST(LossNll, HandComputedTwoVocab) {
    Mat logits(1, 2);
    logits.at(0, 0) = 1.0;
    logits.at(0, 1) = 0.0;
    EXPECT_NEAR(loss_nll(logits, {0}, {1}), std::log(1.0 + std::exp(-1.0)), 1e-12);
}

TEST(LossNll, EmptyMaskFails) {
    Mat logits(2, 4);
    EXPECT_THROW(loss_nll(logits, {1, 2}, {0, 0}), std::invalid_argument);
}

TEST(Backward, MatchesFiniteDifferences) {
    Model m = Model::init(tiny_config(), 21);
    randomize_experts(m, 22);

    const SerializedSample s1 = make_sample(7, 6, 11);
    const SerializedSample s2 = make_sample(8, 5, 11);
    const std::vector<TrainItem> batch = {{&s1, w_pair(0.3, 0.7)}, {&s2, w_pair(0.8, 0.2)}};

    Gradients grads = Gradients::zeros_like(m);
    backward(m, batch, RouteMode::Weighted, Freeze::None, grads);

    const auto loss_fn = [&] { return batch_loss(m, batch, RouteMode::Weighted); };
    const double eps = 1e-4;
    int checked = 0;
    for (size_t i = 0; i < m.backbone.size(); ++i) {
        const double fd = kxtest::central_diff(&m.backbone[i], loss_fn, eps);
        EXPECT_LE(kxtest::rel_error(grads.backbone[i], fd), 1e-2)
            << "backbone[" << i << "] analytic=" << grads.backbone[i] << " fd=" << fd;
        ++checked;
    }
    for (size_t l = 0; l < m.experts.size(); ++l)
        for (size_t i = 0; i < m.experts[l].size(); ++i) {
            const double fd = kxtest::central_diff(&m.experts[l][i], loss_fn, eps);
            EXPECT_LE(kxtest::rel_error(grads.experts[l][i], fd), 1e-2)
                << "expert " << l << "[" << i << "]";
            ++checked;
        }
    EXPECT_GT(checked, 2000);
}

TEST(Backward, FrozenBlocksGetZeroGradients) {
    Model m = Model::init(tiny_config(), 23);
    randomize_experts(m, 24);
    const SerializedSample s = make_sample(9, 6, 11);
    const std::vector<TrainItem> batch = {{&s, w_pair(0.5, 0.5)}};

    Gradients g1 = Gradients::zeros_like(m);
    backward(m, batch, RouteMode::Weighted, Freeze::Backbone, g1);
    for (double v : g1.backbone) EXPECT_EQ(v, 0.0);

    Gradients g2 = Gradients::zeros_like(m);
    backward(m, batch, RouteMode::Weighted, Freeze::Experts, g2);
    for (const auto& e : g2.experts)
        for (double v : e) EXPECT_EQ(v, 0.0);
}

TEST(Backward, UnusedExpertHasZeroGradientUnderOneHot) {
    Model m = Model::init(tiny_config(), 25);
    randomize_experts(m, 26);
    const SerializedSample s = make_sample(10, 6, 11);
    const std::vector<TrainItem> batch = {{&s, w_pair(0.9, 0.1)}};  // routes to expert 0

    Gradients grads = Gradients::zeros_like(m);
    backward(m, batch, RouteMode::OneHot, Freeze::None, grads);
    for (double v : grads.experts[1]) EXPECT_EQ(v, 0.0);
    double sum = 0.0;
    for (double v : grads.experts[0]) sum += std::fabs(v);
    EXPECT_GT(sum, 0.0);
}

TEST(Backward, NonFiniteLossFails) {
    Model m = Model::init(tiny_config(), 27);
    m.backbone[m.bl.w_lm + 3] = std::numeric_limits<double>::quiet_NaN();
    const SerializedSample s = make_sample(11, 6, 11);
    const std::vector<TrainItem> batch = {{&s, w_pair(0.5, 0.5)}};
    Gradients grads = Gradients::zeros_like(m);
    EXPECT_EQ(kxtest::thrown_message([&] {
                  backward(m, batch, RouteMode::Weighted, Freeze::None, grads);
              }),
              "non-finite loss");
}

TEST(Checkpoint, BitExactRoundTrip) {
    namespace fs = std::filesystem;
    Model m = Model::init(tiny_config(), 29);
    randomize_experts(m, 30);
    const auto path = (fs::temp_directory_path() / "kx_model_test.ckpt").string();
    save_model(m, path);
    const Model loaded = load_model(path);
    EXPECT_EQ(loaded.backbone, m.backbone);
    EXPECT_EQ(loaded.experts, m.experts);
    EXPECT_EQ(backbone_checksum(loaded), backbone_checksum(m));
    EXPECT_EQ(experts_checksum(loaded), experts_checksum(m));

    // second save must produce identical bytes
    const auto path2 = (fs::temp_directory_path() / "kx_model_test2.ckpt").string();
    save_model(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    EXPECT_EQ(b1, b2);
    fs::remove(path);
    fs::remove(path2);
}

TEST(Checkpoint, ExpertSectionsInjectable) {
    Model a = Model::init(tiny_config(), 31);
    Model b = Model::init(tiny_config(), 32);
    randomize_experts(a, 33);
    replace_experts(b, a);
    EXPECT_EQ(experts_checksum(b), experts_checksum(a));
    EXPECT_NE(backbone_checksum(b), backbone_checksum(a));
}
