#include "knowexpert/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace knowexpert {

namespace {

constexpr uint32_t kModelMagic = 0x4B584D44;  // "KXMD"
constexpr uint32_t kModelVersion = 1;
constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// y = g * (x - mean) * rstd + b, per row over the last dimension.
void layer_norm(const double* x, const double* g, const double* b, double* y,
                double* mean, double* rstd, int n, int h) {
    for (int t = 0; t < n; ++t) {
        const double* xr = x + static_cast<size_t>(t) * h;
        double* yr = y + static_cast<size_t>(t) * h;
        double mu = 0.0;
        for (int j = 0; j < h; ++j) mu += xr[j];
        mu /= h;
        double var = 0.0;
        for (int j = 0; j < h; ++j) {
            const double dv = xr[j] - mu;
            var += dv * dv;
        }
        var /= h;
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        mean[t] = mu;
        rstd[t] = rs;
        for (int j = 0; j < h; ++j) yr[j] = g[j] * (xr[j] - mu) * rs + b[j];
    }
}

void layer_norm_backward(const double* x, const double* g, const double* mean,
                         const double* rstd, const double* dy, double* dx,
                         double* dg, double* db, int n, int h) {
    for (int t = 0; t < n; ++t) {
        const double* xr = x + static_cast<size_t>(t) * h;
        const double* dyr = dy + static_cast<size_t>(t) * h;
        double* dxr = dx + static_cast<size_t>(t) * h;
        const double mu = mean[t];
        const double rs = rstd[t];

        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (int j = 0; j < h; ++j) {
            const double xhat = (xr[j] - mu) * rs;
            const double dxhat = dyr[j] * g[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            if (dg) dg[j] += dyr[j] * xhat;
            if (db) db[j] += dyr[j];
        }
        const double inv_h = 1.0 / h;
        for (int j = 0; j < h; ++j) {
            const double xhat = (xr[j] - mu) * rs;
            const double dxhat = dyr[j] * g[j];
            dxr[j] += rs * (dxhat - inv_h * sum_dxhat - xhat * inv_h * sum_dxhat_xhat);
        }
    }
}

size_t take(size_t& cursor, size_t count) {
    const size_t at = cursor;
    cursor += count;
    return at;
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1) throw std::invalid_argument("ModelConfig: n_layers must be >= 1");
    if (n_heads < 1 || h < 1 || h % n_heads != 0)
        throw std::invalid_argument("ModelConfig: h must be divisible by n_heads");
    if (d < 1) throw std::invalid_argument("ModelConfig: d must be >= 1");
    if (n_experts < 1) throw std::invalid_argument("ModelConfig: n_experts must be >= 1");
    if (lm_vocab <= kNumSpecials)
        throw std::invalid_argument("ModelConfig: lm_vocab too small");
    if (max_seq_len < 4) throw std::invalid_argument("ModelConfig: max_seq_len too small");
    if (n_type_ids < 2) throw std::invalid_argument("ModelConfig: n_type_ids must be >= 2");
}

BackboneLayout BackboneLayout::make(const ModelConfig& cfg) {
    const size_t h = static_cast<size_t>(cfg.h);
    const size_t v = static_cast<size_t>(cfg.lm_vocab);
    BackboneLayout lay;
    size_t c = 0;
    lay.wte = take(c, v * h);
    lay.wpe = take(c, static_cast<size_t>(cfg.max_seq_len) * h);
    lay.wtt = take(c, static_cast<size_t>(cfg.n_type_ids) * h);
    lay.blocks.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& b : lay.blocks) {
        b.ln1_g = take(c, h);
        b.ln1_b = take(c, h);
        b.wq = take(c, h * h);
        b.bq = take(c, h);
        b.wk = take(c, h * h);
        b.bk = take(c, h);
        b.wv = take(c, h * h);
        b.bv = take(c, h);
        b.wo = take(c, h * h);
        b.bo = take(c, h);
        b.ln2_g = take(c, h);
        b.ln2_b = take(c, h);
        b.w_fc1 = take(c, h * 4 * h);
        b.b_fc1 = take(c, 4 * h);
        b.w_fc2 = take(c, 4 * h * h);
        b.b_fc2 = take(c, h);
    }
    lay.lnf_g = take(c, h);
    lay.lnf_b = take(c, h);
    lay.w_lm = take(c, h * v);
    lay.total = c;
    return lay;
}

ExpertLayout ExpertLayout::make(const ModelConfig& cfg) {
    const size_t h = static_cast<size_t>(cfg.h);
    const size_t d = static_cast<size_t>(cfg.d);
    ExpertLayout lay;
    size_t c = 0;
    lay.blocks.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& b : lay.blocks) {
        b.ln_g = take(c, h);
        b.ln_b = take(c, h);
        b.w_hd = take(c, h * d);
        b.w_dh = take(c, d * h);
    }
    lay.total = c;
    return lay;
}

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.bl = BackboneLayout::make(cfg);
    m.el = ExpertLayout::make(cfg);
    m.backbone.assign(m.bl.total, 0.0);
    m.experts.assign(static_cast<size_t>(cfg.n_experts),
                     std::vector<double>(m.el.total, 0.0));

    Rng rng(seed);
    // Fan-in scaled weights. The head scale matters in particular: the final
    // layer norm bounds the hidden norm, so a much smaller head would cap the
    // reachable logit margin for everything trained on a frozen backbone.
    auto fill_normal = [&](size_t off, size_t count, double std) {
        for (size_t i = 0; i < count; ++i) m.backbone[off + i] = std * rng_normal(rng);
    };
    auto fill_ones = [&](double* base, size_t off, size_t count) {
        for (size_t i = 0; i < count; ++i) base[off + i] = 1.0;
    };

    const size_t h = static_cast<size_t>(cfg.h);
    const double emb_std = 0.1;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(cfg.h));
    fill_normal(m.bl.wte, static_cast<size_t>(cfg.lm_vocab) * h, emb_std);
    fill_normal(m.bl.wpe, static_cast<size_t>(cfg.max_seq_len) * h, emb_std);
    fill_normal(m.bl.wtt, static_cast<size_t>(cfg.n_type_ids) * h, emb_std);
    for (const auto& b : m.bl.blocks) {
        fill_ones(m.backbone.data(), b.ln1_g, h);
        fill_normal(b.wq, h * h, w_std);
        fill_normal(b.wk, h * h, w_std);
        fill_normal(b.wv, h * h, w_std);
        fill_normal(b.wo, h * h, w_std);
        fill_ones(m.backbone.data(), b.ln2_g, h);
        fill_normal(b.w_fc1, h * 4 * h, w_std);
        fill_normal(b.w_fc2, 4 * h * h, 0.5 * w_std);
    }
    fill_ones(m.backbone.data(), m.bl.lnf_g, h);
    fill_normal(m.bl.w_lm, h * static_cast<size_t>(cfg.lm_vocab), w_std);

    const size_t d = static_cast<size_t>(cfg.d);
    for (auto& e : m.experts) {
        for (const auto& b : m.el.blocks) {
            fill_ones(e.data(), b.ln_g, h);
            for (size_t i = 0; i < h * d; ++i) e[b.w_hd + i] = w_std * rng_normal(rng);
            // w_dh stays zero: the adapter is the identity until trained.
        }
    }
    return m;
}

Gradients Gradients::zeros_like(const Model& m) {
    Gradients g;
    g.backbone.assign(m.backbone.size(), 0.0);
    g.experts.assign(m.experts.size(), std::vector<double>(m.el.total, 0.0));
    return g;
}

void Gradients::check_finite() const {
    for (double v : backbone)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite gradient");
    for (const auto& e : experts)
        for (double v : e)
            if (!std::isfinite(v)) throw std::runtime_error("non-finite gradient");
}

Mat adapter_apply(const Model& m, int expert, int layer, const Mat& H) {
    if (H.cols != m.cfg.h)
        throw std::invalid_argument("adapter_apply: input width must equal hidden dim");
    const auto& blk = m.el.blocks.at(static_cast<size_t>(layer));
    const double* ep = m.expert_params(expert).data();
    const int n = H.rows, h = m.cfg.h, d = m.cfg.d;

    Mat u(n, h);
    std::vector<double> mean(static_cast<size_t>(n)), rstd(static_cast<size_t>(n));
    layer_norm(H.a.data(), ep + blk.ln_g, ep + blk.ln_b, u.a.data(), mean.data(),
               rstd.data(), n, h);
    Mat pre(n, d);
    matmul(u.a.data(), ep + blk.w_hd, pre.a.data(), n, h, d);
    for (double& x : pre.a) x = x > 0.0 ? x : 0.0;
    Mat out(n, h);
    matmul(pre.a.data(), ep + blk.w_dh, out.a.data(), n, d, h);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += H.a[i];
    return out;
}

Mat mix_experts(const TopicWeights& w, const std::vector<Mat>& expert_outputs) {
    if (static_cast<size_t>(w.size()) != expert_outputs.size())
        throw std::invalid_argument("mix_experts: weight/output count mismatch");
    if (expert_outputs.empty())
        throw std::invalid_argument("mix_experts: no expert outputs");
    const int rows = expert_outputs.front().rows;
    const int cols = expert_outputs.front().cols;
    for (const auto& o : expert_outputs)
        if (o.rows != rows || o.cols != cols)
            throw std::invalid_argument("mix_experts: shape mismatch");

    Mat out(rows, cols);
    bool first = true;
    for (size_t l = 0; l < expert_outputs.size(); ++l) {
        const double wl = w.w[l];
        if (wl == 0.0) continue;
        const auto& src = expert_outputs[l].a;
        if (first) {
            for (size_t i = 0; i < out.a.size(); ++i) out.a[i] = wl * src[i];
            first = false;
        } else {
            for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += wl * src[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

namespace {

struct AdapterTrace {
    int expert;
    double weight;
    std::vector<double> ln_out;  // [n,h]
    std::vector<double> mean, rstd;
    std::vector<double> hid_pre;  // [n,d] pre-ReLU
};

struct LayerTrace {
    std::vector<double> x_in;  // [n,h]
    std::vector<double> ln1_out, ln1_mean, ln1_rstd;
    std::vector<double> q, k, v;      // [n,h]
    std::vector<double> att_probs;    // [heads,n,n]
    std::vector<double> att_out;      // [n,h] heads concatenated, pre-projection
    std::vector<double> x_mid;        // after attention residual
    std::vector<double> ln2_out, ln2_mean, ln2_rstd;
    std::vector<double> fc1_pre;  // [n,4h]
    std::vector<double> x_post;   // after MLP residual, adapter input
    std::vector<AdapterTrace> adapters;
};

struct Trace {
    int n = 0;
    std::vector<double> x0;  // [n,h]
    std::vector<LayerTrace> layers;
    std::vector<double> x_final;  // input to final LN
    std::vector<double> lnf_out, lnf_mean, lnf_rstd;
    Mat logits;
};

std::vector<double> effective_weights(const ModelConfig& cfg, const TopicWeights& w,
                                      RouteMode mode) {
    if (mode == RouteMode::NoExpert)
        return std::vector<double>(static_cast<size_t>(cfg.n_experts), 0.0);
    if (w.size() != cfg.n_experts)
        throw std::invalid_argument("forward: weight vector length != number of experts");
    if (mode == RouteMode::OneHot)
        return TopicWeights::one_hot(cfg.n_experts, assign_cluster(w)).w;
    return w.w;
}

void run_forward(const Model& m, const TokenSeq& seq, const TopicWeights& w,
                 RouteMode mode, Trace& tr, bool logits_all) {
    const ModelConfig& cfg = m.cfg;
    const int n = static_cast<int>(seq.size());
    if (n == 0) throw std::invalid_argument("forward: empty sequence");
    if (n > cfg.max_seq_len) throw std::runtime_error("sequence too long");
    if (seq.type_ids.size() != seq.ids.size())
        throw std::invalid_argument("forward: ids/type_ids length mismatch");

    const int h = cfg.h, hd = cfg.h / cfg.n_heads;
    const size_t nh = static_cast<size_t>(n) * h;
    const double* bb = m.backbone.data();
    const auto wts = effective_weights(cfg, w, mode);

    tr.n = n;
    tr.x0.assign(nh, 0.0);
    for (int t = 0; t < n; ++t) {
        const int id = seq.ids[static_cast<size_t>(t)];
        const int ty = seq.type_ids[static_cast<size_t>(t)];
        if (id < 0 || id >= cfg.lm_vocab) throw std::invalid_argument("forward: token id out of range");
        if (ty < 0 || ty >= cfg.n_type_ids) throw std::invalid_argument("forward: type id out of range");
        const double* te = bb + m.bl.wte + static_cast<size_t>(id) * h;
        const double* pe = bb + m.bl.wpe + static_cast<size_t>(t) * h;
        const double* ye = bb + m.bl.wtt + static_cast<size_t>(ty) * h;
        double* x = tr.x0.data() + static_cast<size_t>(t) * h;
        for (int j = 0; j < h; ++j) x[j] = te[j] + pe[j] + ye[j];
    }

    std::vector<double> x = tr.x0;
    tr.layers.assign(static_cast<size_t>(cfg.n_layers), LayerTrace{});
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    for (int li = 0; li < cfg.n_layers; ++li) {
        auto& lt = tr.layers[static_cast<size_t>(li)];
        const auto& blk = m.bl.blocks[static_cast<size_t>(li)];
        lt.x_in = x;

        lt.ln1_out.assign(nh, 0.0);
        lt.ln1_mean.assign(static_cast<size_t>(n), 0.0);
        lt.ln1_rstd.assign(static_cast<size_t>(n), 0.0);
        layer_norm(lt.x_in.data(), bb + blk.ln1_g, bb + blk.ln1_b, lt.ln1_out.data(),
                   lt.ln1_mean.data(), lt.ln1_rstd.data(), n, h);

        lt.q.assign(nh, 0.0);
        lt.k.assign(nh, 0.0);
        lt.v.assign(nh, 0.0);
        matmul(lt.ln1_out.data(), bb + blk.wq, lt.q.data(), n, h, h);
        matmul(lt.ln1_out.data(), bb + blk.wk, lt.k.data(), n, h, h);
        matmul(lt.ln1_out.data(), bb + blk.wv, lt.v.data(), n, h, h);
        for (int t = 0; t < n; ++t)
            for (int j = 0; j < h; ++j) {
                lt.q[static_cast<size_t>(t) * h + j] += bb[blk.bq + static_cast<size_t>(j)];
                lt.k[static_cast<size_t>(t) * h + j] += bb[blk.bk + static_cast<size_t>(j)];
                lt.v[static_cast<size_t>(t) * h + j] += bb[blk.bv + static_cast<size_t>(j)];
            }

        lt.att_probs.assign(static_cast<size_t>(cfg.n_heads) * n * n, 0.0);
        lt.att_out.assign(nh, 0.0);
        for (int hh = 0; hh < cfg.n_heads; ++hh) {
            const int hs = hh * hd;
            double* probs = lt.att_probs.data() + static_cast<size_t>(hh) * n * n;
            for (int t = 0; t < n; ++t) {
                double* row = probs + static_cast<size_t>(t) * n;
                for (int u = 0; u <= t; ++u) {
                    const double* qt = lt.q.data() + static_cast<size_t>(t) * h + hs;
                    const double* ku = lt.k.data() + static_cast<size_t>(u) * h + hs;
                    double dot = 0.0;
                    for (int j = 0; j < hd; ++j) dot += qt[j] * ku[j];
                    row[u] = dot * scale;
                }
                softmax_inplace(row, t + 1);
                double* ot = lt.att_out.data() + static_cast<size_t>(t) * h + hs;
                for (int u = 0; u <= t; ++u) {
                    const double p = row[u];
                    const double* vu = lt.v.data() + static_cast<size_t>(u) * h + hs;
                    for (int j = 0; j < hd; ++j) ot[j] += p * vu[j];
                }
            }
        }

        lt.x_mid.assign(nh, 0.0);
        matmul(lt.att_out.data(), bb + blk.wo, lt.x_mid.data(), n, h, h);
        for (int t = 0; t < n; ++t)
            for (int j = 0; j < h; ++j)
                lt.x_mid[static_cast<size_t>(t) * h + j] +=
                    bb[blk.bo + static_cast<size_t>(j)] + lt.x_in[static_cast<size_t>(t) * h + j];

        lt.ln2_out.assign(nh, 0.0);
        lt.ln2_mean.assign(static_cast<size_t>(n), 0.0);
        lt.ln2_rstd.assign(static_cast<size_t>(n), 0.0);
        layer_norm(lt.x_mid.data(), bb + blk.ln2_g, bb + blk.ln2_b, lt.ln2_out.data(),
                   lt.ln2_mean.data(), lt.ln2_rstd.data(), n, h);

        const int h4 = 4 * h;
        lt.fc1_pre.assign(static_cast<size_t>(n) * h4, 0.0);
        matmul(lt.ln2_out.data(), bb + blk.w_fc1, lt.fc1_pre.data(), n, h, h4);
        for (int t = 0; t < n; ++t)
            for (int j = 0; j < h4; ++j)
                lt.fc1_pre[static_cast<size_t>(t) * h4 + j] += bb[blk.b_fc1 + static_cast<size_t>(j)];

        std::vector<double> fc1_act(static_cast<size_t>(n) * h4);
        for (size_t i = 0; i < fc1_act.size(); ++i) fc1_act[i] = gelu(lt.fc1_pre[i]);

        lt.x_post.assign(nh, 0.0);
        matmul(fc1_act.data(), bb + blk.w_fc2, lt.x_post.data(), n, h4, h);
        for (int t = 0; t < n; ++t)
            for (int j = 0; j < h; ++j)
                lt.x_post[static_cast<size_t>(t) * h + j] +=
                    bb[blk.b_fc2 + static_cast<size_t>(j)] + lt.x_mid[static_cast<size_t>(t) * h + j];

        // Knowledge experts: shared residual plus weighted bottleneck outputs.
        x = lt.x_post;
        for (int l = 0; l < cfg.n_experts; ++l) {
            const double wl = wts[static_cast<size_t>(l)];
            if (wl == 0.0) continue;
            const auto& eblk = m.el.blocks[static_cast<size_t>(li)];
            const double* ep = m.expert_params(l).data();

            AdapterTrace at;
            at.expert = l;
            at.weight = wl;
            at.ln_out.assign(nh, 0.0);
            at.mean.assign(static_cast<size_t>(n), 0.0);
            at.rstd.assign(static_cast<size_t>(n), 0.0);
            layer_norm(lt.x_post.data(), ep + eblk.ln_g, ep + eblk.ln_b, at.ln_out.data(),
                       at.mean.data(), at.rstd.data(), n, h);
            at.hid_pre.assign(static_cast<size_t>(n) * cfg.d, 0.0);
            matmul(at.ln_out.data(), ep + eblk.w_hd, at.hid_pre.data(), n, h, cfg.d);

            std::vector<double> act(at.hid_pre.size());
            for (size_t i = 0; i < act.size(); ++i)
                act[i] = at.hid_pre[i] > 0.0 ? at.hid_pre[i] : 0.0;
            std::vector<double> out(nh, 0.0);
            matmul(act.data(), ep + eblk.w_dh, out.data(), n, cfg.d, h);
            for (size_t i = 0; i < nh; ++i) x[i] += wl * out[i];

            lt.adapters.push_back(std::move(at));
        }
    }

    tr.x_final = x;
    tr.lnf_out.assign(nh, 0.0);
    tr.lnf_mean.assign(static_cast<size_t>(n), 0.0);
    tr.lnf_rstd.assign(static_cast<size_t>(n), 0.0);
    layer_norm(tr.x_final.data(), bb + m.bl.lnf_g, bb + m.bl.lnf_b, tr.lnf_out.data(),
               tr.lnf_mean.data(), tr.lnf_rstd.data(), n, h);

    if (logits_all) {
        tr.logits = Mat(n, cfg.lm_vocab);
        matmul(tr.lnf_out.data(), bb + m.bl.w_lm, tr.logits.a.data(), n, h, cfg.lm_vocab);
    } else {
        tr.logits = Mat(1, cfg.lm_vocab);
        matmul(tr.lnf_out.data() + static_cast<size_t>(n - 1) * h, bb + m.bl.w_lm,
               tr.logits.a.data(), 1, h, cfg.lm_vocab);
    }
}

// Backpropagates dlogits [n,V] through the trace, accumulating into grads.
void run_backward(const Model& m, const TokenSeq& seq, const Trace& tr,
                  const Mat& dlogits, Gradients& grads) {
    const ModelConfig& cfg = m.cfg;
    const int n = tr.n, h = cfg.h, hd = cfg.h / cfg.n_heads;
    const size_t nh = static_cast<size_t>(n) * h;
    const double* bb = m.backbone.data();
    double* gb = grads.backbone.data();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    // lm head
    std::vector<double> d_lnf(nh, 0.0);
    matmul_backward(tr.lnf_out.data(), bb + m.bl.w_lm, dlogits.a.data(), d_lnf.data(),
                    gb + m.bl.w_lm, nullptr, n, h, cfg.lm_vocab);

    std::vector<double> dx(nh, 0.0);
    layer_norm_backward(tr.x_final.data(), bb + m.bl.lnf_g, tr.lnf_mean.data(),
                        tr.lnf_rstd.data(), d_lnf.data(), dx.data(), gb + m.bl.lnf_g,
                        gb + m.bl.lnf_b, n, h);

    std::vector<double> buf_a(nh), buf_b(nh);
    for (int li = cfg.n_layers - 1; li >= 0; --li) {
        const auto& lt = tr.layers[static_cast<size_t>(li)];
        const auto& blk = m.bl.blocks[static_cast<size_t>(li)];
        const auto& eblk = m.el.blocks[static_cast<size_t>(li)];

        // adapters: dx flows unchanged through the residual, and through each
        // active expert path scaled by its weight
        std::vector<double> dx_post = dx;
        for (const auto& at : lt.adapters) {
            const double* ep = m.expert_params(at.expert).data();
            double* ge = grads.experts[static_cast<size_t>(at.expert)].data();

            std::vector<double> d_out(nh);
            for (size_t i = 0; i < nh; ++i) d_out[i] = at.weight * dx[i];

            std::vector<double> act(at.hid_pre.size());
            for (size_t i = 0; i < act.size(); ++i)
                act[i] = at.hid_pre[i] > 0.0 ? at.hid_pre[i] : 0.0;

            std::vector<double> d_act(act.size(), 0.0);
            matmul_backward(act.data(), ep + eblk.w_dh, d_out.data(), d_act.data(),
                            ge + eblk.w_dh, nullptr, n, cfg.d, h);
            for (size_t i = 0; i < d_act.size(); ++i)
                if (at.hid_pre[i] <= 0.0) d_act[i] = 0.0;

            std::vector<double> d_ln(nh, 0.0);
            matmul_backward(at.ln_out.data(), ep + eblk.w_hd, d_act.data(), d_ln.data(),
                            ge + eblk.w_hd, nullptr, n, h, cfg.d);
            layer_norm_backward(lt.x_post.data(), ep + eblk.ln_g, at.mean.data(),
                                at.rstd.data(), d_ln.data(), dx_post.data(),
                                ge + eblk.ln_g, ge + eblk.ln_b, n, h);
        }
        dx = std::move(dx_post);

        // MLP
        const int h4 = 4 * h;
        std::vector<double> fc1_act(static_cast<size_t>(n) * h4);
        for (size_t i = 0; i < fc1_act.size(); ++i) fc1_act[i] = gelu(lt.fc1_pre[i]);

        std::vector<double> d_fc1_act(static_cast<size_t>(n) * h4, 0.0);
        matmul_backward(fc1_act.data(), bb + blk.w_fc2, dx.data(), d_fc1_act.data(),
                        gb + blk.w_fc2, gb + blk.b_fc2, n, h4, h);
        for (size_t i = 0; i < d_fc1_act.size(); ++i)
            d_fc1_act[i] *= gelu_grad(lt.fc1_pre[i]);

        std::vector<double> d_ln2(nh, 0.0);
        matmul_backward(lt.ln2_out.data(), bb + blk.w_fc1, d_fc1_act.data(), d_ln2.data(),
                        gb + blk.w_fc1, gb + blk.b_fc1, n, h, h4);

        std::vector<double>& dx_mid = buf_a;
        dx_mid = dx;  // residual
        layer_norm_backward(lt.x_mid.data(), bb + blk.ln2_g, lt.ln2_mean.data(),
                            lt.ln2_rstd.data(), d_ln2.data(), dx_mid.data(),
                            gb + blk.ln2_g, gb + blk.ln2_b, n, h);

        // attention projection
        std::vector<double> d_att_out(nh, 0.0);
        matmul_backward(lt.att_out.data(), bb + blk.wo, dx_mid.data(), d_att_out.data(),
                        gb + blk.wo, gb + blk.bo, n, h, h);

        std::vector<double> dq(nh, 0.0), dk(nh, 0.0), dv(nh, 0.0);
        std::vector<double> dp(static_cast<size_t>(n));
        for (int hh = 0; hh < cfg.n_heads; ++hh) {
            const int hs = hh * hd;
            const double* probs = lt.att_probs.data() + static_cast<size_t>(hh) * n * n;
            for (int t = 0; t < n; ++t) {
                const double* prow = probs + static_cast<size_t>(t) * n;
                const double* dot = d_att_out.data() + static_cast<size_t>(t) * h + hs;
                for (int u = 0; u <= t; ++u) {
                    const double* vu = lt.v.data() + static_cast<size_t>(u) * h + hs;
                    double* dvu = dv.data() + static_cast<size_t>(u) * h + hs;
                    double acc = 0.0;
                    for (int j = 0; j < hd; ++j) {
                        acc += dot[j] * vu[j];
                        dvu[j] += prow[u] * dot[j];
                    }
                    dp[static_cast<size_t>(u)] = acc;
                }
                double dot_pp = 0.0;
                for (int u = 0; u <= t; ++u) dot_pp += dp[static_cast<size_t>(u)] * prow[u];
                for (int u = 0; u <= t; ++u) {
                    const double ds = prow[u] * (dp[static_cast<size_t>(u)] - dot_pp) * scale;
                    const double* ku = lt.k.data() + static_cast<size_t>(u) * h + hs;
                    const double* qt = lt.q.data() + static_cast<size_t>(t) * h + hs;
                    double* dqt = dq.data() + static_cast<size_t>(t) * h + hs;
                    double* dku = dk.data() + static_cast<size_t>(u) * h + hs;
                    for (int j = 0; j < hd; ++j) {
                        dqt[j] += ds * ku[j];
                        dku[j] += ds * qt[j];
                    }
                }
            }
        }

        std::vector<double> d_ln1(nh, 0.0);
        matmul_backward(lt.ln1_out.data(), bb + blk.wq, dq.data(), d_ln1.data(),
                        gb + blk.wq, gb + blk.bq, n, h, h);
        matmul_backward(lt.ln1_out.data(), bb + blk.wk, dk.data(), d_ln1.data(),
                        gb + blk.wk, gb + blk.bk, n, h, h);
        matmul_backward(lt.ln1_out.data(), bb + blk.wv, dv.data(), d_ln1.data(),
                        gb + blk.wv, gb + blk.bv, n, h, h);

        std::vector<double>& dx_in = buf_b;
        dx_in = dx_mid;  // residual
        layer_norm_backward(lt.x_in.data(), bb + blk.ln1_g, lt.ln1_mean.data(),
                            lt.ln1_rstd.data(), d_ln1.data(), dx_in.data(),
                            gb + blk.ln1_g, gb + blk.ln1_b, n, h);
        dx = dx_in;
    }

    for (int t = 0; t < n; ++t) {
        const int id = seq.ids[static_cast<size_t>(t)];
        const int ty = seq.type_ids[static_cast<size_t>(t)];
        const double* dxt = dx.data() + static_cast<size_t>(t) * h;
        double* te = gb + m.bl.wte + static_cast<size_t>(id) * h;
        double* pe = gb + m.bl.wpe + static_cast<size_t>(t) * h;
        double* ye = gb + m.bl.wtt + static_cast<size_t>(ty) * h;
        for (int j = 0; j < h; ++j) {
            te[j] += dxt[j];
            pe[j] += dxt[j];
            ye[j] += dxt[j];
        }
    }
}

}  // namespace

Mat forward(const Model& m, const TokenSeq& seq, const TopicWeights& w, RouteMode mode) {
    Trace tr;
    run_forward(m, seq, w, mode, tr, /*logits_all=*/true);
    return std::move(tr.logits);
}

std::vector<double> next_token_logits(const Model& m, const TokenSeq& seq,
                                      const TopicWeights& w, RouteMode mode) {
    Trace tr;
    run_forward(m, seq, w, mode, tr, /*logits_all=*/false);
    return std::move(tr.logits.a);
}

double loss_nll(const Mat& logits, const std::vector<int>& targets,
                const std::vector<uint8_t>& mask) {
    if (targets.size() != mask.size())
        throw std::invalid_argument("loss_nll: targets/mask length mismatch");
    if (static_cast<int>(targets.size()) > logits.rows)
        throw std::invalid_argument("loss_nll: more targets than logit rows");
    double total = 0.0;
    long count = 0;
    for (size_t t = 0; t < targets.size(); ++t) {
        if (!mask[t]) continue;
        const double* row = logits.row(static_cast<int>(t));
        const double lse = log_sum_exp(row, logits.cols);
        total += lse - row[targets[t]];
        ++count;
    }
    if (count == 0) throw std::invalid_argument("loss_nll: empty mask");
    return total / static_cast<double>(count);
}

void shift_targets(const SerializedSample& s, std::vector<int>& targets,
                   std::vector<uint8_t>& mask) {
    const size_t n = s.input.size();
    targets.assign(n > 0 ? n - 1 : 0, 0);
    mask.assign(targets.size(), 0);
    for (size_t t = 0; t + 1 < n; ++t) {
        targets[t] = s.input.ids[t + 1];
        mask[t] = s.loss_mask[t + 1];
    }
}

double batch_loss(const Model& m, std::span<const TrainItem> batch, RouteMode mode) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    double total = 0.0;
    std::vector<int> targets;
    std::vector<uint8_t> mask;
    for (const auto& item : batch) {
        const Mat logits = forward(m, item.sample->input, item.w, mode);
        shift_targets(*item.sample, targets, mask);
        total += loss_nll(logits, targets, mask);
    }
    return total / static_cast<double>(batch.size());
}

double backward(const Model& m, std::span<const TrainItem> batch, RouteMode mode,
                Freeze freeze, Gradients& grads) {
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;

    std::vector<int> targets;
    std::vector<uint8_t> mask;
    for (const auto& item : batch) {
        Trace tr;
        run_forward(m, item.sample->input, item.w, mode, tr, /*logits_all=*/true);
        shift_targets(*item.sample, targets, mask);
        const double loss = loss_nll(tr.logits, targets, mask);
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
        total += loss;

        long count = 0;
        for (uint8_t f : mask) count += f;
        const double coeff = inv_batch / static_cast<double>(count);

        Mat dlogits(tr.logits.rows, tr.logits.cols);
        for (size_t t = 0; t < targets.size(); ++t) {
            if (!mask[t]) continue;
            const double* row = tr.logits.row(static_cast<int>(t));
            double* drow = dlogits.row(static_cast<int>(t));
            const double lse = log_sum_exp(row, tr.logits.cols);
            for (int v = 0; v < tr.logits.cols; ++v)
                drow[v] = std::exp(row[v] - lse) * coeff;
            drow[targets[t]] -= coeff;
        }
        run_backward(m, item.sample->input, tr, dlogits, grads);
    }

    if (freeze == Freeze::Backbone)
        std::fill(grads.backbone.begin(), grads.backbone.end(), 0.0);
    if (freeze == Freeze::Experts)
        for (auto& e : grads.experts) std::fill(e.begin(), e.end(), 0.0);
    grads.check_finite();
    return total * inv_batch;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_i32(std::ostream& out, int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
int32_t read_i32(std::istream& in) {
    int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    write_u64(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in, size_t expected) {
    const uint64_t count = read_u64(in);
    if (count != expected) throw std::runtime_error("checkpoint: section size mismatch");
    std::vector<double> v(count);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_model(const Model& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    write_u32(out, kModelMagic);
    write_u32(out, kModelVersion);
    write_i32(out, m.cfg.n_layers);
    write_i32(out, m.cfg.n_heads);
    write_i32(out, m.cfg.h);
    write_i32(out, m.cfg.d);
    write_i32(out, m.cfg.n_experts);
    write_i32(out, m.cfg.lm_vocab);
    write_i32(out, m.cfg.max_seq_len);
    write_i32(out, m.cfg.n_type_ids);
    write_doubles(out, m.backbone);
    for (const auto& e : m.experts) write_doubles(out, e);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    if (read_u32(in) != kModelMagic) throw std::runtime_error("not a model checkpoint: " + path);
    if (read_u32(in) != kModelVersion)
        throw std::runtime_error("unsupported model checkpoint version: " + path);
    ModelConfig cfg;
    cfg.n_layers = read_i32(in);
    cfg.n_heads = read_i32(in);
    cfg.h = read_i32(in);
    cfg.d = read_i32(in);
    cfg.n_experts = read_i32(in);
    cfg.lm_vocab = read_i32(in);
    cfg.max_seq_len = read_i32(in);
    cfg.n_type_ids = read_i32(in);
    cfg.validate();

    Model m;
    m.cfg = cfg;
    m.bl = BackboneLayout::make(cfg);
    m.el = ExpertLayout::make(cfg);
    m.backbone = read_doubles(in, m.bl.total);
    m.experts.reserve(static_cast<size_t>(cfg.n_experts));
    for (int l = 0; l < cfg.n_experts; ++l) m.experts.push_back(read_doubles(in, m.el.total));
    return m;
}

void replace_experts(Model& dst, const Model& src) {
    if (dst.el.total != src.el.total || dst.experts.size() != src.experts.size())
        throw std::runtime_error("replace_experts: expert layouts differ");
    dst.experts = src.experts;
}

uint64_t backbone_checksum(const Model& m) { return checksum(m.backbone); }

uint64_t expert_checksum(const Model& m, int l) {
    return checksum(m.expert_params(l));
}

uint64_t experts_checksum(const Model& m) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& e : m.experts) {
        const uint64_t c = checksum(e);
        h = fnv1a64(&c, sizeof(c)) ^ (h * 1099511628211ull);
    }
    return h;
}

}  // namespace knowexpert
