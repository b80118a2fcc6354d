#include "knowexpert/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "knowexpert/dialog.hpp"
#include "knowexpert/eval.hpp"

namespace knowexpert {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Length-grouped batches in seeded-deterministic order.
std::vector<std::vector<size_t>> make_batches(const std::vector<size_t>& lengths,
                                              int batch_size, Rng& rng) {
    std::vector<size_t> order(lengths.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return lengths[a] < lengths[b]; });

    std::vector<std::vector<size_t>> batches;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), at + static_cast<size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<long>(at),
                             order.begin() + static_cast<long>(end));
    }
    for (size_t i = batches.size(); i > 1; --i) {
        const size_t j = rng_below(rng, i);
        std::swap(batches[i - 1], batches[j]);
    }
    return batches;
}

json report_to_json(const RunReport& r) {
    return json{{"stage", r.stage},
                {"epoch_losses", r.epoch_losses},
                {"val_ppl_seen", r.val_ppl_seen},
                {"val_ppl_unseen", r.val_ppl_unseen},
                {"selected_epoch", r.selected_epoch},
                {"timing", {{"epoch_seconds", r.epoch_seconds}}}};
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << j.dump(2) << '\n';
}

std::string doc_text(const KnowledgeDoc& doc) {
    std::string text;
    for (const auto& s : doc.sentences) {
        if (!text.empty()) text.push_back(' ');
        text += s;
    }
    return text;
}

}  // namespace

void save_report_json(const RunReport& report, const std::string& path) {
    write_json_file(report_to_json(report), path);
}

void save_reports_json(const std::vector<RunReport>& reports, const std::string& path) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(report_to_json(r));
    write_json_file(arr, path);
}

std::vector<std::vector<KnowledgeDoc>> split_by_cluster(const std::vector<KnowledgeDoc>& docs,
                                                        int n_clusters) {
    std::vector<std::vector<KnowledgeDoc>> by_cluster(static_cast<size_t>(n_clusters));
    for (const auto& d : docs) {
        if (!d.cluster)
            throw std::runtime_error("split_by_cluster: document '" + d.doc_id +
                                     "' has no cluster assignment");
        const int c = *d.cluster;
        if (c < 0 || c >= n_clusters)
            throw std::runtime_error("split_by_cluster: cluster index out of range");
        by_cluster[static_cast<size_t>(c)].push_back(d);
    }
    return by_cluster;
}

std::vector<RunReport> train_experts(const std::vector<std::vector<KnowledgeDoc>>& docs_by_cluster,
                                     Model& model, const Vocab& lm_vocab,
                                     const TrainConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(docs_by_cluster.size()) != model.cfg.n_experts)
        throw std::invalid_argument("train_experts: cluster count != expert count");

    std::vector<RunReport> reports;
    for (int l = 0; l < model.cfg.n_experts; ++l) {
        const auto& docs = docs_by_cluster[static_cast<size_t>(l)];
        RunReport report;
        report.stage = "experts/" + std::to_string(l);
        if (docs.empty()) {
            std::cerr << "warning: cluster " << l
                      << " is empty; expert left at identity initialization\n";
            reports.push_back(std::move(report));
            continue;
        }

        const TopicWeights route = TopicWeights::one_hot(model.cfg.n_experts, l);
        AdamState adam(model.el.total);

        // A rough step count for the schedule; the exact number of samples
        // varies per epoch with the regenerated views.
        const long est_samples = static_cast<long>(docs.size()) * 2;
        const long total_steps =
            ((est_samples + cfg.batch_size - 1) / cfg.batch_size) * cfg.epochs;
        long step = 0;

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            const auto t0 = Clock::now();
            Rng rng(cfg.seed ^ (static_cast<uint64_t>(l) << 32) ^
                    static_cast<uint64_t>(epoch));
            std::vector<SerializedSample> samples;
            for (const auto& doc : docs) {
                auto views = to_pseudo_dialogues(doc, rng, lm_vocab, model.cfg.max_seq_len);
                for (auto& v : views) samples.push_back(std::move(v));
            }
            std::vector<size_t> lengths(samples.size());
            for (size_t i = 0; i < samples.size(); ++i) lengths[i] = samples[i].input.size();
            const auto batches = make_batches(lengths, cfg.batch_size, rng);

            double epoch_loss = 0.0;
            long batch_count = 0;
            for (const auto& batch : batches) {
                std::vector<TrainItem> items;
                items.reserve(batch.size());
                for (size_t idx : batch) items.push_back({&samples[idx], route});

                Gradients grads = Gradients::zeros_like(model);
                epoch_loss += backward(model, items, RouteMode::OneHot, Freeze::Backbone, grads);
                ++batch_count;

                auto& eg = grads.experts[static_cast<size_t>(l)];
                if (cfg.clip_norm > 0.0) {
                    std::span<double> spans[] = {eg};
                    clip_global_norm(spans, cfg.clip_norm);
                }
                adam_step(model.experts[static_cast<size_t>(l)], eg, adam, cfg,
                          cfg.linear_decay ? linear_schedule(step, total_steps) : 1.0);
                ++step;
            }
            report.epoch_losses.push_back(epoch_loss / static_cast<double>(batch_count));
            report.epoch_seconds.push_back(seconds_since(t0));
        }
        reports.push_back(std::move(report));
    }
    return reports;
}

RunReport adapt_task(const std::vector<DialogueSample>& train,
                     const std::vector<DialogueSample>& valid_seen,
                     const std::vector<DialogueSample>& valid_unseen, Model& model,
                     const TopicArtifacts& topics, const Vocab& lm_vocab, RouteMode mode,
                     const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("adapt_task: empty training set");
    if (valid_seen.empty() || valid_unseen.empty())
        throw std::invalid_argument("adapt_task: empty validation set");

    std::vector<SerializedSample> samples;
    std::vector<TopicWeights> routes;
    samples.reserve(train.size());
    routes.reserve(train.size());
    for (const auto& d : train) {
        samples.push_back(serialize_dialogue(d, lm_vocab, model.cfg.max_seq_len));
        routes.push_back(topics.route_history(d.history_text()));
    }
    std::vector<size_t> lengths(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) lengths[i] = samples[i].input.size();

    RunReport report;
    report.stage = "adapt";

    Rng rng(cfg.seed ^ 0x61646170ull);
    AdamState adam(model.backbone.size());
    const long total_steps =
        static_cast<long>((samples.size() + cfg.batch_size - 1) / cfg.batch_size) * cfg.epochs;
    long step = 0;

    double best_criterion = 0.0;
    std::vector<double> best_backbone;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const auto batches = make_batches(lengths, cfg.batch_size, rng);
        double epoch_loss = 0.0;
        long batch_count = 0;
        for (const auto& batch : batches) {
            std::vector<TrainItem> items;
            items.reserve(batch.size());
            for (size_t idx : batch) items.push_back({&samples[idx], routes[idx]});

            Gradients grads = Gradients::zeros_like(model);
            epoch_loss += backward(model, items, mode, Freeze::Experts, grads);
            ++batch_count;

            if (cfg.clip_norm > 0.0) {
                std::span<double> spans[] = {grads.backbone};
                clip_global_norm(spans, cfg.clip_norm);
            }
            adam_step(model.backbone, grads.backbone, adam, cfg,
                      cfg.linear_decay ? linear_schedule(step, total_steps) : 1.0);
            ++step;
        }
        report.epoch_losses.push_back(epoch_loss / static_cast<double>(batch_count));

        const double ppl_seen = perplexity(model, lm_vocab, topics, valid_seen, mode);
        const double ppl_unseen = perplexity(model, lm_vocab, topics, valid_unseen, mode);
        report.val_ppl_seen.push_back(ppl_seen);
        report.val_ppl_unseen.push_back(ppl_unseen);
        report.epoch_seconds.push_back(seconds_since(t0));

        const double criterion = ppl_seen + ppl_unseen;
        if (report.selected_epoch < 0 || criterion < best_criterion) {
            best_criterion = criterion;
            best_backbone = model.backbone;
            report.selected_epoch = epoch;
        } else if (epoch - report.selected_epoch >= cfg.patience) {
            break;
        }
    }
    model.backbone = std::move(best_backbone);
    return report;
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

void write_cluster_assignments(const ProdLda& model, const std::vector<KnowledgeDoc>& docs,
                               const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    for (const auto& d : docs) {
        const TopicWeights w = infer_topics(model, bow_vector(model.vocab, doc_text(d)));
        out << json{{"doc_id", d.doc_id},
                    {"cluster", assign_cluster(w)},
                    {"weights", w.w}}
                   .dump()
            << '\n';
    }
}

void write_top_words(const ProdLda& model, int k, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    const auto words = top_words(model, k);
    for (size_t l = 0; l < words.size(); ++l) {
        out << "cluster " << l << ":";
        for (const auto& w : words[l]) out << ' ' << w;
        out << '\n';
    }
}

std::vector<KnowledgeDoc> assign_clusters(const ProdLda& model,
                                          std::vector<KnowledgeDoc> docs) {
    for (auto& d : docs) {
        const TopicWeights w = infer_topics(model, bow_vector(model.vocab, doc_text(d)));
        d.cluster = assign_cluster(w);
    }
    return docs;
}

TopicArtifacts train_topic_stage(const std::vector<KnowledgeDoc>& docs,
                                 const std::vector<DialogueSample>* align_dialogues,
                                 int n_clusters, int bow_cap, int hidden,
                                 const TrainConfig& topic_cfg, const TrainConfig& encoder_cfg) {
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& d : docs) texts.push_back(doc_text(d));

    const Vocab bow_vocab = build_vocab(texts, bow_cap);
    std::vector<Bow> bows;
    bows.reserve(texts.size());
    for (const auto& t : texts) bows.push_back(bow_vector(bow_vocab, t));

    TopicArtifacts artifacts;
    artifacts.model =
        train_topic_model(bows, nullptr, bow_vocab, n_clusters, topic_cfg, hidden);

    if (align_dialogues && !align_dialogues->empty()) {
        std::vector<std::pair<Bow, Bow>> pairs;
        pairs.reserve(align_dialogues->size());
        for (const auto& d : *align_dialogues) {
            const std::string history = d.history_text();
            pairs.emplace_back(bow_vector(bow_vocab, history),
                               bow_vector(bow_vocab, history + " " + d.target));
        }
        artifacts.encoder = train_inference_encoder(artifacts.model, pairs, encoder_cfg);
    }
    return artifacts;
}

Vocab build_lm_vocab(const std::vector<KnowledgeDoc>& docs,
                     const std::vector<DialogueSample>& dialogues, int cap) {
    std::vector<std::string> texts;
    texts.reserve(docs.size() + dialogues.size());
    for (const auto& d : docs) texts.push_back(doc_text(d));
    for (const auto& d : dialogues) texts.push_back(d.history_text() + " " + d.target);
    return build_vocab(texts, cap);
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    for (const std::string& p : {cfg.corpus_path, cfg.train_path, cfg.valid_seen_path,
                                 cfg.valid_unseen_path})
        if (!fs::exists(p)) throw std::runtime_error("missing input file: " + p);

    const fs::path dir(cfg.artifacts_dir);
    fs::create_directories(dir / "reports");
    const std::string topic_path = (dir / "topic.ckpt").string();
    const std::string vocab_path = (dir / "vocab.txt").string();
    const std::string experts_path = (dir / "experts.ckpt").string();
    const std::string model_path = (dir / "model.ckpt").string();

    const auto docs = load_corpus(cfg.corpus_path);
    const auto train = load_dialogues(cfg.train_path);
    const auto valid_seen = load_dialogues(cfg.valid_seen_path);
    const auto valid_unseen = load_dialogues(cfg.valid_unseen_path);

    PipelineResult result;

    // (i) topic modeling + encoder alignment
    if (!fs::exists(topic_path)) {
        TopicArtifacts topics =
            train_topic_stage(docs, &train, cfg.n_clusters, cfg.bow_vocab_cap,
                              cfg.topic_hidden, cfg.topic, cfg.encoder);
        save_topics(topics, topic_path);
        write_cluster_assignments(topics.model, docs, (dir / "clusters.jsonl").string());
        write_top_words(topics.model, cfg.top_words_k, (dir / "top_words.txt").string());
        result.ran_topics = true;
    }
    TopicArtifacts topics = load_topics(topic_path);

    // (ii) knowledge expert training
    if (!fs::exists(experts_path) || result.ran_topics) {
        const Vocab lm_vocab = build_lm_vocab(docs, train, cfg.lm_vocab_cap);
        save_vocab(lm_vocab, vocab_path);

        ModelConfig mc = cfg.model;
        mc.n_experts = cfg.n_clusters;
        mc.lm_vocab = lm_vocab.size();
        Model model = Model::init(mc, cfg.experts.seed);

        const auto clustered = assign_clusters(topics.model, docs);
        const auto by_cluster = split_by_cluster(clustered, cfg.n_clusters);
        const auto reports = train_experts(by_cluster, model, lm_vocab, cfg.experts);
        save_model(model, experts_path);
        save_reports_json(reports, (dir / "reports" / "experts_report.json").string());
        result.ran_experts = true;
    }

    // (iii) task adaptation
    if (!fs::exists(model_path) || result.ran_experts) {
        if (!fs::exists(experts_path))
            throw std::runtime_error("missing artifact: " + experts_path);
        if (!fs::exists(vocab_path))
            throw std::runtime_error("missing artifact: " + vocab_path);
        Model model = load_model(experts_path);
        const Vocab lm_vocab = load_vocab(vocab_path);
        RunReport report = adapt_task(train, valid_seen, valid_unseen, model, topics,
                                      lm_vocab, cfg.route_mode, cfg.adapt);
        save_model(model, model_path);
        save_report_json(report, (dir / "reports" / "adapt_report.json").string());
        result.ran_adapt = true;
    }
    return result;
}

}  // namespace knowexpert
