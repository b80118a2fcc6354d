#include "knowexpert/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#ifdef __linux__
#include <sched.h>
#endif

#include "json.hpp"
#include "knowexpert/dialog.hpp"

namespace knowexpert {

namespace {

using Clock = std::chrono::steady_clock;

void check_timer_resolution() {
    const double tick =
        static_cast<double>(Clock::period::num) / static_cast<double>(Clock::period::den);
    if (tick > 1e-3)
        throw std::runtime_error("run_bench: timer resolution coarser than 1ms");
}

void pin_to_one_core() {
#ifdef __linux__
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(0, &set);
    sched_setaffinity(0, sizeof(set), &set);  // best effort
#endif
}

double now_s() { return std::chrono::duration<double>(Clock::now().time_since_epoch()).count(); }

// Fixed-length greedy generation; EOS is appended like any other token so
// every sample pays for exactly gen_len forward passes.
void generate_fixed(const Model& model, TokenSeq seq, const TopicWeights& w,
                    RouteMode mode, int gen_len) {
    for (int step = 0; step < gen_len; ++step) {
        if (static_cast<int>(seq.size()) >= model.cfg.max_seq_len) break;
        const auto logits = next_token_logits(model, seq, w, mode);
        const int next = static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        seq.ids.push_back(next);
        seq.type_ids.push_back(1);
    }
}

// Knowledge text prepended to the serialized history, GPT-2_trunc style:
// whatever exceeds the budget is cut from the knowledge side.
TokenSeq concat_knowledge(const std::string& knowledge, const std::vector<Turn>& history,
                          const Vocab& vocab, int budget) {
    TokenSeq hist = serialize_history(history, vocab, budget);
    TokenSeq know = encode(vocab, knowledge);
    const size_t room = budget > static_cast<int>(hist.size())
                            ? static_cast<size_t>(budget) - hist.size()
                            : 0;
    if (know.ids.size() > room) know.ids.resize(room);

    TokenSeq seq;
    seq.ids.reserve(hist.size() + know.ids.size());
    seq.ids.push_back(kBos);
    seq.type_ids.push_back(0);
    for (int id : know.ids) {
        seq.ids.push_back(id);
        seq.type_ids.push_back(0);
    }
    // history without its own BOS
    for (size_t i = 1; i < hist.ids.size(); ++i) {
        seq.ids.push_back(hist.ids[i]);
        seq.type_ids.push_back(hist.type_ids[i]);
    }
    return seq;
}

struct TrialSums {
    double lookup = 0.0;
    double gen = 0.0;
};

double mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stdev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean(v);
    double sq = 0.0;
    for (double x : v) sq += (x - mu) * (x - mu);
    return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

BenchRow summarize(const std::string& method, size_t corpus_size,
                   const std::vector<TrialSums>& trials, int n_samples) {
    std::vector<double> totals, lookups, gens;
    for (const auto& t : trials) {
        totals.push_back(t.lookup + t.gen);
        lookups.push_back(t.lookup);
        gens.push_back(t.gen);
    }
    BenchRow row;
    row.method = method;
    row.corpus_size = corpus_size;
    row.mean_s = mean(totals);
    row.stdev_s = stdev(totals);
    row.lookup_s = mean(lookups);
    row.gen_s = mean(gens);
    row.trials = static_cast<int>(trials.size());
    row.n_samples = n_samples;
    return row;
}

}  // namespace

BenchReport run_bench(const Model& model, const Vocab& lm_vocab,
                      const TopicArtifacts& topics, const BenchConfig& cfg) {
    if (cfg.trials < 1 || cfg.n_samples < 1 || cfg.gen_len < 1 || cfg.corpus_sizes.empty())
        throw std::invalid_argument("run_bench: invalid configuration");
    check_timer_resolution();
    pin_to_one_core();

    // One shared set of histories; the generator's word inventory does not
    // depend on the corpus size, so features stay comparable across sizes.
    SyntheticSpec base;
    base.n_clusters = cfg.base_clusters;
    base.vocab_per_cluster = cfg.vocab_per_cluster;
    base.sentences_per_doc = cfg.sentences_per_doc;
    base.seed = cfg.seed;
    base.docs_per_cluster = 1;
    base.dialogues_per_cluster =
        (cfg.n_samples + cfg.base_clusters - 1) / cfg.base_clusters;
    const SyntheticData sample_data = gen_synthetic(base);

    std::vector<const DialogueSample*> histories;
    {
        std::vector<size_t> order(sample_data.dialogues.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(cfg.seed + 17);
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = rng_below(rng, i);
            std::swap(order[i - 1], order[j]);
        }
        for (int i = 0; i < cfg.n_samples; ++i)
            histories.push_back(&sample_data.dialogues[order[static_cast<size_t>(i)] %
                                                       sample_data.dialogues.size()]);
    }

    const int budget = std::max(3, model.cfg.max_seq_len - cfg.gen_len);
    BenchReport report;
    report.config = cfg;
    report.header =
        "all methods timed on one machine, single thread, single core; "
        "lookup and generation are wall-clock seconds per batch of samples";

    std::vector<size_t> sizes = cfg.corpus_sizes;
    std::sort(sizes.begin(), sizes.end());

    for (size_t size : sizes) {
        SyntheticSpec spec = base;
        spec.docs_per_cluster =
            static_cast<int>((size + static_cast<size_t>(cfg.base_clusters) - 1) /
                             static_cast<size_t>(cfg.base_clusters));
        spec.dialogues_per_cluster = 1;
        const SyntheticData corpus = gen_synthetic(spec);
        const TfidfIndex index = build_tfidf_index(corpus.docs);

        // (b) topic routing: no corpus access, the index is never touched
        std::vector<TrialSums> know_trials;
        for (int trial = 0; trial <= cfg.trials; ++trial) {
            TrialSums sums;
            for (const auto* d : histories) {
                const double t0 = now_s();
                const TopicWeights w = topics.route_history(d->history_text());
                const double t1 = now_s();
                TokenSeq seq = serialize_history(d->turns, lm_vocab, budget);
                generate_fixed(model, std::move(seq), w, RouteMode::Weighted, cfg.gen_len);
                const double t2 = now_s();
                sums.lookup += t1 - t0;
                sums.gen += t2 - t1;
            }
            if (trial > 0) know_trials.push_back(sums);  // trial 0 is warm-up
        }
        report.rows.push_back(summarize("knowexpert", size, know_trials, cfg.n_samples));

        // (a) retrieval: top-1 lookup grows with the corpus
        std::vector<TrialSums> tfidf_trials;
        const TopicWeights no_route = TopicWeights::uniform(model.cfg.n_experts);
        for (int trial = 0; trial <= cfg.trials; ++trial) {
            TrialSums sums;
            for (const auto* d : histories) {
                const double t0 = now_s();
                const auto top = retrieve(index, d->history_text(), 1);
                const double t1 = now_s();
                TokenSeq seq = concat_knowledge(index.doc_texts[static_cast<size_t>(top[0])],
                                                d->turns, lm_vocab, budget);
                generate_fixed(model, std::move(seq), no_route, RouteMode::NoExpert,
                               cfg.gen_len);
                const double t2 = now_s();
                sums.lookup += t1 - t0;
                sums.gen += t2 - t1;
            }
            if (trial > 0) tfidf_trials.push_back(sums);
        }
        report.rows.push_back(summarize("tfidf", size, tfidf_trials, cfg.n_samples));
    }
    return report;
}

void save_bench_json(const BenchReport& report, const std::string& path) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"method", r.method},
                        {"corpus_size", r.corpus_size},
                        {"mean_s", r.mean_s},
                        {"stdev_s", r.stdev_s},
                        {"lookup_s", r.lookup_s},
                        {"gen_s", r.gen_s},
                        {"trials", r.trials},
                        {"n_samples", r.n_samples}});
    nlohmann::json j{{"header", report.header},
                     {"config",
                      {{"corpus_sizes", report.config.corpus_sizes},
                       {"n_samples", report.config.n_samples},
                       {"trials", report.config.trials},
                       {"gen_len", report.config.gen_len},
                       {"seed", report.config.seed}}},
                     {"rows", rows}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << j.dump(2) << '\n';
}

namespace {

void write_table(const BenchReport& report, const std::string& path, char sep) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << "method" << sep << "corpus_size" << sep << "mean_s" << sep << "stdev_s" << sep
        << "lookup_s" << sep << "gen_s" << '\n';
    for (const auto& r : report.rows)
        out << r.method << sep << r.corpus_size << sep << r.mean_s << sep << r.stdev_s
            << sep << r.lookup_s << sep << r.gen_s << '\n';
}

}  // namespace

void save_bench_csv(const BenchReport& report, const std::string& path) {
    write_table(report, path, ',');
}

void save_bench_tsv(const BenchReport& report, const std::string& path) {
    write_table(report, path, '\t');
}

}  // namespace knowexpert
