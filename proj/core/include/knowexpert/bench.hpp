#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knowexpert/corpus.hpp"
#include "knowexpert/model.hpp"
#include "knowexpert/tfidf.hpp"
#include "knowexpert/topic_model.hpp"

namespace knowexpert {

struct BenchConfig {
    std::vector<size_t> corpus_sizes = {1000, 10000, 100000};
    int n_samples = 100;
    int trials = 10;   // plus one discarded warm-up trial
    int gen_len = 23;  // fixed generation length; EOS does not stop the clock
    uint64_t seed = 0;
    int base_clusters = 4;
    int vocab_per_cluster = 60;
    int sentences_per_doc = 5;
};

struct BenchRow {
    std::string method;  // "knowexpert" | "tfidf"
    size_t corpus_size = 0;
    double mean_s = 0.0;   // per-trial total for n_samples, mean over trials
    double stdev_s = 0.0;
    double lookup_s = 0.0;  // mean lookup share of the total
    double gen_s = 0.0;     // mean generation share
    int trials = 0;
    int n_samples = 0;
};

struct BenchReport {
    std::string header;
    BenchConfig config;
    std::vector<BenchRow> rows;
};

// Per corpus size, times two pipelines over the same sampled histories:
// retrieval (tf-idf top-1 concatenated into the context, then generation) and
// topic routing (no corpus access, then generation). The first trial is a
// discarded warm-up.
BenchReport run_bench(const Model& model, const Vocab& lm_vocab,
                      const TopicArtifacts& topics, const BenchConfig& cfg);

void save_bench_json(const BenchReport& report, const std::string& path);
void save_bench_csv(const BenchReport& report, const std::string& path);
void save_bench_tsv(const BenchReport& report, const std::string& path);

}  // namespace knowexpert
