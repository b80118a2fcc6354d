#pragma once

#include <string>
#include <vector>

#include "knowexpert/corpus.hpp"
#include "knowexpert/model.hpp"
#include "knowexpert/topic_model.hpp"

namespace knowexpert {

struct EvalReport {
    double ppl = 0.0;
    double f1 = 0.0;
    double dist1 = 0.0;
    double dist2 = 0.0;
    int n_samples = 0;
};

// Greedy decoding from the serialized history with routed experts.
// force_expert >= 0 bypasses the topic model with a one-hot route.
std::string generate(const Model& model, const Vocab& vocab, const TopicArtifacts& topics,
                     const std::vector<Turn>& history, int max_len = 23,
                     RouteMode mode = RouteMode::Weighted, int force_expert = -1,
                     bool stop_at_eos = true);

// Dataset-level perplexity of the gold responses: exp of total masked NLL
// over total masked tokens.
double perplexity(const Model& model, const Vocab& vocab, const TopicArtifacts& topics,
                  const std::vector<DialogueSample>& dataset,
                  RouteMode mode = RouteMode::Weighted);

// Token-multiset overlap F1 after lowercasing, punctuation stripping and
// article removal; 0 when either side normalizes to nothing.
double unigram_f1(const std::string& hypothesis, const std::string& reference);

// Corpus-level distinct-n: unique n-grams / total n-grams over all responses.
double distinct_n(const std::vector<std::string>& responses, int n);

struct GenerationRecord {
    std::string history;
    std::string gold;
    std::string hyp;
};

EvalReport evaluate(const Model& model, const Vocab& vocab, const TopicArtifacts& topics,
                    const std::vector<DialogueSample>& dataset, int max_len = 23,
                    RouteMode mode = RouteMode::Weighted,
                    std::vector<GenerationRecord>* generations = nullptr);

void save_eval_report(const EvalReport& report, const std::string& path);
void save_generations(const std::vector<GenerationRecord>& generations,
                      const std::string& path);

}  // namespace knowexpert
