#pragma once

#include <optional>
#include <string>
#include <vector>

#include "knowexpert/common.hpp"

namespace knowexpert {

enum class Role { User, System };

struct Turn {
    Role role;
    std::string text;
};

struct DialogueSample {
    std::vector<Turn> turns;  // history; last turn is a user turn
    std::string target;       // final system utterance

    std::string history_text() const;
};

struct KnowledgeDoc {
    std::string doc_id;
    std::string title;
    std::vector<std::string> sentences;
    std::optional<int> cluster;
};

// JSON-lines file formats. Corpus lines: {"doc_id", "title", "text"};
// dialogue lines: {"turns": [{"role", "text"}, ...]} with the final turn
// being the system target.
std::vector<KnowledgeDoc> load_corpus(const std::string& path);
void save_corpus(const std::vector<KnowledgeDoc>& docs, const std::string& path);

std::vector<DialogueSample> load_dialogues(const std::string& path);
void save_dialogues(const std::vector<DialogueSample>& dialogues, const std::string& path);

struct SyntheticSpec {
    int n_clusters = 2;
    int docs_per_cluster = 5;
    int vocab_per_cluster = 10;
    int sentences_per_doc = 3;
    uint64_t seed = 0;
    int dialogues_per_cluster = -1;  // defaults to docs_per_cluster
};

struct SyntheticData {
    std::vector<KnowledgeDoc> docs;        // cluster field carries the generator label
    std::vector<DialogueSample> dialogues;  // grouped by cluster, same order as docs
    std::vector<int> dialogue_cluster;      // generator label per dialogue
    std::vector<std::vector<std::string>> cluster_words;
};

// Clusters use pairwise-disjoint word sets; output is a pure function of spec.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

}  // namespace knowexpert
