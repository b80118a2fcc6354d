#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "knowexpert/corpus.hpp"

namespace knowexpert {

// Plain tf-idf with idf = ln(N / df). Retrieval scans every document on
// purpose; its cost growing with the corpus is the effect under measurement.
struct TfidfIndex {
    std::unordered_map<std::string, int> term_id;
    std::vector<double> idf;
    std::vector<std::vector<std::pair<int, double>>> doc_vecs;  // sorted by term id
    std::vector<double> doc_norms;
    std::vector<std::string> doc_ids;
    std::vector<std::string> doc_texts;
    mutable uint64_t query_count = 0;

    size_t size() const { return doc_vecs.size(); }
};

TfidfIndex build_tfidf_index(const std::vector<KnowledgeDoc>& docs);

// Top-k doc indices by cosine similarity, ties toward the lower doc index.
std::vector<int> retrieve(const TfidfIndex& index, const std::string& query, int k);

}  // namespace knowexpert
