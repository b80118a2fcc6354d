#include "knowexpert/tfidf.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "knowexpert/vocab.hpp"

namespace knowexpert {

TfidfIndex build_tfidf_index(const std::vector<KnowledgeDoc>& docs) {
    if (docs.empty()) throw std::invalid_argument("build_tfidf_index: no documents");

    TfidfIndex index;
    index.doc_ids.reserve(docs.size());
    index.doc_texts.reserve(docs.size());

    std::vector<std::map<int, int>> doc_tf;
    doc_tf.reserve(docs.size());
    std::vector<long> df;
    bool any_nonempty = false;

    for (const auto& d : docs) {
        std::string text;
        for (const auto& s : d.sentences) {
            if (!text.empty()) text.push_back(' ');
            text += s;
        }
        index.doc_ids.push_back(d.doc_id);
        index.doc_texts.push_back(text);

        std::map<int, int> tf;
        for (const auto& w : tokenize_words(text)) {
            auto [it, inserted] = index.term_id.try_emplace(
                w, static_cast<int>(index.term_id.size()));
            if (inserted) df.push_back(0);
            ++tf[it->second];
        }
        for (const auto& [term, count] : tf) ++df[static_cast<size_t>(term)];
        if (!tf.empty()) any_nonempty = true;
        doc_tf.push_back(std::move(tf));
    }
    if (!any_nonempty) throw std::runtime_error("build_tfidf_index: all documents empty");

    const double n = static_cast<double>(docs.size());
    index.idf.resize(df.size());
    for (size_t t = 0; t < df.size(); ++t)
        index.idf[t] = std::log(n / static_cast<double>(df[t]));

    index.doc_vecs.reserve(docs.size());
    index.doc_norms.reserve(docs.size());
    for (const auto& tf : doc_tf) {
        std::vector<std::pair<int, double>> vec;
        vec.reserve(tf.size());
        double sq = 0.0;
        for (const auto& [term, count] : tf) {
            const double w = static_cast<double>(count) * index.idf[static_cast<size_t>(term)];
            vec.emplace_back(term, w);
            sq += w * w;
        }
        index.doc_vecs.push_back(std::move(vec));
        index.doc_norms.push_back(std::sqrt(sq));
    }
    return index;
}

std::vector<int> retrieve(const TfidfIndex& index, const std::string& query, int k) {
    if (k <= 0) throw std::invalid_argument("retrieve: k must be positive");
    ++index.query_count;

    std::map<int, int> tf;
    for (const auto& w : tokenize_words(query)) {
        auto it = index.term_id.find(w);
        if (it != index.term_id.end()) ++tf[it->second];
    }
    std::vector<std::pair<int, double>> qvec;
    qvec.reserve(tf.size());
    double qsq = 0.0;
    for (const auto& [term, count] : tf) {
        const double w = static_cast<double>(count) * index.idf[static_cast<size_t>(term)];
        qvec.emplace_back(term, w);
        qsq += w * w;
    }
    const double qnorm = std::sqrt(qsq);

    const size_t n = index.size();
    std::vector<std::pair<double, int>> scored(n);
    for (size_t doc = 0; doc < n; ++doc) {
        const auto& dvec = index.doc_vecs[doc];
        double dot = 0.0;
        size_t a = 0, b = 0;
        while (a < qvec.size() && b < dvec.size()) {
            if (qvec[a].first < dvec[b].first) {
                ++a;
            } else if (qvec[a].first > dvec[b].first) {
                ++b;
            } else {
                dot += qvec[a].second * dvec[b].second;
                ++a;
                ++b;
            }
        }
        const double denom = qnorm * index.doc_norms[doc];
        scored[doc] = {denom > 0.0 ? dot / denom : 0.0, static_cast<int>(doc)};
    }

    const size_t kk = std::min(static_cast<size_t>(k), n);
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(kk), scored.end(),
                      [](const auto& x, const auto& y) {
                          return x.first > y.first ||
                                 (x.first == y.first && x.second < y.second);
                      });
    std::vector<int> out(kk);
    for (size_t i = 0; i < kk; ++i) out[i] = scored[i].second;
    return out;
}

}  // namespace knowexpert
