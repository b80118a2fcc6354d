#include "knowexpert/corpus.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "knowexpert/dialog.hpp"

namespace knowexpert {

using nlohmann::json;

std::string DialogueSample::history_text() const {
    std::string out;
    for (const auto& t : turns) {
        if (!out.empty()) out.push_back(' ');
        out += t.text;
    }
    return out;
}

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    return out;
}

bool has_terminal_punct(const std::string& s) {
    return !s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?');
}

}  // namespace

std::vector<KnowledgeDoc> load_corpus(const std::string& path) {
    auto in = open_in(path);
    std::vector<KnowledgeDoc> docs;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        KnowledgeDoc d;
        d.doc_id = j.at("doc_id").get<std::string>();
        d.title = j.value("title", "");
        d.sentences = split_sentences(j.at("text").get<std::string>());
        docs.push_back(std::move(d));
    }
    return docs;
}

void save_corpus(const std::vector<KnowledgeDoc>& docs, const std::string& path) {
    auto out = open_out(path);
    for (const auto& d : docs) {
        std::string text;
        for (const auto& s : d.sentences) {
            if (!text.empty()) text.push_back(' ');
            text += s;
            if (!has_terminal_punct(s)) text.push_back('.');
        }
        json j{{"doc_id", d.doc_id}, {"title", d.title}, {"text", text}};
        out << j.dump() << '\n';
    }
}

std::vector<DialogueSample> load_dialogues(const std::string& path) {
    auto in = open_in(path);
    std::vector<DialogueSample> dialogues;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
        const auto& turns = j.at("turns");
        if (!turns.is_array() || turns.size() < 2)
            throw std::runtime_error(where + ": dialogue needs at least one turn plus the target");
        DialogueSample s;
        for (size_t i = 0; i < turns.size(); ++i) {
            const std::string role = turns[i].at("role").get<std::string>();
            const std::string text = turns[i].at("text").get<std::string>();
            if (role != "user" && role != "system")
                throw std::runtime_error(where + ": unknown role '" + role + "'");
            if (i + 1 == turns.size()) {
                if (role != "system")
                    throw std::runtime_error(where + ": final turn must be the system target");
                s.target = text;
            } else {
                s.turns.push_back({role == "user" ? Role::User : Role::System, text});
            }
        }
        if (s.turns.back().role != Role::User)
            throw std::runtime_error(where + ": turn before the target must be a user turn");
        dialogues.push_back(std::move(s));
    }
    return dialogues;
}

void save_dialogues(const std::vector<DialogueSample>& dialogues, const std::string& path) {
    auto out = open_out(path);
    for (const auto& d : dialogues) {
        json turns = json::array();
        for (const auto& t : d.turns)
            turns.push_back({{"role", t.role == Role::User ? "user" : "system"},
                             {"text", t.text}});
        turns.push_back({{"role", "system"}, {"text", d.target}});
        out << json{{"turns", turns}}.dump() << '\n';
    }
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    if (spec.n_clusters < 1 || spec.docs_per_cluster < 1 || spec.vocab_per_cluster < 1 ||
        spec.sentences_per_doc < 1)
        throw std::invalid_argument("gen_synthetic: all counts must be >= 1");

    Rng rng(spec.seed);
    SyntheticData data;
    data.cluster_words.resize(static_cast<size_t>(spec.n_clusters));
    for (int c = 0; c < spec.n_clusters; ++c) {
        auto& words = data.cluster_words[static_cast<size_t>(c)];
        words.reserve(static_cast<size_t>(spec.vocab_per_cluster));
        for (int i = 0; i < spec.vocab_per_cluster; ++i)
            words.push_back("topic" + std::to_string(c) + "word" + std::to_string(i));
    }

    auto sample_words = [&](int cluster, int count) {
        const auto& words = data.cluster_words[static_cast<size_t>(cluster)];
        std::string text;
        for (int i = 0; i < count; ++i) {
            if (!text.empty()) text.push_back(' ');
            text += words[rng_below(rng, words.size())];
        }
        return text;
    };

    for (int c = 0; c < spec.n_clusters; ++c) {
        for (int d = 0; d < spec.docs_per_cluster; ++d) {
            KnowledgeDoc doc;
            doc.doc_id = "doc_c" + std::to_string(c) + "_" + std::to_string(d);
            doc.title = sample_words(c, 2);
            doc.cluster = c;
            for (int s = 0; s < spec.sentences_per_doc; ++s) {
                const int len = 5 + static_cast<int>(rng_below(rng, 3));
                doc.sentences.push_back(sample_words(c, len));
            }
            data.docs.push_back(std::move(doc));
        }
    }

    const int n_dialogues = spec.dialogues_per_cluster > 0 ? spec.dialogues_per_cluster
                                                           : spec.docs_per_cluster;
    for (int c = 0; c < spec.n_clusters; ++c) {
        for (int d = 0; d < n_dialogues; ++d) {
            DialogueSample s;
            const int exchanges = 1 + static_cast<int>(rng_below(rng, 2));
            for (int e = 0; e + 1 < exchanges; ++e) {
                s.turns.push_back({Role::User, sample_words(c, 3)});
                s.turns.push_back({Role::System, sample_words(c, 4)});
            }
            s.turns.push_back({Role::User, sample_words(c, 3)});
            s.target = sample_words(c, 5);
            data.dialogues.push_back(std::move(s));
            data.dialogue_cluster.push_back(c);
        }
    }
    return data;
}

}  // namespace knowexpert
