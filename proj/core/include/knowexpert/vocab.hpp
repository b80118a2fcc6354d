#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace knowexpert {

// Special tokens occupy the lowest ids in every vocabulary.
enum SpecialToken : int {
    kPad = 0,
    kBos = 1,
    kEos = 2,
    kUser = 3,
    kSystem = 4,
    kUnk = 5,
    kNumSpecials = 6,
};

struct Vocab {
    std::vector<std::string> word_of;  // index == id, specials first
    std::unordered_map<std::string, int> id_of;

    int size() const { return static_cast<int>(word_of.size()); }
    int content_size() const { return size() - kNumSpecials; }

    int id(const std::string& w) const {
        auto it = id_of.find(w);
        return it == id_of.end() ? kUnk : it->second;
    }
    const std::string& word(int id) const { return word_of.at(static_cast<size_t>(id)); }
    static bool is_special(int id) { return id < kNumSpecials; }

    // Specials block followed by the given content words, in order.
    static Vocab from_content_words(const std::vector<std::string>& words);
};

struct TokenSeq {
    std::vector<int> ids;
    std::vector<int> type_ids;  // role per token: 0 user, 1 system

    size_t size() const { return ids.size(); }
};

// id -> count, sorted by id; specials and UNK never appear.
using Bow = std::vector<std::pair<int, int>>;

// Lowercases, splits punctuation into single-char tokens, splits on whitespace.
std::vector<std::string> tokenize_words(const std::string& text);

// Frequency-ranked vocabulary, ties broken lexicographically. cap counts the
// specials block. Throws on an empty corpus or cap <= number of specials.
Vocab build_vocab(const std::vector<std::string>& texts, int cap);

TokenSeq encode(const Vocab& vocab, const std::string& text);

// Renders content tokens separated by spaces; specials other than UNK are skipped.
std::string decode(const Vocab& vocab, const std::vector<int>& ids);

Bow bow_vector(const Vocab& vocab, const std::string& text);

long bow_l1(const Bow& bow);

// Dense view sized to vocab.size(); special slots stay zero.
std::vector<double> bow_to_dense(const Bow& bow, int vocab_size);

// One content token per line; line number + specials block == id.
void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace knowexpert
