#include "knowexpert/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace knowexpert {

namespace {

const char* kSpecialNames[kNumSpecials] = {"<pad>", "<bos>", "<eos>",
                                           "<user>", "<system>", "<unk>"};

bool is_word_char(unsigned char c) {
    // Bytes >= 0x80 (UTF-8 continuation/lead) count as word characters.
    return std::isalnum(c) || c >= 0x80;
}

}  // namespace

Vocab Vocab::from_content_words(const std::vector<std::string>& words) {
    Vocab v;
    v.word_of.reserve(static_cast<size_t>(kNumSpecials) + words.size());
    for (int i = 0; i < kNumSpecials; ++i) v.word_of.emplace_back(kSpecialNames[i]);
    for (const auto& w : words) v.word_of.push_back(w);
    for (size_t i = 0; i < v.word_of.size(); ++i)
        v.id_of[v.word_of[i]] = static_cast<int>(i);
    return v;
}

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else if (is_word_char(c)) {
            cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c))
                                   : static_cast<char>(c));
        } else {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            out.emplace_back(1, static_cast<char>(c));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab build_vocab(const std::vector<std::string>& texts, int cap) {
    if (cap <= kNumSpecials)
        throw std::invalid_argument("build_vocab: cap must exceed the specials block");

    // std::map keeps counting deterministic and gives the lexicographic tie order.
    std::map<std::string, long> freq;
    for (const auto& t : texts)
        for (auto& w : tokenize_words(t)) ++freq[w];
    if (freq.empty()) throw std::runtime_error("empty corpus");

    std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab v;
    v.word_of.reserve(static_cast<size_t>(cap));
    for (int i = 0; i < kNumSpecials; ++i) v.word_of.emplace_back(kSpecialNames[i]);
    const size_t keep = static_cast<size_t>(cap - kNumSpecials);
    for (size_t i = 0; i < ranked.size() && i < keep; ++i)
        v.word_of.push_back(ranked[i].first);
    for (size_t i = 0; i < v.word_of.size(); ++i)
        v.id_of[v.word_of[i]] = static_cast<int>(i);
    return v;
}

TokenSeq encode(const Vocab& vocab, const std::string& text) {
    TokenSeq seq;
    for (auto& w : tokenize_words(text)) {
        seq.ids.push_back(vocab.id(w));
        seq.type_ids.push_back(0);
    }
    return seq;
}

std::string decode(const Vocab& vocab, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (Vocab::is_special(id) && id != kUnk) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.word(id);
    }
    return out;
}

Bow bow_vector(const Vocab& vocab, const std::string& text) {
    std::map<int, int> counts;
    for (auto& w : tokenize_words(text)) {
        const int id = vocab.id(w);
        if (Vocab::is_special(id)) continue;  // drops UNK too
        ++counts[id];
    }
    return Bow(counts.begin(), counts.end());
}

long bow_l1(const Bow& bow) {
    long total = 0;
    for (auto& [id, c] : bow) total += c;
    return total;
}

std::vector<double> bow_to_dense(const Bow& bow, int vocab_size) {
    std::vector<double> dense(static_cast<size_t>(vocab_size), 0.0);
    for (auto& [id, c] : bow) dense[static_cast<size_t>(id)] = static_cast<double>(c);
    return dense;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open vocab file for writing: " + path);
    for (int i = kNumSpecials; i < vocab.size(); ++i) out << vocab.word(i) << '\n';
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open vocab file: " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        words.push_back(line);
    }
    return Vocab::from_content_words(words);
}

}  // namespace knowexpert
