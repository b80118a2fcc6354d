#include "knowexpert/dialog.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace knowexpert {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (size_t i = 0; i < text.size(); ++i) {
        cur.push_back(text[i]);
        const bool at_end = i + 1 == text.size();
        const bool boundary =
            is_terminal(text[i]) &&
            (at_end || std::isspace(static_cast<unsigned char>(text[i + 1])));
        if (boundary) {
            auto t = trim(cur);
            if (!t.empty()) out.push_back(std::move(t));
            cur.clear();
        }
    }
    auto t = trim(cur);
    if (!t.empty()) out.push_back(std::move(t));
    return out;
}

std::vector<std::string> permute_utterances(const std::vector<std::string>& utts,
                                            double ratio, Rng& rng) {
    if (ratio < 0.0 || ratio > 1.0)
        throw std::invalid_argument("permute_utterances: ratio must be in [0, 1]");
    std::vector<std::string> out = utts;
    const size_t n = utts.size();
    const size_t m = static_cast<size_t>(std::floor(ratio * static_cast<double>(n)));
    if (m < 2) return out;

    const auto selected = rng_sample_indices(rng, n, m);
    std::vector<bool> done(selected.size(), false);
    for (size_t i = 0; i < selected.size(); ++i) {
        if (done[i]) continue;
        size_t best = selected.size();
        size_t best_dist = SIZE_MAX;
        for (size_t j = 0; j < selected.size(); ++j) {
            if (j == i || done[j]) continue;
            const size_t dist = selected[j] > selected[i] ? selected[j] - selected[i]
                                                          : selected[i] - selected[j];
            if (dist < best_dist || (dist == best_dist && selected[j] < selected[best])) {
                best = j;
                best_dist = dist;
            }
        }
        if (best == selected.size()) break;  // odd count: last one stays put
        std::swap(out[selected[i]], out[selected[best]]);
        done[i] = done[best] = true;
    }
    return out;
}

namespace {

struct EncodedTurn {
    int role_token;
    int type_id;
    std::vector<int> tokens;
    bool masked;  // content tokens count toward the loss
};

// Shared layout: BOS + (role + tokens)* + optional target block + EOS.
// Dialogue samples and pseudo-conversations serialize through this one path
// so their special-token scheme cannot drift apart.
SerializedSample assemble(const std::vector<EncodedTurn>& turns, bool eos_masked,
                          int eos_type) {
    SerializedSample s;
    s.input.ids.push_back(kBos);
    s.input.type_ids.push_back(0);
    s.loss_mask.push_back(0);
    for (const auto& t : turns) {
        s.input.ids.push_back(t.role_token);
        s.input.type_ids.push_back(t.type_id);
        s.loss_mask.push_back(0);
        for (int id : t.tokens) {
            s.input.ids.push_back(id);
            s.input.type_ids.push_back(t.type_id);
            s.loss_mask.push_back(t.masked ? 1 : 0);
        }
    }
    s.input.ids.push_back(kEos);
    s.input.type_ids.push_back(eos_type);
    s.loss_mask.push_back(eos_masked ? 1 : 0);
    return s;
}

EncodedTurn encode_turn(const Vocab& vocab, Role role, const std::string& text,
                        bool masked) {
    EncodedTurn t;
    t.role_token = role == Role::User ? kUser : kSystem;
    t.type_id = role == Role::User ? 0 : 1;
    t.tokens = encode(vocab, text).ids;
    t.masked = masked;
    return t;
}

// Keeps the most recent turns whose total cost fits the budget.
std::vector<EncodedTurn> keep_recent(std::vector<EncodedTurn> turns, long budget) {
    size_t first = turns.size();
    long used = 0;
    while (first > 0) {
        const long cost = 1 + static_cast<long>(turns[first - 1].tokens.size());
        if (used + cost > budget) break;
        used += cost;
        --first;
    }
    turns.erase(turns.begin(), turns.begin() + static_cast<long>(first));
    return turns;
}

}  // namespace

SerializedSample serialize_dialogue(const DialogueSample& sample, const Vocab& vocab,
                                    int max_seq_len) {
    if (sample.turns.empty())
        throw std::invalid_argument("serialize_dialogue: dialogue has no history turns");

    EncodedTurn target = encode_turn(vocab, Role::System, sample.target, true);
    // BOS + SYSTEM + target + EOS must fit on their own.
    const long base = 3 + static_cast<long>(target.tokens.size());
    if (base > max_seq_len)
        throw std::runtime_error("serialize_dialogue: target exceeds max sequence length");

    std::vector<EncodedTurn> history;
    history.reserve(sample.turns.size());
    for (const auto& t : sample.turns)
        history.push_back(encode_turn(vocab, t.role, t.text, false));
    history = keep_recent(std::move(history), max_seq_len - base);
    history.push_back(std::move(target));
    return assemble(history, /*eos_masked=*/true, /*eos_type=*/1);
}

TokenSeq serialize_history(const std::vector<Turn>& turns, const Vocab& vocab,
                           int max_seq_len) {
    if (turns.empty())
        throw std::invalid_argument("serialize_history: empty history");

    std::vector<EncodedTurn> history;
    history.reserve(turns.size());
    for (const auto& t : turns)
        history.push_back(encode_turn(vocab, t.role, t.text, false));
    history = keep_recent(std::move(history), max_seq_len - 2);  // BOS + SYSTEM cue

    TokenSeq seq;
    seq.ids.push_back(kBos);
    seq.type_ids.push_back(0);
    for (const auto& t : history) {
        seq.ids.push_back(t.role_token);
        seq.type_ids.push_back(t.type_id);
        for (int id : t.tokens) {
            seq.ids.push_back(id);
            seq.type_ids.push_back(t.type_id);
        }
    }
    seq.ids.push_back(kSystem);
    seq.type_ids.push_back(1);
    return seq;
}

std::vector<SerializedSample> to_pseudo_dialogues(const KnowledgeDoc& doc, Rng& rng,
                                                  const Vocab& vocab, int max_seq_len,
                                                  double permute_ratio) {
    if (doc.sentences.empty())
        throw std::invalid_argument("to_pseudo_dialogues: document has no sentences");

    const auto utts = permute_utterances(doc.sentences, permute_ratio, rng);
    std::vector<SerializedSample> views;
    for (int offset : {1, 0}) {  // odd positions first, then even
        std::vector<EncodedTurn> turns;
        bool any_masked = false;
        for (size_t i = 0; i < utts.size(); ++i) {
            const bool is_system = static_cast<int>(i % 2) == offset;
            turns.push_back(encode_turn(vocab, is_system ? Role::System : Role::User,
                                        utts[i], is_system));
            any_masked = any_masked || is_system;
        }
        if (!any_masked) continue;

        turns = keep_recent(std::move(turns), max_seq_len - 2);
        if (turns.empty()) {
            // A single over-long sentence: clip its tail so one turn always fits.
            const size_t last = utts.size() - 1;
            const bool is_system = static_cast<int>(last % 2) == offset;
            auto t = encode_turn(vocab, is_system ? Role::System : Role::User,
                                 utts[last], is_system);
            t.tokens.resize(static_cast<size_t>(std::max(1, max_seq_len - 3)));
            turns.push_back(std::move(t));
            if (!is_system) continue;
        }
        const bool last_system = turns.back().masked;
        views.push_back(assemble(turns, last_system, turns.back().type_id));
    }
    return views;
}

}  // namespace knowexpert
