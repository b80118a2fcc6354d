#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knowexpert/common.hpp"
#include "knowexpert/corpus.hpp"
#include "knowexpert/vocab.hpp"

namespace knowexpert {

struct SerializedSample {
    TokenSeq input;
    std::vector<uint8_t> loss_mask;  // true exactly on system-target tokens (+ EOS)
};

// Splits on . ! ? followed by whitespace/end; trims and drops empty fragments.
std::vector<std::string> split_sentences(const std::string& text);

// Selects floor(ratio * n) utterances without replacement, pairs each selected
// one with the nearest other selected position (ties toward the earlier one)
// and swaps the pairs. Non-selected positions never move.
std::vector<std::string> permute_utterances(const std::vector<std::string>& utts,
                                            double ratio, Rng& rng);

// Layout: BOS, then per turn role token + turn tokens, final turn is
// SYSTEM + target + EOS. Oldest turns are dropped first when over budget;
// the target is never truncated.
SerializedSample serialize_dialogue(const DialogueSample& sample, const Vocab& vocab,
                                    int max_seq_len);

// Prompt for generation: BOS + turns + trailing SYSTEM cue, truncated like above.
TokenSeq serialize_history(const std::vector<Turn>& turns, const Vocab& vocab,
                           int max_seq_len);

// Knowledge document reformatted as alternating utterances after partial
// permutation. Two role-offset views are emitted so that every sentence is a
// system utterance in exactly one of them; a view that masks nothing is dropped.
std::vector<SerializedSample> to_pseudo_dialogues(const KnowledgeDoc& doc, Rng& rng,
                                                  const Vocab& vocab, int max_seq_len,
                                                  double permute_ratio = 0.2);

}  // namespace knowexpert
