#include "knowexpert/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "knowexpert/dialog.hpp"

namespace knowexpert {

std::string generate(const Model& model, const Vocab& vocab, const TopicArtifacts& topics,
                     const std::vector<Turn>& history, int max_len, RouteMode mode,
                     int force_expert, bool stop_at_eos) {
    if (history.empty()) throw std::invalid_argument("generate: empty history");
    if (max_len < 1) throw std::invalid_argument("generate: max_len must be >= 1");

    TopicWeights w;
    if (force_expert >= 0) {
        w = TopicWeights::one_hot(model.cfg.n_experts, force_expert);
        if (mode == RouteMode::Weighted) mode = RouteMode::OneHot;
    } else if (mode == RouteMode::NoExpert) {
        w = TopicWeights::uniform(model.cfg.n_experts);
    } else {
        std::string text;
        for (const auto& t : history) {
            if (!text.empty()) text.push_back(' ');
            text += t.text;
        }
        w = topics.route_history(text);
    }

    const int budget = std::max(3, model.cfg.max_seq_len - max_len);
    TokenSeq seq = serialize_history(history, vocab, budget);

    std::vector<int> out;
    for (int step = 0; step < max_len; ++step) {
        if (static_cast<int>(seq.size()) >= model.cfg.max_seq_len) break;
        const auto logits = next_token_logits(model, seq, w, mode);
        const int next = static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (next == kEos && stop_at_eos) break;
        out.push_back(next);
        seq.ids.push_back(next);
        seq.type_ids.push_back(1);
    }
    return decode(vocab, out);
}

double perplexity(const Model& model, const Vocab& vocab, const TopicArtifacts& topics,
                  const std::vector<DialogueSample>& dataset, RouteMode mode) {
    if (dataset.empty()) throw std::invalid_argument("perplexity: empty dataset");
    double total_nll = 0.0;
    long total_tokens = 0;
    std::vector<int> targets;
    std::vector<uint8_t> mask;
    for (const auto& sample : dataset) {
        const SerializedSample s = serialize_dialogue(sample, vocab, model.cfg.max_seq_len);
        const TopicWeights w = mode == RouteMode::NoExpert
                                   ? TopicWeights::uniform(model.cfg.n_experts)
                                   : topics.route_history(sample.history_text());
        const Mat logits = forward(model, s.input, w, mode);
        shift_targets(s, targets, mask);
        long count = 0;
        for (uint8_t f : mask) count += f;
        total_nll += loss_nll(logits, targets, mask) * static_cast<double>(count);
        total_tokens += count;
    }
    if (total_tokens == 0) throw std::runtime_error("perplexity: no masked tokens");
    return std::exp(total_nll / static_cast<double>(total_tokens));
}

namespace {

std::vector<std::string> normalize_for_f1(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char c : text) {
        if (std::ispunct(c)) continue;
        cleaned.push_back(static_cast<char>(std::tolower(c)));
    }
    std::vector<std::string> tokens;
    std::istringstream in(cleaned);
    std::string tok;
    while (in >> tok)
        if (tok != "a" && tok != "an" && tok != "the") tokens.push_back(tok);
    return tokens;
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        tokens.push_back(tok);
    }
    return tokens;
}

}  // namespace

double unigram_f1(const std::string& hypothesis, const std::string& reference) {
    const auto hyp = normalize_for_f1(hypothesis);
    const auto ref = normalize_for_f1(reference);
    if (hyp.empty() || ref.empty()) return 0.0;

    std::map<std::string, long> ref_counts;
    for (const auto& t : ref) ++ref_counts[t];
    long overlap = 0;
    for (const auto& t : hyp) {
        auto it = ref_counts.find(t);
        if (it != ref_counts.end() && it->second > 0) {
            ++overlap;
            --it->second;
        }
    }
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(hyp.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 2.0 * p * r / (p + r);
}

double distinct_n(const std::vector<std::string>& responses, int n) {
    if (n != 1 && n != 2) throw std::invalid_argument("distinct_n: n must be 1 or 2");
    std::set<std::string> unique;
    long total = 0;
    for (const auto& r : responses) {
        const auto tokens = whitespace_tokens(r);
        if (static_cast<int>(tokens.size()) < n) continue;
        for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
            std::string gram = tokens[i];
            for (int j = 1; j < n; ++j) {
                gram.push_back(' ');
                gram += tokens[i + static_cast<size_t>(j)];
            }
            unique.insert(std::move(gram));
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

EvalReport evaluate(const Model& model, const Vocab& vocab, const TopicArtifacts& topics,
                    const std::vector<DialogueSample>& dataset, int max_len, RouteMode mode,
                    std::vector<GenerationRecord>* generations) {
    EvalReport report;
    report.n_samples = static_cast<int>(dataset.size());
    report.ppl = perplexity(model, vocab, topics, dataset, mode);

    std::vector<std::string> hyps;
    hyps.reserve(dataset.size());
    double f1_sum = 0.0;
    for (const auto& sample : dataset) {
        const std::string hyp = generate(model, vocab, topics, sample.turns, max_len, mode);
        f1_sum += unigram_f1(hyp, sample.target);
        if (generations)
            generations->push_back({sample.history_text(), sample.target, hyp});
        hyps.push_back(hyp);
    }
    report.f1 = dataset.empty() ? 0.0 : f1_sum / static_cast<double>(dataset.size());
    report.dist1 = distinct_n(hyps, 1);
    report.dist2 = distinct_n(hyps, 2);
    return report;
}

void save_eval_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    nlohmann::json j{{"ppl", report.ppl},
                     {"f1", report.f1},
                     {"dist1", report.dist1},
                     {"dist2", report.dist2},
                     {"n_samples", report.n_samples}};
    out << j.dump(2) << '\n';
}

void save_generations(const std::vector<GenerationRecord>& generations,
                      const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    for (const auto& g : generations)
        out << nlohmann::json{{"history", g.history}, {"gold", g.gold}, {"hyp", g.hyp}}.dump()
            << '\n';
}

}  // namespace knowexpert
