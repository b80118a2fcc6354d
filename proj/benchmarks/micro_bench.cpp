#include <benchmark/benchmark.h>

#include "knowexpert/bench.hpp"
#include "knowexpert/dialog.hpp"
#include "knowexpert/eval.hpp"
#include "knowexpert/model.hpp"
#include "knowexpert/tfidf.hpp"
#include "knowexpert/topic_model.hpp"
#include "knowexpert/trainer.hpp"

using namespace knowexpert;

namespace {

struct DeskSetup {
    SyntheticData data;
    Vocab lm_vocab;
    Model model;
    TopicArtifacts topics;
    TokenSeq seq;

    DeskSetup()
        : data(gen_synthetic({.n_clusters = 4, .docs_per_cluster = 8,
                              .vocab_per_cluster = 40, .sentences_per_doc = 4,
                              .seed = 42})),
          lm_vocab(build_lm_vocab(data.docs, data.dialogues, 4000)),
          model([&] {
              ModelConfig cfg;
              cfg.lm_vocab = lm_vocab.size();
              return Model::init(cfg, 1);
          }()) {
        std::vector<std::string> texts;
        for (const auto& d : data.docs) {
            std::string t;
            for (const auto& s : d.sentences) t += s + " ";
            texts.push_back(t);
        }
        topics.model = ProdLda::init(build_vocab(texts, 20000), 4, 100, 0, 2);
        seq = serialize_dialogue(data.dialogues.front(), lm_vocab, 256).input;
    }
};

DeskSetup& setup() {
    static DeskSetup s;
    return s;
}

void BM_AdapterApply(benchmark::State& state) {
    auto& s = setup();
    Mat H(static_cast<int>(state.range(0)), s.model.cfg.h);
    Rng rng(3);
    for (double& v : H.a) v = rng_normal(rng);
    for (auto _ : state) {
        Mat out = adapter_apply(s.model, 0, 0, H);
        benchmark::DoNotOptimize(out.a.data());
    }
}
BENCHMARK(BM_AdapterApply)->Arg(8)->Arg(32)->Arg(128);

void BM_ForwardFullSequence(benchmark::State& state) {
    auto& s = setup();
    const TopicWeights w = TopicWeights::uniform(4);
    for (auto _ : state) {
        Mat logits = forward(s.model, s.seq, w, RouteMode::Weighted);
        benchmark::DoNotOptimize(logits.a.data());
    }
}
BENCHMARK(BM_ForwardFullSequence);

void BM_NextTokenLogits(benchmark::State& state) {
    auto& s = setup();
    const TopicWeights w = TopicWeights::uniform(4);
    const RouteMode mode =
        state.range(0) == 0 ? RouteMode::NoExpert
                            : (state.range(0) == 1 ? RouteMode::OneHot : RouteMode::Weighted);
    for (auto _ : state) {
        auto logits = next_token_logits(s.model, s.seq, w, mode);
        benchmark::DoNotOptimize(logits.data());
    }
}
BENCHMARK(BM_NextTokenLogits)->Arg(0)->Arg(1)->Arg(2);

void BM_TopicInference(benchmark::State& state) {
    auto& s = setup();
    const std::string history = s.data.dialogues.front().history_text();
    for (auto _ : state) {
        TopicWeights w = s.topics.route_history(history);
        benchmark::DoNotOptimize(w.w.data());
    }
}
BENCHMARK(BM_TopicInference);

void BM_TfidfRetrieve(benchmark::State& state) {
    const auto corpus = gen_synthetic({.n_clusters = 4,
                                       .docs_per_cluster = static_cast<int>(state.range(0)) / 4,
                                       .vocab_per_cluster = 60, .sentences_per_doc = 5,
                                       .seed = 7});
    const TfidfIndex index = build_tfidf_index(corpus.docs);
    const std::string query = corpus.docs[3].sentences[0];
    for (auto _ : state) {
        auto top = retrieve(index, query, 1);
        benchmark::DoNotOptimize(top.data());
    }
}
BENCHMARK(BM_TfidfRetrieve)->Arg(1000)->Arg(10000);

void BM_SerializePseudoDialogue(benchmark::State& state) {
    auto& s = setup();
    Rng rng(11);
    for (auto _ : state) {
        auto views = to_pseudo_dialogues(s.data.docs.front(), rng, s.lm_vocab, 256);
        benchmark::DoNotOptimize(views.data());
    }
}
BENCHMARK(BM_SerializePseudoDialogue);

}  // namespace

BENCHMARK_MAIN();
