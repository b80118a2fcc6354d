#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "knowexpert/eval.hpp"
#include "knowexpert/optim.hpp"
#include "knowexpert/trainer.hpp"
#include "test_util.hpp"

using namespace knowexpert;
namespace fs = std::filesystem;

namespace {

TrainConfig cfg_for(const std::string& stage, double lr, int epochs, uint64_t seed,
                    int batch = 8) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.lr = lr;
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg.batch_size = batch;
    return cfg;
}

struct StageFixture {
    SyntheticData data;
    Vocab lm_vocab;
    ModelConfig model_cfg;
    TopicArtifacts topics;
};

StageFixture make_stage_fixture(int docs_per_cluster, uint64_t seed) {
    StageFixture f;
    f.data = gen_synthetic({.n_clusters = 2, .docs_per_cluster = docs_per_cluster,
                            .vocab_per_cluster = 12, .sentences_per_doc = 3,
                            .seed = seed});
    f.lm_vocab = build_lm_vocab(f.data.docs, f.data.dialogues, 4000);

    f.model_cfg.n_layers = 1;
    f.model_cfg.n_heads = 2;
    f.model_cfg.h = 16;
    f.model_cfg.d = 8;
    f.model_cfg.n_experts = 2;
    f.model_cfg.lm_vocab = f.lm_vocab.size();
    f.model_cfg.max_seq_len = 64;

    // random (untrained) routing artifacts are enough for stage mechanics
    std::vector<std::string> texts;
    for (const auto& d : f.data.docs) {
        std::string t;
        for (const auto& s : d.sentences) t += s + " ";
        texts.push_back(t);
    }
    const Vocab bow_vocab = build_vocab(texts, 20000);
    f.topics.model = ProdLda::init(bow_vocab, 2, 20, 0, seed);
    return f;
}

}  // namespace

TEST(LinearSchedule, Endpoints) {
    EXPECT_EQ(linear_schedule(0, 10), 1.0);
    EXPECT_EQ(linear_schedule(5, 10), 0.5);
    EXPECT_EQ(linear_schedule(10, 10), 0.0);
    EXPECT_EQ(linear_schedule(12, 10), 0.0);
    EXPECT_EQ(linear_schedule(3, 0), 1.0);
}

TEST(AdamStep, ZeroGradientLeavesParamsUnchanged) {
    std::vector<double> params = {1.5, -0.5};
    std::vector<double> grads = {0.0, 0.0};
    AdamState state(2);
    adam_step(params, grads, state, cfg_for("t", 0.1, 1, 0), 1.0);
    EXPECT_EQ(params[0], 1.5);
    EXPECT_EQ(params[1], -0.5);
}

TEST(AdamStep, MatchesTwoStepScalarReference) {
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double g1 = 0.5, g2 = -0.3;

    // independent scalar walk-through
    double m = 0.0, v = 0.0, p = 1.0;
    m = b1 * m + (1 - b1) * g1;
    v = b2 * v + (1 - b2) * g1 * g1;
    p -= lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
    const double after_one = p;
    m = b1 * m + (1 - b1) * g2;
    v = b2 * v + (1 - b2) * g2 * g2;
    p -= lr * (m / (1 - std::pow(b1, 2))) / (std::sqrt(v / (1 - std::pow(b2, 2))) + eps);
    const double after_two = p;

    std::vector<double> params = {1.0};
    AdamState state(1);
    TrainConfig cfg = cfg_for("t", lr, 1, 0);
    std::vector<double> grads = {g1};
    adam_step(params, grads, state, cfg, 1.0);
    EXPECT_NEAR(params[0], after_one, 1e-15);
    grads[0] = g2;
    adam_step(params, grads, state, cfg, 1.0);
    EXPECT_NEAR(params[0], after_two, 1e-15);
}

TEST(AdamStep, ZeroScheduleFactorMeansNoUpdate) {
    std::vector<double> params = {2.0};
    std::vector<double> grads = {1.0};
    AdamState state(1);
    adam_step(params, grads, state, cfg_for("t", 0.1, 1, 0), 0.0);
    EXPECT_EQ(params[0], 2.0);
}

TEST(AdamStep, NonFiniteGradientFails) {
    std::vector<double> params = {1.0};
    std::vector<double> grads = {std::nan("")};
    AdamState state(1);
    EXPECT_THROW(adam_step(params, grads, state, cfg_for("t", 0.1, 1, 0), 1.0),
                 std::runtime_error);
}

TEST(ClipGlobalNorm, ScalesDownOnly) {
    std::vector<double> a = {3.0, 0.0};
    std::vector<double> b = {0.0, 4.0};
    std::span<double> spans[] = {a, b};
    const double norm = clip_global_norm(spans, 1.0);
    EXPECT_NEAR(norm, 5.0, 1e-12);
    EXPECT_NEAR(a[0], 0.6, 1e-12);
    EXPECT_NEAR(b[1], 0.8, 1e-12);

    std::vector<double> c = {0.1};
    std::span<double> one[] = {c};
    clip_global_norm(one, 1.0);
    EXPECT_EQ(c[0], 0.1);
}

TEST(TrainExperts, BackboneFrozenAndEmptyClusterUntouched) {
    StageFixture f = make_stage_fixture(6, 61);
    Model model = Model::init(f.model_cfg, 5);

    // everything labeled cluster 0; cluster 1 stays empty
    auto docs = f.data.docs;
    for (auto& d : docs) d.cluster = 0;
    const auto by_cluster = split_by_cluster(docs, 2);

    const uint64_t backbone_before = backbone_checksum(model);
    const uint64_t expert1_before = expert_checksum(model, 1);
    const uint64_t expert0_before = expert_checksum(model, 0);

    const auto reports =
        train_experts(by_cluster, model, f.lm_vocab, cfg_for("experts", 1e-3, 2, 3));
    ASSERT_EQ(reports.size(), 2u);
    EXPECT_EQ(backbone_checksum(model), backbone_before);
    EXPECT_EQ(expert_checksum(model, 1), expert1_before);
    EXPECT_NE(expert_checksum(model, 0), expert0_before);
    EXPECT_FALSE(reports[0].epoch_losses.empty());
    EXPECT_TRUE(reports[1].epoch_losses.empty());
}

TEST(TrainExperts, OverfitsSmallClusterHard) {
    // 50 sentences of a deterministic cyclic language in one cluster; the
    // expert alone must cut NLL below 20% of its starting value.
    const std::vector<std::string> inventory = {
        "alpha bravo charlie", "delta echo foxtrot", "golf hotel india",
        "juliet kilo lima",    "mike november oscar", "papa quebec romeo",
        "sierra tango uniform", "victor whiskey xray"};
    std::vector<KnowledgeDoc> docs;
    for (int i = 0; i < 10; ++i) {
        KnowledgeDoc doc;
        doc.doc_id = "doc" + std::to_string(i);
        doc.cluster = 0;
        for (int s = 0; s < 5; ++s)
            doc.sentences.push_back(inventory[static_cast<size_t>((i + s) % 8)]);
        docs.push_back(std::move(doc));
    }
    std::vector<std::string> texts;
    for (const auto& d : docs) {
        std::string t;
        for (const auto& s : d.sentences) t += s + " ";
        texts.push_back(t);
    }
    const Vocab lm_vocab = build_vocab(texts, 4000);

    ModelConfig mc;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.h = 32;
    mc.d = 32;
    mc.n_experts = 2;
    mc.lm_vocab = lm_vocab.size();
    mc.max_seq_len = 64;
    Model model = Model::init(mc, 7);

    const std::vector<std::vector<KnowledgeDoc>> by_cluster = {docs, {}};
    const TrainConfig cfg = cfg_for("experts", 1e-2, 150, 5, 20);
    const auto reports = train_experts(by_cluster, model, lm_vocab, cfg);
    const auto& losses = reports[0].epoch_losses;
    ASSERT_GE(losses.size(), 2u);
    EXPECT_LT(losses.back(), 0.2 * losses.front())
        << "first " << losses.front() << " last " << losses.back();

    int violations = 0;
    for (size_t e = 3; e + 1 < losses.size(); ++e)
        if (losses[e + 1] > losses[e] + 1e-9) ++violations;
    EXPECT_LE(violations, 2);
}

TEST(AdaptTask, ExpertsFrozenAndSelectionRuleHolds) {
    StageFixture f = make_stage_fixture(8, 71);
    Model model = Model::init(f.model_cfg, 9);

    std::vector<DialogueSample> train(f.data.dialogues.begin(),
                                      f.data.dialogues.end() - 4);
    std::vector<DialogueSample> vs(f.data.dialogues.end() - 4, f.data.dialogues.end() - 2);
    std::vector<DialogueSample> vu(f.data.dialogues.end() - 2, f.data.dialogues.end());

    const double ppl_before = perplexity(model, f.lm_vocab, f.topics, vs);
    const uint64_t experts_before = experts_checksum(model);

    TrainConfig cfg = cfg_for("adapt", 1e-3, 8, 11, 4);
    cfg.patience = 3;
    const RunReport report = adapt_task(train, vs, vu, model, f.topics, f.lm_vocab,
                                        RouteMode::Weighted, cfg);

    EXPECT_EQ(experts_checksum(model), experts_before);

    ASSERT_FALSE(report.val_ppl_seen.empty());
    int argmin = 0;
    for (size_t e = 1; e < report.val_ppl_seen.size(); ++e)
        if (report.val_ppl_seen[e] + report.val_ppl_unseen[e] <
            report.val_ppl_seen[static_cast<size_t>(argmin)] +
                report.val_ppl_unseen[static_cast<size_t>(argmin)])
            argmin = static_cast<int>(e);
    EXPECT_EQ(report.selected_epoch, argmin);
    EXPECT_LE(static_cast<int>(report.val_ppl_seen.size()),
              report.selected_epoch + cfg.patience + 1);

    // the returned model carries the selected epoch's parameters
    const double ppl_after = perplexity(model, f.lm_vocab, f.topics, vs);
    EXPECT_NEAR(ppl_after, report.val_ppl_seen[static_cast<size_t>(report.selected_epoch)],
                1e-9);
    EXPECT_LT(ppl_after, ppl_before);
}

TEST(AdaptTask, EmptyValidationFails) {
    StageFixture f = make_stage_fixture(4, 73);
    Model model = Model::init(f.model_cfg, 1);
    std::vector<DialogueSample> train = f.data.dialogues;
    EXPECT_THROW(adapt_task(train, {}, train, model, f.topics, f.lm_vocab,
                            RouteMode::Weighted, cfg_for("adapt", 1e-3, 2, 0)),
                 std::invalid_argument);
}

namespace {

PipelineConfig micro_pipeline(const fs::path& dir, const fs::path& artifacts) {
    const auto data = gen_synthetic({.n_clusters = 2, .docs_per_cluster = 8,
                                     .vocab_per_cluster = 12, .sentences_per_doc = 3,
                                     .seed = 91, .dialogues_per_cluster = 8});
    fs::create_directories(dir);
    save_corpus(data.docs, (dir / "corpus.jsonl").string());

    std::vector<DialogueSample> train, vs, vu;
    for (size_t i = 0; i < data.dialogues.size(); ++i) {
        if (i % 8 == 6)
            vs.push_back(data.dialogues[i]);
        else if (i % 8 == 7)
            vu.push_back(data.dialogues[i]);
        else
            train.push_back(data.dialogues[i]);
    }
    save_dialogues(train, (dir / "train.jsonl").string());
    save_dialogues(vs, (dir / "valid_seen.jsonl").string());
    save_dialogues(vu, (dir / "valid_unseen.jsonl").string());

    PipelineConfig cfg;
    cfg.corpus_path = (dir / "corpus.jsonl").string();
    cfg.train_path = (dir / "train.jsonl").string();
    cfg.valid_seen_path = (dir / "valid_seen.jsonl").string();
    cfg.valid_unseen_path = (dir / "valid_unseen.jsonl").string();
    cfg.artifacts_dir = artifacts.string();
    cfg.n_clusters = 2;
    cfg.lm_vocab_cap = 4000;
    cfg.topic_hidden = 20;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.h = 16;
    cfg.model.d = 8;
    cfg.model.max_seq_len = 64;
    cfg.topic = cfg_for("topic", 2e-3, 40, 1);
    cfg.encoder = cfg_for("encoder", 1e-3, 10, 2);
    cfg.experts = cfg_for("experts", 1e-3, 3, 3);
    cfg.adapt = cfg_for("adapt", 1e-3, 3, 4, 4);
    return cfg;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST(Pipeline, RunsResumesAndReproduces) {
    const fs::path base = fs::temp_directory_path() / "kx_pipeline_test";
    fs::remove_all(base);
    const PipelineConfig cfg = micro_pipeline(base / "data", base / "a1");

    const PipelineResult r1 = run_pipeline(cfg);
    EXPECT_TRUE(r1.ran_topics);
    EXPECT_TRUE(r1.ran_experts);
    EXPECT_TRUE(r1.ran_adapt);
    for (const char* name : {"topic.ckpt", "vocab.txt", "experts.ckpt", "model.ckpt",
                             "clusters.jsonl", "top_words.txt"})
        EXPECT_TRUE(fs::exists(base / "a1" / name)) << name;

    // complete rerun: everything up to date, nothing reruns
    const PipelineResult r2 = run_pipeline(cfg);
    EXPECT_FALSE(r2.ran_topics);
    EXPECT_FALSE(r2.ran_experts);
    EXPECT_FALSE(r2.ran_adapt);

    // deleting the stage-2 artifact reruns stages 2 and 3 only
    fs::remove(base / "a1" / "experts.ckpt");
    const PipelineResult r3 = run_pipeline(cfg);
    EXPECT_FALSE(r3.ran_topics);
    EXPECT_TRUE(r3.ran_experts);
    EXPECT_TRUE(r3.ran_adapt);

    // a fresh artifacts dir with the same seeds reproduces identical bytes
    PipelineConfig cfg2 = cfg;
    cfg2.artifacts_dir = (base / "a2").string();
    run_pipeline(cfg2);
    for (const char* name : {"topic.ckpt", "vocab.txt", "experts.ckpt", "model.ckpt",
                             "clusters.jsonl"})
        EXPECT_EQ(file_bytes(base / "a1" / name), file_bytes(base / "a2" / name)) << name;

    fs::remove_all(base);
}

TEST(Pipeline, MissingInputIsNamed) {
    PipelineConfig cfg;
    cfg.corpus_path = "/nonexistent/corpus.jsonl";
    cfg.train_path = "/nonexistent/train.jsonl";
    cfg.valid_seen_path = "/nonexistent/vs.jsonl";
    cfg.valid_unseen_path = "/nonexistent/vu.jsonl";
    const std::string msg = kxtest::thrown_message([&] { run_pipeline(cfg); });
    EXPECT_NE(msg.find("missing input file"), std::string::npos);
    EXPECT_NE(msg.find("corpus.jsonl"), std::string::npos);
}
