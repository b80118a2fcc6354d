#pragma once

#include <string>
#include <vector>

#include "knowexpert/corpus.hpp"
#include "knowexpert/model.hpp"
#include "knowexpert/optim.hpp"
#include "knowexpert/topic_model.hpp"

namespace knowexpert {

struct RunReport {
    std::string stage;
    std::vector<double> epoch_losses;
    std::vector<double> val_ppl_seen;
    std::vector<double> val_ppl_unseen;
    int selected_epoch = -1;
    std::vector<double> epoch_seconds;
};

// Timing lives under a separate "timing" key so the deterministic payload can
// be compared across reruns.
void save_report_json(const RunReport& report, const std::string& path);
void save_reports_json(const std::vector<RunReport>& reports, const std::string& path);

// Buckets docs by their cluster field; a missing label is an error.
std::vector<std::vector<KnowledgeDoc>> split_by_cluster(const std::vector<KnowledgeDoc>& docs,
                                                        int n_clusters);

// Stage (ii): each expert trains independently on its cluster's
// pseudo-conversations with one-hot routing; the backbone stays bit-exact.
// Pseudo-conversations are regenerated (new permutations) every epoch.
std::vector<RunReport> train_experts(const std::vector<std::vector<KnowledgeDoc>>& docs_by_cluster,
                                     Model& model, const Vocab& lm_vocab,
                                     const TrainConfig& cfg);

// Stage (iii): fine-tunes the backbone on dialogues with frozen experts,
// routing each sample by its history. Early stopping on the summed validation
// perplexities; the model is left at the selected epoch's parameters.
RunReport adapt_task(const std::vector<DialogueSample>& train,
                     const std::vector<DialogueSample>& valid_seen,
                     const std::vector<DialogueSample>& valid_unseen, Model& model,
                     const TopicArtifacts& topics, const Vocab& lm_vocab, RouteMode mode,
                     const TrainConfig& cfg);

struct PipelineConfig {
    std::string corpus_path;
    std::string train_path;
    std::string valid_seen_path;
    std::string valid_unseen_path;
    std::string artifacts_dir = "artifacts";

    int n_clusters = 4;
    int lm_vocab_cap = 8000;
    int bow_vocab_cap = 20000;
    int topic_hidden = 100;
    int top_words_k = 15;
    ModelConfig model;  // lm_vocab is filled from the data
    TrainConfig topic, encoder, experts, adapt;
    RouteMode route_mode = RouteMode::Weighted;
};

struct PipelineResult {
    bool ran_topics = false;
    bool ran_experts = false;
    bool ran_adapt = false;
};

// Runs stages (i) -> (ii) -> (iii), skipping stages whose artifact already
// exists unless an upstream stage was rerun. Artifact layout under
// artifacts_dir: topic.ckpt, vocab.txt, experts.ckpt, model.ckpt,
// clusters.jsonl, top_words.txt, reports/.
PipelineResult run_pipeline(const PipelineConfig& cfg);

// Shared by the pipeline and the CLI stage commands.
void write_cluster_assignments(const ProdLda& model, const std::vector<KnowledgeDoc>& docs,
                               const std::string& path);
void write_top_words(const ProdLda& model, int k, const std::string& path);
std::vector<KnowledgeDoc> assign_clusters(const ProdLda& model,
                                          std::vector<KnowledgeDoc> docs);
TopicArtifacts train_topic_stage(const std::vector<KnowledgeDoc>& docs,
                                 const std::vector<DialogueSample>* align_dialogues,
                                 int n_clusters, int bow_cap, int hidden,
                                 const TrainConfig& topic_cfg, const TrainConfig& encoder_cfg);
Vocab build_lm_vocab(const std::vector<KnowledgeDoc>& docs,
                     const std::vector<DialogueSample>& dialogues, int cap);

}  // namespace knowexpert
