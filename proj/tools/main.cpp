#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "knowexpert/bench.hpp"
#include "knowexpert/cli_config.hpp"
#include "knowexpert/eval.hpp"
#include "knowexpert/trainer.hpp"

namespace fs = std::filesystem;
using namespace knowexpert;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
    std::optional<uint64_t> seed;
};

CliConfig resolve_config(const GlobalArgs& g) {
    CliConfig cfg;
    if (!g.config_path.empty()) cfg = CliConfig::from_file(g.config_path);
    for (const auto& kv : g.overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--set expects key=value, got: " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

uint64_t resolve_seed(const GlobalArgs& g, const CliConfig& cfg) {
    if (g.seed) return *g.seed;
    if (cfg.has("seed")) return static_cast<uint64_t>(cfg.get_int("seed", 0));
    if (const char* env = std::getenv("KNOWEXPERT_SEED"))
        return static_cast<uint64_t>(std::strtoull(env, nullptr, 10));
    return 0;
}

TrainConfig stage_cfg(const CliConfig& cfg, const std::string& stage, double def_lr,
                      int def_epochs, int def_batch, uint64_t seed) {
    TrainConfig tc;
    tc.stage = stage;
    tc.lr = cfg.get_double(stage + ".lr", def_lr);
    tc.beta1 = cfg.get_double(stage + ".beta1", 0.9);
    tc.beta2 = cfg.get_double(stage + ".beta2", 0.999);
    tc.epochs = static_cast<int>(cfg.get_int(stage + ".epochs", def_epochs));
    tc.patience = static_cast<int>(cfg.get_int(stage + ".patience", 5));
    tc.batch_size = static_cast<int>(cfg.get_int(stage + ".batch_size", def_batch));
    tc.seed = static_cast<uint64_t>(cfg.get_int(stage + ".seed", static_cast<long>(seed)));
    tc.linear_decay = cfg.get_int(stage + ".linear_decay", 1) != 0;
    tc.clip_norm = cfg.get_double(stage + ".clip_norm", 1.0);
    tc.validate();
    return tc;
}

ModelConfig model_cfg_from(const CliConfig& cfg) {
    ModelConfig mc;
    mc.n_layers = static_cast<int>(cfg.get_int("model.n_layers", 4));
    mc.n_heads = static_cast<int>(cfg.get_int("model.n_heads", 4));
    mc.h = static_cast<int>(cfg.get_int("model.h", 128));
    mc.d = static_cast<int>(cfg.get_int("model.d", 64));
    mc.max_seq_len = static_cast<int>(cfg.get_int("model.max_seq_len", 256));
    return mc;
}

struct ParsedMode {
    RouteMode mode = RouteMode::Weighted;
    int force_expert = -1;
};

ParsedMode parse_mode(const std::string& s) {
    ParsedMode m;
    if (s == "weighted") {
        m.mode = RouteMode::Weighted;
    } else if (s == "one_hot") {
        m.mode = RouteMode::OneHot;
    } else if (s == "no_expert") {
        m.mode = RouteMode::NoExpert;
    } else if (s.rfind("expert=", 0) == 0) {
        m.force_expert = std::stoi(s.substr(7));
        m.mode = RouteMode::OneHot;
    } else {
        throw std::runtime_error("unknown mode: " + s +
                                 " (expected weighted|one_hot|no_expert|expert=i)");
    }
    return m;
}

Vocab vocab_next_to(const std::string& model_path) {
    const fs::path p = fs::path(model_path).parent_path() / "vocab.txt";
    if (!fs::exists(p))
        throw std::runtime_error("missing artifact: " + p.string() +
                                 " (expected next to the model checkpoint)");
    return load_vocab(p.string());
}

void cmd_gen_synthetic(const std::string& out_corpus, const std::string& out_dialogues,
                       const SyntheticSpec& spec) {
    const SyntheticData data = gen_synthetic(spec);
    save_corpus(data.docs, out_corpus);
    save_dialogues(data.dialogues, out_dialogues);
    std::cout << "wrote " << data.docs.size() << " docs to " << out_corpus << " and "
              << data.dialogues.size() << " dialogues to " << out_dialogues << "\n";
}

void cmd_train_topics(const CliConfig& cfg, uint64_t seed, const std::string& corpus_path,
                      const std::string& dialogues_path, const std::string& out_dir,
                      int clusters) {
    const auto docs = load_corpus(corpus_path);
    std::vector<DialogueSample> dialogues;
    if (!dialogues_path.empty()) dialogues = load_dialogues(dialogues_path);

    fs::create_directories(out_dir);
    const TopicArtifacts topics = train_topic_stage(
        docs, dialogues.empty() ? nullptr : &dialogues, clusters,
        static_cast<int>(cfg.get_int("corpus.bow_vocab_cap", 20000)),
        static_cast<int>(cfg.get_int("topic.hidden", 100)),
        stage_cfg(cfg, "topic", 2e-3, 100, 32, seed),
        stage_cfg(cfg, "encoder", 1e-6, 10, 32, seed));

    const fs::path dir(out_dir);
    save_topics(topics, (dir / "topic.ckpt").string());
    write_cluster_assignments(topics.model, docs, (dir / "clusters.jsonl").string());
    write_top_words(topics.model, static_cast<int>(cfg.get_int("topic.top_words", 15)),
                    (dir / "top_words.txt").string());
    std::cout << "trained topic model with L=" << clusters << " over " << docs.size()
              << " docs; artifacts in " << out_dir << "\n";
    if (dialogues.empty())
        std::cerr << "warning: no --dialogues given, inference encoder not aligned\n";
}

void cmd_train_experts(const CliConfig& cfg, uint64_t seed, const std::string& corpus_path,
                       const std::string& topic_path, const std::string& dialogues_path,
                       const std::string& model_out) {
    const auto docs = load_corpus(corpus_path);
    const TopicArtifacts topics = load_topics(topic_path);

    std::vector<DialogueSample> dialogues;
    if (!dialogues_path.empty()) dialogues = load_dialogues(dialogues_path);
    const Vocab lm_vocab = build_lm_vocab(
        docs, dialogues, static_cast<int>(cfg.get_int("corpus.lm_vocab_cap", 8000)));

    const fs::path out(model_out);
    const fs::path out_dir = out.parent_path().empty() ? "." : out.parent_path();
    fs::create_directories(out_dir);
    save_vocab(lm_vocab, (out_dir / "vocab.txt").string());

    ModelConfig mc = model_cfg_from(cfg);
    mc.n_experts = topics.model.n_topics;
    mc.lm_vocab = lm_vocab.size();
    Model model = Model::init(mc, seed);

    const auto clustered = assign_clusters(topics.model, docs);
    const auto by_cluster = split_by_cluster(clustered, mc.n_experts);
    for (size_t l = 0; l < by_cluster.size(); ++l)
        std::cout << "cluster " << l << ": " << by_cluster[l].size() << " docs\n";

    const auto reports = train_experts(by_cluster, model, lm_vocab,
                                       stage_cfg(cfg, "experts", 1e-4, 50, 8, seed));
    save_model(model, model_out);

    fs::create_directories(out_dir / "reports");
    save_reports_json(reports, (out_dir / "reports" / "experts_report.json").string());
    for (size_t l = 0; l < reports.size(); ++l)
        if (!reports[l].epoch_losses.empty())
            std::cout << "expert " << l << " final loss " << reports[l].epoch_losses.back()
                      << "\n";
    std::cout << "wrote " << model_out << "\n";
}

void cmd_adapt(const CliConfig& cfg, uint64_t seed, const std::string& dialogues_path,
               const std::string& valid_seen_path, const std::string& valid_unseen_path,
               const std::string& model_path, const std::string& topic_path,
               const std::string& model_out, const std::string& mode_str) {
    const auto train = load_dialogues(dialogues_path);
    const auto valid_seen = load_dialogues(valid_seen_path);
    const auto valid_unseen = load_dialogues(valid_unseen_path);
    if (!fs::exists(model_path)) throw std::runtime_error("missing artifact: " + model_path);
    Model model = load_model(model_path);
    const TopicArtifacts topics = load_topics(topic_path);
    const Vocab lm_vocab = vocab_next_to(model_path);
    const ParsedMode mode = parse_mode(mode_str);
    if (mode.force_expert >= 0)
        throw std::runtime_error("adapt: expert=i is not a training mode");

    const RunReport report =
        adapt_task(train, valid_seen, valid_unseen, model, topics, lm_vocab, mode.mode,
                   stage_cfg(cfg, "adapt", 1e-5, 50, 8, seed));

    const std::string out = model_out.empty()
                                ? (fs::path(model_path).parent_path() / "model.ckpt").string()
                                : model_out;
    save_model(model, out);
    const fs::path report_dir = fs::path(out).parent_path() / "reports";
    fs::create_directories(report_dir);
    save_report_json(report, (report_dir / "adapt_report.json").string());
    std::cout << "selected epoch " << report.selected_epoch << "; wrote " << out << "\n";
}

void cmd_generate(const std::string& model_path, const std::string& topic_path,
                  const std::string& history_arg, const std::string& mode_str, int max_len) {
    const Model model = load_model(model_path);
    const TopicArtifacts topics = load_topics(topic_path);
    const Vocab lm_vocab = vocab_next_to(model_path);
    const auto history = parse_history_arg(history_arg);
    const ParsedMode mode = parse_mode(mode_str);
    std::cout << generate(model, lm_vocab, topics, history, max_len, mode.mode,
                          mode.force_expert)
              << "\n";
}

void cmd_eval(const std::string& model_path, const std::string& topic_path,
              const std::string& dialogues_path, const std::string& out_dir,
              const std::string& mode_str, int max_len) {
    const Model model = load_model(model_path);
    const TopicArtifacts topics = load_topics(topic_path);
    const Vocab lm_vocab = vocab_next_to(model_path);
    const auto dataset = load_dialogues(dialogues_path);
    const ParsedMode mode = parse_mode(mode_str);

    std::vector<GenerationRecord> gens;
    const EvalReport report =
        evaluate(model, lm_vocab, topics, dataset, max_len, mode.mode, &gens);

    const std::string dir = out_dir.empty()
                                ? (fs::path(model_path).parent_path() / "reports").string()
                                : out_dir;
    fs::create_directories(dir);
    save_eval_report(report, (fs::path(dir) / "eval_report.json").string());
    save_generations(gens, (fs::path(dir) / "generations.jsonl").string());
    std::cout << "ppl " << report.ppl << " f1 " << report.f1 << " dist1 " << report.dist1
              << " dist2 " << report.dist2 << " n " << report.n_samples << "\n";
}

void cmd_bench(const CliConfig& cfg, uint64_t seed, const std::string& out_dir,
               const std::string& model_path, const std::string& topic_path,
               const std::vector<size_t>& sizes, int samples, int trials, int gen_len) {
    BenchConfig bc;
    if (!sizes.empty()) bc.corpus_sizes = sizes;
    bc.n_samples = samples;
    bc.trials = trials;
    bc.gen_len = gen_len;
    bc.seed = seed;
    bc.base_clusters = static_cast<int>(cfg.get_int("bench.clusters", 4));

    const SyntheticSpec base{.n_clusters = bc.base_clusters,
                             .docs_per_cluster = 2,
                             .vocab_per_cluster = bc.vocab_per_cluster,
                             .sentences_per_doc = bc.sentences_per_doc,
                             .seed = seed};

    Model model = [&] {
        if (!model_path.empty()) return load_model(model_path);
        // timing does not depend on weight values; random init is fine
        ModelConfig mc;
        mc.n_layers = static_cast<int>(cfg.get_int("bench.n_layers", 2));
        mc.n_heads = static_cast<int>(cfg.get_int("bench.n_heads", 2));
        mc.h = static_cast<int>(cfg.get_int("bench.h", 32));
        mc.d = static_cast<int>(cfg.get_int("bench.d", 16));
        mc.n_experts = bc.base_clusters;
        mc.max_seq_len = static_cast<int>(cfg.get_int("bench.max_seq_len", 96));
        const SyntheticData sample = gen_synthetic(base);
        const Vocab v = build_lm_vocab(sample.docs, sample.dialogues,
                                       static_cast<int>(cfg.get_int("bench.vocab_cap", 2000)));
        mc.lm_vocab = v.size();
        return Model::init(mc, seed);
    }();

    Vocab lm_vocab;
    TopicArtifacts topics;
    if (!model_path.empty()) {
        if (topic_path.empty())
            throw std::runtime_error("bench: --topic is required with --model");
        lm_vocab = vocab_next_to(model_path);
        topics = load_topics(topic_path);
    } else {
        const SyntheticData sample = gen_synthetic(base);
        lm_vocab = build_lm_vocab(sample.docs, sample.dialogues,
                                  static_cast<int>(cfg.get_int("bench.vocab_cap", 2000)));
        std::vector<std::string> texts;
        for (const auto& d : sample.docs) {
            std::string t;
            for (const auto& s : d.sentences) t += s + " ";
            texts.push_back(t);
        }
        topics.model = ProdLda::init(build_vocab(texts, 2000), bc.base_clusters,
                                     static_cast<int>(cfg.get_int("topic.hidden", 100)), 0,
                                     seed);
    }

    const BenchReport report = run_bench(model, lm_vocab, topics, bc);
    fs::create_directories(out_dir);
    save_bench_json(report, (fs::path(out_dir) / "bench_report.json").string());
    save_bench_csv(report, (fs::path(out_dir) / "bench.csv").string());
    save_bench_tsv(report, (fs::path(out_dir) / "bench.tsv").string());

    std::cout << report.header << "\n";
    for (const auto& r : report.rows)
        std::cout << r.method << " size=" << r.corpus_size << " mean_s=" << r.mean_s
                  << " stdev_s=" << r.stdev_s << " lookup_s=" << r.lookup_s
                  << " gen_s=" << r.gen_s << "\n";
}

void cmd_pipeline(const CliConfig& cfg, uint64_t seed, const std::string& corpus,
                  const std::string& train, const std::string& vs, const std::string& vu,
                  const std::string& out_dir, int clusters, const std::string& mode_str) {
    PipelineConfig pc;
    pc.corpus_path = corpus;
    pc.train_path = train;
    pc.valid_seen_path = vs;
    pc.valid_unseen_path = vu;
    pc.artifacts_dir = out_dir;
    pc.n_clusters = clusters;
    pc.lm_vocab_cap = static_cast<int>(cfg.get_int("corpus.lm_vocab_cap", 8000));
    pc.bow_vocab_cap = static_cast<int>(cfg.get_int("corpus.bow_vocab_cap", 20000));
    pc.topic_hidden = static_cast<int>(cfg.get_int("topic.hidden", 100));
    pc.top_words_k = static_cast<int>(cfg.get_int("topic.top_words", 15));
    pc.model = model_cfg_from(cfg);
    pc.topic = stage_cfg(cfg, "topic", 2e-3, 100, 32, seed);
    pc.encoder = stage_cfg(cfg, "encoder", 1e-6, 10, 32, seed);
    pc.experts = stage_cfg(cfg, "experts", 1e-4, 50, 8, seed);
    pc.adapt = stage_cfg(cfg, "adapt", 1e-5, 50, 8, seed);
    const ParsedMode mode = parse_mode(mode_str);
    if (mode.force_expert >= 0)
        throw std::runtime_error("pipeline: expert=i is not a training mode");
    pc.route_mode = mode.mode;

    const PipelineResult result = run_pipeline(pc);
    std::cout << "stages run: topics=" << result.ran_topics
              << " experts=" << result.ran_experts << " adapt=" << result.ran_adapt
              << "; artifacts in " << out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topic-routed knowledge experts for retrieval-free dialogue"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may appear after the subcommand name

    GlobalArgs g;
    app.add_option("--config", g.config_path, "flat key=value config file");
    app.add_option("--set", g.overrides, "config override key=value (repeatable)");
    uint64_t seed_flag = 0;
    auto* seed_opt = app.add_option("--seed", seed_flag, "global RNG seed");

    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic corpus + dialogues");
    std::string gs_corpus, gs_dialogues;
    SyntheticSpec gs_spec;
    gs_spec.n_clusters = 2;
    gs_spec.docs_per_cluster = 50;
    gs_spec.vocab_per_cluster = 30;
    gs_spec.sentences_per_doc = 5;
    gen->add_option("--out-corpus", gs_corpus)->required();
    gen->add_option("--out-dialogues", gs_dialogues)->required();
    gen->add_option("--clusters", gs_spec.n_clusters);
    gen->add_option("--docs-per-cluster", gs_spec.docs_per_cluster);
    gen->add_option("--vocab-per-cluster", gs_spec.vocab_per_cluster);
    gen->add_option("--sentences-per-doc", gs_spec.sentences_per_doc);
    gen->add_option("--dialogues-per-cluster", gs_spec.dialogues_per_cluster);

    auto* tt = app.add_subcommand("train-topics", "stage (i): topic model + encoder alignment");
    std::string tt_corpus, tt_dialogues, tt_out;
    int tt_clusters = 4;
    tt->add_option("--corpus", tt_corpus)->required();
    tt->add_option("--clusters", tt_clusters);
    tt->add_option("--out", tt_out)->required();
    tt->add_option("--dialogues", tt_dialogues,
                   "dialogue file for inference-encoder alignment");
    int tt_epochs = -1;
    tt->add_option("--epochs", tt_epochs);

    auto* te = app.add_subcommand("train-experts", "stage (ii): per-cluster expert training");
    std::string te_corpus, te_topic, te_dialogues, te_out;
    te->add_option("--corpus", te_corpus)->required();
    te->add_option("--topic", te_topic)->required();
    te->add_option("--model-out", te_out)->required();
    te->add_option("--dialogues", te_dialogues, "dialogues included in the LM vocabulary");
    int te_epochs = -1;
    te->add_option("--epochs", te_epochs);

    auto* ad = app.add_subcommand("adapt", "stage (iii): task adaptation");
    std::string ad_train, ad_vs, ad_vu, ad_model, ad_topic, ad_out, ad_mode = "weighted";
    ad->add_option("--dialogues", ad_train)->required();
    ad->add_option("--valid-seen", ad_vs)->required();
    ad->add_option("--valid-unseen", ad_vu)->required();
    ad->add_option("--model", ad_model)->required();
    ad->add_option("--topic", ad_topic)->required();
    ad->add_option("--model-out", ad_out);
    ad->add_option("--mode", ad_mode, "weighted|one_hot");
    int ad_epochs = -1;
    ad->add_option("--epochs", ad_epochs);

    auto* ge = app.add_subcommand("generate", "greedy response for one history");
    std::string ge_model, ge_topic, ge_history, ge_mode = "weighted";
    int ge_max_len = 23;
    ge->add_option("--model", ge_model)->required();
    ge->add_option("--topic", ge_topic)->required();
    ge->add_option("--history", ge_history, "e.g. \"u: hi|s: hello|u: tell me more\"")
        ->required();
    ge->add_option("--mode", ge_mode, "weighted|one_hot|no_expert|expert=i");
    ge->add_option("--max-len", ge_max_len);

    auto* ev = app.add_subcommand("eval", "automatic metrics on a dialogue file");
    std::string ev_model, ev_topic, ev_dialogues, ev_out, ev_mode = "weighted";
    int ev_max_len = 23;
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--topic", ev_topic)->required();
    ev->add_option("--dialogues", ev_dialogues)->required();
    ev->add_option("--out", ev_out);
    ev->add_option("--mode", ev_mode);
    ev->add_option("--max-len", ev_max_len);

    auto* be = app.add_subcommand("bench", "inference-efficiency comparison");
    std::string be_out, be_model, be_topic;
    std::vector<size_t> be_sizes;
    int be_samples = 100, be_trials = 10, be_gen_len = 23;
    be->add_option("--out", be_out)->required();
    be->add_option("--corpus-sizes", be_sizes, "e.g. 1000 10000 100000");
    be->add_option("--samples", be_samples);
    be->add_option("--trials", be_trials);
    be->add_option("--gen-len", be_gen_len);
    be->add_option("--model", be_model, "trained checkpoint (default: random bench model)");
    be->add_option("--topic", be_topic);

    auto* pl = app.add_subcommand("pipeline", "run stages (i) -> (ii) -> (iii)");
    std::string pl_corpus, pl_train, pl_vs, pl_vu, pl_out, pl_mode = "weighted";
    int pl_clusters = 4;
    pl->add_option("--corpus", pl_corpus)->required();
    pl->add_option("--dialogues", pl_train)->required();
    pl->add_option("--valid-seen", pl_vs)->required();
    pl->add_option("--valid-unseen", pl_vu)->required();
    pl->add_option("--out", pl_out)->required();
    pl->add_option("--clusters", pl_clusters);
    pl->add_option("--mode", pl_mode, "weighted|one_hot");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (seed_opt->count() > 0) g.seed = seed_flag;
        CliConfig cfg = resolve_config(g);
        const uint64_t seed = resolve_seed(g, cfg);
        gs_spec.seed = seed;
        if (tt_epochs >= 0) cfg.set("topic.epochs", std::to_string(tt_epochs));
        if (te_epochs >= 0) cfg.set("experts.epochs", std::to_string(te_epochs));
        if (ad_epochs >= 0) cfg.set("adapt.epochs", std::to_string(ad_epochs));

        if (*gen) {
            cmd_gen_synthetic(gs_corpus, gs_dialogues, gs_spec);
        } else if (*tt) {
            cmd_train_topics(cfg, seed, tt_corpus, tt_dialogues, tt_out, tt_clusters);
        } else if (*te) {
            cmd_train_experts(cfg, seed, te_corpus, te_topic, te_dialogues, te_out);
        } else if (*ad) {
            cmd_adapt(cfg, seed, ad_train, ad_vs, ad_vu, ad_model, ad_topic, ad_out, ad_mode);
        } else if (*ge) {
            cmd_generate(ge_model, ge_topic, ge_history, ge_mode, ge_max_len);
        } else if (*ev) {
            cmd_eval(ev_model, ev_topic, ev_dialogues, ev_out, ev_mode, ev_max_len);
        } else if (*be) {
            cmd_bench(cfg, seed, be_out, be_model, be_topic, be_sizes, be_samples, be_trials,
                      be_gen_len);
        } else if (*pl) {
            cmd_pipeline(cfg, seed, pl_corpus, pl_train, pl_vs, pl_vu, pl_out, pl_clusters,
                         pl_mode);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
