#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "knowexpert/cli_config.hpp"
#include "test_util.hpp"

using namespace knowexpert;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* env = std::getenv("KNOWEXPERT_CLI");
    return env ? env : "";
}

struct RunResult {
    int exit_code;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    RunResult result{-1, {}};
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return result;
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0)
        result.output.append(buf.data(), n);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        if (cli_path().empty()) GTEST_SKIP() << "KNOWEXPERT_CLI not set";
        dir = fs::temp_directory_path() / "kx_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path dir;
};

}  // namespace

TEST(CliConfigFile, ParseAndOverride) {
    const fs::path p = fs::temp_directory_path() / "kx_cfg_test.cfg";
    {
        std::ofstream out(p);
        out << "# comment line\n";
        out << "experts.lr = 0.002\n";
        out << "adapt.epochs=7\n";
        out << "\n";
    }
    CliConfig cfg = CliConfig::from_file(p.string());
    EXPECT_DOUBLE_EQ(cfg.get_double("experts.lr", 0.0), 0.002);
    EXPECT_EQ(cfg.get_int("adapt.epochs", 0), 7);
    EXPECT_EQ(cfg.get_int("absent.key", 42), 42);

    cfg.set("adapt.epochs", "9");  // flag overrides win
    EXPECT_EQ(cfg.get_int("adapt.epochs", 0), 9);

    cfg.set("adapt.epochs", "not-a-number");
    EXPECT_THROW(cfg.get_int("adapt.epochs", 0), std::runtime_error);
    fs::remove(p);
}

TEST(CliConfigFile, RejectsMalformedLines) {
    const fs::path p = fs::temp_directory_path() / "kx_cfg_bad.cfg";
    {
        std::ofstream out(p);
        out << "just a line without equals\n";
    }
    EXPECT_THROW(CliConfig::from_file(p.string()), std::runtime_error);
    fs::remove(p);
}

TEST(HistoryArg, ParsesRolesAndText) {
    const auto turns = parse_history_arg("u: hello there|s: hi!|u: tell me more");
    ASSERT_EQ(turns.size(), 3u);
    EXPECT_EQ(turns[0].role, Role::User);
    EXPECT_EQ(turns[0].text, "hello there");
    EXPECT_EQ(turns[1].role, Role::System);
    EXPECT_EQ(turns[2].role, Role::User);
}

TEST(HistoryArg, RejectsMalformedInput) {
    EXPECT_THROW(parse_history_arg(""), std::invalid_argument);
    EXPECT_THROW(parse_history_arg("x: who"), std::invalid_argument);
    EXPECT_THROW(parse_history_arg("u: hi|s: hello"), std::invalid_argument);  // ends system
    EXPECT_THROW(parse_history_arg("u:"), std::invalid_argument);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    EXPECT_EQ(run_cli("").exit_code, 2);
    EXPECT_EQ(run_cli("train-topics").exit_code, 2);  // missing --corpus
    EXPECT_EQ(run_cli("no-such-command").exit_code, 2);
    EXPECT_EQ(run_cli("--help").exit_code, 0);
}

TEST_F(CliTest, RuntimeErrorsExitOne) {
    const auto r = run_cli("generate --model /nonexistent/model.ckpt --topic /nonexistent/t.ckpt --history \"u: hi\"");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("error:"), std::string::npos);
}

TEST_F(CliTest, EnvSeedFallbackAndConfigFile) {
    // KNOWEXPERT_SEED is the fallback when --seed and the config are silent
    const std::string base = "gen-synthetic --clusters 2 --docs-per-cluster 3 "
                             "--vocab-per-cluster 6 --sentences-per-doc 2 ";
    auto run_env = [&](const std::string& out_tag) {
        const std::string cmd = "KNOWEXPERT_SEED=123 " + cli_path() + " " + base +
                                "--out-corpus " + (dir / (out_tag + "c.jsonl")).string() +
                                " --out-dialogues " + (dir / (out_tag + "d.jsonl")).string() +
                                " >/dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    ASSERT_EQ(run_env("e1"), 0);
    ASSERT_EQ(run_env("e2"), 0);
    EXPECT_EQ(file_bytes(dir / "e1c.jsonl"), file_bytes(dir / "e2c.jsonl"));

    // a config file can carry the seed too
    const fs::path cfg = dir / "seed.cfg";
    {
        std::ofstream out(cfg);
        out << "seed=123\n";
    }
    ASSERT_EQ(run_cli(base + "--config " + cfg.string() + " --out-corpus " +
                      (dir / "f1c.jsonl").string() + " --out-dialogues " +
                      (dir / "f1d.jsonl").string())
                  .exit_code,
              0);
    EXPECT_EQ(file_bytes(dir / "f1c.jsonl"), file_bytes(dir / "e1c.jsonl"));
}

TEST_F(CliTest, GenSyntheticIsSeedDeterministic) {
    const std::string base = "gen-synthetic --clusters 2 --docs-per-cluster 4 "
                             "--vocab-per-cluster 8 --sentences-per-doc 2 --seed 11 ";
    ASSERT_EQ(run_cli(base + "--out-corpus " + (dir / "c1.jsonl").string() +
                      " --out-dialogues " + (dir / "d1.jsonl").string())
                  .exit_code,
              0);
    ASSERT_EQ(run_cli(base + "--out-corpus " + (dir / "c2.jsonl").string() +
                      " --out-dialogues " + (dir / "d2.jsonl").string())
                  .exit_code,
              0);
    EXPECT_EQ(file_bytes(dir / "c1.jsonl"), file_bytes(dir / "c2.jsonl"));
    EXPECT_EQ(file_bytes(dir / "d1.jsonl"), file_bytes(dir / "d2.jsonl"));
}

TEST_F(CliTest, StageFlowSmoke) {
    const std::string corpus = (dir / "corpus.jsonl").string();
    const std::string dialogues = (dir / "dialogues.jsonl").string();
    ASSERT_EQ(run_cli("gen-synthetic --out-corpus " + corpus + " --out-dialogues " +
                      dialogues +
                      " --clusters 2 --docs-per-cluster 6 --vocab-per-cluster 10 "
                      "--sentences-per-doc 2 --seed 3")
                  .exit_code,
              0);

    const std::string art = (dir / "art").string();
    const std::string tiny =
        " --set topic.epochs=10 --set topic.hidden=12 --set topic.batch_size=6"
        " --set encoder.epochs=2 --set model.n_layers=1 --set model.n_heads=2"
        " --set model.h=16 --set model.d=8 --set model.max_seq_len=64"
        " --set experts.epochs=1 --set adapt.epochs=1 --seed 5";

    const auto topics = run_cli("train-topics --corpus " + corpus + " --clusters 2 --out " +
                                art + " --dialogues " + dialogues + tiny);
    ASSERT_EQ(topics.exit_code, 0) << topics.output;
    EXPECT_TRUE(fs::exists(dir / "art" / "topic.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "art" / "clusters.jsonl"));
    EXPECT_TRUE(fs::exists(dir / "art" / "top_words.txt"));

    // one clusters.jsonl line per document
    std::ifstream lines(dir / "art" / "clusters.jsonl");
    int count = 0;
    std::string line;
    while (std::getline(lines, line))
        if (!line.empty()) ++count;
    EXPECT_EQ(count, 12);

    const auto experts = run_cli("train-experts --corpus " + corpus + " --topic " + art +
                                 "/topic.ckpt --model-out " + art + "/experts.ckpt" +
                                 " --dialogues " + dialogues + tiny);
    ASSERT_EQ(experts.exit_code, 0) << experts.output;
    EXPECT_TRUE(fs::exists(dir / "art" / "experts.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "art" / "vocab.txt"));

    const auto adapt = run_cli("adapt --dialogues " + dialogues + " --valid-seen " +
                               dialogues + " --valid-unseen " + dialogues + " --model " +
                               art + "/experts.ckpt --topic " + art + "/topic.ckpt" + tiny);
    ASSERT_EQ(adapt.exit_code, 0) << adapt.output;
    EXPECT_TRUE(fs::exists(dir / "art" / "model.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "art" / "reports" / "adapt_report.json"));

    // experts stay bit-exact through adaptation: compare expert sections
    const auto gen1 = run_cli("generate --model " + art + "/model.ckpt --topic " + art +
                              "/topic.ckpt --history \"u: topic0word1 topic0word2\" --max-len 5");
    ASSERT_EQ(gen1.exit_code, 0) << gen1.output;
    const auto gen2 = run_cli("generate --model " + art + "/model.ckpt --topic " + art +
                              "/topic.ckpt --history \"u: topic0word1 topic0word2\" --max-len 5");
    EXPECT_EQ(gen1.output, gen2.output);

    const auto forced = run_cli("generate --model " + art + "/model.ckpt --topic " + art +
                                "/topic.ckpt --history \"u: topic0word1\" --mode expert=0 "
                                "--max-len 5");
    EXPECT_EQ(forced.exit_code, 0) << forced.output;

    const auto eval = run_cli("eval --model " + art + "/model.ckpt --topic " + art +
                              "/topic.ckpt --dialogues " + dialogues + " --max-len 5");
    ASSERT_EQ(eval.exit_code, 0) << eval.output;
    EXPECT_TRUE(fs::exists(dir / "art" / "reports" / "eval_report.json"));
    EXPECT_TRUE(fs::exists(dir / "art" / "reports" / "generations.jsonl"));
}
