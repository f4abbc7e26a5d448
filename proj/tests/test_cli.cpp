#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "polyfolio/polyfolio.hpp"

namespace fs = std::filesystem;
using namespace polyfolio;

namespace {

const char* cli() {
    const char* p = std::getenv("POLYFOLIO_CLI");
    return p ? p : "polyfolio_cli";
}

fs::path root() {
    static fs::path dir = [] {
        auto d = fs::temp_directory_path() / "polyfolio_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

/// Runs the binary with `args`; stderr goes to `err.txt` in the scratch directory.
int run(const std::string& args) {
    std::string cmd = std::string(cli()) + " " + args + " >" + (root() / "out.txt").string() + " 2>" +
                      (root() / "err.txt").string();
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// Small settings so the whole pipeline runs in seconds.
const char* kSmall = "shuffles = 100\nwindow_len = 24\nlookback = 6\nmodel_dim = 8\nepochs = 3\nbatch_size = 16\n";

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        write(root() / "spec.json",
              R"({"seed": 5, "n_signal_funds": 4, "noise_funds": 2, "n_factors": 3, "n_months": 60})");
        ASSERT_EQ(run("synth --spec " + q(root() / "spec.json") + " --out " + q(root() / "synth")), 0);
        std::string cfg = slurp(root() / "synth" / "config.txt");
        // Drop the echoed defaults that the small settings override.
        std::stringstream in(cfg), out;
        std::string line;
        while (std::getline(in, line)) {
            bool skip = false;
            for (const char* k : {"shuffles ", "window_len ", "lookback ", "model_dim ", "epochs ", "batch_size "})
                skip |= line.rfind(k, 0) == 0;
            if (!skip) out << line << "\n";
        }
        write(root() / "small.txt", out.str() + kSmall);
        ASSERT_EQ(run("features --config " + q(root() / "small.txt") + " --out " + q(root() / "features")), 0);
    }

    static std::string small() { return "--config " + q(root() / "small.txt"); }
    static std::string with_features() { return small() + " --set features=" + q(root() / "features" / "features.csv"); }
};

} // namespace

TEST_F(Cli, SynthWritesPanelFilesAndTruth) {
    for (auto f : {"returns.csv", "aum.csv", "volume.csv", "ground_truth.json", "config.txt"})
        EXPECT_TRUE(fs::exists(root() / "synth" / f)) << f;
    auto truth = nlohmann::json::parse(slurp(root() / "synth" / "ground_truth.json"));
    EXPECT_EQ(truth["signals"].size(), 4u);
    auto p = load_panel((root() / "synth" / "returns.csv").string(), (root() / "synth" / "aum.csv").string(),
                        (root() / "synth" / "volume.csv").string());
    EXPECT_EQ(p.funds().size(), 6u);
    EXPECT_EQ(p.calendar.size(), 60u);
}

TEST_F(Cli, SynthRerunIsIdenticalAndSeedOverrides) {
    ASSERT_EQ(run("synth --spec " + q(root() / "spec.json") + " --out " + q(root() / "synth2")), 0);
    for (auto f : {"returns.csv", "aum.csv", "volume.csv", "ground_truth.json"})
        EXPECT_EQ(slurp(root() / "synth" / f), slurp(root() / "synth2" / f)) << f;
    ASSERT_EQ(run("synth --spec " + q(root() / "spec.json") + " --seed 6 --out " + q(root() / "synth3")), 0);
    EXPECT_NE(slurp(root() / "synth" / "returns.csv"), slurp(root() / "synth3" / "returns.csv"));
    EXPECT_NE(slurp(root() / "synth3" / "config.txt").find("seed = 6"), std::string::npos);
}

TEST_F(Cli, MalformedSpecExitsWithInputError) {
    write(root() / "bad.json", "{\"seed\": 1,,}");
    EXPECT_EQ(run("synth --spec " + q(root() / "bad.json") + " --out " + q(root() / "bad")), 2);
    EXPECT_NE(slurp(root() / "err.txt").find("malformed"), std::string::npos);
    write(root() / "bad2.json", "{\"seeed\": 1}");
    EXPECT_EQ(run("synth --spec " + q(root() / "bad2.json") + " --out " + q(root() / "bad")), 2);
}

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("features --threads 0"), 2);
    write(root() / "typo.txt", "windw_len = 36\n");
    EXPECT_EQ(run("features --config " + q(root() / "typo.txt")), 2);
    EXPECT_NE(slurp(root() / "err.txt").find("typo.txt:1"), std::string::npos);
    EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, FeaturesRowCountMatchesEligibility) {
    auto frames = read_features_csv((root() / "features" / "features.csv").string());
    // Every synthetic series is complete, so each fund has one row per month
    // from the end of its first full window on.
    EXPECT_EQ(frames.size(), 6u * (60u - 24u + 1u));
    std::string scores = slurp(root() / "features" / "scores.csv");
    EXPECT_EQ(std::count(scores.begin(), scores.end(), '\n'), 1 + 6 * 3 * 37);
    EXPECT_TRUE(fs::exists(root() / "features" / "config.txt"));
}

TEST_F(Cli, FeaturesMissingReturnsExitsTwo) {
    write(root() / "noreturns.txt", "returns = /nonexistent/returns.csv\n");
    EXPECT_EQ(run("features --config " + q(root() / "noreturns.txt") + " --out " + q(root() / "x")), 2);
    EXPECT_EQ(run("features --out " + q(root() / "x")), 2);
}

TEST_F(Cli, FeaturesRerunAndThreadCountAreByteIdentical) {
    ASSERT_EQ(run("features " + small() + " --threads 4 --out " + q(root() / "features4")), 0);
    for (auto f : {"features.csv", "scores.csv", "config.txt"})
        EXPECT_EQ(slurp(root() / "features" / f), slurp(root() / "features4" / f)) << f;
}

TEST_F(Cli, EchoedConfigReproducesTheRun) {
    ASSERT_EQ(run("features --config " + q(root() / "features" / "config.txt") + " --out " + q(root() / "echo")), 0);
    EXPECT_EQ(slurp(root() / "features" / "features.csv"), slurp(root() / "echo" / "features.csv"));
    EXPECT_EQ(slurp(root() / "features" / "config.txt"), slurp(root() / "echo" / "config.txt"));
}

TEST_F(Cli, ZeroEpochsWritesTheInitialCheckpoint) {
    ASSERT_EQ(run("train " + with_features() + " --set epochs=0 --out " + q(root() / "train0")), 0);
    auto ckpt = itf::load_checkpoint((root() / "train0" / "checkpoint.bin").string());
    auto cfg = load_config((root() / "train0" / "config.txt").string());
    auto init = itf::init_params(cfg.dims(), cfg.sub_seed("init"));
    auto a = ckpt.params.tensors(), b = init.tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t t = 0; t < a.size(); ++t) EXPECT_TRUE(*a[t].second == *b[t].second) << a[t].first;
}

TEST_F(Cli, TrainIsDeterministicForAFixedSeed) {
    ASSERT_EQ(run("train " + with_features() + " --seed 9 --out " + q(root() / "trainA")), 0);
    ASSERT_EQ(run("train " + with_features() + " --seed 9 --threads 3 --out " + q(root() / "trainB")), 0);
    EXPECT_EQ(slurp(root() / "trainA" / "loss_trace.csv"), slurp(root() / "trainB" / "loss_trace.csv"));
    EXPECT_EQ(slurp(root() / "trainA" / "checkpoint.bin"), slurp(root() / "trainB" / "checkpoint.bin"));
    ASSERT_EQ(run("train " + with_features() + " --seed 10 --out " + q(root() / "trainC")), 0);
    EXPECT_NE(slurp(root() / "trainA" / "checkpoint.bin"), slurp(root() / "trainC" / "checkpoint.bin"));
}

TEST_F(Cli, BacktestAndReport) {
    ASSERT_EQ(run("train " + with_features() + " --out " + q(root() / "trained")), 0);
    std::string bt = "backtest " + with_features() + " --checkpoint " + q(root() / "trained" / "checkpoint.bin");
    ASSERT_EQ(run(bt + " --out " + q(root() / "bt")), 0);
    for (auto f : {"curve.csv", "stats.json", "trades.csv", "trades_WA.csv", "config.txt"})
        EXPECT_TRUE(fs::exists(root() / "bt" / f)) << f;
    auto stats = nlohmann::json::parse(slurp(root() / "bt" / "stats.json"));
    std::vector<std::string> names;
    for (auto& c : stats["curves"]) names.push_back(c["strategy"]);
    EXPECT_EQ(names, (std::vector<std::string>{"SA", "WA", "EW"}));
    for (auto& c : stats["curves"]) {
        if (c.contains("max_conservation_error")) {
            EXPECT_LE(c["max_conservation_error"].get<double>(), 1e-9);
        }
    }
    EXPECT_EQ(slurp(root() / "bt" / "trades.csv").substr(0, 25), "month,fund,action,amount\n");

    ASSERT_EQ(run(bt + " --threads 2 --out " + q(root() / "bt2")), 0);
    for (auto f : {"curve.csv", "stats.json", "trades.csv"}) EXPECT_EQ(slurp(root() / "bt" / f), slurp(root() / "bt2" / f));

    ASSERT_EQ(run("report " + q(root() / "bt")), 0);
    std::string summary = slurp(root() / "bt" / "summary.csv");
    EXPECT_EQ(summary.substr(0, summary.find('\n')),
              "strategy,final_value,annualized_return,annualized_volatility,sharpe,max_drawdown");
    EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 4);
    std::string wide = slurp(root() / "bt" / "curves_wide.csv");
    EXPECT_EQ(wide.substr(0, wide.find('\n')), "month,SA,WA,EW");
}

TEST_F(Cli, BacktestWithoutCheckpointExitsTwo) {
    EXPECT_EQ(run("backtest " + with_features() + " --checkpoint /nonexistent/ckpt.bin --out " + q(root() / "nb")), 2);
    EXPECT_EQ(run("backtest " + with_features() + " --out " + q(root() / "nb")), 2);
}

TEST_F(Cli, ReportOnEmptyDirectoryExitsTwo) {
    fs::create_directories(root() / "empty");
    EXPECT_EQ(run("report " + q(root() / "empty")), 2);
}
