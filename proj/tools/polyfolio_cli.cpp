#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "polyfolio/polyfolio.hpp"

namespace fs = std::filesystem;
using namespace polyfolio;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> out;
    std::vector<std::string> sets;
    std::string spec;
    std::string checkpoint;
    std::string report_dir;
};

/// Config file, then `--set` pairs, then the dedicated flags.
RunConfig resolve_config(const Options& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
    for (auto& kv : o.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw InputError("--set expects KEY=VALUE, got '" + kv + "'");
        set_config_value(cfg, std::string(csv::trim(kv.substr(0, eq))), std::string(csv::trim(kv.substr(eq + 1))));
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.threads) cfg.threads = *o.threads;
    if (o.out) cfg.out = *o.out;
    if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
    return cfg;
}

std::vector<FeatureFrame> load_or_build_frames(const ReturnPanel& panel, const RunConfig& cfg) {
    if (!cfg.features.empty()) return read_features_csv(cfg.features);
    std::cerr << "no features file configured; computing features\n";
    return pipeline::run_features(panel, cfg).frames;
}

int cmd_synth(const Options& o) {
    if (o.spec.empty()) throw InputError("synth needs --spec FILE");
    std::ifstream in(o.spec);
    if (!in) throw InputError("cannot open synth spec " + o.spec);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(o.spec + ": malformed JSON: " + e.what());
    }
    RunConfig cfg = resolve_config(o);
    if (o.seed) j["seed"] = *o.seed;
    auto spec = synth::spec_from_json(j);
    auto g = synth::generate(spec);

    fs::path dir = pipeline::ensure_dir(cfg.out);
    pipeline::write_file(dir / "returns.csv", [&](std::ostream& s) { write_returns_csv(s, g.panel); });
    pipeline::write_file(dir / "aum.csv", [&](std::ostream& s) { write_fund_values_csv(s, g.panel, g.panel.aum, "aum"); });
    pipeline::write_file(dir / "volume.csv",
                         [&](std::ostream& s) { write_fund_values_csv(s, g.panel, g.panel.volume, "volume"); });
    pipeline::write_text(dir / "ground_truth.json", synth::truth_to_json(g.truth).dump(2) + "\n");
    pipeline::write_text(dir / "synth_spec.json", j.dump(2) + "\n");
    // The echoed config points at the generated files so later stages can use it directly.
    cfg.seed = spec.seed;
    cfg.returns = (dir / "returns.csv").string();
    cfg.aum = (dir / "aum.csv").string();
    cfg.volume = (dir / "volume.csv").string();
    pipeline::echo_config(dir, cfg);
    std::cout << "synth: " << g.panel.funds().size() << " funds, " << g.panel.factors().size() << " factors, "
              << g.panel.size() << " months -> " << dir.string() << "\n";
    return 0;
}

int cmd_features(const Options& o) {
    RunConfig cfg = resolve_config(o);
    cfg.validate();
    auto panel = pipeline::load_inputs(cfg);
    auto build = pipeline::run_features(panel, cfg);
    fs::path dir = pipeline::ensure_dir(cfg.out);
    pipeline::write_feature_outputs(dir, build);
    pipeline::echo_config(dir, cfg);
    std::size_t valid = 0, eligible = 0;
    std::map<std::string, std::size_t> reasons;
    for (auto& f : build.frames) {
        valid += f.valid;
        eligible += f.eligible();
        for (auto& r : f.reasons) ++reasons[r];
    }
    std::cout << "features: " << valid << " valid of " << eligible << " eligible rows, " << build.scores.size()
              << " scored pairs -> " << dir.string() << "\n";
    for (auto& [r, n] : reasons) std::cout << "  skipped " << r << ": " << n << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    RunConfig cfg = resolve_config(o);
    cfg.validate();
    auto panel = pipeline::load_inputs(cfg);
    auto frames = load_or_build_frames(panel, cfg);
    auto t = pipeline::run_training(frames, panel, cfg);
    fs::path dir = pipeline::ensure_dir(cfg.out);
    pipeline::write_training_outputs(dir, t);
    pipeline::echo_config(dir, cfg);
    std::cout << "train: " << t.n_train << " training and " << t.n_eval << " held-out samples, train_end "
              << t.checkpoint.train_end.str();
    for (auto it = t.trace.rbegin(); it != t.trace.rend(); ++it)
        if (it->split == "train") {
            std::cout << ", final loss " << it->loss << ", accuracy " << it->accuracy;
            break;
        }
    std::cout << " -> " << dir.string() << "\n";
    return 0;
}

int cmd_backtest(const Options& o) {
    RunConfig cfg = resolve_config(o);
    cfg.validate();
    if (cfg.checkpoint.empty()) throw InputError("backtest needs --checkpoint PATH or a checkpoint config key");
    auto ckpt = itf::load_checkpoint(cfg.checkpoint);
    auto panel = pipeline::load_inputs(cfg);
    auto frames = load_or_build_frames(panel, cfg);
    auto b = pipeline::run_backtest_stage(panel, frames, ckpt, cfg);
    fs::path dir = pipeline::ensure_dir(cfg.out);
    pipeline::write_backtest_outputs(dir, b);
    pipeline::echo_config(dir, cfg);
    std::cout << "backtest: " << b.start.str() << " .. " << b.end.str() << "\n";
    for (auto& c : b.curves) std::cout << "  " << c.name << " final value " << csv::fmt(c.curve.back().value) << "\n";
    for (auto& r : b.results)
        for (auto& w : r.warnings) std::cerr << "warning (" << to_string(r.strategy) << "): " << w << "\n";
    return 0;
}

int cmd_report(const Options& o) {
    fs::path dir = !o.report_dir.empty() ? fs::path(o.report_dir) : fs::path(o.out.value_or("out"));
    fs::path curve = dir / "curve.csv";
    if (!fs::exists(curve)) throw InputError("no curve.csv in " + dir.string());
    auto curves = pipeline::read_curves_csv(curve.string());
    if (curves.empty()) throw InputError(curve.string() + " has no curves");
    std::ostringstream summary;
    pipeline::write_summary_csv(summary, curves);
    pipeline::write_text(dir / "summary.csv", summary.str());
    pipeline::write_file(dir / "curves_wide.csv", [&](std::ostream& s) { pipeline::write_wide_csv(s, curves); });
    std::cout << summary.str();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Factor-model features, trend classifier and portfolio backtests"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "top-level seed");
        sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--set", o.sets, "override one config key (KEY=VALUE)");
    };
    auto* synth = app.add_subcommand("synth", "generate a planted-signal panel");
    synth->add_option("--spec", o.spec, "JSON synth spec")->required();
    auto* features = app.add_subcommand("features", "compute feature rows and the score matrix");
    auto* train = app.add_subcommand("train", "train the trend classifier");
    auto* backtest = app.add_subcommand("backtest", "run SA/WA backtests from a checkpoint");
    backtest->add_option("--checkpoint", o.checkpoint, "checkpoint written by train");
    auto* report = app.add_subcommand("report", "summarize a backtest output directory");
    report->add_option("dir", o.report_dir, "backtest output directory");
    for (auto* s : {synth, features, train, backtest, report}) add_common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitInput;
    }
    try {
        if (*synth) return cmd_synth(o);
        if (*features) return cmd_features(o);
        if (*train) return cmd_train(o);
        if (*backtest) return cmd_backtest(o);
        return cmd_report(o);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitNumerical;
    }
}
