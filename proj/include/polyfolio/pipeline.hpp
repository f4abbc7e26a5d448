#ifndef POLYFOLIO_PIPELINE_HPP
#define POLYFOLIO_PIPELINE_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyfolio/backtest.hpp"
#include "polyfolio/config.hpp"
#include "polyfolio/errors.hpp"
#include "polyfolio/forecast.hpp"
#include "polyfolio/itf.hpp"
#include "polyfolio/panel.hpp"
#include "polyfolio/risk_features.hpp"
#include "polyfolio/significance.hpp"

namespace polyfolio::pipeline {

namespace fs = std::filesystem;

inline fs::path ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

template <class Writer>
void write_file(const fs::path& path, Writer&& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    w(out);
    if (!out) throw InputError("failed writing " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
    write_file(path, [&](std::ostream& o) { o << text; });
}

inline void echo_config(const fs::path& dir, const RunConfig& cfg) {
    write_text(dir / "config.txt", polyfolio::echo_config(cfg));
}

inline ReturnPanel load_inputs(const RunConfig& cfg) {
    if (cfg.returns.empty()) throw InputError("config does not name a returns file");
    return load_panel(cfg.returns, cfg.aum, cfg.volume, cfg.benchmark);
}

// ---------------------------------------------------------------------------
// Features.

/// Calendar months whose trailing window fits inside the calendar.
inline std::vector<MonthIndex> feature_months(const ReturnPanel& panel, std::size_t window_len) {
    std::vector<MonthIndex> out;
    for (std::size_t i = 0; i < panel.size(); ++i)
        if (i + 1 >= window_len) out.push_back(panel.calendar[i]);
    return out;
}

inline FeatureBuild run_features(const ReturnPanel& panel, const RunConfig& cfg) {
    cfg.validate();
    if (panel.funds().empty()) throw InputError("panel has no fund series");
    if (panel.factors().empty()) throw InputError("panel has no factor series");
    auto months = feature_months(panel, cfg.window_len);
    if (months.empty()) throw InputError("calendar is shorter than the window length");
    return build_feature_frames(panel, panel.funds(), panel.factors(), months, cfg.feature_config(), cfg.threads);
}

inline void write_feature_outputs(const fs::path& dir, const FeatureBuild& b) {
    write_file(dir / "features.csv", [&](std::ostream& o) { write_features_csv(o, b.frames); });
    write_file(dir / "scores.csv", [&](std::ostream& o) { write_scores_csv(o, b.scores); });
}

// ---------------------------------------------------------------------------
// Training.

/// Label month at `fraction` of the way through the distinct label months.
inline MonthIndex default_train_end(const std::vector<itf::Sample>& samples, double fraction) {
    std::vector<MonthIndex> labels;
    for (auto& s : samples) labels.push_back(s.month.next());
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    if (labels.size() < 2) throw InputError("need samples from at least two label months to split");
    auto k = static_cast<std::size_t>(fraction * static_cast<double>(labels.size() - 1));
    return labels[std::min(k, labels.size() - 2)];
}

struct TrainOutcome {
    itf::Checkpoint checkpoint;
    std::vector<itf::TraceRow> trace;
    std::size_t n_train = 0;
    std::size_t n_eval = 0;
};

/// Builds lookback samples from the frames, splits chronologically, fits the
/// per-variate scaling on the training part and trains from a seeded init.
inline TrainOutcome run_training(const std::vector<FeatureFrame>& frames, const ReturnPanel& panel,
                                 const RunConfig& cfg) {
    cfg.validate();
    itf::FrameIndex index(frames);
    auto samples = itf::build_samples(index, panel, cfg.lookback, cfg.tau);
    if (samples.empty()) throw InputError("no fund has " + std::to_string(cfg.lookback) + " consecutive valid feature rows");
    MonthIndex train_end = cfg.train_end ? *cfg.train_end : default_train_end(samples, cfg.train_fraction);
    auto split = itf::chronological_split(std::move(samples), train_end);
    if (split.train.empty()) throw InputError("no training samples with label month at or before " + train_end.str());

    TrainOutcome out;
    out.n_train = split.train.size();
    out.n_eval = split.eval.size();
    auto norm = itf::Normalizer::fit(split.train);
    norm.apply_all(split.train);
    norm.apply_all(split.eval);
    auto init = itf::init_params(cfg.dims(), cfg.sub_seed("init"));
    auto result = itf::train(split.train, split.eval, std::move(init), cfg.schedule());
    out.checkpoint = {std::move(result.params), std::move(norm), train_end, cfg.tau};
    out.trace = std::move(result.trace);
    return out;
}

inline void write_training_outputs(const fs::path& dir, const TrainOutcome& t) {
    write_file(dir / "checkpoint.bin", [&](std::ostream& o) { itf::save_checkpoint(o, t.checkpoint); });
    write_file(dir / "loss_trace.csv", [&](std::ostream& o) { itf::write_trace_csv(o, t.trace); });
}

// ---------------------------------------------------------------------------
// Backtest.

/// Forecasts used in each month of [start, end], built from frames through
/// the previous month. A month with no eligible fund is an error.
inline ForecastsByMonth forecast_months(const itf::FrameIndex& index, const itf::Checkpoint& ckpt, MonthIndex start,
                                        MonthIndex end) {
    ForecastsByMonth out;
    for (MonthIndex m = start; m <= end; m = m.next()) {
        auto pf = itf::predict_panel(index, ckpt.params, ckpt.normalizer, m.prev());
        if (pf.forecasts.empty()) throw InputError("no fund is eligible for a forecast used in " + m.str());
        out[m] = std::move(pf.forecasts);
    }
    return out;
}

struct NamedCurve {
    std::string name;
    std::vector<CurvePoint> curve;
};

struct BacktestOutcome {
    MonthIndex start;
    MonthIndex end;
    std::vector<BacktestResult> results;
    std::vector<NamedCurve> curves; // strategies, then EW, then benchmarks
};

inline BacktestOutcome run_backtests(const ReturnPanel& panel, const ForecastsByMonth& forecasts, const RunConfig& cfg,
                                     MonthIndex start, MonthIndex end) {
    BacktestOutcome out{start, end, {}, {}};
    BacktestOptions opt;
    opt.score_mode = cfg.score_mode;
    opt.wa_full_reweight = cfg.wa_full_reweight;
    for (auto s : cfg.strategies) {
        out.results.push_back(run_backtest(panel, forecasts, s, start, end, opt));
        out.curves.push_back({to_string(s), out.results.back().report.cumulative_curve});
    }
    out.curves.push_back({"EW", equal_weight_curve(panel, panel.funds(), start, end)});
    for (auto& b : panel.benchmarks()) out.curves.push_back({b.id, series_curve(panel, b, start, end)});
    return out;
}

/// Out-of-sample range: the month after the last training label through the
/// end of the calendar.
inline BacktestOutcome run_backtest_stage(const ReturnPanel& panel, const std::vector<FeatureFrame>& frames,
                                          const itf::Checkpoint& ckpt, const RunConfig& cfg) {
    cfg.validate();
    if (panel.calendar.empty()) throw InputError("empty panel");
    MonthIndex start = ckpt.train_end.next();
    MonthIndex end = panel.calendar.back();
    if (end < start) throw InputError("no months after the training period (" + ckpt.train_end.str() + ")");
    itf::FrameIndex index(frames);
    return run_backtests(panel, forecast_months(index, ckpt, start, end), cfg, start, end);
}

inline void write_curves_csv(std::ostream& o, const std::vector<NamedCurve>& curves) {
    o << "month,strategy,value\n";
    for (auto& c : curves)
        for (auto& p : c.curve) o << p.month.str() << ',' << c.name << ',' << csv::fmt(p.value) << '\n';
}

inline nlohmann::ordered_json report_json(const std::string& name, const PerformanceReport& r) {
    nlohmann::ordered_json j;
    j["strategy"] = name;
    j["final_value"] = r.final_value;
    j["annualized_return"] = r.annualized_return;
    j["annualized_volatility"] = r.annualized_volatility ? nlohmann::ordered_json(*r.annualized_volatility) : nullptr;
    j["sharpe"] = r.sharpe ? nlohmann::ordered_json(*r.sharpe) : nullptr;
    j["max_drawdown"] = r.max_drawdown;
    return j;
}

inline void write_backtest_outputs(const fs::path& dir, const BacktestOutcome& b) {
    write_file(dir / "curve.csv", [&](std::ostream& o) { write_curves_csv(o, b.curves); });
    nlohmann::ordered_json stats;
    stats["start"] = b.start.str();
    stats["end"] = b.end.str();
    stats["curves"] = nlohmann::ordered_json::array();
    for (auto& c : b.curves) {
        auto j = report_json(c.name, performance_stats(c.curve));
        for (auto& r : b.results)
            if (c.name == to_string(r.strategy)) {
                j["max_conservation_error"] = r.max_conservation_error;
                j["warnings"] = r.warnings;
            }
        stats["curves"].push_back(std::move(j));
    }
    write_text(dir / "stats.json", stats.dump(2) + "\n");
    for (auto& r : b.results) {
        std::string name = r.strategy == Strategy::SA ? "trades.csv" : std::string("trades_") + to_string(r.strategy) + ".csv";
        write_file(dir / name, [&](std::ostream& o) { write_trades_csv(o, r.trades); });
    }
}

// ---------------------------------------------------------------------------
// Report.

inline std::vector<NamedCurve> read_curves_csv(const std::string& path) {
    std::vector<NamedCurve> out;
    std::map<std::string, std::size_t> pos;
    csv::read(path, {"month", "strategy", "value"}, [&](const std::vector<std::string_view>& f, std::size_t line) {
        std::string where = path + ":" + std::to_string(line);
        std::string name(f[1]);
        auto [it, fresh] = pos.emplace(name, out.size());
        if (fresh) out.push_back({name, {}});
        auto& c = out[it->second].curve;
        MonthIndex m = MonthIndex::parse(f[0]);
        if (!c.empty() && !(c.back().month < m)) throw InputError(where + ": months of " + name + " not increasing");
        c.push_back({m, csv::parse_double(f[2], where)});
    });
    return out;
}

inline void write_summary_csv(std::ostream& o, const std::vector<NamedCurve>& curves) {
    auto opt = [](const std::optional<double>& v) { return v ? csv::fmt(*v) : std::string(); };
    o << "strategy,final_value,annualized_return,annualized_volatility,sharpe,max_drawdown\n";
    for (auto& c : curves) {
        auto r = performance_stats(c.curve);
        o << c.name << ',' << csv::fmt(r.final_value) << ',' << csv::fmt(r.annualized_return) << ','
          << opt(r.annualized_volatility) << ',' << opt(r.sharpe) << ',' << csv::fmt(r.max_drawdown) << '\n';
    }
}

/// One row per month, one column per curve in file order; blank where a
/// curve has no point.
inline void write_wide_csv(std::ostream& o, const std::vector<NamedCurve>& curves) {
    std::map<MonthIndex, std::vector<std::string>> rows;
    for (std::size_t k = 0; k < curves.size(); ++k)
        for (auto& p : curves[k].curve) {
            auto& r = rows[p.month];
            r.resize(curves.size());
            r[k] = csv::fmt(p.value);
        }
    o << "month";
    for (auto& c : curves) o << ',' << c.name;
    o << '\n';
    for (auto& [m, r] : rows) {
        r.resize(curves.size());
        o << m.str();
        for (auto& v : r) o << ',' << v;
        o << '\n';
    }
}

} // namespace polyfolio::pipeline

#endif
