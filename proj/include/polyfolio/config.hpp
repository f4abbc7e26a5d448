#ifndef POLYFOLIO_CONFIG_HPP
#define POLYFOLIO_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "polyfolio/backtest.hpp"
#include "polyfolio/csv.hpp"
#include "polyfolio/errors.hpp"
#include "polyfolio/itf.hpp"
#include "polyfolio/month.hpp"
#include "polyfolio/risk_features.hpp"
#include "polyfolio/rng.hpp"

namespace polyfolio {

/// Every run parameter. Defaults are the toolkit's reference settings.
struct RunConfig {
    // Inputs.
    std::string returns;
    std::string aum;
    std::string volume;
    std::string benchmark;        // optional file of benchmark-kind series
    std::string benchmark_series; // id used as r_f for Sharpe/MRaR; empty = zero
    std::string features;         // features.csv consumed by train/backtest
    std::string checkpoint;

    // Feature construction.
    std::size_t window_len = 36;
    double lambda = kDefaultLambda;
    std::size_t shuffles = 200;
    double score_threshold = 3.0;
    double kappa = 0.05;
    double gamma = 2.0;
    double xi = kPrintedXi;
    double tail_fraction = 0.10;

    // Classifier.
    double tau = 0.005;
    std::size_t lookback = 12;
    std::size_t model_dim = 16;
    std::size_t heads = 2;
    std::size_t layers = 2;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double lr_decay = 0.98;
    double train_fraction = 0.5;
    std::optional<MonthIndex> train_end;

    // Portfolio.
    std::vector<Strategy> strategies{Strategy::SA, Strategy::WA};
    ScoreMode score_mode = ScoreMode::Up;
    bool wa_full_reweight = false;

    // Execution.
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out = "out";

    std::uint64_t sub_seed(std::string_view stream) const { return rng::derive(seed, stream); }

    FeatureConfig feature_config() const {
        FeatureConfig f;
        f.window_len = window_len;
        f.lambda = lambda;
        f.shuffle.n_shuffles = shuffles;
        f.shuffle.seed = sub_seed("shuffle");
        f.shuffle.threshold_score = score_threshold;
        f.kappa = kappa;
        f.gamma = gamma;
        f.xi = xi;
        f.tail_fraction = tail_fraction;
        if (!benchmark_series.empty()) f.benchmark = polyfolio::benchmark(benchmark_series);
        return f;
    }

    itf::Dims dims() const {
        itf::Dims d;
        d.lookback = lookback;
        d.variates = FeatureFrame::kNumeric;
        d.model = model_dim;
        d.heads = heads;
        if (heads == 0 || model_dim % heads) throw InputError("model_dim must be divisible by heads");
        d.head_dim = model_dim / heads;
        d.layers = layers;
        d.validate();
        return d;
    }

    itf::Schedule schedule() const {
        itf::Schedule s;
        s.epochs = epochs;
        s.batch_size = batch_size;
        s.learning_rate = learning_rate;
        s.momentum = momentum;
        s.decay = lr_decay;
        s.seed = sub_seed("batches");
        s.threads = threads;
        return s;
    }

    void validate() const {
        if (window_len <= kBasisSize) throw InputError("window_len must exceed 5");
        if (shuffles < 100) throw InputError("shuffles must be >= 100");
        if (!(score_threshold > 0.0)) throw InputError("score_threshold must be > 0");
        if (!(lambda >= 0.0)) throw InputError("lambda must be >= 0");
        if (gamma == 0.0) throw InputError("gamma must be nonzero");
        if (!(tau > 0.0)) throw InputError("tau must be > 0");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("train_fraction must lie in (0, 1)");
        if (strategies.empty()) throw InputError("strategies must name at least one of SA, WA");
        if (threads == 0) throw InputError("threads must be >= 1");
        dims();
    }
};

namespace config_detail {

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline std::size_t to_size(const std::string& v, const std::string& key) {
    double d = csv::parse_double(v, key);
    if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d))) throw InputError(key + ": expected a non-negative integer");
    return static_cast<std::size_t>(d);
}

inline std::uint64_t to_u64(const std::string& v, const std::string& key) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw InputError(key + ": expected an unsigned 64-bit integer");
    return out;
}

inline bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InputError(key + ": expected true or false");
}

/// Keys in echo order. `threads` and `out` are execution settings that do
/// not change results and are not echoed.
inline const std::vector<std::pair<std::string, Field>>& fields() {
    using C = RunConfig;
    static const std::vector<std::pair<std::string, Field>> f = [] {
        std::vector<std::pair<std::string, Field>> v;
        auto str = [&](const char* k, std::string C::*m) {
            v.push_back({k, {[m](C& c, const std::string& s) { c.*m = s; }, [m](const C& c) { return c.*m; }}});
        };
        auto num = [&](const char* k, double C::*m) {
            std::string key = k;
            v.push_back({k, {[m, key](C& c, const std::string& s) { c.*m = csv::parse_double(s, key); },
                             [m](const C& c) { return csv::fmt(c.*m); }}});
        };
        auto size = [&](const char* k, std::size_t C::*m) {
            std::string key = k;
            v.push_back({k, {[m, key](C& c, const std::string& s) { c.*m = to_size(s, key); },
                             [m](const C& c) { return std::to_string(c.*m); }}});
        };
        str("returns", &C::returns);
        str("aum", &C::aum);
        str("volume", &C::volume);
        str("benchmark", &C::benchmark);
        str("benchmark_series", &C::benchmark_series);
        str("features", &C::features);
        str("checkpoint", &C::checkpoint);
        size("window_len", &C::window_len);
        num("lambda", &C::lambda);
        size("shuffles", &C::shuffles);
        num("score_threshold", &C::score_threshold);
        num("kappa", &C::kappa);
        num("gamma", &C::gamma);
        num("xi", &C::xi);
        num("tail_fraction", &C::tail_fraction);
        num("tau", &C::tau);
        size("lookback", &C::lookback);
        size("model_dim", &C::model_dim);
        size("heads", &C::heads);
        size("layers", &C::layers);
        size("epochs", &C::epochs);
        size("batch_size", &C::batch_size);
        num("learning_rate", &C::learning_rate);
        num("momentum", &C::momentum);
        num("lr_decay", &C::lr_decay);
        num("train_fraction", &C::train_fraction);
        v.push_back({"train_end",
                     {[](C& c, const std::string& s) {
                          if (s.empty()) c.train_end.reset();
                          else c.train_end = MonthIndex::parse(s);
                      },
                      [](const C& c) { return c.train_end ? c.train_end->str() : std::string(); }}});
        v.push_back({"strategies",
                     {[](C& c, const std::string& s) {
                          c.strategies.clear();
                          for (auto part : csv::split(s)) {
                              part = csv::trim(part);
                              if (part == "SA") c.strategies.push_back(Strategy::SA);
                              else if (part == "WA") c.strategies.push_back(Strategy::WA);
                              else throw InputError("strategies: unknown strategy '" + std::string(part) + "'");
                          }
                      },
                      [](const C& c) {
                          std::string s;
                          for (auto st : c.strategies) s += (s.empty() ? "" : ",") + std::string(to_string(st));
                          return s;
                      }}});
        v.push_back({"score_mode",
                     {[](C& c, const std::string& s) {
                          if (s == "up") c.score_mode = ScoreMode::Up;
                          else if (s == "up_plus_half_unchanged") c.score_mode = ScoreMode::UpPlusHalfUnchanged;
                          else throw InputError("score_mode: expected up or up_plus_half_unchanged");
                      },
                      [](const C& c) {
                          return std::string(c.score_mode == ScoreMode::Up ? "up" : "up_plus_half_unchanged");
                      }}});
        v.push_back({"wa_full_reweight",
                     {[](C& c, const std::string& s) { c.wa_full_reweight = to_bool(s, "wa_full_reweight"); },
                      [](const C& c) { return std::string(c.wa_full_reweight ? "true" : "false"); }}});
        v.push_back({"seed",
                     {[](C& c, const std::string& s) { c.seed = to_u64(s, "seed"); },
                      [](const C& c) { return std::to_string(c.seed); }}});
        return v;
    }();
    return f;
}

inline const std::map<std::string, std::function<void(RunConfig&, const std::string&)>>& execution_fields() {
    static const std::map<std::string, std::function<void(RunConfig&, const std::string&)>> f{
        {"threads", [](RunConfig& c, const std::string& s) { c.threads = static_cast<unsigned>(to_size(s, "threads")); }},
        {"out", [](RunConfig& c, const std::string& s) { c.out = s; }},
    };
    return f;
}

} // namespace config_detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    for (auto& [k, f] : config_detail::fields())
        if (k == key) {
            f.set(c, value);
            return;
        }
    auto& ex = config_detail::execution_fields();
    if (auto it = ex.find(key); it != ex.end()) {
        it->second(c, value);
        return;
    }
    throw InputError("unknown config key '" + key + "'");
}

/// `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline RunConfig parse_config(std::istream& in, const std::string& name = "config", RunConfig c = {}) {
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto t = csv::trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        std::string where = name + ":" + std::to_string(lineno);
        if (eq == std::string_view::npos) throw InputError(where + ": expected key = value");
        std::string key(csv::trim(t.substr(0, eq)));
        std::string value(csv::trim(t.substr(eq + 1)));
        if (seen[key]++) throw InputError(where + ": duplicate key '" + key + "'");
        try {
            set_config_value(c, key, value);
        } catch (const InputError& e) {
            throw InputError(where + ": " + e.what());
        }
    }
    return c;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path);
    return parse_config(in, path, std::move(base));
}

/// Canonical echo of every result-affecting key.
inline std::string echo_config(const RunConfig& c) {
    std::string s;
    for (auto& [k, f] : config_detail::fields()) s += k + " = " + f.get(c) + "\n";
    return s;
}

} // namespace polyfolio

#endif
