#ifndef POLYFOLIO_SIGNIFICANCE_HPP
#define POLYFOLIO_SIGNIFICANCE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "polyfolio/csv.hpp"
#include "polyfolio/hermite_ridge.hpp"
#include "polyfolio/panel.hpp"
#include "polyfolio/parallel.hpp"
#include "polyfolio/rng.hpp"

namespace polyfolio {

struct ShuffleConfig {
    std::size_t n_shuffles = 200;
    std::uint64_t seed = 0;
    double threshold_score = 3.0; // on the -ln(p) scale

    void validate() const {
        if (n_shuffles < 100) throw InputError("n_shuffles must be >= 100");
        if (!(threshold_score > 0.0)) throw InputError("score threshold must be > 0");
    }
};

/// Identifies the permutation stream of one (fund, factor, window) cell.
struct PairKey {
    std::string fund;
    std::string factor;
    MonthIndex window_end;
};

struct SignificanceResult {
    double r2_observed = 0.0;
    double p_value = 1.0;
    double score = 0.0; // -ln(p_value)
    std::size_t n_shuffles = 0;
    bool degenerate = false;
};

/// Add-one p-value: (1 + #{shuffled >= observed}) / (N + 1).
inline double shuffle_p_value(double r2_observed, std::span<const double> shuffled) {
    std::size_t hits = 0;
    for (double r : shuffled)
        if (r >= r2_observed) ++hits;
    return static_cast<double>(1 + hits) / static_cast<double>(shuffled.size() + 1);
}

inline rng::Engine shuffle_engine(const ShuffleConfig& cfg, const PairKey& key, std::size_t index) {
    return rng::engine(cfg.seed, "shuffle",
                       {rng::fnv1a(key.fund), rng::fnv1a(key.factor),
                        static_cast<std::uint64_t>(key.window_end.ordinal()), index});
}

/// R^2 of the ridge fit for each of the N shuffled copies of y. The factor
/// order is fixed; each copy is a fresh Fisher-Yates permutation of y.
inline std::vector<double> shuffled_r2(const RidgeSolver& solver, std::span<const double> y, const ShuffleConfig& cfg,
                                       const PairKey& key) {
    std::vector<double> out(cfg.n_shuffles);
    std::vector<double> perm(y.begin(), y.end());
    for (std::size_t s = 0; s < cfg.n_shuffles; ++s) {
        std::copy(y.begin(), y.end(), perm.begin());
        auto g = shuffle_engine(cfg, key, s);
        rng::shuffle(std::span<double>(perm), g);
        out[s] = solver.fit(perm).r2;
    }
    return out;
}

inline SignificanceResult shuffle_test(std::span<const double> y, std::span<const double> factor, double lambda,
                                       const ShuffleConfig& cfg, const PairKey& key) {
    cfg.validate();
    if (y.size() != factor.size()) throw InputError("target and factor rows differ in length");
    if (y.size() <= kBasisSize) throw InputError("shuffle test needs more than 5 observations");

    SignificanceResult res;
    res.n_shuffles = cfg.n_shuffles;
    auto degenerate = [&] {
        res.degenerate = true;
        res.p_value = 1.0;
        res.score = 0.0;
        return res;
    };

    HermiteDesign design;
    try {
        design = design_from_raw(factor);
    } catch (const ConstantSeries&) {
        return degenerate();
    }
    std::optional<RidgeSolver> solver;
    try {
        solver.emplace(design, lambda);
    } catch (const SingularDesign&) {
        return degenerate();
    }
    auto observed = solver->fit(y);
    res.r2_observed = observed.r2;
    if (observed.degenerate) return degenerate();

    auto null = shuffled_r2(*solver, y, cfg, key);
    res.p_value = shuffle_p_value(observed.r2, null);
    res.score = -std::log(res.p_value);
    return res;
}

struct ScoreEntry {
    SeriesId fund;
    SeriesId factor;
    MonthIndex window_end;
    SignificanceResult result;
};

struct ScoreTable {
    std::vector<ScoreEntry> entries; // sorted by (fund, factor)
    std::size_t omitted = 0;         // pairs skipped for incomplete windows

    /// Results for one fund keyed by factor.
    std::map<SeriesId, SignificanceResult> row(const SeriesId& fund) const {
        std::map<SeriesId, SignificanceResult> out;
        for (auto& e : entries)
            if (e.fund == fund) out.emplace(e.factor, e.result);
        return out;
    }
};

/// Shuffle test for every complete (fund, factor) window ending at `end`.
inline ScoreTable score_matrix(const ReturnPanel& panel, const std::vector<SeriesId>& funds,
                               const std::vector<SeriesId>& factors, MonthIndex end, std::size_t window_len,
                               double lambda, const ShuffleConfig& cfg, unsigned threads = 1) {
    cfg.validate();
    std::vector<SeriesId> fs = funds, xs = factors;
    std::sort(fs.begin(), fs.end());
    std::sort(xs.begin(), xs.end());
    struct Cell {
        bool complete = false;
        SignificanceResult result;
    };
    auto cells = parallel_map(fs.size() * xs.size(), threads, [&](std::size_t i) {
        const auto& f = fs[i / xs.size()];
        const auto& x = xs[i % xs.size()];
        Cell c;
        auto w = extract_window(panel, f, x, end, window_len);
        if (auto* pair = std::get_if<WindowPair>(&w)) {
            c.complete = true;
            c.result = shuffle_test(pair->target, pair->factor, lambda, cfg, {f.id, x.id, end});
        }
        return c;
    });
    ScoreTable table;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!cells[i].complete) {
            ++table.omitted;
            continue;
        }
        table.entries.push_back({fs[i / xs.size()], xs[i % xs.size()], end, cells[i].result});
    }
    return table;
}

/// Factors scoring strictly above the threshold, best first; equal scores
/// fall back to factor id order. Degenerate results never qualify.
inline std::vector<SeriesId> relevant_factors(const std::map<SeriesId, SignificanceResult>& scores,
                                              double threshold_score) {
    std::vector<std::pair<SeriesId, double>> kept;
    for (auto& [id, r] : scores)
        if (!r.degenerate && r.score > threshold_score) kept.emplace_back(id, r.score);
    std::sort(kept.begin(), kept.end(), [](auto& a, auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first.id < b.first.id;
    });
    std::vector<SeriesId> out;
    for (auto& [id, _] : kept) out.push_back(id);
    return out;
}

inline void write_scores_header(std::ostream& out) { out << "fund_id,factor_id,window_end,r2,p_value,score\n"; }

inline void write_scores_csv(std::ostream& out, const std::vector<ScoreEntry>& entries) {
    write_scores_header(out);
    for (auto& e : entries)
        out << e.fund.id << ',' << e.factor.id << ',' << e.window_end.str() << ',' << csv::fmt(e.result.r2_observed)
            << ',' << csv::fmt(e.result.p_value) << ',' << csv::fmt(e.result.score) << '\n';
}

} // namespace polyfolio

#endif
