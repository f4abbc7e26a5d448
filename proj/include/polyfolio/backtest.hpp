#ifndef POLYFOLIO_BACKTEST_HPP
#define POLYFOLIO_BACKTEST_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "polyfolio/csv.hpp"
#include "polyfolio/errors.hpp"
#include "polyfolio/itf.hpp"
#include "polyfolio/panel.hpp"

namespace polyfolio {

using itf::TrendForecast;

enum class Strategy { SA, WA };

inline const char* to_string(Strategy s) { return s == Strategy::SA ? "SA" : "WA"; }

/// How a forecast is turned into the ranking probability p_i.
enum class ScoreMode { Up, UpPlusHalfUnchanged };

inline double selection_score(const TrendForecast& f, ScoreMode mode = ScoreMode::Up) {
    double s = f.p(itf::Trend::Up);
    if (mode == ScoreMode::UpPlusHalfUnchanged) s += 0.5 * f.p(itf::Trend::Unchanged);
    return s;
}

/// Top ceil(n/2) funds by p_i; equal scores go to the smaller fund id.
inline std::vector<SeriesId> select_funds(const std::vector<TrendForecast>& forecasts, ScoreMode mode = ScoreMode::Up) {
    if (forecasts.empty()) throw InputError("cannot select from an empty forecast list");
    std::vector<std::pair<double, SeriesId>> ranked;
    for (auto& f : forecasts) ranked.emplace_back(selection_score(f, mode), f.fund);
    std::sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second.id < b.second.id;
    });
    std::vector<SeriesId> out;
    std::size_t keep = (ranked.size() + 1) / 2;
    for (std::size_t i = 0; i < keep; ++i) out.push_back(ranked[i].second);
    return out;
}

struct PortfolioState {
    MonthIndex month;
    std::map<SeriesId, double> holdings;
    double cash = 0.0;

    double total() const {
        double t = cash;
        for (auto& [_, v] : holdings) t += v;
        return t;
    }
};

enum class Action { Buy, Sell, Hold };

inline const char* to_string(Action a) {
    switch (a) {
    case Action::Buy: return "buy";
    case Action::Sell: return "sell";
    case Action::Hold: return "hold";
    }
    return "?";
}

struct TradeLogEntry {
    MonthIndex month;
    SeriesId fund;
    Action action = Action::Hold;
    double amount = 0.0;
    std::string note;
};

struct Rebalance {
    PortfolioState state;
    std::vector<TradeLogEntry> trades;
    std::vector<std::string> warnings;
};

namespace detail {

/// Sells everything not selected; returns the names still to buy.
inline std::vector<SeriesId> liquidate_unselected(Rebalance& r, const std::vector<SeriesId>& selected) {
    auto is_selected = [&](const SeriesId& id) { return std::find(selected.begin(), selected.end(), id) != selected.end(); };
    for (auto it = r.state.holdings.begin(); it != r.state.holdings.end();) {
        if (is_selected(it->first)) {
            r.trades.push_back({r.state.month, it->first, Action::Hold, it->second, {}});
            ++it;
        } else {
            r.trades.push_back({r.state.month, it->first, Action::Sell, it->second, {}});
            r.state.cash += it->second;
            it = r.state.holdings.erase(it);
        }
    }
    std::vector<SeriesId> fresh;
    for (auto& id : selected)
        if (!r.state.holdings.count(id)) fresh.push_back(id);
    std::sort(fresh.begin(), fresh.end());
    return fresh;
}

inline void buy(Rebalance& r, const std::vector<std::pair<SeriesId, double>>& weights) {
    double weight_sum = 0.0;
    for (auto& [_, w] : weights) weight_sum += w;
    if (weights.empty() || !(weight_sum > 0.0)) return;
    const double cash = r.state.cash;
    double spent = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        // The last name takes the remainder so that cash ends at exactly zero.
        double amount = i + 1 == weights.size() ? cash - spent : cash * (weights[i].second / weight_sum);
        spent += amount;
        r.state.holdings[weights[i].first] += amount;
        r.trades.push_back({r.state.month, weights[i].first, Action::Buy, amount, {}});
    }
    r.state.cash = 0.0;
}

} // namespace detail

/// Sells holdings that were not selected, keeps the rest untouched, and
/// spreads all cash evenly over the selected funds not yet held.
inline Rebalance rebalance_sa(const PortfolioState& state, const std::vector<SeriesId>& selected) {
    Rebalance r{state, {}, {}};
    auto fresh = detail::liquidate_unselected(r, selected);
    std::vector<std::pair<SeriesId, double>> w;
    for (auto& id : fresh) w.emplace_back(id, 1.0);
    detail::buy(r, w);
    return r;
}

/// As rebalance_sa, but cash goes to the new names in proportion to their
/// AUM. With `full_reweight` the whole book is liquidated and rebought at
/// AUM weights over every selected fund.
inline Rebalance rebalance_wa(const PortfolioState& state, const std::vector<SeriesId>& selected,
                              const std::map<SeriesId, double>& aum, bool full_reweight = false) {
    Rebalance r{state, {}, {}};
    std::vector<SeriesId> targets;
    if (full_reweight) {
        detail::liquidate_unselected(r, {});
        targets = selected;
        std::sort(targets.begin(), targets.end());
    } else {
        targets = detail::liquidate_unselected(r, selected);
    }
    std::vector<std::pair<SeriesId, double>> w;
    for (auto& id : targets) {
        auto it = aum.find(id);
        if (it == aum.end() || !(it->second > 0.0)) {
            r.warnings.push_back("no AUM for " + id.id + " at " + state.month.str() + "; skipped");
            continue;
        }
        w.emplace_back(id, it->second);
    }
    detail::buy(r, w);
    return r;
}

struct Step {
    PortfolioState state;
    std::vector<TradeLogEntry> liquidations; // holdings whose return was missing
};

/// Marks every holding to market with its realized return. A holding with
/// no return for the month keeps its value and is moved to cash.
inline Step step_month(const PortfolioState& state, const std::map<SeriesId, std::optional<double>>& realized) {
    Step s{state, {}};
    for (auto it = s.state.holdings.begin(); it != s.state.holdings.end();) {
        auto r = realized.find(it->first);
        if (r == realized.end() || !r->second) {
            s.liquidations.push_back({state.month, it->first, Action::Sell, it->second, "missing_return"});
            s.state.cash += it->second;
            it = s.state.holdings.erase(it);
            continue;
        }
        it->second *= 1.0 + *r->second;
        ++it;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Performance statistics.

struct CurvePoint {
    MonthIndex month;
    double value = 1.0;
};

struct PerformanceReport {
    std::vector<CurvePoint> cumulative_curve;
    double final_value = 1.0;
    double annualized_return = 0.0;
    std::optional<double> annualized_volatility;
    std::optional<double> sharpe;
    double max_drawdown = 0.0;
};

/// Annualized return (V_end / V_start)^(12/m) - 1, volatility sd(monthly) * sqrt(12),
/// their ratio as Sharpe, and the largest peak-to-trough decline.
inline PerformanceReport performance_stats(const std::vector<CurvePoint>& curve) {
    if (curve.size() < 2) throw InputError("performance statistics need at least two curve points");
    for (auto& p : curve)
        if (!(p.value > 0.0)) throw InputError("curve values must be positive");
    PerformanceReport r;
    r.cumulative_curve = curve;
    r.final_value = curve.back().value;
    const double months = static_cast<double>(curve.size() - 1);
    r.annualized_return = std::pow(curve.back().value / curve.front().value, 12.0 / months) - 1.0;

    std::vector<double> monthly;
    for (std::size_t i = 1; i < curve.size(); ++i) monthly.push_back(curve[i].value / curve[i - 1].value - 1.0);
    if (monthly.size() >= 2) {
        double sd = sample_sd(monthly, mean(monthly));
        if (sd > 0.0) {
            r.annualized_volatility = sd * std::sqrt(12.0);
            r.sharpe = r.annualized_return / *r.annualized_volatility;
        } else {
            r.annualized_volatility = 0.0;
        }
    }
    double peak = curve.front().value;
    for (auto& p : curve) {
        peak = std::max(peak, p.value);
        r.max_drawdown = std::max(r.max_drawdown, 1.0 - p.value / peak);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Simulation.

struct BacktestOptions {
    ScoreMode score_mode = ScoreMode::Up;
    bool wa_full_reweight = false;
    double conservation_tolerance = 1e-9;
};

struct BacktestResult {
    Strategy strategy = Strategy::SA;
    PerformanceReport report;
    std::vector<TradeLogEntry> trades;
    std::map<MonthIndex, std::vector<SeriesId>> selections;
    std::vector<std::string> warnings;
    double max_conservation_error = 0.0; // relative, over all rebalances
};

/// Forecasts keyed by the month they are used in; each must be produced
/// from data through the previous month only.
using ForecastsByMonth = std::map<MonthIndex, std::vector<TrendForecast>>;

/// Starts with 1.0 in cash before `start`; every month rebalances on that
/// month's forecasts and then earns the month's realized returns.
inline BacktestResult run_backtest(const ReturnPanel& panel, const ForecastsByMonth& forecasts, Strategy strategy,
                                   MonthIndex start, MonthIndex end, const BacktestOptions& opt = {}) {
    if (end < start) throw InputError("backtest end precedes start");
    panel.require_index(start);
    panel.require_index(end);
    BacktestResult out;
    out.strategy = strategy;
    PortfolioState state;
    state.month = start;
    state.cash = 1.0;
    std::vector<CurvePoint> curve{{start.prev(), 1.0}};

    for (MonthIndex m = start; m <= end; m = m.next()) {
        auto f = forecasts.find(m);
        if (f == forecasts.end() || f->second.empty()) throw InputError("no forecasts for month " + m.str());
        for (auto& fc : f->second)
            if (fc.month != m) throw InputError("forecast for " + fc.fund.id + " targets " + fc.month.str() +
                                                " but is used in " + m.str());
        state.month = m;
        auto selected = select_funds(f->second, opt.score_mode);
        out.selections[m] = selected;

        const double before = state.total();
        Rebalance r;
        if (strategy == Strategy::SA) {
            r = rebalance_sa(state, selected);
        } else {
            std::map<SeriesId, double> aum;
            for (auto& id : selected)
                if (auto v = panel.aum_at(id, m.prev())) aum[id] = *v;
            r = rebalance_wa(state, selected, aum, opt.wa_full_reweight);
        }
        const double after = r.state.total();
        const double err = std::abs(after - before) / std::max(std::abs(before), 1e-300);
        out.max_conservation_error = std::max(out.max_conservation_error, err);
        if (err > opt.conservation_tolerance)
            throw NumericalError("value not conserved by rebalance at " + m.str());
        for (auto& t : r.trades) out.trades.push_back(t);
        for (auto& w : r.warnings) out.warnings.push_back(w);

        std::map<SeriesId, std::optional<double>> realized;
        for (auto& [id, _] : r.state.holdings) realized[id] = panel.value(id, m);
        auto s = step_month(r.state, realized);
        for (auto& t : s.liquidations) {
            out.trades.push_back(t);
            out.warnings.push_back("missing return for held fund " + t.fund.id + " at " + m.str() + "; liquidated");
        }
        state = s.state;
        curve.push_back({m, state.total()});
    }
    out.report = performance_stats(curve);
    return out;
}

/// Monthly rebalanced equal-weight portfolio of every fund with a return
/// that month (missing funds are skipped).
inline std::vector<CurvePoint> equal_weight_curve(const ReturnPanel& panel, const std::vector<SeriesId>& funds,
                                                  MonthIndex start, MonthIndex end) {
    std::vector<CurvePoint> curve{{start.prev(), 1.0}};
    double v = 1.0;
    for (MonthIndex m = start; m <= end; m = m.next()) {
        double s = 0.0;
        std::size_t n = 0;
        for (auto& f : funds)
            if (auto r = panel.value(f, m)) {
                s += *r;
                ++n;
            }
        if (n) v *= 1.0 + s / static_cast<double>(n);
        curve.push_back({m, v});
    }
    return curve;
}

/// Compounded curve of a single series; missing months count as flat.
inline std::vector<CurvePoint> series_curve(const ReturnPanel& panel, const SeriesId& id, MonthIndex start,
                                            MonthIndex end) {
    std::vector<CurvePoint> curve{{start.prev(), 1.0}};
    double v = 1.0;
    for (MonthIndex m = start; m <= end; m = m.next()) {
        if (auto r = panel.value(id, m)) v *= 1.0 + *r;
        curve.push_back({m, v});
    }
    return curve;
}

inline void write_trades_csv(std::ostream& out, const std::vector<TradeLogEntry>& trades) {
    out << "month,fund,action,amount\n";
    for (auto& t : trades)
        out << t.month.str() << ',' << t.fund.id << ',' << to_string(t.action) << ',' << csv::fmt(t.amount) << '\n';
}

} // namespace polyfolio

#endif
