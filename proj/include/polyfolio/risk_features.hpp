#ifndef POLYFOLIO_RISK_FEATURES_HPP
#define POLYFOLIO_RISK_FEATURES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "polyfolio/csv.hpp"
#include "polyfolio/errors.hpp"
#include "polyfolio/hermite_ridge.hpp"
#include "polyfolio/panel.hpp"
#include "polyfolio/parallel.hpp"
#include "polyfolio/significance.hpp"

namespace polyfolio {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Fund-only performance measures.

namespace detail {

inline std::vector<double> benchmark_or_zero(std::span<const double> returns, std::span<const double> benchmark) {
    if (benchmark.empty()) return std::vector<double>(returns.size(), 0.0);
    if (benchmark.size() != returns.size()) throw InputError("benchmark length differs from return length");
    return {benchmark.begin(), benchmark.end()};
}

} // namespace detail

/// Monthly Sharpe ratio of returns in excess of `benchmark` (empty = zero
/// benchmark): sample mean over sample standard deviation, not annualized.
inline double sharpe_ratio(std::span<const double> returns, std::span<const double> benchmark = {}) {
    if (returns.size() < 2) throw InputError("Sharpe ratio needs at least 2 returns");
    auto rf = detail::benchmark_or_zero(returns, benchmark);
    std::vector<double> excess(returns.size());
    for (std::size_t i = 0; i < excess.size(); ++i) excess[i] = returns[i] - rf[i];
    double mu = mean(excess);
    double sd = sample_sd(excess, mu);
    if (!(sd > 0.0)) throw ZeroVolatility();
    return mu / sd;
}

/// Morningstar risk-adjusted return over the n months given:
///   (1/n sum (1 + r_G)^-gamma)^(-n/gamma) - 1,  r_G = (1 + r) / (1 + r_f) - 1.
inline double mrar(std::span<const double> returns, std::span<const double> benchmark = {}, double gamma = 2.0) {
    if (returns.empty()) throw InputError("MRaR needs at least one return");
    if (gamma == 0.0 || !std::isfinite(gamma)) throw DomainError("MRaR risk aversion must be nonzero and finite");
    auto rf = detail::benchmark_or_zero(returns, benchmark);
    const double n = static_cast<double>(returns.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < returns.size(); ++i) {
        if (!(1.0 + rf[i] > 0.0)) throw DomainError("benchmark return <= -100%");
        double g = (1.0 + returns[i]) / (1.0 + rf[i]);
        if (!(g > 0.0)) throw DomainError("geometric excess return <= -100%");
        acc += std::pow(g, -gamma);
    }
    return std::pow(acc / n, -n / gamma) - 1.0;
}

// ---------------------------------------------------------------------------
// Factor quantiles with generalized Pareto tails.

inline constexpr std::array<double, 5> kQuantileLevels{0.01, 0.16, 0.50, 0.84, 0.99};

struct QuantileGrid {
    std::array<double, 5> levels = kQuantileLevels;
    std::array<double, 5> theta{};
    std::array<bool, 2> tail_fitted{false, false}; // lower (1%), upper (99%)
    bool degenerate = false;                        // all history values equal
    std::vector<double> percentiles;                // 1%..99%, tails taken from theta
    double history_mean = 0.0;
};

/// Linear-interpolation quantile of sorted data (the R type-7 rule).
inline double empirical_quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw InputError("quantile of empty sample");
    double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct GpdFit {
    double shape = 0.0; // xi
    double scale = 0.0; // beta
};

/// Method-of-moments GPD fit to positive exceedances:
///   shape = (1 - m^2/s^2) / 2,   scale = m (m^2/s^2 + 1) / 2.
inline std::optional<GpdFit> fit_gpd_moments(std::span<const double> excess) {
    if (excess.size() < 2) return std::nullopt;
    double m = mean(excess);
    double s = sample_sd(excess, m);
    if (!(m > 0.0) || !(s > 0.0)) return std::nullopt;
    double ratio = m * m / (s * s);
    return GpdFit{0.5 * (1.0 - ratio), 0.5 * m * (ratio + 1.0)};
}

/// Quantile at level p (p > 1 - exceed_prob) of a distribution whose tail
/// above `threshold` is GPD, with exceed_prob the share of mass past it.
inline double gpd_tail_quantile(const GpdFit& g, double threshold, double exceed_prob, double p) {
    double ratio = exceed_prob / (1.0 - p);
    if (std::abs(g.shape) < 1e-12) return threshold + g.scale * std::log(ratio);
    return threshold + g.scale / g.shape * (std::pow(ratio, g.shape) - 1.0);
}

inline constexpr std::size_t kMinTailHistory = 60;
inline constexpr std::size_t kMinHistory = 20;
inline constexpr std::size_t kMinExceedances = 10;

/// Quantile grid of a factor's long history. The 16/50/84% levels are
/// empirical; the 1% and 99% levels come from GPD fits to the exceedances
/// past the `tail_fraction` empirical quantiles when history and
/// exceedance counts allow, and are empirical otherwise.
inline QuantileGrid factor_quantiles(std::span<const double> history, double tail_fraction = 0.10) {
    if (history.size() < kMinHistory) throw InsufficientHistory(history.size());
    if (!(tail_fraction > 0.01 && tail_fraction < 0.16)) throw InputError("tail fraction must lie in (0.01, 0.16)");
    std::vector<double> sorted(history.begin(), history.end());
    std::sort(sorted.begin(), sorted.end());

    QuantileGrid g;
    g.history_mean = mean(history);
    g.degenerate = sorted.front() == sorted.back();
    for (std::size_t i = 0; i < 5; ++i) g.theta[i] = empirical_quantile(sorted, g.levels[i]);

    if (history.size() >= kMinTailHistory && !g.degenerate) {
        const double n = static_cast<double>(sorted.size());
        double hi_u = empirical_quantile(sorted, 1.0 - tail_fraction);
        std::vector<double> up;
        for (double v : sorted)
            if (v > hi_u) up.push_back(v - hi_u);
        if (up.size() >= kMinExceedances) {
            if (auto fit = fit_gpd_moments(up)) {
                g.theta[4] = gpd_tail_quantile(*fit, hi_u, static_cast<double>(up.size()) / n, g.levels[4]);
                g.tail_fitted[1] = true;
            }
        }
        double lo_u = empirical_quantile(sorted, tail_fraction);
        std::vector<double> down;
        for (double v : sorted)
            if (v < lo_u) down.push_back(lo_u - v);
        if (down.size() >= kMinExceedances) {
            if (auto fit = fit_gpd_moments(down)) {
                g.theta[0] = -gpd_tail_quantile(*fit, -lo_u, static_cast<double>(down.size()) / n, 1.0 - g.levels[0]);
                g.tail_fitted[0] = true;
            }
        }
    }

    g.percentiles.resize(99);
    for (std::size_t q = 1; q <= 99; ++q) g.percentiles[q - 1] = empirical_quantile(sorted, static_cast<double>(q) / 100.0);
    g.percentiles.front() = g.theta[0];
    g.percentiles.back() = g.theta[4];
    return g;
}

// ---------------------------------------------------------------------------
// Long-term alpha weights.

struct LtaWeights {
    std::array<double, 5> w{};
};

/// integral_0^1 L_k(p) dp for the Lagrange basis on the grid's probability nodes.
inline std::array<double, 5> lagrange_integral_weights(const std::array<double, 5>& nodes = kQuantileLevels) {
    std::array<double, 5> out{};
    for (std::size_t k = 0; k < 5; ++k) {
        // Build the monomial coefficients of L_k, lowest degree first.
        std::vector<double> poly{1.0};
        double denom = 1.0;
        for (std::size_t j = 0; j < 5; ++j) {
            if (j == k) continue;
            std::vector<double> next(poly.size() + 1, 0.0);
            for (std::size_t i = 0; i < poly.size(); ++i) {
                next[i] -= nodes[j] * poly[i];
                next[i + 1] += poly[i];
            }
            poly = std::move(next);
            denom *= nodes[k] - nodes[j];
        }
        double integral = 0.0;
        for (std::size_t i = 0; i < poly.size(); ++i) integral += poly[i] / static_cast<double>(i + 1);
        out[k] = integral / denom;
    }
    return out;
}

/// Lagrange quadrature weights nudged by the least-norm correction that
/// makes them sum to one and reproduce `factor_mean` on the grid.
inline LtaWeights lta_weights(const QuantileGrid& grid, double factor_mean) {
    const auto& th = grid.theta;
    if (std::all_of(th.begin(), th.end(), [&](double v) { return v == th[0]; })) throw DegenerateGrid();
    double s1 = 0.0, s2 = 0.0;
    for (double t : th) {
        s1 += t;
        s2 += t * t;
    }
    // A = [1; theta], A A^T = [[5, s1], [s1, s2]].
    double det = 5.0 * s2 - s1 * s1;
    if (!(det > 1e-14 * 5.0 * s2)) throw DegenerateGrid();

    LtaWeights out;
    out.w = lagrange_integral_weights(grid.levels);
    // Two passes: the second removes the rounding left by the first.
    for (int pass = 0; pass < 2; ++pass) {
        double r1 = 1.0, r2 = factor_mean;
        for (std::size_t q = 0; q < 5; ++q) {
            r1 -= out.w[q];
            r2 -= out.w[q] * th[q];
        }
        double l1 = (s2 * r1 - s1 * r2) / det;
        double l2 = (5.0 * r2 - s1 * r1) / det;
        for (std::size_t q = 0; q < 5; ++q) out.w[q] += l1 + l2 * th[q];
    }
    return out;
}

// ---------------------------------------------------------------------------
// StressVaR and the long-term measures built on it.

inline constexpr double kPrintedXi = 2.33;

struct FactorStress {
    double y_max = 0.0; // worst predicted loss, floored at 0
    double svar = 0.0;
};

inline FactorStress factor_stress_var(const PolyFit& fit, const QuantileGrid& grid, double xi) {
    if (grid.percentiles.empty()) throw InputError("quantile grid has no percentile scan");
    double worst = std::numeric_limits<double>::infinity();
    for (double q : grid.percentiles) worst = std::min(worst, predict(fit, q));
    FactorStress s;
    s.y_max = worst < 0.0 ? -worst : 0.0;
    // sqrt(y^2 + xi^2 v) from its two legs; the max keeps the result at or
    // above each leg despite rounding.
    double spread = xi * std::sqrt(std::max(fit.residual_var, 0.0));
    s.svar = std::max({std::hypot(s.y_max, spread), s.y_max, spread});
    return s;
}

struct StressResult {
    double svar = 0.0;
    SeriesId worst_factor;
    std::map<SeriesId, FactorStress> per_factor;
};

/// Maximum per-factor StressVaR over the relevant set; ties go to the
/// smallest factor id.
inline StressResult stress_var(const std::map<SeriesId, PolyFit>& fits, const std::map<SeriesId, QuantileGrid>& grids,
                               double xi = kPrintedXi) {
    if (fits.empty()) throw NoRelevantFactors();
    StressResult out;
    bool first = true;
    for (auto& [id, fit] : fits) {
        auto g = grids.find(id);
        if (g == grids.end()) throw InputError("no quantile grid for factor " + id.str());
        auto s = factor_stress_var(fit, g->second, xi);
        out.per_factor.emplace(id, s);
        if (first || s.svar > out.svar) {
            out.svar = s.svar;
            out.worst_factor = id;
            first = false;
        }
    }
    return out;
}

inline double factor_long_term_alpha(const PolyFit& fit, const QuantileGrid& grid, const LtaWeights& w) {
    double s = 0.0;
    for (std::size_t q = 0; q < 5; ++q) s += w.w[q] * predict(fit, grid.theta[q]);
    return s;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw InputError("median of empty set");
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median of the per-factor long-term alphas.
inline double long_term_alpha(const std::map<SeriesId, PolyFit>& fits, const std::map<SeriesId, QuantileGrid>& grids,
                              const std::map<SeriesId, LtaWeights>& weights) {
    if (fits.empty()) throw NoRelevantFactors();
    std::vector<double> per;
    for (auto& [id, fit] : fits) {
        auto g = grids.find(id);
        auto w = weights.find(id);
        if (g == grids.end() || w == weights.end()) throw InputError("missing grid or weights for " + id.str());
        per.push_back(factor_long_term_alpha(fit, g->second, w->second));
    }
    return median(std::move(per));
}

class ZeroSVaR : public NumericalError {
public:
    ZeroSVaR() : NumericalError("StressVaR is zero") {}
};

inline double long_term_ratio(double lta, double svar) {
    if (!(svar > 0.0)) throw ZeroSVaR();
    return lta / svar;
}

inline double long_term_stability(double lta, double svar, double kappa = 0.05) { return lta - kappa * svar; }

// ---------------------------------------------------------------------------
// Feature frames.

struct FeatureConfig {
    std::size_t window_len = 36;
    double lambda = kDefaultLambda;
    ShuffleConfig shuffle;
    double kappa = 0.05;
    double gamma = 2.0;
    double xi = kPrintedXi;
    double tail_fraction = 0.10;
    std::optional<SeriesId> benchmark; // zero benchmark when unset
};

struct FeatureFrame {
    SeriesId fund;
    MonthIndex month;
    double sharpe = kNaN;
    double mrar = kNaN;
    double svar = kNaN;
    double lta = kNaN;
    double ltr = kNaN;
    double lts = kNaN;
    double aum = kNaN;
    double volume = kNaN;
    double trailing_return = kNaN;
    bool valid = false;
    std::vector<std::string> reasons;
    SeriesId worst_factor;
    std::size_t relevant_count = 0;

    bool eligible() const { return reasons.empty() || reasons.front() != "IncompleteWindow"; }

    std::string reason() const {
        std::string s;
        for (auto& r : reasons) s += (s.empty() ? "" : ";") + r;
        return s;
    }

    static constexpr std::size_t kNumeric = 9;
    std::array<double, kNumeric> numeric() const {
        return {sharpe, mrar, svar, lta, ltr, lts, aum, volume, trailing_return};
    }
};

struct FeatureBuild {
    std::vector<FeatureFrame> frames;  // sorted by (fund, month)
    std::vector<ScoreEntry> scores;    // every tested (fund, factor, month)
};

namespace detail {

/// Observed values of `id` from the calendar start through `end`.
inline std::vector<double> history_through(const ReturnPanel& p, const SeriesId& id, MonthIndex end) {
    const Row& row = p.row(id);
    std::size_t last = p.require_index(end);
    std::vector<double> out;
    for (std::size_t i = 0; i <= last; ++i)
        if (row[i]) out.push_back(*row[i]);
    return out;
}

struct Cell {
    FeatureFrame frame;
    std::vector<ScoreEntry> scores;
};

inline Cell feature_cell(const ReturnPanel& panel, const SeriesId& f, const std::vector<SeriesId>& factors,
                         MonthIndex m, const FeatureConfig& cfg) {
    Cell cell;
    FeatureFrame& fr = cell.frame;
    fr.fund = f;
    fr.month = m;
    auto fail = [&](std::string reason) { fr.reasons.push_back(std::move(reason)); };

    auto idx = panel.index_of(m);
    if (!idx || *idx + 1 < cfg.window_len) {
        fail("IncompleteWindow");
        return cell;
    }
    auto y = extract_series(panel, f, m, cfg.window_len);
    if (!y) {
        fail("IncompleteWindow");
        return cell;
    }
    fr.trailing_return = y->back();

    std::vector<double> bench;
    if (cfg.benchmark) {
        auto b = extract_series(panel, *cfg.benchmark, m, cfg.window_len);
        if (!b) fail("MissingBenchmark");
        else bench = std::move(*b);
    }
    if (!cfg.benchmark || !bench.empty()) {
        try {
            fr.sharpe = sharpe_ratio(*y, bench);
        } catch (const ZeroVolatility&) {
            fail("ZeroVolatility");
        }
        try {
            fr.mrar = mrar(*y, bench, cfg.gamma);
        } catch (const DomainError&) {
            fail("DomainError");
        }
    }

    // Funds without any AUM or volume data carry a zero feature; a gap in
    // data the fund does report invalidates the row.
    auto aux = [&](const std::map<SeriesId, Row>& table, double& out, const char* reason) {
        if (table.find(f) == table.end()) {
            out = 0.0;
            return;
        }
        auto v = ReturnPanel::lookup(table, panel.calendar, f, m);
        if (v) out = *v;
        else fail(reason);
    };
    aux(panel.aum, fr.aum, "MissingAum");
    aux(panel.volume, fr.volume, "MissingVolume");

    std::map<SeriesId, SignificanceResult> row;
    std::map<SeriesId, WindowPair> windows;
    for (auto& x : factors) {
        auto w = extract_window(panel, f, x, m, cfg.window_len);
        auto* pair = std::get_if<WindowPair>(&w);
        if (!pair) continue;
        auto res = shuffle_test(pair->target, pair->factor, cfg.lambda, cfg.shuffle, {f.id, x.id, m});
        cell.scores.push_back({f, x, m, res});
        row.emplace(x, res);
        windows.emplace(x, std::move(*pair));
    }
    auto gamma_set = relevant_factors(row, cfg.shuffle.threshold_score);
    fr.relevant_count = gamma_set.size();
    if (gamma_set.empty()) {
        fail("NoRelevantFactors");
        return cell;
    }

    std::map<SeriesId, PolyFit> fits;
    std::map<SeriesId, QuantileGrid> grids;
    std::map<SeriesId, LtaWeights> weights;
    try {
        for (auto& x : gamma_set) {
            const auto& w = windows.at(x);
            fits.emplace(x, fit_pair(w.target, w.factor, cfg.lambda));
            auto g = factor_quantiles(history_through(panel, x, m), cfg.tail_fraction);
            weights.emplace(x, lta_weights(g, g.history_mean));
            grids.emplace(x, std::move(g));
        }
    } catch (const InsufficientHistory&) {
        fail("InsufficientHistory");
        return cell;
    } catch (const DegenerateGrid&) {
        fail("DegenerateGrid");
        return cell;
    }
    auto stress = stress_var(fits, grids, cfg.xi);
    fr.svar = stress.svar;
    fr.worst_factor = stress.worst_factor;
    fr.lta = long_term_alpha(fits, grids, weights);
    fr.lts = long_term_stability(fr.lta, fr.svar, cfg.kappa);
    try {
        fr.ltr = long_term_ratio(fr.lta, fr.svar);
    } catch (const ZeroSVaR&) {
        fail("ZeroSVaR");
    }
    return cell;
}

} // namespace detail

/// Feature rows for every (fund, month). Each cell runs the shuffle tests of
/// its trailing window, selects the relevant factors, and derives the
/// StressVaR family from their fits. Cells run in parallel; the output is
/// ordered by (fund, month) regardless of thread count.
inline FeatureBuild build_feature_frames(const ReturnPanel& panel, const std::vector<SeriesId>& funds,
                                         const std::vector<SeriesId>& factors, const std::vector<MonthIndex>& months,
                                         const FeatureConfig& cfg, unsigned threads = 1) {
    cfg.shuffle.validate();
    if (cfg.window_len <= kBasisSize) throw InputError("window length must exceed 5");
    std::vector<SeriesId> fs = funds, xs = factors;
    std::sort(fs.begin(), fs.end());
    std::sort(xs.begin(), xs.end());
    std::vector<MonthIndex> ms = months;
    std::sort(ms.begin(), ms.end());

    auto cells = parallel_map(fs.size() * ms.size(), threads, [&](std::size_t i) {
        return detail::feature_cell(panel, fs[i / ms.size()], xs, ms[i % ms.size()], cfg);
    });
    FeatureBuild out;
    out.frames.reserve(cells.size());
    for (auto& c : cells) {
        c.frame.valid = c.frame.reasons.empty();
        out.frames.push_back(std::move(c.frame));
        for (auto& s : c.scores) out.scores.push_back(std::move(s));
    }
    return out;
}

inline void write_features_csv(std::ostream& out, const std::vector<FeatureFrame>& frames) {
    auto num = [](double v) { return std::isnan(v) ? std::string() : csv::fmt(v); };
    out << "fund_id,month,sharpe,mrar,svar,lta,ltr,lts,aum,volume,trailing_return,valid,reason\n";
    for (auto& f : frames) {
        if (!f.eligible()) continue;
        out << f.fund.id << ',' << f.month.str();
        for (double v : f.numeric()) out << ',' << num(v);
        out << ',' << (f.valid ? 1 : 0) << ',' << f.reason() << '\n';
    }
}

inline std::vector<FeatureFrame> read_features_csv(const std::string& path) {
    std::vector<FeatureFrame> out;
    csv::read(path,
              {"fund_id", "month", "sharpe", "mrar", "svar", "lta", "ltr", "lts", "aum", "volume", "trailing_return",
               "valid", "reason"},
              [&](const std::vector<std::string_view>& f, std::size_t line) {
                  std::string where = path + ":" + std::to_string(line);
                  FeatureFrame fr;
                  fr.fund = fund(std::string(f[0]));
                  fr.month = MonthIndex::parse(f[1]);
                  std::array<double*, 9> slots{&fr.sharpe, &fr.mrar, &fr.svar, &fr.lta, &fr.ltr,
                                               &fr.lts,    &fr.aum,  &fr.volume, &fr.trailing_return};
                  for (std::size_t i = 0; i < 9; ++i)
                      *slots[i] = f[2 + i].empty() ? kNaN : csv::parse_double(f[2 + i], where);
                  if (f[11] != "0" && f[11] != "1") throw InputError(where + ": valid must be 0 or 1");
                  fr.valid = f[11] == "1";
                  std::string_view r = f[12];
                  while (!r.empty()) {
                      auto semi = r.find(';');
                      fr.reasons.emplace_back(r.substr(0, semi));
                      if (semi == std::string_view::npos) break;
                      r.remove_prefix(semi + 1);
                  }
                  if (fr.valid != fr.reasons.empty()) throw InputError(where + ": valid flag disagrees with reason");
                  out.push_back(std::move(fr));
              });
    std::sort(out.begin(), out.end(),
              [](auto& a, auto& b) { return std::tie(a.fund, a.month) < std::tie(b.fund, b.month); });
    return out;
}

} // namespace polyfolio

#endif
