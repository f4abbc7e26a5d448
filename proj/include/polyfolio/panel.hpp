#ifndef POLYFOLIO_PANEL_HPP
#define POLYFOLIO_PANEL_HPP

#include <algorithm>
#include <cmath>
#include <compare>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "polyfolio/csv.hpp"
#include "polyfolio/errors.hpp"
#include "polyfolio/month.hpp"

namespace polyfolio {

enum class SeriesKind { Fund, Factor, Benchmark };

inline const char* to_string(SeriesKind k) {
    switch (k) {
    case SeriesKind::Fund: return "fund";
    case SeriesKind::Factor: return "factor";
    case SeriesKind::Benchmark: return "benchmark";
    }
    return "?";
}

inline SeriesKind parse_kind(std::string_view s) {
    if (s == "fund") return SeriesKind::Fund;
    if (s == "factor") return SeriesKind::Factor;
    if (s == "benchmark") return SeriesKind::Benchmark;
    throw InputError("unknown series kind '" + std::string(s) + "'");
}

struct SeriesId {
    SeriesKind kind = SeriesKind::Fund;
    std::string id;

    friend auto operator<=>(const SeriesId&, const SeriesId&) = default;
    std::string str() const { return std::string(to_string(kind)) + ":" + id; }
};

inline SeriesId fund(std::string id) { return {SeriesKind::Fund, std::move(id)}; }
inline SeriesId factor(std::string id) { return {SeriesKind::Factor, std::move(id)}; }
inline SeriesId benchmark(std::string id) { return {SeriesKind::Benchmark, std::move(id)}; }

using Observation = std::pair<MonthIndex, double>;

struct RawSeries {
    SeriesId id;
    std::vector<Observation> observations;
};

/// One value per calendar month; std::nullopt marks a missing entry.
using Row = std::vector<std::optional<double>>;

/// Calendar-aligned monthly panel. Immutable once built by align().
struct ReturnPanel {
    std::vector<MonthIndex> calendar; // contiguous, ascending
    std::map<SeriesId, Row> series;   // simple returns
    std::map<SeriesId, Row> aum;      // keyed by fund id, strictly positive
    std::map<SeriesId, Row> volume;

    bool empty() const { return calendar.empty(); }
    std::size_t size() const { return calendar.size(); }

    std::optional<std::size_t> index_of(MonthIndex m) const {
        if (calendar.empty()) return std::nullopt;
        long off = months_between(calendar.front(), m);
        if (off < 0 || off >= static_cast<long>(calendar.size())) return std::nullopt;
        return static_cast<std::size_t>(off);
    }

    std::size_t require_index(MonthIndex m) const {
        auto i = index_of(m);
        if (!i) throw InputError("month " + m.str() + " is not in the panel calendar");
        return *i;
    }

    const Row& row(const SeriesId& id) const {
        auto it = series.find(id);
        if (it == series.end()) throw InputError("unknown series " + id.str());
        return it->second;
    }

    bool contains(const SeriesId& id) const { return series.count(id) != 0; }

    std::optional<double> value(const SeriesId& id, MonthIndex m) const {
        auto i = index_of(m);
        if (!i) return std::nullopt;
        return row(id)[*i];
    }

    static std::optional<double> lookup(const std::map<SeriesId, Row>& table, const std::vector<MonthIndex>& cal,
                                        const SeriesId& id, MonthIndex m) {
        auto it = table.find(id);
        if (it == table.end() || cal.empty()) return std::nullopt;
        long off = months_between(cal.front(), m);
        if (off < 0 || off >= static_cast<long>(cal.size())) return std::nullopt;
        return it->second[static_cast<std::size_t>(off)];
    }
    std::optional<double> aum_at(const SeriesId& f, MonthIndex m) const { return lookup(aum, calendar, f, m); }
    std::optional<double> volume_at(const SeriesId& f, MonthIndex m) const { return lookup(volume, calendar, f, m); }

    std::vector<SeriesId> ids(SeriesKind kind) const {
        std::vector<SeriesId> out;
        for (auto& [id, _] : series)
            if (id.kind == kind) out.push_back(id);
        return out;
    }
    std::vector<SeriesId> funds() const { return ids(SeriesKind::Fund); }
    std::vector<SeriesId> factors() const { return ids(SeriesKind::Factor); }
    std::vector<SeriesId> benchmarks() const { return ids(SeriesKind::Benchmark); }
};

namespace detail {

inline void check_increasing(const RawSeries& s, const char* what) {
    for (std::size_t i = 1; i < s.observations.size(); ++i) {
        auto a = s.observations[i - 1].first, b = s.observations[i].first;
        if (b == a)
            throw InputError(std::string("duplicate ") + what + " observation for " + s.id.str() + " at " + b.str());
        if (b < a)
            throw InputError(std::string(what) + " dates for " + s.id.str() + " are not increasing at " + b.str());
    }
}

inline void place(std::map<SeriesId, Row>& table, const RawSeries& s, MonthIndex first, std::size_t len,
                  const char* what, bool positive) {
    auto& row = table[s.id];
    if (row.empty()) row.assign(len, std::nullopt);
    for (auto& [m, v] : s.observations) {
        auto i = static_cast<std::size_t>(months_between(first, m));
        if (row[i]) throw InputError(std::string("duplicate ") + what + " observation for " + s.id.str() + " at " + m.str());
        if (!std::isfinite(v)) throw InputError(std::string("non-finite ") + what + " for " + s.id.str() + " at " + m.str());
        if (positive && !(v > 0.0))
            throw InputError(std::string(what) + " must be strictly positive for " + s.id.str() + " at " + m.str());
        row[i] = v;
    }
}

} // namespace detail

/// Places every series on the contiguous calendar spanning all observed
/// months (returns, AUM and volume). Entries not observed stay missing.
inline ReturnPanel align(const std::vector<RawSeries>& returns, const std::vector<RawSeries>& aum = {},
                         const std::vector<RawSeries>& volume = {}) {
    std::optional<MonthIndex> lo, hi;
    auto scan = [&](const std::vector<RawSeries>& list, const char* what) {
        for (auto& s : list) {
            detail::check_increasing(s, what);
            if (s.observations.empty()) continue;
            auto a = s.observations.front().first, b = s.observations.back().first;
            if (!lo || a < *lo) lo = a;
            if (!hi || b > *hi) hi = b;
        }
    };
    scan(returns, "return");
    scan(aum, "aum");
    scan(volume, "volume");

    ReturnPanel p;
    if (!lo) {
        for (auto& s : returns) p.series[s.id];
        return p;
    }
    std::size_t len = static_cast<std::size_t>(months_between(*lo, *hi)) + 1;
    p.calendar.reserve(len);
    for (std::size_t i = 0; i < len; ++i) p.calendar.push_back(lo->plus(static_cast<long>(i)));

    for (auto& s : returns) detail::place(p.series, s, *lo, len, "return", false);
    for (auto& s : aum) {
        if (s.id.kind != SeriesKind::Fund) throw InputError("aum given for non-fund " + s.id.str());
        detail::place(p.aum, s, *lo, len, "aum", true);
    }
    for (auto& s : volume) {
        if (s.id.kind != SeriesKind::Fund) throw InputError("volume given for non-fund " + s.id.str());
        detail::place(p.volume, s, *lo, len, "volume", true);
    }
    return p;
}

/// Inverse of align(): the observed (month, value) pairs of every series.
inline std::vector<RawSeries> observations(const ReturnPanel& p) {
    std::vector<RawSeries> out;
    for (auto& [id, row] : p.series) {
        RawSeries s{id, {}};
        for (std::size_t i = 0; i < row.size(); ++i)
            if (row[i]) s.observations.emplace_back(p.calendar[i], *row[i]);
        out.push_back(std::move(s));
    }
    return out;
}

struct WindowPair {
    std::vector<double> target;
    std::vector<double> factor;
};

struct Incomplete {
    std::size_t missing = 0;
};

using WindowResult = std::variant<WindowPair, Incomplete>;

namespace detail {

inline std::size_t window_start(const ReturnPanel& p, MonthIndex end, std::size_t length) {
    std::size_t last = p.require_index(end);
    if (length == 0) throw InputError("window length must be positive");
    if (length > last + 1)
        throw InputError("window of " + std::to_string(length) + " months ending " + end.str() +
                         " exceeds the panel calendar");
    return last + 1 - length;
}

} // namespace detail

/// The `length` months of `id` ending at `end`, or nullopt if any is missing.
inline std::optional<std::vector<double>> extract_series(const ReturnPanel& p, const SeriesId& id, MonthIndex end,
                                                         std::size_t length) {
    const Row& row = p.row(id);
    std::size_t start = detail::window_start(p, end, length);
    std::vector<double> out;
    out.reserve(length);
    for (std::size_t i = start; i < start + length; ++i) {
        if (!row[i]) return std::nullopt;
        out.push_back(*row[i]);
    }
    return out;
}

/// Aligned target/factor rows for the window ending at `end`, or the number
/// of months in which either side is missing.
inline WindowResult extract_window(const ReturnPanel& p, const SeriesId& target, const SeriesId& factor,
                                   MonthIndex end, std::size_t length) {
    const Row& y = p.row(target);
    const Row& x = p.row(factor);
    std::size_t start = detail::window_start(p, end, length);
    WindowPair w;
    std::size_t missing = 0;
    for (std::size_t i = start; i < start + length; ++i) {
        if (!y[i] || !x[i]) {
            ++missing;
            continue;
        }
        w.target.push_back(*y[i]);
        w.factor.push_back(*x[i]);
    }
    if (missing) return Incomplete{missing};
    return w;
}

struct Affine {
    double mean = 0.0;
    double sd = 1.0;

    double forward(double v) const { return (v - mean) / sd; }
    double inverse(double z) const { return z * sd + mean; }
};

struct Standardized {
    std::vector<double> values;
    Affine affine;
};

/// Accumulated as offsets from the first value, so a constant row has an
/// exact mean.
inline double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x - v[0];
    return v[0] + s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator).
inline double sample_sd(std::span<const double> v, double mu) {
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// z-scores a row with its sample mean and sample standard deviation.
inline Standardized standardize(std::span<const double> row) {
    if (row.size() < 2) throw InputError("standardize needs at least 2 values");
    double mu = mean(row);
    double sd = sample_sd(row, mu);
    // Rows equal up to rounding noise count as constant.
    double scale = std::max(std::abs(mu), 1e-300);
    if (!(sd > 1e-14 * scale) || sd == 0.0) throw ConstantSeries();
    Standardized s;
    s.affine = {mu, sd};
    s.values.reserve(row.size());
    for (double v : row) s.values.push_back(s.affine.forward(v));
    return s;
}

inline std::vector<double> unstandardize(std::span<const double> z, const Affine& a) {
    std::vector<double> out;
    out.reserve(z.size());
    for (double v : z) out.push_back(a.inverse(v));
    return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion and export.

inline std::vector<RawSeries> read_returns_csv(const std::string& path) {
    std::map<SeriesId, RawSeries> by_id;
    csv::read(path, {"date", "series_id", "series_kind", "return"},
              [&](const std::vector<std::string_view>& f, std::size_t line) {
                  std::string where = path + ":" + std::to_string(line);
                  if (f[1].empty()) throw InputError(where + ": empty series_id");
                  SeriesId id{parse_kind(f[2]), std::string(f[1])};
                  auto& s = by_id[id];
                  s.id = id;
                  s.observations.emplace_back(MonthIndex::parse(f[0]), csv::parse_double(f[3], where));
              });
    std::vector<RawSeries> out;
    for (auto& [_, s] : by_id) {
        std::stable_sort(s.observations.begin(), s.observations.end(),
                         [](auto& a, auto& b) { return a.first < b.first; });
        out.push_back(std::move(s));
    }
    return out;
}

/// Reads an AUM (`date,fund_id,aum`) or volume (`date,fund_id,volume`) file.
inline std::vector<RawSeries> read_fund_values_csv(const std::string& path, const std::string& column) {
    std::map<std::string, RawSeries> by_id;
    csv::read(path, {"date", "fund_id", column}, [&](const std::vector<std::string_view>& f, std::size_t line) {
        std::string where = path + ":" + std::to_string(line);
        auto& s = by_id[std::string(f[1])];
        s.id = fund(std::string(f[1]));
        s.observations.emplace_back(MonthIndex::parse(f[0]), csv::parse_double(f[2], where));
    });
    std::vector<RawSeries> out;
    for (auto& [_, s] : by_id) {
        std::stable_sort(s.observations.begin(), s.observations.end(),
                         [](auto& a, auto& b) { return a.first < b.first; });
        out.push_back(std::move(s));
    }
    return out;
}

inline ReturnPanel load_panel(const std::string& returns_path, const std::string& aum_path = {},
                              const std::string& volume_path = {}, const std::string& benchmark_path = {}) {
    auto returns = read_returns_csv(returns_path);
    if (!benchmark_path.empty()) {
        for (auto& s : read_returns_csv(benchmark_path)) {
            if (s.id.kind != SeriesKind::Benchmark)
                throw InputError(benchmark_path + ": series " + s.id.id + " is not of kind benchmark");
            returns.push_back(std::move(s));
        }
    }
    std::vector<RawSeries> aum, vol;
    if (!aum_path.empty()) aum = read_fund_values_csv(aum_path, "aum");
    if (!volume_path.empty()) vol = read_fund_values_csv(volume_path, "volume");
    return align(returns, aum, vol);
}

inline void write_returns_csv(std::ostream& out, const ReturnPanel& p) {
    out << "date,series_id,series_kind,return\n";
    for (auto& [id, row] : p.series)
        for (std::size_t i = 0; i < row.size(); ++i)
            if (row[i]) out << p.calendar[i].str() << ',' << id.id << ',' << to_string(id.kind) << ','
                            << csv::fmt(*row[i]) << '\n';
}

inline void write_fund_values_csv(std::ostream& out, const ReturnPanel& p, const std::map<SeriesId, Row>& table,
                                  const std::string& column) {
    out << "date,fund_id," << column << '\n';
    for (auto& [id, row] : table)
        for (std::size_t i = 0; i < row.size(); ++i)
            if (row[i]) out << p.calendar[i].str() << ',' << id.id << ',' << csv::fmt(*row[i]) << '\n';
}

} // namespace polyfolio

#endif
