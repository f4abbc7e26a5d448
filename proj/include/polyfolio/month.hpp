#ifndef POLYFOLIO_MONTH_HPP
#define POLYFOLIO_MONTH_HPP

#include <compare>
#include <cstdio>
#include <string>
#include <string_view>

#include "polyfolio/errors.hpp"

namespace polyfolio {

/// A calendar month. Ordering is calendar ordering.
struct MonthIndex {
    int year = 1970;
    int month = 1; // 1..12

    constexpr MonthIndex() = default;
    constexpr MonthIndex(int y, int m) : year(y), month(m) {
        if (m < 1 || m > 12) throw InputError("month out of range: " + std::to_string(m));
    }

    /// Months since year 0, January.
    constexpr long ordinal() const { return static_cast<long>(year) * 12 + (month - 1); }

    static constexpr MonthIndex from_ordinal(long ord) {
        long y = ord >= 0 ? ord / 12 : -((-ord + 11) / 12);
        return MonthIndex(static_cast<int>(y), static_cast<int>(ord - y * 12) + 1);
    }

    constexpr MonthIndex plus(long k) const { return from_ordinal(ordinal() + k); }
    constexpr MonthIndex next() const { return plus(1); }
    constexpr MonthIndex prev() const { return plus(-1); }

    friend constexpr auto operator<=>(const MonthIndex&, const MonthIndex&) = default;

    std::string str() const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
        return buf;
    }

    /// Parses `YYYY-MM`.
    static MonthIndex parse(std::string_view s) {
        auto bad = [&] { return InputError("bad month '" + std::string(s) + "', expected YYYY-MM"); };
        if (s.size() != 7 || s[4] != '-') throw bad();
        int y = 0, m = 0;
        for (int i = 0; i < 4; ++i) {
            if (s[i] < '0' || s[i] > '9') throw bad();
            y = y * 10 + (s[i] - '0');
        }
        for (int i = 5; i < 7; ++i) {
            if (s[i] < '0' || s[i] > '9') throw bad();
            m = m * 10 + (s[i] - '0');
        }
        if (m < 1 || m > 12) throw bad();
        return MonthIndex(y, m);
    }
};

/// Number of months from `a` to `b` (b - a).
constexpr long months_between(MonthIndex a, MonthIndex b) { return b.ordinal() - a.ordinal(); }

} // namespace polyfolio

#endif
