#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "polyfolio/panel.hpp"

#include "oracles.hpp"

using namespace polyfolio;

namespace {

RawSeries make_series(SeriesId id, MonthIndex first, std::size_t n, double base = 0.01) {
    RawSeries s{std::move(id), {}};
    for (std::size_t i = 0; i < n; ++i) s.observations.emplace_back(first.plus(static_cast<long>(i)), base + 0.001 * i);
    return s;
}

std::string temp_file(const std::string& name, const std::string& body) {
    auto dir = std::filesystem::temp_directory_path() / "polyfolio_test_panel";
    std::filesystem::create_directories(dir);
    auto path = dir / name;
    std::ofstream(path) << body;
    return path.string();
}

} // namespace

TEST(Align, IdenticalSpansHaveNoMissingEntries) {
    auto p = align({make_series(fund("A"), {1994, 4}, 36), make_series(factor("X"), {1994, 4}, 36)});
    ASSERT_EQ(p.calendar.size(), 36u);
    EXPECT_EQ(p.calendar.front(), MonthIndex(1994, 4));
    EXPECT_EQ(p.calendar.back(), MonthIndex(1997, 3));
    for (auto& [id, row] : p.series) {
        ASSERT_EQ(row.size(), 36u);
        for (auto& v : row) EXPECT_TRUE(v.has_value());
    }
}

TEST(Align, LaterStartGetsLeadingMissingEntries) {
    auto p = align({make_series(fund("A"), {1994, 4}, 36), make_series(fund("B"), {1995, 1}, 27)});
    ASSERT_EQ(p.calendar.size(), 36u);
    EXPECT_EQ(p.calendar.back(), MonthIndex(1997, 3));
    const auto& b = p.row(fund("B"));
    // 1994-04 .. 1994-12 counted by hand: nine months.
    std::size_t leading = 0;
    while (leading < b.size() && !b[leading]) ++leading;
    EXPECT_EQ(leading, 9u);
    for (std::size_t i = leading; i < b.size(); ++i) EXPECT_TRUE(b[i]);
}

TEST(Align, EmptyInputGivesEmptyPanel) {
    auto p = align({});
    EXPECT_TRUE(p.calendar.empty());
    EXPECT_TRUE(p.series.empty());
}

TEST(Align, DuplicateObservationNamesOffender) {
    RawSeries s{fund("DUP"), {{{2000, 1}, 0.1}, {{2000, 1}, 0.2}}};
    try {
        align({s});
        FAIL();
    } catch (const InputError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("DUP"), std::string::npos);
        EXPECT_NE(msg.find("2000-01"), std::string::npos);
    }
}

TEST(Align, DecreasingDatesRejected) {
    RawSeries s{fund("A"), {{{2000, 2}, 0.1}, {{2000, 1}, 0.2}}};
    EXPECT_THROW(align({s}), InputError);
}

TEST(Align, AuxiliaryValuesMustBePositiveAndBelongToFunds) {
    auto r = make_series(fund("A"), {2000, 1}, 6);
    RawSeries bad_aum{fund("A"), {{{2000, 1}, 0.0}}};
    EXPECT_THROW(align({r}, {bad_aum}), InputError);
    RawSeries factor_aum{factor("X"), {{{2000, 1}, 5.0}}};
    EXPECT_THROW(align({r}, {factor_aum}), InputError);
    RawSeries ok{fund("A"), {{{2000, 3}, 5.0}}};
    auto p = align({r}, {ok}, {ok});
    EXPECT_EQ(p.aum_at(fund("A"), {2000, 3}), 5.0);
    EXPECT_FALSE(p.aum_at(fund("A"), {2000, 2}).has_value());
    EXPECT_EQ(p.volume_at(fund("A"), {2000, 3}), 5.0);
}

TEST(Align, LossFreeAndIdempotent) {
    std::mt19937_64 g(11);
    std::vector<RawSeries> raw;
    for (int k = 0; k < 6; ++k) {
        RawSeries s{k % 2 ? fund("F" + std::to_string(k)) : factor("X" + std::to_string(k)), {}};
        MonthIndex m(1990 + k, 1 + k);
        for (int i = 0; i < 40; ++i) {
            m = m.plus(1 + static_cast<long>(g() % 3));
            s.observations.emplace_back(m, std::ldexp(static_cast<double>(g() % 1000), -10) - 0.4);
        }
        raw.push_back(s);
    }
    auto p = align(raw);
    for (auto& s : raw)
        for (auto& [m, v] : s.observations) EXPECT_EQ(p.value(s.id, m), v);
    auto again = align(observations(p));
    EXPECT_EQ(again.calendar, p.calendar);
    EXPECT_EQ(again.series, p.series);
}

TEST(ExtractWindow, CompletePair) {
    auto p = align({make_series(fund("A"), {1994, 1}, 48), make_series(factor("X"), {1994, 1}, 48, 0.5)});
    auto w = extract_window(p, fund("A"), factor("X"), MonthIndex(1997, 12), 36);
    auto* pair = std::get_if<WindowPair>(&w);
    ASSERT_NE(pair, nullptr);
    ASSERT_EQ(pair->target.size(), 36u);
    ASSERT_EQ(pair->factor.size(), 36u);
    EXPECT_DOUBLE_EQ(pair->target.front(), 0.01 + 0.001 * 12);
    EXPECT_DOUBLE_EQ(pair->target.back(), 0.01 + 0.001 * 47);
}

TEST(ExtractWindow, MissingFactorMonthIsIncomplete) {
    auto x = make_series(factor("X"), {1994, 1}, 48);
    x.observations.erase(x.observations.begin() + 30);
    auto p = align({make_series(fund("A"), {1994, 1}, 48), x});
    auto w = extract_window(p, fund("A"), factor("X"), MonthIndex(1997, 12), 36);
    auto* inc = std::get_if<Incomplete>(&w);
    ASSERT_NE(inc, nullptr);
    EXPECT_EQ(inc->missing, 1u);
}

TEST(ExtractWindow, Errors) {
    auto p = align({make_series(fund("A"), {1994, 1}, 48), make_series(factor("X"), {1994, 1}, 48)});
    EXPECT_THROW(extract_window(p, fund("A"), factor("X"), MonthIndex(1994, 1), 36), InputError);
    EXPECT_THROW(extract_window(p, fund("A"), factor("Y"), MonthIndex(1997, 12), 36), InputError);
    EXPECT_THROW(extract_window(p, fund("A"), factor("X"), MonthIndex(2010, 1), 6), InputError);
}

TEST(ExtractWindow, ShorterWindowIsSuffixOfLonger) {
    auto p = align({make_series(fund("A"), {1994, 1}, 60), make_series(factor("X"), {1994, 1}, 60, -0.2)});
    MonthIndex end(1998, 6);
    for (std::size_t L = 6; L <= 40; ++L)
        for (std::size_t k = 0; k + L <= 54; k += 5) {
            auto a = std::get<WindowPair>(extract_window(p, fund("A"), factor("X"), end, L));
            auto b = std::get<WindowPair>(extract_window(p, fund("A"), factor("X"), end, L + k));
            EXPECT_TRUE(std::equal(a.target.begin(), a.target.end(), b.target.end() - static_cast<long>(L)));
            EXPECT_TRUE(std::equal(a.factor.begin(), a.factor.end(), b.factor.end() - static_cast<long>(L)));
        }
}

TEST(Standardize, SymmetricCase) {
    std::vector<double> v{1, 2, 3};
    auto s = standardize(v);
    EXPECT_DOUBLE_EQ(s.affine.mean, 2.0);
    EXPECT_DOUBLE_EQ(s.affine.sd, 1.0);
    EXPECT_EQ(s.values, (std::vector<double>{-1, 0, 1}));
}

TEST(Standardize, ConstantRowThrows) {
    std::vector<double> v(10, 0.3);
    EXPECT_THROW(standardize(v), ConstantSeries);
    std::vector<double> zero(5, 0.0);
    EXPECT_THROW(standardize(zero), ConstantSeries);
    std::vector<double> one{1.0};
    EXPECT_THROW(standardize(one), InputError);
}

TEST(Standardize, OutputHasUnitMoments) {
    std::mt19937_64 g(3);
    for (int rep = 0; rep < 50; ++rep) {
        auto v = oracle::normals(g, 2 + rep, 0.05);
        for (auto& x : v) x += 0.01 * rep;
        auto s = standardize(v);
        EXPECT_NEAR(oracle::mean(s.values), 0.0, 1e-12);
        EXPECT_NEAR(oracle::sd(s.values), 1.0, 1e-12);
        auto again = standardize(s.values);
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(again.values[i], s.values[i], 1e-12);
        auto back = unstandardize(s.values, s.affine);
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(oracle::rel(back[i], v[i], 1e-300), 1e-12);
    }
}

TEST(Csv, ReturnsRoundTrip) {
    auto path = temp_file("returns.csv",
                          "date,series_id,series_kind,return\n"
                          "1994-05,F1,fund,0.01\n1994-04,F1,fund,-0.02\n\n1994-04,X1,factor,0.5\n"
                          "1994-06,B,benchmark,0.003\n");
    auto p = load_panel(path);
    EXPECT_EQ(p.calendar.size(), 3u);
    EXPECT_EQ(p.value(fund("F1"), {1994, 4}), -0.02);
    EXPECT_EQ(p.benchmarks().size(), 1u);
    std::ostringstream out;
    write_returns_csv(out, p);
    auto path2 = temp_file("returns2.csv", out.str());
    auto q = load_panel(path2);
    EXPECT_EQ(q.series, p.series);
}

TEST(Csv, BadInputsNameTheLine) {
    auto bad_header = temp_file("h.csv", "date,id,kind,return\n");
    EXPECT_THROW(read_returns_csv(bad_header), InputError);
    auto bad_kind = temp_file("k.csv", "date,series_id,series_kind,return\n1994-01,A,stock,0.1\n");
    EXPECT_THROW(read_returns_csv(bad_kind), InputError);
    auto bad_value = temp_file("v.csv", "date,series_id,series_kind,return\n1994-01,A,fund,abc\n");
    try {
        read_returns_csv(bad_value);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
    }
    auto dup = temp_file("d.csv", "date,series_id,series_kind,return\n1994-01,A,fund,0.1\n1994-01,A,fund,0.2\n");
    EXPECT_THROW(load_panel(dup), InputError);
    EXPECT_THROW(load_panel("/nonexistent/returns.csv"), InputError);
}

TEST(Csv, AumAndVolumeFiles) {
    auto r = temp_file("r.csv", "date,series_id,series_kind,return\n1994-01,A,fund,0.1\n1994-02,A,fund,0.1\n");
    auto a = temp_file("a.csv", "date,fund_id,aum\n1994-02,A,120.5\n");
    auto v = temp_file("vol.csv", "date,fund_id,volume\n1994-01,A,3\n");
    auto p = load_panel(r, a, v);
    EXPECT_EQ(p.aum_at(fund("A"), {1994, 2}), 120.5);
    EXPECT_EQ(p.volume_at(fund("A"), {1994, 1}), 3.0);
    auto neg = temp_file("neg.csv", "date,fund_id,aum\n1994-02,A,-1\n");
    EXPECT_THROW(load_panel(r, neg), InputError);
    EXPECT_THROW(load_panel(r, v), InputError); // volume file given as aum
}
