#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "polyfolio/risk_features.hpp"

#include "oracles.hpp"

using namespace polyfolio;

namespace {

QuantileGrid grid_of(std::array<double, 5> theta) {
    QuantileGrid g;
    g.theta = theta;
    g.percentiles.assign(theta.begin(), theta.end());
    return g;
}

/// Lagrange basis polynomial k over `nodes`, evaluated in product form.
double lagrange_basis(const std::array<double, 5>& nodes, std::size_t k, double p) {
    double v = 1.0;
    for (std::size_t j = 0; j < 5; ++j)
        if (j != k) v *= (p - nodes[j]) / (nodes[k] - nodes[j]);
    return v;
}

} // namespace

// ----- Sharpe -----------------------------------------------------------------

TEST(Sharpe, HandComputedPair) {
    std::vector<double> r{0.01, 0.03};
    EXPECT_NEAR(sharpe_ratio(r), 0.02 / std::sqrt(0.0002), 1e-12);
    EXPECT_NEAR(sharpe_ratio(r), 1.41421, 1e-5);
}

TEST(Sharpe, BenchmarkIsSubtracted) {
    std::vector<double> r{0.02, 0.05, 0.01}, b{0.01, 0.02, 0.0};
    std::vector<double> ex{0.01, 0.03, 0.01};
    EXPECT_NEAR(sharpe_ratio(r, b), oracle::mean(ex) / oracle::sd(ex), 1e-12);
}

TEST(Sharpe, DegenerateCases) {
    std::vector<double> c(12, 0.01);
    EXPECT_THROW(sharpe_ratio(c), ZeroVolatility);
    std::vector<double> r{0.01, 0.02, -0.01};
    EXPECT_THROW(sharpe_ratio(r, r), ZeroVolatility);
    std::vector<double> one{0.01};
    EXPECT_THROW(sharpe_ratio(one), InputError);
    std::vector<double> shorter{0.0, 0.0};
    EXPECT_THROW(sharpe_ratio(r, shorter), InputError);
}

// ----- MRaR -------------------------------------------------------------------

TEST(Mrar, ZeroExcessIsExactlyZero) {
    std::vector<double> r(12, 0.0);
    EXPECT_EQ(mrar(r), 0.0);
    std::vector<double> same{0.01, -0.02, 0.03};
    EXPECT_EQ(mrar(same, same), 0.0);
}

TEST(Mrar, ConstantExcessCompounds) {
    std::vector<double> r(12, 0.01);
    for (double gamma : {0.5, 1.0, 2.0, 5.0}) EXPECT_NEAR(mrar(r, {}, gamma), std::pow(1.01, 12) - 1, 1e-12);
}

TEST(Mrar, GeometricExcessAgainstBenchmark) {
    std::vector<double> r(6, 0.03), b(6, 0.01);
    double g = 1.03 / 1.01;
    EXPECT_NEAR(mrar(r, b), std::pow(g, 6) - 1, 1e-12);
}

TEST(Mrar, SpreadLowersValue) {
    std::vector<double> flat{0.01, 0.01};
    // Same geometric mean: 1.0 * 1.0201 = 1.01^2.
    std::vector<double> geo{0.0, 0.0201};
    double direct = std::pow(0.5 * (1.0 + std::pow(1.0201, -2.0)), -1.0) - 1.0;
    EXPECT_NEAR(mrar(geo), direct, 1e-15);
    EXPECT_LT(mrar(geo), mrar(flat));
    std::vector<double> arith{0.0, 0.02};
    EXPECT_LT(mrar(arith), mrar(flat));
}

TEST(Mrar, DomainErrors) {
    std::vector<double> wipe{0.01, -1.0};
    EXPECT_THROW(mrar(wipe), DomainError);
    std::vector<double> r{0.01, 0.02};
    EXPECT_THROW(mrar(r, {}, 0.0), DomainError);
    std::vector<double> bad_b{-1.5, 0.0};
    EXPECT_THROW(mrar(r, bad_b), DomainError);
}

// ----- Quantile grid ----------------------------------------------------------

TEST(Quantiles, StandardNormalCentralLevels) {
    std::mt19937_64 g(1);
    auto x = oracle::normals(g, 10000);
    auto q = factor_quantiles(x);
    EXPECT_NEAR(q.theta[1], -0.9945, 0.05);
    EXPECT_NEAR(q.theta[2], 0.0, 0.05);
    EXPECT_NEAR(q.theta[3], 0.9945, 0.05);
    EXPECT_TRUE(q.tail_fitted[0]);
    EXPECT_TRUE(q.tail_fitted[1]);
    EXPECT_NEAR(q.theta[0], -2.3263, 0.15);
    EXPECT_NEAR(q.theta[4], 2.3263, 0.15);
    for (std::size_t i = 1; i < 5; ++i) EXPECT_LE(q.theta[i - 1], q.theta[i]);
    EXPECT_EQ(q.theta[1], oracle::quantile7(x, 0.16));
}

TEST(Quantiles, ExponentialTailMatchesGpdLimit) {
    std::mt19937_64 g(2);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> x(20000);
    for (auto& v : x) v = e(g);
    auto q = factor_quantiles(x);
    EXPECT_TRUE(q.tail_fitted[1]);
    EXPECT_NEAR(q.theta[4], -std::log(0.01), 0.15);
}

TEST(Quantiles, GpdMomentsRecoverExponential) {
    // Exponential(scale 2): mean 2, sd 2, so shape 0 and scale 2.
    std::vector<double> ex;
    for (int i = 1; i <= 4000; ++i) ex.push_back(-2.0 * std::log((i - 0.5) / 4000.0));
    auto f = fit_gpd_moments(ex);
    ASSERT_TRUE(f);
    EXPECT_NEAR(f->shape, 0.0, 0.02);
    EXPECT_NEAR(f->scale, 2.0, 0.05);
    EXPECT_NEAR(gpd_tail_quantile({0.0, 2.0}, 1.0, 0.1, 0.99), 1.0 + 2.0 * std::log(10.0), 1e-12);
    EXPECT_NEAR(gpd_tail_quantile({0.5, 1.0}, 0.0, 0.1, 0.99), (std::pow(10.0, 0.5) - 1) / 0.5, 1e-12);
}

TEST(Quantiles, ConstantHistoryIsDegenerate) {
    std::vector<double> x(100, 0.004);
    auto q = factor_quantiles(x);
    for (double t : q.theta) EXPECT_EQ(t, 0.004);
    EXPECT_FALSE(q.tail_fitted[0]);
    EXPECT_FALSE(q.tail_fitted[1]);
    EXPECT_TRUE(q.degenerate);
    EXPECT_THROW(lta_weights(q, 0.004), DegenerateGrid);
}

TEST(Quantiles, ShortHistoryIsEmpiricalOnly) {
    std::mt19937_64 g(3);
    auto x = oracle::normals(g, 30);
    auto q = factor_quantiles(x);
    EXPECT_FALSE(q.tail_fitted[0]);
    EXPECT_FALSE(q.tail_fitted[1]);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(q.theta[i], oracle::quantile7(x, kQuantileLevels[i]));
    auto short_x = oracle::normals(g, 19);
    EXPECT_THROW(factor_quantiles(short_x), InsufficientHistory);
}

TEST(Quantiles, PercentileScanUsesTailEstimates) {
    std::mt19937_64 g(4);
    auto x = oracle::normals(g, 500);
    auto q = factor_quantiles(x);
    ASSERT_EQ(q.percentiles.size(), 99u);
    EXPECT_EQ(q.percentiles.front(), q.theta[0]);
    EXPECT_EQ(q.percentiles.back(), q.theta[4]);
    EXPECT_EQ(q.percentiles[49], oracle::quantile7(x, 0.5));
    EXPECT_NEAR(q.history_mean, oracle::mean(x), 1e-15);
}

// ----- LTA weights ------------------------------------------------------------

TEST(LtaWeights, BaseWeightsMatchNumericIntegration) {
    auto w = lagrange_integral_weights();
    double sum = 0;
    for (std::size_t k = 0; k < 5; ++k) {
        double num = oracle::simpson([&](double p) { return lagrange_basis(kQuantileLevels, k, p); }, 0.0, 1.0);
        EXPECT_NEAR(w[k], num, 1e-10);
        sum += w[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_NEAR(w[0], w[4], 1e-12);
    EXPECT_NEAR(w[1], w[3], 1e-12);
}

TEST(LtaWeights, ConstraintsOnRandomGrids) {
    std::mt19937_64 g(5);
    std::normal_distribution<double> n(0, 1);
    for (int rep = 0; rep < 1000; ++rep) {
        std::array<double, 5> th;
        for (auto& t : th) t = 0.05 * n(g);
        std::sort(th.begin(), th.end());
        double m = 0.01 * n(g);
        auto w = lta_weights(grid_of(th), m);
        double s = 0, sw = 0;
        for (std::size_t q = 0; q < 5; ++q) {
            s += w.w[q];
            sw += w.w[q] * th[q];
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
        EXPECT_NEAR(sw, m, 1e-12);
    }
}

TEST(LtaWeights, SymmetricGridGivesSymmetricWeights) {
    std::mt19937_64 g(6);
    std::uniform_real_distribution<double> u(0.001, 0.1);
    for (int rep = 0; rep < 1000; ++rep) {
        double b = u(g), a = b + u(g);
        auto w = lta_weights(grid_of({-a, -b, 0, b, a}), 0.0);
        EXPECT_NEAR(w.w[0], w.w[4], 1e-12);
        EXPECT_NEAR(w.w[1], w.w[3], 1e-12);
    }
}

// ----- StressVaR --------------------------------------------------------------

TEST(StressVar, FlatFitIsXiTimesResidualSd) {
    PolyFit f;
    f.residual_var = 0.0004;
    auto q = grid_of({-0.1, -0.05, 0, 0.05, 0.1});
    auto s = factor_stress_var(f, q, kPrintedXi);
    EXPECT_EQ(s.y_max, 0.0);
    EXPECT_NEAR(s.svar, 2.33 * 0.02, 1e-12);
}

TEST(StressVar, PureLossNoResidual) {
    PolyFit f;
    f.beta = {-0.10, 0, 0, 0, 0};
    auto s = factor_stress_var(f, grid_of({-1, 0, 0, 0, 1}), kPrintedXi);
    EXPECT_NEAR(s.svar, 0.10, 1e-15);
    f.beta = {0.10, 0, 0, 0, 0};
    EXPECT_EQ(factor_stress_var(f, grid_of({-1, 0, 0, 0, 1}), kPrintedXi).y_max, 0.0);
}

TEST(StressVar, MaxOverFactorsWithTies) {
    PolyFit a, b;
    a.beta = {-0.08, 0, 0, 0, 0};
    b.beta = {-0.12, 0, 0, 0, 0};
    auto q = grid_of({-1, 0, 0, 0, 1});
    std::map<SeriesId, PolyFit> fits{{factor("A"), a}, {factor("B"), b}};
    std::map<SeriesId, QuantileGrid> grids{{factor("A"), q}, {factor("B"), q}};
    auto r = stress_var(fits, grids);
    EXPECT_NEAR(r.svar, 0.12, 1e-15);
    EXPECT_EQ(r.worst_factor, factor("B"));
    fits[factor("C")] = b;
    grids[factor("C")] = q;
    EXPECT_EQ(stress_var(fits, grids).worst_factor, factor("B"));
    EXPECT_THROW(stress_var({}, {}), NoRelevantFactors);
}

TEST(StressVar, DominanceAndMonotoneInRelevantSet) {
    std::mt19937_64 g(7);
    std::map<SeriesId, PolyFit> fits;
    std::map<SeriesId, QuantileGrid> grids;
    double prev = 0.0;
    for (int j = 0; j < 10; ++j) {
        auto x = oracle::normals(g, 120, 0.04);
        auto y = oracle::normals(g, 36, 0.02);
        for (std::size_t t = 0; t < 36; ++t) y[t] += 0.3 * x[t + 84] - 4 * x[t + 84] * x[t + 84];
        std::vector<double> window(x.end() - 36, x.end());
        auto f = fit_pair(y, window, 1e-4);
        auto q = factor_quantiles(x);
        auto s = factor_stress_var(f, q, kPrintedXi);
        EXPECT_GE(s.svar, s.y_max);
        EXPECT_GE(s.svar, 2.33 * std::sqrt(f.residual_var));
        double worst = 0;
        for (int p = 1; p <= 99; ++p) worst = std::min(worst, predict(f, q.percentiles[p - 1]));
        EXPECT_EQ(s.y_max, -worst);
        SeriesId id = factor("X" + std::to_string(j));
        fits[id] = f;
        grids[id] = q;
        double now = stress_var(fits, grids).svar;
        EXPECT_GE(now, prev);
        prev = now;
    }
}

// ----- LTA / LTR / LTS --------------------------------------------------------

TEST(LongTermAlpha, ConstantFit) {
    PolyFit f;
    f.beta = {0.013, 0, 0, 0, 0};
    auto q = grid_of({-0.1, -0.03, 0.0, 0.04, 0.12});
    auto w = lta_weights(q, 0.002);
    EXPECT_NEAR(factor_long_term_alpha(f, q, w), 0.013, 1e-14);
}

TEST(LongTermAlpha, EvenCountMedian) { EXPECT_DOUBLE_EQ(median({0.03, 0.01}), 0.02); }

TEST(LongTermAlpha, LinearFitOnStandardizedFactorIsZero) {
    std::mt19937_64 g(8);
    for (int rep = 0; rep < 100; ++rep) {
        auto x = oracle::normals(g, 200, 0.05);
        auto q = factor_quantiles(x);
        PolyFit f;
        f.beta = {0, 1, 0, 0, 0};
        f.factor_affine = {q.history_mean, 0.05};
        auto w = lta_weights(q, q.history_mean);
        EXPECT_NEAR(factor_long_term_alpha(f, q, w), 0.0, 1e-12);
    }
}

TEST(LongTermAlpha, MedianAcrossFactors) {
    auto q = grid_of({-0.1, -0.03, 0.0, 0.04, 0.12});
    auto w = lta_weights(q, 0.001);
    std::map<SeriesId, PolyFit> fits;
    std::map<SeriesId, QuantileGrid> grids;
    std::map<SeriesId, LtaWeights> weights;
    double c[] = {0.01, 0.05, 0.03};
    for (int j = 0; j < 3; ++j) {
        PolyFit f;
        f.beta = {c[j], 0, 0, 0, 0};
        SeriesId id = factor("X" + std::to_string(j));
        fits[id] = f;
        grids[id] = q;
        weights[id] = w;
    }
    EXPECT_NEAR(long_term_alpha(fits, grids, weights), 0.03, 1e-14);
    EXPECT_THROW(long_term_alpha({}, {}, {}), NoRelevantFactors);
}

TEST(LongTermRatio, Examples) {
    EXPECT_DOUBLE_EQ(long_term_ratio(0.02, 0.10), 0.2);
    EXPECT_EQ(long_term_ratio(0.0, 0.3), 0.0);
    EXPECT_THROW(long_term_ratio(0.02, 0.0), ZeroSVaR);
}

TEST(LongTermStability, Examples) {
    EXPECT_NEAR(long_term_stability(0.02, 0.10, 0.05), 0.015, 1e-15);
    EXPECT_EQ(long_term_stability(0.02, 0.0), 0.02);
    EXPECT_EQ(long_term_stability(0.02, 0.3, 0.0), 0.02);
}

// ----- Feature frames ---------------------------------------------------------

namespace {

struct Toy {
    ReturnPanel panel;
};

/// Fund "SIG" loads on factor "X0"; "NOISE" is independent of every factor.
/// "SHORT" has only `short_len` months.
ReturnPanel toy_panel(std::size_t months, std::size_t short_len, bool with_aux = true) {
    auto g = rng::engine(31, "toy");
    MonthIndex start(2000, 1);
    std::vector<RawSeries> raw, aum, vol;
    std::vector<std::vector<double>> x(3, std::vector<double>(months));
    for (std::size_t j = 0; j < 3; ++j) {
        RawSeries s{factor("X" + std::to_string(j)), {}};
        for (std::size_t t = 0; t < months; ++t) {
            x[j][t] = 0.04 * rng::normal(g);
            s.observations.emplace_back(start.plus(static_cast<long>(t)), x[j][t]);
        }
        raw.push_back(s);
    }
    RawSeries sig{fund("SIG"), {}}, noise{fund("NOISE"), {}}, shortf{fund("SHORT"), {}};
    for (std::size_t t = 0; t < months; ++t) {
        auto m = start.plus(static_cast<long>(t));
        sig.observations.emplace_back(m, 0.005 + 0.5 * x[0][t] - 6 * x[0][t] * x[0][t] + 0.002 * rng::normal(g));
        noise.observations.emplace_back(m, 0.02 * rng::normal(g));
        if (t >= months - short_len) shortf.observations.emplace_back(m, 0.3 * x[0][t] + 0.001 * rng::normal(g));
    }
    raw.push_back(sig);
    raw.push_back(noise);
    raw.push_back(shortf);
    if (with_aux)
        for (auto* f : {&sig, &noise, &shortf}) {
            RawSeries a{f->id, {}};
            for (auto& [m, _] : f->observations) a.observations.emplace_back(m, 100.0 + m.month);
            aum.push_back(a);
            vol.push_back(a);
        }
    return align(raw, aum, vol);
}

FeatureConfig small_config() {
    FeatureConfig c;
    c.shuffle.n_shuffles = 100;
    c.shuffle.seed = 3;
    return c;
}

std::vector<MonthIndex> all_months(const ReturnPanel& p) { return p.calendar; }

} // namespace

TEST(FeatureFrames, EligibleCountFollowsHistoryLength) {
    auto p = toy_panel(40, 20);
    auto b = build_feature_frames(p, p.funds(), p.factors(), all_months(p), small_config());
    std::map<std::string, std::size_t> eligible, valid;
    for (auto& f : b.frames) {
        if (f.eligible()) ++eligible[f.fund.id];
        if (f.valid) ++valid[f.fund.id];
    }
    EXPECT_EQ(eligible["SIG"], 40u - 36u + 1u);
    EXPECT_EQ(valid["SIG"], 5u);
    EXPECT_EQ(eligible["SHORT"], 0u);
    EXPECT_EQ(valid["SHORT"], 0u);
    EXPECT_EQ(b.frames.size(), 3u * 40u);
}

TEST(FeatureFrames, UnreachableThresholdLeavesNoRelevantFactors) {
    auto p = toy_panel(40, 20);
    auto cfg = small_config();
    cfg.shuffle.threshold_score = std::log(101.0); // the largest attainable score, never exceeded
    auto b = build_feature_frames(p, {fund("SIG")}, p.factors(), all_months(p), cfg);
    std::size_t n = 0;
    for (auto& f : b.frames)
        if (f.eligible()) {
            ++n;
            EXPECT_FALSE(f.valid);
            EXPECT_EQ(f.reason(), "NoRelevantFactors");
            EXPECT_EQ(f.relevant_count, 0u);
        }
    EXPECT_EQ(n, 5u);
}

TEST(FeatureFrames, ValidRowInvariants) {
    auto p = toy_panel(60, 20);
    auto cfg = small_config();
    auto b = build_feature_frames(p, {fund("SIG")}, p.factors(), all_months(p), cfg);
    std::size_t n = 0;
    for (auto& f : b.frames) {
        if (!f.valid) continue;
        ++n;
        EXPECT_GE(f.svar, 0.0);
        EXPECT_NEAR(f.ltr * f.svar, f.lta, 1e-9);
        EXPECT_NEAR(f.lts, f.lta - 0.05 * f.svar, 1e-12);
        EXPECT_GE(f.relevant_count, 1u);
        auto scores = std::count_if(b.scores.begin(), b.scores.end(), [&](const ScoreEntry& e) {
            return e.window_end == f.month && e.factor == f.worst_factor && e.result.score > 3.0;
        });
        EXPECT_EQ(scores, 1);
        EXPECT_EQ(f.trailing_return, p.value(fund("SIG"), f.month));
        EXPECT_EQ(f.aum, 100.0 + f.month.month);
        auto y = *extract_series(p, fund("SIG"), f.month, 36);
        EXPECT_EQ(f.sharpe, sharpe_ratio(y));
        EXPECT_EQ(f.mrar, mrar(y));
    }
    EXPECT_EQ(n, 25u);
}

TEST(FeatureFrames, MissingAuxAndBenchmarkReasons) {
    auto p = toy_panel(40, 20, false);
    auto cfg = small_config();
    auto b = build_feature_frames(p, {fund("SIG")}, p.factors(), {p.calendar.back()}, cfg);
    ASSERT_EQ(b.frames.size(), 1u);
    EXPECT_TRUE(b.frames[0].valid);
    EXPECT_EQ(b.frames[0].aum, 0.0);
    cfg.benchmark = benchmark("BM");
    auto q = p;
    q.series[benchmark("BM")] = Row(q.size(), std::nullopt);
    q.aum[fund("SIG")] = Row(q.size(), 5.0);
    q.aum[fund("SIG")].back().reset();
    auto c = build_feature_frames(q, {fund("SIG")}, q.factors(), {q.calendar.back()}, cfg);
    EXPECT_FALSE(c.frames[0].valid);
    EXPECT_EQ(c.frames[0].reason(), "MissingBenchmark;MissingAum");
}

TEST(FeatureFrames, DeterministicAcrossThreadCounts) {
    auto p = toy_panel(50, 45);
    auto cfg = small_config();
    auto a = build_feature_frames(p, p.funds(), p.factors(), all_months(p), cfg, 1);
    auto b = build_feature_frames(p, p.funds(), p.factors(), all_months(p), cfg, 8);
    std::ostringstream sa, sb, ca, cb;
    write_features_csv(sa, a.frames);
    write_features_csv(sb, b.frames);
    write_scores_csv(ca, a.scores);
    write_scores_csv(cb, b.scores);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(ca.str(), cb.str());
}

TEST(FeatureFrames, CsvRoundTrip) {
    auto p = toy_panel(45, 20);
    auto b = build_feature_frames(p, p.funds(), p.factors(), all_months(p), small_config());
    std::ostringstream out;
    write_features_csv(out, b.frames);
    auto path = std::filesystem::temp_directory_path() / "polyfolio_features_rt.csv";
    std::ofstream(path) << out.str();
    auto back = read_features_csv(path.string());
    std::ostringstream again;
    write_features_csv(again, back);
    EXPECT_EQ(out.str(), again.str());
    std::size_t eligible = 0;
    for (auto& f : b.frames) eligible += f.eligible();
    EXPECT_EQ(back.size(), eligible);
    EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
              "fund_id,month,sharpe,mrar,svar,lta,ltr,lts,aum,volume,trailing_return,valid,reason");
}
