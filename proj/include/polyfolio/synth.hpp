#ifndef POLYFOLIO_SYNTH_HPP
#define POLYFOLIO_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyfolio/errors.hpp"
#include "polyfolio/hermite_ridge.hpp"
#include "polyfolio/panel.hpp"
#include "polyfolio/rng.hpp"

namespace polyfolio::synth {

// Planted-signal panels. Factors follow an AR(1); each signal fund is a
// degree-4 Hermite polynomial of one factor (z-scored over the full sample)
// plus Gaussian noise, so a full-sample fit at lambda = 0 recovers the
// planted coefficients exactly when the noise is zero.

struct SignalFund {
    std::string fund;
    std::size_t factor = 0; // index into the factor list
    Coefficients coefficients{};
    double noise_sd = 0.01;
};

struct FactorDynamics {
    double ar = 0.3;
    double innovation_sd = 0.04;
    std::optional<int> student_df; // heavy-tailed innovations when set
};

struct SynthSpec {
    std::size_t n_factors = 8;
    std::size_t n_funds = 16; // signals + noise funds
    std::size_t n_months = 120;
    std::uint64_t seed = 0;
    MonthIndex start{1994, 5};
    std::vector<SignalFund> signals;
    std::size_t noise_funds = 4;
    double noise_fund_sd = 0.02;
    FactorDynamics factor_dynamics;
    double aum_start = 1e8;
    double aum_drift = 0.005;
    double aum_vol = 0.05;
    double volume_start = 1e6;
    double volume_vol = 0.2;

    void validate() const {
        if (n_factors == 0) throw InputError("synth spec needs at least one factor");
        if (n_months < 6) throw InputError("synth spec needs at least 6 months");
        if (n_funds != signals.size() + noise_funds)
            throw InputError("n_funds must equal the number of signal funds plus noise_funds");
        if (!(factor_dynamics.ar > -1.0 && factor_dynamics.ar < 1.0)) throw InputError("AR(1) coefficient must lie in (-1, 1)");
        if (!(factor_dynamics.innovation_sd > 0.0)) throw InputError("innovation scale must be positive");
        if (factor_dynamics.student_df && *factor_dynamics.student_df <= 2)
            throw InputError("Student-t degrees of freedom must exceed 2");
        if (!(noise_fund_sd > 0.0)) throw InputError("noise fund sd must be positive");
        if (!(aum_start > 0.0) || !(volume_start > 0.0)) throw InputError("AUM and volume must start positive");
        std::map<std::string, int> seen;
        for (auto& s : signals) {
            if (s.factor >= n_factors) throw InputError("signal fund " + s.fund + " refers to a missing factor");
            // Zero noise is allowed so that planted coefficients can be recovered exactly.
            if (!(s.noise_sd >= 0.0)) throw InputError("signal fund " + s.fund + " needs noise sd >= 0");
            if (s.fund.empty() || seen[s.fund]++) throw InputError("signal fund ids must be unique and non-empty");
        }
    }
};

inline std::string factor_id(std::size_t j) {
    char b[32];
    std::snprintf(b, sizeof b, "X%02zu", j);
    return b;
}

inline std::string fund_id(std::size_t i) {
    char b[32];
    std::snprintf(b, sizeof b, "F%03zu", i);
    return b;
}

/// Standard deviation of sum_{k>=1} beta_k He_k(Z) for Z ~ N(0, 1), using
/// E[He_j He_k] = k! [j = k].
inline double signal_scale(const Coefficients& beta) {
    double v = 0.0, fact = 1.0;
    for (std::size_t k = 1; k < kBasisSize; ++k) {
        fact *= static_cast<double>(k);
        v += fact * beta[k] * beta[k];
    }
    return std::sqrt(v);
}

/// A spec with `n_signal` planted funds whose coefficients are drawn from
/// `seed`; each fund's noise sd is `noise_ratio` times its signal scale.
inline SynthSpec default_spec(std::uint64_t seed, std::size_t n_signal = 12, std::size_t n_noise = 4,
                              std::size_t n_factors = 8, std::size_t n_months = 120, double noise_ratio = 0.2) {
    SynthSpec s;
    s.seed = seed;
    s.n_factors = n_factors;
    s.n_months = n_months;
    s.noise_funds = n_noise;
    s.n_funds = n_signal + n_noise;
    auto g = rng::engine(seed, "synth.plan");
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng::uniform(g); };
    for (std::size_t i = 0; i < n_signal; ++i) {
        SignalFund f;
        f.fund = fund_id(i);
        f.factor = i % n_factors;
        double sign = rng::uniform(g) < 0.5 ? -1.0 : 1.0;
        f.coefficients = {u(-0.008, 0.012), sign * u(0.012, 0.022), u(-0.004, 0.004), u(-0.002, 0.002),
                          u(-0.0008, 0.0008)};
        f.noise_sd = noise_ratio * signal_scale(f.coefficients);
        s.signals.push_back(f);
    }
    return s;
}

struct GroundTruth {
    std::map<std::string, SignalFund> signals; // by fund id
    std::vector<std::string> noise_funds;
    std::vector<std::string> factors;
    std::map<std::string, Affine> factor_affine; // full-sample z-scoring used to plant the signal
};

struct Generated {
    ReturnPanel panel;
    GroundTruth truth;
};

inline Generated generate(const SynthSpec& spec) {
    spec.validate();
    const auto& fd = spec.factor_dynamics;
    std::vector<RawSeries> returns, aum, volume;
    Generated out;

    std::vector<std::vector<double>> factors(spec.n_factors);
    for (std::size_t j = 0; j < spec.n_factors; ++j) {
        auto g = rng::engine(spec.seed, "synth.factor", {j});
        auto draw = [&] {
            if (!fd.student_df) return rng::normal(g);
            int df = *fd.student_df;
            return rng::student_t(g, df) * std::sqrt((df - 2.0) / df);
        };
        auto& x = factors[j];
        x.resize(spec.n_months);
        double prev = fd.innovation_sd / std::sqrt(1.0 - fd.ar * fd.ar) * draw();
        for (std::size_t t = 0; t < spec.n_months; ++t) {
            prev = fd.ar * prev + fd.innovation_sd * draw();
            x[t] = prev;
        }
        RawSeries s{factor(factor_id(j)), {}};
        for (std::size_t t = 0; t < spec.n_months; ++t) s.observations.emplace_back(spec.start.plus(static_cast<long>(t)), x[t]);
        returns.push_back(std::move(s));
        out.truth.factors.push_back(factor_id(j));
    }

    std::vector<Standardized> z(spec.n_factors);
    for (std::size_t j = 0; j < spec.n_factors; ++j) {
        z[j] = standardize(factors[j]);
        out.truth.factor_affine[factor_id(j)] = z[j].affine;
    }

    auto add_aux = [&](const std::string& id, std::size_t i) {
        auto ga = rng::engine(spec.seed, "synth.aum", {i});
        auto gv = rng::engine(spec.seed, "synth.volume", {i});
        RawSeries a{fund(id), {}}, v{fund(id), {}};
        double level = spec.aum_start * std::exp(0.5 * rng::normal(ga));
        double vol = spec.volume_start * std::exp(0.5 * rng::normal(gv));
        for (std::size_t t = 0; t < spec.n_months; ++t) {
            level *= std::exp(spec.aum_drift + spec.aum_vol * rng::normal(ga));
            vol *= std::exp(spec.volume_vol * rng::normal(gv));
            a.observations.emplace_back(spec.start.plus(static_cast<long>(t)), level);
            v.observations.emplace_back(spec.start.plus(static_cast<long>(t)), vol);
        }
        aum.push_back(std::move(a));
        volume.push_back(std::move(v));
    };

    std::size_t fund_index = 0;
    for (auto& sig : spec.signals) {
        auto g = rng::engine(spec.seed, "synth.fund", {fund_index});
        RawSeries s{fund(sig.fund), {}};
        for (std::size_t t = 0; t < spec.n_months; ++t) {
            double r = hermite_series(sig.coefficients, z[sig.factor].values[t]) + sig.noise_sd * rng::normal(g);
            s.observations.emplace_back(spec.start.plus(static_cast<long>(t)), r);
        }
        returns.push_back(std::move(s));
        add_aux(sig.fund, fund_index);
        out.truth.signals[sig.fund] = sig;
        ++fund_index;
    }
    for (std::size_t i = 0; i < spec.noise_funds; ++i, ++fund_index) {
        std::string id = fund_id(fund_index);
        while (out.truth.signals.count(id)) id += "n";
        auto g = rng::engine(spec.seed, "synth.fund", {fund_index});
        RawSeries s{fund(id), {}};
        for (std::size_t t = 0; t < spec.n_months; ++t)
            s.observations.emplace_back(spec.start.plus(static_cast<long>(t)), spec.noise_fund_sd * rng::normal(g));
        returns.push_back(std::move(s));
        add_aux(id, fund_index);
        out.truth.noise_funds.push_back(id);
    }
    out.panel = align(returns, aum, volume);
    return out;
}

// ---------------------------------------------------------------------------
// JSON forms of SynthSpec and GroundTruth.

inline SynthSpec spec_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw InputError("synth spec must be a JSON object");
        static const std::vector<std::string> known{
            "n_factors", "n_funds",   "n_months",  "seed",     "start",     "signals",       "noise_funds",
            "noise_sd",  "n_signal_funds", "noise_ratio", "factor_dynamics", "aum_start", "aum_drift",
            "aum_vol",   "volume_start",   "volume_vol"};
        for (auto& [k, _] : j.items())
            if (std::find(known.begin(), known.end(), k) == known.end()) throw InputError("unknown synth spec key '" + k + "'");

        std::uint64_t seed = j.value("seed", std::uint64_t{0});
        std::size_t n_factors = j.value("n_factors", std::size_t{8});
        std::size_t n_months = j.value("n_months", std::size_t{120});
        std::size_t n_noise = j.value("noise_funds", std::size_t{4});
        SynthSpec s;
        if (j.contains("signals")) {
            s.seed = seed;
            s.n_factors = n_factors;
            s.n_months = n_months;
            s.noise_funds = n_noise;
            for (auto& e : j.at("signals")) {
                SignalFund f;
                f.fund = e.at("fund").get<std::string>();
                f.factor = e.at("factor").get<std::size_t>();
                auto c = e.at("coefficients").get<std::vector<double>>();
                if (c.size() != kBasisSize) throw InputError("signal coefficients must have length 5");
                std::copy(c.begin(), c.end(), f.coefficients.begin());
                f.noise_sd = e.at("noise_sd").get<double>();
                s.signals.push_back(f);
            }
            s.n_funds = j.value("n_funds", s.signals.size() + n_noise);
        } else {
            std::size_t n_signal = j.value("n_signal_funds", std::size_t{12});
            s = default_spec(seed, n_signal, n_noise, n_factors, n_months, j.value("noise_ratio", 0.2));
            s.n_funds = j.value("n_funds", s.n_funds);
        }
        if (j.contains("start")) s.start = MonthIndex::parse(j.at("start").get<std::string>());
        s.noise_fund_sd = j.value("noise_sd", s.noise_fund_sd);
        if (j.contains("factor_dynamics")) {
            auto& d = j.at("factor_dynamics");
            s.factor_dynamics.ar = d.value("ar", s.factor_dynamics.ar);
            s.factor_dynamics.innovation_sd = d.value("innovation_sd", s.factor_dynamics.innovation_sd);
            if (d.contains("student_df") && !d.at("student_df").is_null())
                s.factor_dynamics.student_df = d.at("student_df").get<int>();
        }
        s.aum_start = j.value("aum_start", s.aum_start);
        s.aum_drift = j.value("aum_drift", s.aum_drift);
        s.aum_vol = j.value("aum_vol", s.aum_vol);
        s.volume_start = j.value("volume_start", s.volume_start);
        s.volume_vol = j.value("volume_vol", s.volume_vol);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed synth spec: ") + e.what());
    }
}

inline nlohmann::json truth_to_json(const GroundTruth& t) {
    nlohmann::json j;
    j["factors"] = t.factors;
    j["noise_funds"] = t.noise_funds;
    auto& sig = j["signals"] = nlohmann::json::array();
    for (auto& [id, s] : t.signals) {
        std::string fx = t.factors.at(s.factor);
        const auto& a = t.factor_affine.at(fx);
        sig.push_back({{"fund", id},
                       {"factor", fx},
                       {"coefficients", std::vector<double>(s.coefficients.begin(), s.coefficients.end())},
                       {"noise_sd", s.noise_sd},
                       {"factor_mean", a.mean},
                       {"factor_sd", a.sd}});
    }
    return j;
}

} // namespace polyfolio::synth

#endif
