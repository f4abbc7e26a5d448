#ifndef POLYFOLIO_FORECAST_HPP
#define POLYFOLIO_FORECAST_HPP

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "polyfolio/errors.hpp"
#include "polyfolio/itf.hpp"
#include "polyfolio/panel.hpp"
#include "polyfolio/risk_features.hpp"

namespace polyfolio::itf {

/// Feature frames by fund, then month.
class FrameIndex {
public:
    FrameIndex() = default;
    explicit FrameIndex(const std::vector<FeatureFrame>& frames) {
        for (auto& f : frames) by_fund_[f.fund][f.month] = &f;
    }

    std::vector<SeriesId> funds() const {
        std::vector<SeriesId> out;
        for (auto& [id, _] : by_fund_) out.push_back(id);
        return out;
    }

    const FeatureFrame* find(const SeriesId& fund, MonthIndex m) const {
        auto f = by_fund_.find(fund);
        if (f == by_fund_.end()) return nullptr;
        auto it = f->second.find(m);
        return it == f->second.end() ? nullptr : it->second;
    }

    /// N x T matrix of the feature numerics over the `lookback` months
    /// ending at `asof`, or the reason it cannot be built.
    std::pair<std::optional<Mat>, std::string> lookback(const SeriesId& fund, MonthIndex asof,
                                                        std::size_t lookback) const {
        Mat x(static_cast<Eigen::Index>(FeatureFrame::kNumeric), static_cast<Eigen::Index>(lookback));
        for (std::size_t t = 0; t < lookback; ++t) {
            MonthIndex m = asof.plus(static_cast<long>(t) - static_cast<long>(lookback) + 1);
            const FeatureFrame* f = find(fund, m);
            if (!f) return {std::nullopt, "no feature frame for " + m.str()};
            if (!f->valid) return {std::nullopt, "invalid feature frame at " + m.str() + " (" + f->reason() + ")"};
            auto v = f->numeric();
            for (std::size_t k = 0; k < v.size(); ++k)
                x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = v[k];
        }
        return {std::move(x), {}};
    }

private:
    std::map<SeriesId, std::map<MonthIndex, const FeatureFrame*>> by_fund_;
};

/// Labelled samples: lookback ending at each as-of month, labelled by the
/// trend of the fund's return in the following month.
inline std::vector<Sample> build_samples(const FrameIndex& index, const ReturnPanel& panel, std::size_t lookback,
                                         double tau) {
    std::vector<Sample> out;
    for (auto& fund : index.funds()) {
        if (!panel.contains(fund)) continue;
        for (std::size_t i = 0; i + 1 < panel.size(); ++i) {
            MonthIndex asof = panel.calendar[i];
            auto next = panel.value(fund, asof.next());
            if (!next) continue;
            auto [x, _] = index.lookback(fund, asof, lookback);
            if (!x) continue;
            out.push_back({std::move(*x), label_trend(*next, tau), fund, asof});
        }
    }
    return out;
}

struct Split {
    std::vector<Sample> train;
    std::vector<Sample> eval;
};

/// Samples whose label month is at or before `train_end` go to training,
/// the rest to evaluation.
inline Split chronological_split(std::vector<Sample> samples, MonthIndex train_end) {
    Split s;
    for (auto& x : samples) (x.month.next() <= train_end ? s.train : s.eval).push_back(std::move(x));
    return s;
}

struct PanelForecast {
    std::vector<TrendForecast> forecasts;
    std::vector<std::pair<SeriesId, std::string>> ineligible;
};

/// Forecasts for month asof + 1 for every fund with `lookback` consecutive
/// valid frames ending at `asof`.
inline PanelForecast predict_panel(const FrameIndex& index, const ModelParams& params, const Normalizer& norm,
                                   MonthIndex asof) {
    PanelForecast out;
    for (auto& fund : index.funds()) {
        auto [x, why] = index.lookback(fund, asof, params.dims.lookback);
        if (!x) {
            out.ineligible.emplace_back(fund, why);
            continue;
        }
        out.forecasts.push_back({fund, asof.next(), forward(norm.apply(*x), params)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: little-endian binary tensor dump.
//
//   "PFITFCK1" | u32 version | 7 x u64 dims | i64 year, i64 month (train end)
//   | f64 tau | u64 n, n x f64 mean, n x f64 sd | u64 tensors
//   | per tensor: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64 (row-major)

struct Checkpoint {
    ModelParams params;
    Normalizer normalizer;
    MonthIndex train_end; // last label month seen in training
    double tau = 0.005;
};

namespace io {

inline void put_u64(std::ostream& o, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    o.write(b, 8);
}
inline void put_u32(std::ostream& o, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    o.write(b, 4);
}
inline void put_f64(std::ostream& o, double v) { put_u64(o, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw InputError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}
inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw InputError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

inline constexpr char kMagic[8] = {'P', 'F', 'I', 'T', 'F', 'C', 'K', '1'};
inline constexpr std::uint32_t kVersion = 1;

} // namespace io

inline void save_checkpoint(std::ostream& o, const Checkpoint& c) {
    using namespace io;
    o.write(kMagic, 8);
    put_u32(o, kVersion);
    const auto& d = c.params.dims;
    for (auto v : {d.lookback, d.variates, d.model, d.heads, d.head_dim, d.layers, d.ff_mult}) put_u64(o, v);
    put_u64(o, static_cast<std::uint64_t>(static_cast<std::int64_t>(c.train_end.year)));
    put_u64(o, static_cast<std::uint64_t>(c.train_end.month));
    put_f64(o, c.tau);
    put_u64(o, c.normalizer.mean.size());
    for (double v : c.normalizer.mean) put_f64(o, v);
    for (double v : c.normalizer.sd) put_f64(o, v);
    auto tensors = c.params.tensors();
    put_u64(o, tensors.size());
    for (auto& [name, m] : tensors) {
        put_u32(o, static_cast<std::uint32_t>(name.size()));
        o.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(o, static_cast<std::uint64_t>(m->rows()));
        put_u64(o, static_cast<std::uint64_t>(m->cols()));
        for (Eigen::Index r = 0; r < m->rows(); ++r)
            for (Eigen::Index k = 0; k < m->cols(); ++k) put_f64(o, (*m)(r, k));
    }
    if (!o) throw InputError("failed writing checkpoint");
}

inline Checkpoint load_checkpoint(std::istream& in) {
    using namespace io;
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) throw InputError("not a model checkpoint");
    if (get_u32(in) != kVersion) throw InputError("unsupported checkpoint version");
    Dims d;
    for (auto* v : {&d.lookback, &d.variates, &d.model, &d.heads, &d.head_dim, &d.layers, &d.ff_mult}) *v = get_u64(in);
    d.validate();
    Checkpoint c;
    auto year = static_cast<std::int64_t>(get_u64(in));
    auto month = get_u64(in);
    c.train_end = MonthIndex(static_cast<int>(year), static_cast<int>(month));
    c.tau = get_f64(in);
    auto n = get_u64(in);
    if (n > 4096) throw InputError("corrupt checkpoint normalizer");
    c.normalizer.mean.resize(n);
    c.normalizer.sd.resize(n);
    for (auto& v : c.normalizer.mean) v = get_f64(in);
    for (auto& v : c.normalizer.sd) v = get_f64(in);
    c.params = init_params(d, 0);
    auto tensors = c.params.tensors();
    if (get_u64(in) != tensors.size()) throw InputError("checkpoint tensor count does not match its dims");
    for (auto& [name, m] : tensors) {
        auto len = get_u32(in);
        std::string got(len, '\0');
        if (len > 256 || !in.read(got.data(), len)) throw InputError("corrupt checkpoint tensor name");
        if (got != name) throw InputError("checkpoint tensor '" + got + "' where '" + name + "' expected");
        auto rows = get_u64(in), cols = get_u64(in);
        if (rows != static_cast<std::uint64_t>(m->rows()) || cols != static_cast<std::uint64_t>(m->cols()))
            throw InputError("checkpoint tensor " + name + " has the wrong shape");
        for (Eigen::Index r = 0; r < m->rows(); ++r)
            for (Eigen::Index k = 0; k < m->cols(); ++k) (*m)(r, k) = get_f64(in);
    }
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw InputError("cannot write " + path);
    save_checkpoint(o, c);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path);
    return load_checkpoint(in);
}

inline void write_trace_csv(std::ostream& o, const std::vector<TraceRow>& trace) {
    o << "epoch,split,loss,accuracy\n";
    for (auto& r : trace) o << r.epoch << ',' << r.split << ',' << csv::fmt(r.loss) << ',' << csv::fmt(r.accuracy) << '\n';
}

} // namespace polyfolio::itf

#endif
