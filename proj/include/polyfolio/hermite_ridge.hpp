#ifndef POLYFOLIO_HERMITE_RIDGE_HPP
#define POLYFOLIO_HERMITE_RIDGE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "polyfolio/errors.hpp"
#include "polyfolio/panel.hpp"

namespace polyfolio {

// Degree-4 polynomial regression of a target on one risk factor, written in
// the probabilists' Hermite basis of the z-scored factor:
//
//   y_t = sum_k beta_k He_k(z_t) + e_t,   z_t = (x_t - mean(x)) / sd(x)
//
// with beta estimated by ridge regression penalising all five coefficients:
//
//   beta = (H H^T + lambda I)^{-1} H y,   H = [He_k(z_t)]  (5 x T)

inline constexpr std::size_t kBasisSize = 5;
inline constexpr double kDefaultLambda = 1e-4;

using Coefficients = std::array<double, kBasisSize>;

/// He_k(x) for k in 0..4.
inline double hermite(double x, int k) {
    switch (k) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return x * x - 1.0;
    case 3: return x * (x * x - 3.0);
    case 4: {
        double x2 = x * x;
        return x2 * (x2 - 6.0) + 3.0;
    }
    default: throw InputError("Hermite degree " + std::to_string(k) + " outside 0..4");
    }
}

/// He_0(x) .. He_4(x) by the three-term recurrence He_{k+1} = x He_k - k He_{k-1}.
inline Coefficients hermite_all(double x) {
    Coefficients h;
    h[0] = 1.0;
    h[1] = x;
    for (std::size_t k = 1; k + 1 < kBasisSize; ++k) h[k + 1] = x * h[k] - static_cast<double>(k) * h[k - 1];
    return h;
}

inline double hermite_series(const Coefficients& beta, double z) {
    auto h = hermite_all(z);
    double s = 0.0;
    for (std::size_t k = 0; k < kBasisSize; ++k) s += beta[k] * h[k];
    return s;
}

/// 5 x T matrix of basis evaluations; rows[k][t] = He_k(z_t).
struct HermiteDesign {
    std::array<std::vector<double>, kBasisSize> rows;
    Affine affine; // raw factor -> z

    std::size_t width() const { return rows[0].size(); }
    double operator()(std::size_t k, std::size_t t) const { return rows[k][t]; }
};

/// Design for an already standardized factor row.
inline HermiteDesign build_design(std::span<const double> z, Affine affine = {}) {
    HermiteDesign d;
    d.affine = affine;
    for (auto& r : d.rows) r.resize(z.size());
    for (std::size_t t = 0; t < z.size(); ++t) {
        auto h = hermite_all(z[t]);
        for (std::size_t k = 0; k < kBasisSize; ++k) d.rows[k][t] = h[k];
    }
    return d;
}

/// Standardizes a raw factor row, then builds its design.
inline HermiteDesign design_from_raw(std::span<const double> factor) {
    auto s = standardize(factor);
    return build_design(s.values, s.affine);
}

struct SumsOfSquares {
    double tss = 0.0;
    double ess = 0.0;
    double rss = 0.0;
};

struct PolyFit {
    Coefficients beta{};
    double lambda = 0.0;
    double r2 = 0.0;
    double adj_r2 = 0.0;
    double residual_var = 0.0; // RSS / (n - 5)
    std::size_t n = 0;
    Affine factor_affine;
    bool degenerate = false; // constant target window: r2 and adj_r2 pinned to 0
};

/// Cholesky factor of H H^T + lambda I, reusable across many targets that
/// share one design (the shuffle test refits the same factor hundreds of times).
class RidgeSolver {
public:
    RidgeSolver(const HermiteDesign& design, double lambda) : design_(&design), lambda_(lambda) {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("ridge lambda must be finite and >= 0");
        const std::size_t T = design.width();
        if (T <= kBasisSize)
            throw InputError("ridge fit needs more than 5 observations, got " + std::to_string(T));
        std::array<std::array<double, kBasisSize>, kBasisSize> a{};
        for (std::size_t i = 0; i < kBasisSize; ++i)
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0.0;
                for (std::size_t t = 0; t < T; ++t) s += design.rows[i][t] * design.rows[j][t];
                a[i][j] = s;
            }
        for (std::size_t i = 0; i < kBasisSize; ++i) a[i][i] += lambda;

        for (std::size_t j = 0; j < kBasisSize; ++j) {
            double d = a[j][j];
            for (std::size_t k = 0; k < j; ++k) d -= l_[j][k] * l_[j][k];
            if (lambda == 0.0) {
                if (!(d > 1e-12 * a[j][j])) throw SingularDesign();
            } else if (!(d > 0.0)) {
                // Rounding on a rank-deficient design; the true pivot is >= lambda.
                d = lambda;
            }
            l_[j][j] = std::sqrt(d);
            for (std::size_t i = j + 1; i < kBasisSize; ++i) {
                double s = a[i][j];
                for (std::size_t k = 0; k < j; ++k) s -= l_[i][k] * l_[j][k];
                l_[i][j] = s / l_[j][j];
            }
        }
    }

    const HermiteDesign& design() const { return *design_; }
    double lambda() const { return lambda_; }

    Coefficients solve(std::span<const double> y) const {
        const auto& d = *design_;
        if (y.size() != d.width())
            throw InputError("target length " + std::to_string(y.size()) + " does not match design width " +
                             std::to_string(d.width()));
        Coefficients b{};
        for (std::size_t k = 0; k < kBasisSize; ++k) {
            double s = 0.0;
            for (std::size_t t = 0; t < y.size(); ++t) s += d.rows[k][t] * y[t];
            b[k] = s;
        }
        // L w = b, then L^T beta = w.
        for (std::size_t i = 0; i < kBasisSize; ++i) {
            double s = b[i];
            for (std::size_t k = 0; k < i; ++k) s -= l_[i][k] * b[k];
            b[i] = s / l_[i][i];
        }
        for (std::size_t i = kBasisSize; i-- > 0;) {
            double s = b[i];
            for (std::size_t k = i + 1; k < kBasisSize; ++k) s -= l_[k][i] * b[k];
            b[i] = s / l_[i][i];
        }
        return b;
    }

    /// Fitted values H^T beta.
    std::vector<double> fitted(const Coefficients& beta) const {
        const auto& d = *design_;
        std::vector<double> out(d.width(), 0.0);
        for (std::size_t t = 0; t < out.size(); ++t) {
            double s = 0.0;
            for (std::size_t k = 0; k < kBasisSize; ++k) s += beta[k] * d.rows[k][t];
            out[t] = s;
        }
        return out;
    }

    SumsOfSquares sums(const Coefficients& beta, std::span<const double> y) const {
        auto yhat = fitted(beta);
        double ybar = mean(y);
        SumsOfSquares s;
        for (std::size_t t = 0; t < y.size(); ++t) {
            s.tss += (y[t] - ybar) * (y[t] - ybar);
            s.ess += (yhat[t] - ybar) * (yhat[t] - ybar);
            s.rss += (y[t] - yhat[t]) * (y[t] - yhat[t]);
        }
        return s;
    }

    PolyFit fit(std::span<const double> y) const {
        PolyFit f;
        f.beta = solve(y);
        f.lambda = lambda_;
        f.n = y.size();
        f.factor_affine = design_->affine;
        auto ss = sums(f.beta, y);
        const double n = static_cast<double>(f.n);
        const double p = static_cast<double>(kBasisSize);
        f.residual_var = ss.rss / (n - p);
        auto [lo, hi] = std::minmax_element(y.begin(), y.end());
        f.degenerate = *lo == *hi;
        if (f.degenerate) {
            f.r2 = 0.0;
            f.adj_r2 = 0.0;
        } else {
            f.r2 = 1.0 - ss.rss / ss.tss;
            f.adj_r2 = 1.0 - (ss.rss / (n - p)) / (ss.tss / (n - 1.0));
        }
        return f;
    }

private:
    const HermiteDesign* design_;
    double lambda_;
    std::array<std::array<double, kBasisSize>, kBasisSize> l_{};
};

inline PolyFit fit_ridge(const HermiteDesign& design, std::span<const double> y, double lambda) {
    return RidgeSolver(design, lambda).fit(y);
}

/// Fit on a raw (unstandardized) factor row.
inline PolyFit fit_pair(std::span<const double> y, std::span<const double> factor, double lambda) {
    auto d = design_from_raw(factor);
    return fit_ridge(d, y, lambda);
}

/// Polynomial evaluated at a raw factor value.
inline double predict(const PolyFit& fit, double factor_value) {
    return hermite_series(fit.beta, fit.factor_affine.forward(factor_value));
}

/// TSS, ESS and RSS of `fit` on (design, y). TSS = ESS + RSS holds for lambda = 0.
inline SumsOfSquares decompose(const PolyFit& fit, const HermiteDesign& design, std::span<const double> y) {
    if (y.size() != design.width()) throw InputError("target length does not match design width");
    double ybar = mean(y);
    SumsOfSquares s;
    for (std::size_t t = 0; t < y.size(); ++t) {
        double yhat = 0.0;
        for (std::size_t k = 0; k < kBasisSize; ++k) yhat += fit.beta[k] * design.rows[k][t];
        s.tss += (y[t] - ybar) * (y[t] - ybar);
        s.ess += (yhat - ybar) * (yhat - ybar);
        s.rss += (y[t] - yhat) * (y[t] - yhat);
    }
    return s;
}

} // namespace polyfolio

#endif
