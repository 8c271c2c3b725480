#pragma once

// Weighted cubic smoothing spline in Reinsch form.
//
// Knots sit at the unique abscissae. For a smoothing parameter mu the fitted
// knot values g and interior second derivatives gamma solve
//
//     (R + mu Q' W^-1 Q) gamma = Q' ybar,      g = ybar - mu W^-1 Q gamma
//
// where ybar holds tie-aggregated weighted means and W the aggregated weights.
// The system is pentadiagonal, so a fit costs O(m); the smoother trace uses the
// band of the inverse (Hutchinson & de Hoog) and is O(m) as well. Abscissae
// are mapped to [0, 1] internally, so mu is reported on that scale.

#include "raitr/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace raitr {

struct FittedSpline {
    std::vector<double> knots;          // sorted unique abscissae (original scale)
    std::vector<double> values;         // fitted values at the knots
    std::vector<double> second_derivs;  // g'' at the knots, zero at both ends
    double smoothing_parameter = 0.0;
    double effective_df = 1.0;
    double domain_min = 0.0;
    double domain_max = 0.0;
    double fitted_sd = 0.0;

    double operator()(double x) const {
        const std::size_t m = knots.size();
        if (m == 1) return values[0];
        if (x <= knots.front()) {
            const double h = knots[1] - knots[0];
            const double slope = (values[1] - values[0]) / h - h * (2.0 * second_derivs[0] + second_derivs[1]) / 6.0;
            return values[0] + slope * (x - knots[0]);
        }
        if (x >= knots.back()) {
            const double h = knots[m - 1] - knots[m - 2];
            const double slope = (values[m - 1] - values[m - 2]) / h +
                                 h * (second_derivs[m - 2] + 2.0 * second_derivs[m - 1]) / 6.0;
            return values[m - 1] + slope * (x - knots[m - 1]);
        }
        const auto it = std::upper_bound(knots.begin(), knots.end(), x);
        const std::size_t k = static_cast<std::size_t>(it - knots.begin()) - 1;
        const double h = knots[k + 1] - knots[k];
        const double left = x - knots[k];
        const double right = knots[k + 1] - x;
        return (left * values[k + 1] + right * values[k]) / h -
               left * right / 6.0 *
                   ((1.0 + left / h) * second_derivs[k + 1] + (1.0 + right / h) * second_derivs[k]);
    }
};

inline Vector evaluate_spline(const FittedSpline& s, const Vector& x_new) {
    if (!all_finite(x_new)) throw InvalidInput("evaluate_spline: non-finite evaluation points");
    Vector out(x_new.size());
    for (Index i = 0; i < x_new.size(); ++i) out[i] = s(x_new[i]);
    return out;
}

struct GcvPoint {
    double mu = 0.0;
    double df = 0.0;
    double gcv = 0.0;
};

class SplineSmoother {
public:
    static constexpr int kGridSize = 40;
    static constexpr double kMaxDf = 15.0;
    static constexpr double kMinDf = 2.01;

    SplineSmoother(const Vector& x, const Vector& r, const Vector& weights) {
        if (x.size() != r.size() || x.size() != weights.size())
            throw InvalidInput("smoothing spline: x, r and weights differ in length");
        if (!all_finite(x) || !all_finite(r) || !all_finite(weights))
            throw InvalidInput("smoothing spline: non-finite input");
        if ((weights.array() < 0).any()) throw InvalidInput("smoothing spline: negative weights");
        if (!(weights.sum() > 0)) throw InvalidInput("smoothing spline: weights sum to zero");
        aggregate(x, r, weights);
        if (knots_.size() < 4)
            throw DegenerateInput("smoothing spline: need at least 4 distinct x values, got " +
                                  std::to_string(knots_.size()));
        build_operators();
    }

    std::size_t knot_count() const { return knots_.size(); }
    bool constant_response() const { return constant_; }

    double effective_df(double mu) const { return solve(mu, true).df; }

    double gcv(double mu) const { return gcv_of(solve(mu, true)); }

    /// Log-spaced grid spanning effective df from about 2 up to min(15, m/2).
    std::vector<GcvPoint> gcv_grid() const {
        const double m = static_cast<double>(knots_.size());
        const double df_hi = std::clamp(std::min(kMaxDf, m / 2.0), 2.5, m - 0.5);
        const double log_lo = log_mu_for_df(df_hi);
        const double log_hi = log_mu_for_df(kMinDf);
        std::vector<GcvPoint> grid;
        grid.reserve(kGridSize);
        for (int k = 0; k < kGridSize; ++k) {
            const double mu = std::pow(10.0, log_lo + (log_hi - log_lo) * k / (kGridSize - 1));
            if (const auto sol = try_solve(mu)) grid.push_back({mu, sol->df, gcv_of(*sol)});
        }
        return grid;
    }

    FittedSpline fit_at(double mu) const {
        if (constant_) return constant_fit();
        return package(solve(mu, true), mu);
    }

    /// GCV-selected fit; near-ties go to the smoother end of the grid.
    FittedSpline fit() const {
        if (constant_) return constant_fit();
        const auto grid = gcv_grid();
        if (grid.empty()) throw NumericError("smoothing spline: no smoothing parameter gave a solvable system");
        double best = grid.front().gcv;
        for (const auto& g : grid) best = std::min(best, g.gcv);
        const double slack = 1e-10 * (std::abs(best) + response_var_);
        std::size_t pick = grid.size() - 1;
        for (std::size_t k = grid.size(); k-- > 0;) {
            if (grid[k].gcv <= best + slack) {
                pick = k;
                break;
            }
        }
        return fit_at(grid[pick].mu);
    }

private:
    struct Solution {
        std::vector<double> g;      // knot values
        std::vector<double> gamma;  // interior second derivatives, unit scale
        double df = 0.0;
    };

    std::vector<double> knots_;   // original scale
    std::vector<double> u_;       // mapped to [0, 1]
    std::vector<double> weight_;  // aggregated, total = n_obs
    std::vector<double> ybar_;
    double within_ss_ = 0.0;
    double n_obs_ = 0.0;
    double range_ = 1.0;
    double response_var_ = 0.0;
    double response_mean_ = 0.0;
    bool constant_ = false;

    std::vector<double> h_;
    std::vector<double> r0_, r1_;          // R diagonal and first off-diagonal
    std::vector<double> m0_, m1_, m2_;     // Q' W^-1 Q bands
    std::vector<double> qty_;              // Q' ybar

    void aggregate(const Vector& x, const Vector& r, const Vector& weights) {
        std::vector<Index> order;
        for (Index i = 0; i < x.size(); ++i)
            if (weights[i] > 0) order.push_back(i);
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x[a] < x[b]; });
        n_obs_ = static_cast<double>(order.size());
        double w_total = 0.0;
        for (Index i : order) w_total += weights[i];
        const double scale = n_obs_ / w_total;

        double sum_wy = 0.0, sum_wyy = 0.0;
        for (std::size_t k = 0; k < order.size();) {
            const double xv = x[order[k]];
            double wk = 0.0, wy = 0.0, wyy = 0.0;
            std::size_t e = k;
            for (; e < order.size() && x[order[e]] == xv; ++e) {
                const double w = weights[order[e]] * scale;
                const double y = r[order[e]];
                wk += w;
                wy += w * y;
                wyy += w * y * y;
            }
            const double mean = wy / wk;
            knots_.push_back(xv);
            weight_.push_back(wk);
            ybar_.push_back(mean);
            within_ss_ += std::max(0.0, wyy - wk * mean * mean);
            sum_wy += wy;
            sum_wyy += wyy;
            k = e;
        }
        response_mean_ = sum_wy / n_obs_;
        response_var_ = std::max(0.0, sum_wyy / n_obs_ - response_mean_ * response_mean_);
        constant_ = response_var_ <= 1e-24 * (1.0 + response_mean_ * response_mean_);
        if (knots_.size() >= 2) range_ = knots_.back() - knots_.front();
        u_.resize(knots_.size());
        for (std::size_t k = 0; k < knots_.size(); ++k) u_[k] = (knots_[k] - knots_.front()) / range_;
    }

    // Q has, for interior knot c + 1, entries 1/h_c, -1/h_c - 1/h_{c+1}, 1/h_{c+1}
    // in rows c, c + 1, c + 2.
    double q_entry(std::size_t row, std::size_t col) const {
        if (row == col) return 1.0 / h_[col];
        if (row == col + 1) return -1.0 / h_[col] - 1.0 / h_[col + 1];
        if (row == col + 2) return 1.0 / h_[col + 1];
        return 0.0;
    }

    void build_operators() {
        const std::size_t m = knots_.size();
        const std::size_t nb = m - 2;
        h_.resize(m - 1);
        for (std::size_t k = 0; k + 1 < m; ++k) h_[k] = u_[k + 1] - u_[k];
        r0_.assign(nb, 0.0);
        r1_.assign(nb, 0.0);
        m0_.assign(nb, 0.0);
        m1_.assign(nb, 0.0);
        m2_.assign(nb, 0.0);
        qty_.assign(nb, 0.0);
        for (std::size_t c = 0; c < nb; ++c) {
            r0_[c] = (h_[c] + h_[c + 1]) / 3.0;
            if (c + 1 < nb) r1_[c] = h_[c + 1] / 6.0;
            for (std::size_t k = c; k <= c + 2; ++k) {
                m0_[c] += q_entry(k, c) * q_entry(k, c) / weight_[k];
                if (c + 1 < nb) m1_[c] += q_entry(k, c) * q_entry(k, c + 1) / weight_[k];
                if (c + 2 < nb) m2_[c] += q_entry(k, c) * q_entry(k, c + 2) / weight_[k];
            }
            qty_[c] = ybar_[c] / h_[c] - ybar_[c + 1] * (1.0 / h_[c] + 1.0 / h_[c + 1]) + ybar_[c + 2] / h_[c + 1];
        }
    }

    std::optional<Solution> try_solve(double mu) const {
        try {
            return solve(mu, true);
        } catch (const NumericError&) {
            return std::nullopt;
        }
    }

    Solution solve(double mu, bool want_df) const {
        const std::size_t m = knots_.size();
        const std::size_t nb = m - 2;
        // Banded LDL' of B = R + mu M; L has two sub-diagonals.
        std::vector<double> d(nb), l1(nb, 0.0), l2(nb, 0.0);
        for (std::size_t i = 0; i < nb; ++i) {
            double di = r0_[i] + mu * m0_[i];
            if (i >= 1) di -= l1[i - 1] * l1[i - 1] * d[i - 1];
            if (i >= 2) di -= l2[i - 2] * l2[i - 2] * d[i - 2];
            d[i] = di;
            if (i + 1 < nb) {
                double b10 = r1_[i] + mu * m1_[i];
                if (i >= 1) b10 -= l2[i - 1] * l1[i - 1] * d[i - 1];
                l1[i] = b10 / di;
            }
            if (i + 2 < nb) l2[i] = mu * m2_[i] / di;
        }
        if (!std::all_of(d.begin(), d.end(), [](double v) { return v > 0 && std::isfinite(v); }))
            throw NumericError("smoothing spline: penalized system is not positive definite");

        Solution sol;
        sol.gamma.assign(nb, 0.0);
        std::vector<double>& z = sol.gamma;
        for (std::size_t i = 0; i < nb; ++i) {
            double v = qty_[i];
            if (i >= 1) v -= l1[i - 1] * z[i - 1];
            if (i >= 2) v -= l2[i - 2] * z[i - 2];
            z[i] = v;
        }
        for (std::size_t i = 0; i < nb; ++i) z[i] /= d[i];
        for (std::size_t i = nb; i-- > 0;) {
            if (i + 1 < nb) z[i] -= l1[i] * z[i + 1];
            if (i + 2 < nb) z[i] -= l2[i] * z[i + 2];
        }

        sol.g.resize(m);
        for (std::size_t k = 0; k < m; ++k) {
            double qg = 0.0;
            for (std::size_t c = (k >= 2 ? k - 2 : 0); c <= std::min(k, nb - 1); ++c) qg += q_entry(k, c) * z[c];
            sol.g[k] = ybar_[k] - mu * qg / weight_[k];
        }

        if (want_df) {
            // Band of B^-1 by backward recursion.
            std::vector<double> s0(nb, 0.0), s1(nb, 0.0), s2(nb, 0.0);
            for (std::size_t i = nb; i-- > 0;) {
                const bool has1 = i + 1 < nb, has2 = i + 2 < nb;
                if (has2) s2[i] = -l1[i] * s1[i + 1] - l2[i] * s0[i + 2];
                if (has1) s1[i] = -l1[i] * s0[i + 1] - (has2 ? l2[i] * s1[i + 1] : 0.0);
                s0[i] = 1.0 / d[i] - (has1 ? l1[i] * s1[i] : 0.0) - (has2 ? l2[i] * s2[i] : 0.0);
            }
            // df = m - mu tr(B^-1 M) = 2 + tr(B^-1 R); the second form avoids
            // cancellation at large mu.
            double tr = 0.0;
            for (std::size_t i = 0; i < nb; ++i) tr += s0[i] * r0_[i] + 2.0 * s1[i] * r1_[i];
            sol.df = 2.0 + tr;
        }
        return sol;
    }

    double rss_of(const Solution& sol) const {
        double rss = within_ss_;
        for (std::size_t k = 0; k < knots_.size(); ++k) {
            const double e = ybar_[k] - sol.g[k];
            rss += weight_[k] * e * e;
        }
        return rss;
    }

    double gcv_of(const Solution& sol) const {
        const double denom = 1.0 - sol.df / n_obs_;
        return (rss_of(sol) / n_obs_) / (denom * denom);
    }

    // Smallest log10(mu) whose effective df does not exceed the target. A
    // pivot breakdown at extreme mu counts as "smooth enough"; the returned
    // point always solves.
    double log_mu_for_df(double target) const {
        double lo = -20.0, hi = 20.0;
        auto too_rough = [&](double log_mu) {
            const auto sol = try_solve(std::pow(10.0, log_mu));
            return sol && sol->df > target;
        };
        if (solve(std::pow(10.0, lo), true).df <= target) return lo;
        if (too_rough(hi)) return hi;
        for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (too_rough(mid))
                lo = mid;
            else
                hi = mid;
        }
        return try_solve(std::pow(10.0, hi)) ? hi : lo;
    }

    FittedSpline package(const Solution& sol, double mu) const {
        FittedSpline s;
        const std::size_t m = knots_.size();
        s.knots = knots_;
        s.values = sol.g;
        s.second_derivs.assign(m, 0.0);
        const double to_original = 1.0 / (range_ * range_);
        for (std::size_t c = 0; c + 2 < m; ++c) s.second_derivs[c + 1] = sol.gamma[c] * to_original;
        s.smoothing_parameter = mu;
        s.effective_df = sol.df;
        s.domain_min = knots_.front();
        s.domain_max = knots_.back();
        double mean = 0.0;
        for (std::size_t k = 0; k < m; ++k) mean += weight_[k] * sol.g[k];
        mean /= n_obs_;
        double var = 0.0;
        for (std::size_t k = 0; k < m; ++k) var += weight_[k] * (sol.g[k] - mean) * (sol.g[k] - mean);
        s.fitted_sd = std::sqrt(var / n_obs_);
        return s;
    }

    FittedSpline constant_fit() const {
        FittedSpline s;
        s.knots = knots_;
        s.values.assign(knots_.size(), response_mean_);
        s.second_derivs.assign(knots_.size(), 0.0);
        s.smoothing_parameter = std::pow(10.0, 20.0);
        s.effective_df = 1.0;
        s.domain_min = knots_.front();
        s.domain_max = knots_.back();
        s.fitted_sd = 0.0;
        return s;
    }
};

/// GCV-tuned weighted smoothing spline of r on x. Throws DegenerateInput when
/// x has fewer than four distinct values.
inline FittedSpline fit_weighted_smoothing_spline(const Vector& x, const Vector& r, const Vector& weights) {
    return SplineSmoother(x, r, weights).fit();
}

}  // namespace raitr
