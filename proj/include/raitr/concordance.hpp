#pragma once

// Concordance estimators, model degrees of freedom and CIC-based tuning.

#include "raitr/common.hpp"
#include "raitr/dataset.hpp"
#include "raitr/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace raitr {

/// Per-observation factors of the pairwise concordance sums.
struct PseudoOutcomes {
    Vector w;       // IPW transform; also the first DR factor
    Vector u;       // equals w
    Vector v;       // 1{a = +1} / P(A = +1 | x)
    Vector scores;  // candidate CATE scores
};

inline PseudoOutcomes make_pseudo_outcomes(const Vector& y, const Vector& a, const NuisanceEstimates& nu) {
    const Index n = y.size();
    nu.validate(n);
    PseudoOutcomes po;
    po.w.resize(n);
    po.v.resize(n);
    for (Index i = 0; i < n; ++i) {
        const double treated = 0.5 * a[i] + 0.5;
        po.w[i] = (y[i] - nu.mu_ref_hat[i]) * (treated - nu.pi_treat[i]) / nu.pi_observed[i];
        po.v[i] = treated / nu.pi_treat[i];
    }
    po.u = po.w;
    if (!all_finite(po.w) || !all_finite(po.v)) throw NumericError("pseudo-outcomes are not finite");
    return po;
}

/// sum over ordered pairs i != j with scores[i] > scores[j] of
/// u_i v_j - u_j v_i, in O(n log n). Tied scores contribute nothing.
inline double fast_pairwise_sum(std::span<const double> u, std::span<const double> v,
                                std::span<const double> scores) {
    const std::size_t n = scores.size();
    if (u.size() != n || v.size() != n) throw InvalidInput("fast_pairwise_sum: length mismatch");
    for (double s : scores)
        if (std::isnan(s)) throw InvalidInput("fast_pairwise_sum: NaN score");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    long double u_below = 0, v_below = 0, total = 0;
    for (std::size_t start = 0; start < n;) {
        std::size_t stop = start;
        long double u_group = 0, v_group = 0;
        while (stop < n && scores[order[stop]] == scores[order[start]]) {
            u_group += u[order[stop]];
            v_group += v[order[stop]];
            ++stop;
        }
        total += u_group * v_below - v_group * u_below;
        u_below += u_group;
        v_below += v_group;
        start = stop;
    }
    return static_cast<double>(total);
}

inline std::span<const double> as_span(const Vector& x) { return {x.data(), static_cast<std::size_t>(x.size())}; }

inline double concordance_ipw(const Vector& w, const Vector& scores) {
    const Index n = w.size();
    if (n < 2) throw InvalidInput("concordance needs at least 2 observations");
    const Vector ones = Vector::Ones(n);
    return fast_pairwise_sum(as_span(w), as_span(ones), as_span(scores)) / (static_cast<double>(n) * (n - 1));
}

inline double concordance_dr(const Vector& u, const Vector& v, const Vector& scores) {
    const Index n = u.size();
    if (n < 2) throw InvalidInput("concordance needs at least 2 observations");
    return fast_pairwise_sum(as_span(u), as_span(v), as_span(scores)) / (static_cast<double>(n) * (n - 1));
}

inline double concordance_ipw(const PseudoOutcomes& po) { return concordance_ipw(po.w, po.scores); }
inline double concordance_dr(const PseudoOutcomes& po) { return concordance_dr(po.u, po.v, po.scores); }

/// Active linear terms count 1 each; an active nonlinear term counts its
/// spline's effective degrees of freedom. Intercepts are not counted.
inline double model_df(std::span<const double> beta_lin, std::span<const double> beta_non,
                       std::span<const double> spline_dfs) {
    if (beta_non.size() != spline_dfs.size()) throw InvalidInput("model_df: spline df length mismatch");
    double df = 0.0;
    for (double b : beta_lin) df += b != 0.0 ? 1.0 : 0.0;
    for (std::size_t j = 0; j < beta_non.size(); ++j)
        if (beta_non[j] != 0.0) df += spline_dfs[j];
    return df;
}

enum class KappaMode { log_n, two, none };
enum class ConcordanceEstimator { ipw, dr };

inline double kappa_value(KappaMode mode, Index n) {
    switch (mode) {
        case KappaMode::log_n: return std::log(static_cast<double>(n));
        case KappaMode::two: return 2.0;
        case KappaMode::none: return 0.0;
    }
    return 0.0;
}

struct CicEvaluation {
    double lambda = 0.0;
    double concordance = 0.0;
    double df = 0.0;
    double kappa = 0.0;
    double cic = 0.0;
};

inline CicEvaluation cic_score(Index n, double concordance, double df, KappaMode mode, double lambda = 0.0) {
    if (n < 2) throw InvalidInput("cic_score: n must be at least 2");
    CicEvaluation e;
    e.lambda = lambda;
    e.concordance = concordance;
    e.df = df;
    e.kappa = kappa_value(mode, n);
    e.cic = static_cast<double>(n) * concordance - e.kappa * df;
    return e;
}

struct CicCandidate {
    double lambda = 0.0;
    Vector scores;
    double df = 0.0;
};

struct CicSelection {
    std::size_t index = 0;
    double lambda_star = 0.0;
    std::vector<CicEvaluation> trace;
};

/// Maximizes CIC over candidates; ties go to smaller df, then larger lambda.
inline CicSelection select_lambda_cic(std::span<const CicCandidate> candidates, const PseudoOutcomes& po,
                                      KappaMode mode, ConcordanceEstimator estimator) {
    if (candidates.empty()) throw InvalidInput("select_lambda_cic: empty path");
    const Index n = po.w.size();
    CicSelection out;
    out.trace.resize(candidates.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        const auto& c = candidates[k];
        if (c.scores.size() != n) throw InvalidInput("select_lambda_cic: score length mismatch");
        const double conc =
            estimator == ConcordanceEstimator::ipw ? concordance_ipw(po.w, c.scores) : concordance_dr(po.u, po.v, c.scores);
        out.trace[k] = cic_score(n, conc, c.df, mode, c.lambda);
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < out.trace.size(); ++k) {
        const auto& a = out.trace[k];
        const auto& b = out.trace[best];
        if (a.cic > b.cic || (a.cic == b.cic && (a.df < b.df || (a.df == b.df && a.lambda > b.lambda)))) best = k;
    }
    out.index = best;
    out.lambda_star = out.trace[best].lambda;
    return out;
}

}  // namespace raitr
