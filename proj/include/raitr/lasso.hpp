#pragma once

// Weighted lasso with per-coefficient penalty factors, solved by cyclic
// coordinate descent on an internally standardized design.
//
// Objective (standardized scale, weights normalized to sum one):
//
//     1/2 * sum_i w_i (y_i - b0 - z_i' beta)^2 + lambda * sum_j pf_j |beta_j|
//
// The intercept b0 is never penalized. Coefficients are reported on the
// original column scale.

#include "raitr/common.hpp"
#include "raitr/folds.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace raitr {

struct WeightedDesign {
    Matrix design;
    Vector response;
    Vector weights;
    Vector penalty_factors;
    bool intercept = true;

    Index rows() const { return design.rows(); }
    Index cols() const { return design.cols(); }

    void validate() const {
        if (rows() < 1 || cols() < 1) throw InvalidInput("weighted design: empty design matrix");
        if (response.size() != rows() || weights.size() != rows())
            throw InvalidInput("weighted design: response/weights length does not match design rows");
        if (penalty_factors.size() != cols())
            throw InvalidInput("weighted design: penalty_factors length does not match design columns");
        if (!all_finite(design) || !all_finite(response) || !all_finite(weights) ||
            !all_finite(penalty_factors))
            throw InvalidInput("weighted design: non-finite entries");
        if ((weights.array() < 0).any()) throw InvalidInput("weighted design: negative weights");
        if ((penalty_factors.array() < 0).any())
            throw InvalidInput("weighted design: negative penalty factors");
        if (!(weights.sum() > 0)) throw InvalidInput("weighted design: weights sum to zero");
    }
};

struct SolverOptions {
    double tol = 1e-7;   // max abs coefficient change, standardized scale
    int max_iter = 10000;  // full-or-active sweeps
    bool record_objective = false;
    // Paths only: stop at the first lambda that fails to converge and keep the
    // converged prefix instead of throwing. Single fits always throw.
    bool truncate_path = false;
};

struct LassoFit {
    double intercept = 0.0;
    Vector coefficients;
    double lambda = 0.0;
    double objective_value = 0.0;
    int nonzero_count = 0;
    int sweeps = 0;
    std::vector<double> sweep_objectives;  // filled when SolverOptions::record_objective

    Vector predict(const Matrix& x) const {
        return (x * coefficients).array() + intercept;
    }
};

struct LassoPath {
    std::vector<double> lambdas;
    std::vector<LassoFit> fits;
};

class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, LassoFit last)
        : NumericError(what), last_(std::move(last)) {}
    const LassoFit& last_iterate() const noexcept { return last_; }

private:
    LassoFit last_;
};

inline double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

namespace detail {

struct Standardized {
    Matrix z;    // standardized columns; degenerate columns are zero
    Matrix wz;   // w .* z, column-wise
    Vector w;    // weights normalized to sum one
    Vector y;    // response, weighted-centered when intercept
    double y_center = 0.0;
    Vector centers;
    Vector scales;
    Vector curvature;  // sum_i w_i z_ij^2 (1 up to rounding)
    Vector pf;
    std::vector<char> usable;
    bool intercept = true;
};

inline Standardized standardize(const WeightedDesign& d) {
    Standardized s;
    const Index n = d.rows(), q = d.cols();
    s.intercept = d.intercept;
    s.w = d.weights / d.weights.sum();
    s.pf = d.penalty_factors;
    s.centers = Vector::Zero(q);
    s.scales = Vector::Ones(q);
    s.curvature = Vector::Zero(q);
    s.usable.assign(static_cast<std::size_t>(q), 1);
    s.z.resize(n, q);
    for (Index j = 0; j < q; ++j) {
        const auto col = d.design.col(j);
        const double center = d.intercept ? col.dot(s.w) : 0.0;
        const double ss = (col.array() - center).square().matrix().dot(s.w);
        const double scale = std::sqrt(std::max(ss, 0.0));
        const double magnitude = col.cwiseAbs().maxCoeff();
        if (!(scale > 1e-12 * (1.0 + magnitude))) {
            s.usable[j] = 0;
            s.z.col(j).setZero();
            continue;
        }
        s.centers[j] = center;
        s.scales[j] = scale;
        s.z.col(j) = (col.array() - center) / scale;
        s.curvature[j] = s.z.col(j).array().square().matrix().dot(s.w);
    }
    s.wz = s.z.array().colwise() * s.w.array();
    s.y_center = d.intercept ? d.response.dot(s.w) : 0.0;
    s.y = d.response.array() - s.y_center;
    return s;
}

inline double objective(const Standardized& s, const Vector& resid, const Vector& beta, double lambda) {
    const double loss = 0.5 * resid.array().square().matrix().dot(s.w);
    return loss + lambda * (s.pf.array() * beta.array().abs()).sum();
}

/// Weighted least-squares fit on the unpenalized usable columns only.
inline Vector null_fit(const Standardized& s) {
    const Index q = s.z.cols();
    Vector beta = Vector::Zero(q);
    std::vector<Index> free_cols;
    for (Index j = 0; j < q; ++j)
        if (s.usable[j] && s.pf[j] == 0.0) free_cols.push_back(j);
    if (free_cols.empty()) return beta;
    const Index k = static_cast<Index>(free_cols.size());
    Matrix gram(k, k);
    Vector rhs(k);
    for (Index a = 0; a < k; ++a) {
        rhs[a] = s.wz.col(free_cols[a]).dot(s.y);
        for (Index b = 0; b < k; ++b) gram(a, b) = s.wz.col(free_cols[a]).dot(s.z.col(free_cols[b]));
    }
    const Vector sol = gram.ldlt().solve(rhs);
    for (Index a = 0; a < k; ++a) beta[free_cols[a]] = sol[a];
    return beta;
}

/// Smallest lambda with every penalized coefficient at zero, on the standardized scale.
inline double lambda_max(const Standardized& s) {
    const Index q = s.z.cols();
    const Vector beta0 = null_fit(s);
    const Vector resid = s.y - s.z * beta0;
    bool any_penalized = false;
    double best = 0.0;
    for (Index j = 0; j < q; ++j) {
        if (!(s.pf[j] > 0.0)) continue;
        any_penalized = true;
        if (!s.usable[j]) continue;
        best = std::max(best, std::abs(s.wz.col(j).dot(resid)) / s.pf[j]);
    }
    if (!any_penalized) throw InvalidInput("lambda_max: all penalty factors are zero");
    return std::max(best, 1e-12);
}

inline LassoFit to_original_scale(const Standardized& s, const Vector& beta, const Vector& resid,
                                  double lambda, int sweeps) {
    LassoFit fit;
    const Index q = beta.size();
    fit.coefficients = Vector::Zero(q);
    double shift = 0.0;
    for (Index j = 0; j < q; ++j) {
        if (!s.usable[j] || beta[j] == 0.0) continue;
        fit.coefficients[j] = beta[j] / s.scales[j];
        shift += s.centers[j] * fit.coefficients[j];
        ++fit.nonzero_count;
    }
    fit.intercept = s.intercept ? s.y_center - shift : 0.0;
    fit.lambda = lambda;
    fit.objective_value = objective(s, resid, beta, lambda);
    fit.sweeps = sweeps;
    return fit;
}

inline double sweep(const Standardized& s, double lambda, Vector& beta, Vector& resid,
                    const std::vector<Index>& cols) {
    double max_change = 0.0;
    for (Index j : cols) {
        const double grad = s.wz.col(j).dot(resid);
        const double old = beta[j];
        const double updated = soft_threshold(grad + s.curvature[j] * old, lambda * s.pf[j]) / s.curvature[j];
        if (updated != old) {
            resid.noalias() -= (updated - old) * s.z.col(j);
            beta[j] = updated;
            max_change = std::max(max_change, std::abs(updated - old));
        }
    }
    return max_change;
}

/// Coordinate descent from `beta` (standardized scale); beta is updated in place.
inline LassoFit solve(const Standardized& s, double lambda, double lam_max, Vector& beta,
                      const SolverOptions& opts) {
    const Index q = s.z.cols();
    if (lambda >= lam_max) {
        beta = null_fit(s);
        const Vector resid = s.y - s.z * beta;
        return to_original_scale(s, beta, resid, lambda, 0);
    }
    for (Index j = 0; j < q; ++j)
        if (!s.usable[j]) beta[j] = 0.0;

    std::vector<Index> all_cols;
    for (Index j = 0; j < q; ++j)
        if (s.usable[j]) all_cols.push_back(j);

    Vector resid = s.y - s.z * beta;
    std::vector<double> trace;
    if (opts.record_objective) trace.push_back(objective(s, resid, beta, lambda));
    int sweeps = 0;
    auto record = [&] {
        ++sweeps;
        if (opts.record_objective) trace.push_back(objective(s, resid, beta, lambda));
    };
    auto fail = [&] {
        LassoFit last = to_original_scale(s, beta, resid, lambda, sweeps);
        last.sweep_objectives = std::move(trace);
        throw ConvergenceError("lasso: no convergence within " + std::to_string(opts.max_iter) +
                                   " sweeps at lambda " + std::to_string(lambda),
                               std::move(last));
    };

    while (true) {
        if (sweeps >= opts.max_iter) fail();
        const double change = sweep(s, lambda, beta, resid, all_cols);
        record();
        if (change < opts.tol) break;

        std::vector<Index> active;
        for (Index j : all_cols)
            if (beta[j] != 0.0) active.push_back(j);
        while (true) {
            if (sweeps >= opts.max_iter) fail();
            const double inner = sweep(s, lambda, beta, resid, active);
            record();
            if (inner < opts.tol) break;
        }
    }
    LassoFit fit = to_original_scale(s, beta, resid, lambda, sweeps);
    fit.sweep_objectives = std::move(trace);
    return fit;
}

inline Vector standardized_start(const Standardized& s, const LassoFit& warm) {
    Vector beta = Vector::Zero(s.z.cols());
    if (warm.coefficients.size() != beta.size()) return beta;
    for (Index j = 0; j < beta.size(); ++j)
        if (s.usable[j]) beta[j] = warm.coefficients[j] * s.scales[j];
    return beta;
}

}  // namespace detail

inline double compute_lambda_max(const WeightedDesign& d) {
    d.validate();
    return detail::lambda_max(detail::standardize(d));
}

/// Geometric grid from lambda_max down to ratio * lambda_max.
inline std::vector<double> make_lambda_path(double lambda_max, int n_lambda, double ratio) {
    if (n_lambda < 2) throw InvalidInput("make_lambda_path: need at least 2 values");
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidInput("make_lambda_path: ratio must lie in (0,1)");
    if (!(lambda_max > 0.0)) throw InvalidInput("make_lambda_path: lambda_max must be positive");
    std::vector<double> out(static_cast<std::size_t>(n_lambda));
    const double step = std::log(ratio) / (n_lambda - 1);
    out[0] = lambda_max;
    for (int k = 1; k < n_lambda; ++k) out[k] = lambda_max * std::exp(step * k);
    return out;
}

/// Default path ratio: 1e-3 when n > q else 1e-2.
inline double default_lambda_ratio(Index n, Index q) { return n > q ? 1e-3 : 1e-2; }

inline LassoFit fit_weighted_lasso(const WeightedDesign& d, double lambda,
                                   const std::optional<LassoFit>& warm_start = std::nullopt,
                                   const SolverOptions& opts = {}) {
    d.validate();
    if (!(lambda > 0.0)) throw InvalidInput("fit_weighted_lasso: lambda must be positive");
    const auto s = detail::standardize(d);
    const double lam_max = detail::lambda_max(s);
    Vector beta = warm_start ? detail::standardized_start(s, *warm_start) : Vector::Zero(d.cols());
    return detail::solve(s, lambda, lam_max, beta, opts);
}

/// Fits along a descending lambda sequence with warm starts.
inline LassoPath fit_lasso_path(const WeightedDesign& d, std::span<const double> lambdas,
                                const SolverOptions& opts = {}) {
    d.validate();
    for (std::size_t k = 1; k < lambdas.size(); ++k)
        if (!(lambdas[k] < lambdas[k - 1])) throw InvalidInput("fit_lasso_path: lambdas must be strictly decreasing");
    const auto s = detail::standardize(d);
    const double lam_max = detail::lambda_max(s);
    LassoPath path;
    path.lambdas.assign(lambdas.begin(), lambdas.end());
    Vector beta = Vector::Zero(d.cols());
    for (double lambda : lambdas) {
        try {
            path.fits.push_back(detail::solve(s, lambda, lam_max, beta, opts));
        } catch (const ConvergenceError&) {
            if (!opts.truncate_path || path.fits.empty()) throw;
            path.lambdas.resize(path.fits.size());
            break;
        }
    }
    return path;
}

inline WeightedDesign subset_rows(const WeightedDesign& d, const std::vector<Index>& rows) {
    return WeightedDesign{take_rows(d.design, rows), take(d.response, rows), take(d.weights, rows),
                          d.penalty_factors, d.intercept};
}

struct CvResult {
    double lambda_star = 0.0;
    std::size_t index = 0;
    std::vector<double> errors;  // mean held-out weighted MSE per lambda
};

/// Weighted K-fold cross-validation over a fixed lambda sequence. Ties go to
/// the larger lambda. With truncated paths the errors cover the prefix that
/// converged in every fold.
inline CvResult cross_validate_lambda(const WeightedDesign& d, const FoldPartition& folds,
                                      std::span<const double> lambdas, const SolverOptions& opts = {}) {
    d.validate();
    if (folds.n != d.rows()) throw InvalidInput("cross_validate_lambda: fold partition does not match design rows");
    if (lambdas.empty()) throw InvalidInput("cross_validate_lambda: empty lambda sequence");
    std::vector<double> total(lambdas.size(), 0.0);
    std::size_t common = lambdas.size();
    for (int k = 0; k < folds.K; ++k) {
        const auto held = folds.members(k);
        if (held.empty()) throw InvalidInput("cross_validate_lambda: fold " + std::to_string(k) + " is empty");
        const Vector w_held = take(d.weights, held);
        const double w_sum = w_held.sum();
        if (!(w_sum > 0.0))
            throw InvalidInput("cross_validate_lambda: fold " + std::to_string(k) + " has zero total weight");
        const WeightedDesign train = subset_rows(d, folds.complement(k));
        const Matrix x_held = take_rows(d.design, held);
        const Vector y_held = take(d.response, held);
        const LassoPath path = fit_lasso_path(train, lambdas, opts);
        common = std::min(common, path.fits.size());
        for (std::size_t l = 0; l < path.fits.size(); ++l) {
            const Vector err = y_held - path.fits[l].predict(x_held);
            total[l] += err.array().square().matrix().dot(w_held) / w_sum;
        }
    }
    CvResult out;
    out.errors.resize(common);
    for (std::size_t l = 0; l < common; ++l) out.errors[l] = total[l] / folds.K;
    for (std::size_t l = 1; l < common; ++l)
        if (out.errors[l] < out.errors[out.index]) out.index = l;
    out.lambda_star = lambdas[out.index];
    return out;
}

}  // namespace raitr
