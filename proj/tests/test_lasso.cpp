#include "raitr/lasso.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace raitr;

namespace {

WeightedDesign random_design(std::uint64_t seed, Index n, Index q, bool with_zero_pf = false) {
    Rng rng(seed);
    WeightedDesign d;
    d.design.resize(n, q);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < q; ++j) d.design(i, j) = rng.normal() * (1.0 + j % 3);
    Vector beta = Vector::Zero(q);
    for (Index j = 0; j < std::min<Index>(q, 4); ++j) beta[j] = (j % 2 ? -1.0 : 1.5);
    d.response = d.design * beta;
    for (Index i = 0; i < n; ++i) d.response[i] += 0.5 * rng.normal() + 2.0;
    d.weights.resize(n);
    for (Index i = 0; i < n; ++i) d.weights[i] = rng.uniform(0.2, 3.0);
    d.penalty_factors = Vector::Ones(q);
    for (Index j = 0; j < q; ++j) d.penalty_factors[j] = rng.uniform(0.5, 2.0);
    if (with_zero_pf) d.penalty_factors[0] = 0.0;
    return d;
}

// Stationarity residual on the standardized scale with weights summing to one.
double kkt_violation(const WeightedDesign& d, const LassoFit& fit, double lambda_max) {
    const Vector w = d.weights / d.weights.sum();
    const Vector resid = d.response - fit.predict(d.design);
    double worst = 0.0;
    for (Index j = 0; j < d.cols(); ++j) {
        const auto col = d.design.col(j);
        const double mean = d.intercept ? col.dot(w) : 0.0;
        const double sd = std::sqrt((col.array() - mean).square().matrix().dot(w));
        const Vector z = (col.array() - mean) / sd;
        const double grad = (z.array() * w.array() * resid.array()).sum();
        const double beta_std = fit.coefficients[j] * sd;
        const double thr = fit.lambda * d.penalty_factors[j];
        double viol;
        if (beta_std != 0.0)
            viol = std::abs(grad - thr * (beta_std > 0 ? 1.0 : -1.0));
        else
            viol = std::max(0.0, std::abs(grad) - thr);
        worst = std::max(worst, viol / lambda_max);
    }
    return worst;
}

}  // namespace

TEST(SoftThreshold, Examples) {
    EXPECT_DOUBLE_EQ(soft_threshold(3, 1), 2);
    EXPECT_DOUBLE_EQ(soft_threshold(-0.5, 1), 0);
    EXPECT_DOUBLE_EQ(soft_threshold(0, 0), 0);
    EXPECT_DOUBLE_EQ(soft_threshold(-3, 1), -2);
}

TEST(WeightedLasso, OrthonormalSoftThresholdSolution) {
    // One column with weighted mean 0 and weighted variance 1; OLS slope 3.
    WeightedDesign d;
    d.design.resize(4, 1);
    d.design << -1, 1, -1, 1;
    d.response = 3.0 * d.design.col(0);
    d.weights = Vector::Ones(4);
    d.penalty_factors = Vector::Ones(1);
    const LassoFit fit = fit_weighted_lasso(d, 1.0);
    EXPECT_NEAR(fit.coefficients[0], 2.0, 1e-12);
    EXPECT_NEAR(fit.intercept, 0.0, 1e-12);
    EXPECT_EQ(fit.nonzero_count, 1);
}

TEST(WeightedLasso, AtLambdaMaxAllPenalizedZero) {
    const auto d = random_design(7, 40, 6);
    const double lmax = compute_lambda_max(d);
    for (double scale : {1.0, 1.5, 10.0}) {
        const LassoFit fit = fit_weighted_lasso(d, lmax * scale);
        EXPECT_EQ(fit.nonzero_count, 0);
        EXPECT_TRUE(fit.coefficients.isZero(0.0));
    }
    const LassoFit below = fit_weighted_lasso(d, lmax * 0.95);
    EXPECT_GT(below.nonzero_count, 0);
}

TEST(WeightedLasso, TinyLambdaMatchesNormalEquations) {
    // Independent oracle: weighted least squares with explicit intercept column.
    WeightedDesign d;
    d.design.resize(5, 3);
    d.design << 1.0, 0.2, -0.5,
                -0.3, 1.1, 0.4,
                0.8, -0.9, 1.2,
                -1.2, 0.3, 0.1,
                0.4, 0.7, -1.0;
    d.response.resize(5);
    d.response << 1.3, -0.4, 2.2, -1.9, 0.6;
    d.weights.resize(5);
    d.weights << 1.0, 2.0, 0.5, 1.5, 1.0;
    d.penalty_factors = Vector::Ones(3);

    Matrix a(5, 4);
    a.col(0).setOnes();
    a.rightCols(3) = d.design;
    const Matrix atw = a.transpose() * d.weights.asDiagonal();
    const Vector oracle = (atw * a).ldlt().solve(atw * d.response);

    SolverOptions opts;
    opts.tol = 1e-13;
    opts.max_iter = 200000;
    const LassoFit fit = fit_weighted_lasso(d, 1e-12, std::nullopt, opts);
    EXPECT_NEAR(fit.intercept, oracle[0], 1e-6);
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(fit.coefficients[j], oracle[j + 1], 1e-6);
}

TEST(LambdaMax, ConstantResponseHitsFloor) {
    auto d = random_design(3, 20, 3);
    d.response.setConstant(4.2);
    EXPECT_DOUBLE_EQ(compute_lambda_max(d), 1e-12);
}

TEST(LambdaMax, InvariantToWeightScaling) {
    auto d = random_design(11, 30, 4);
    const double base = compute_lambda_max(d);
    d.weights *= 2.0;
    EXPECT_NEAR(compute_lambda_max(d), base, 1e-14 * base);
}

TEST(LambdaMax, AllPenaltyFactorsZeroIsError) {
    auto d = random_design(5, 10, 2);
    d.penalty_factors.setZero();
    EXPECT_THROW(compute_lambda_max(d), InvalidInput);
}

TEST(LambdaMax, UnpenalizedColumnsAreRegressedOutFirst) {
    const auto d = random_design(19, 50, 5, true);
    const double lmax = compute_lambda_max(d);
    const LassoFit at = fit_weighted_lasso(d, lmax);
    EXPECT_NE(at.coefficients[0], 0.0);
    for (Index j = 1; j < 5; ++j) EXPECT_EQ(at.coefficients[j], 0.0);
    const LassoFit below = fit_weighted_lasso(d, lmax * 0.98);
    EXPECT_GT(below.nonzero_count, 1);
}

TEST(LambdaPath, GeometricGrid) {
    const auto path = make_lambda_path(1.0, 3, 0.01);
    ASSERT_EQ(path.size(), 3u);
    EXPECT_DOUBLE_EQ(path[0], 1.0);
    EXPECT_NEAR(path[1], 0.1, 1e-15);
    EXPECT_NEAR(path[2], 0.01, 1e-15);
    const auto longer = make_lambda_path(3.5, 100, 1e-3);
    EXPECT_DOUBLE_EQ(longer.front(), 3.5);
    for (std::size_t k = 1; k < longer.size(); ++k) EXPECT_LT(longer[k], longer[k - 1]);
    EXPECT_THROW(make_lambda_path(1.0, 1, 0.1), InvalidInput);
}

TEST(WeightedLasso, KktHoldsAlongPath) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto d = random_design(100 + seed, 60, 12, seed % 2 == 0);
        const double lmax = compute_lambda_max(d);
        const auto lambdas = make_lambda_path(lmax, 30, 1e-3);
        const LassoPath path = fit_lasso_path(d, lambdas);
        for (const auto& fit : path.fits) EXPECT_LE(kkt_violation(d, fit, lmax), 1e-4) << "seed " << seed;
    }
}

TEST(WeightedLasso, ObjectiveNonIncreasingAcrossSweeps) {
    const auto d = random_design(23, 80, 15);
    SolverOptions opts;
    opts.record_objective = true;
    const LassoFit fit = fit_weighted_lasso(d, 0.05 * compute_lambda_max(d), std::nullopt, opts);
    ASSERT_GE(fit.sweep_objectives.size(), 2u);
    for (std::size_t k = 1; k < fit.sweep_objectives.size(); ++k)
        EXPECT_LE(fit.sweep_objectives[k], fit.sweep_objectives[k - 1] + 1e-15);
}

TEST(WeightedLasso, WeightScalingLeavesMinimizerUnchanged) {
    auto d = random_design(29, 50, 6);
    const double lambda = 0.1 * compute_lambda_max(d);
    const LassoFit base = fit_weighted_lasso(d, lambda);
    for (double c : {2.0, 3.7, 0.01}) {
        auto scaled = d;
        scaled.weights *= c;
        const LassoFit fit = fit_weighted_lasso(scaled, lambda);
        for (Index j = 0; j < 6; ++j) EXPECT_NEAR(fit.coefficients[j], base.coefficients[j], 1e-10);
    }
}

TEST(WeightedLasso, ZeroPenaltyColumnNeverThresholded) {
    auto d = random_design(31, 50, 6, true);
    // Weak signal on column 0 only.
    d.response = 0.05 * d.design.col(0) + 3.0 * d.design.col(3);
    const double lmax = compute_lambda_max(d);
    for (double frac : {0.9, 0.5, 0.1, 1e-3}) {
        const LassoFit fit = fit_weighted_lasso(d, lmax * frac);
        EXPECT_NE(fit.coefficients[0], 0.0);
    }
}

TEST(WeightedLasso, NegatedDesignNegatesCoefficientsExactly) {
    const auto d = random_design(37, 40, 8, true);
    auto neg = d;
    neg.design = -d.design;
    const auto lambdas = make_lambda_path(compute_lambda_max(d), 20, 1e-2);
    const auto a = fit_lasso_path(d, lambdas);
    const auto b = fit_lasso_path(neg, lambdas);
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
        for (Index j = 0; j < 8; ++j) EXPECT_EQ(a.fits[l].coefficients[j], -b.fits[l].coefficients[j]);
        EXPECT_EQ(a.fits[l].intercept, b.fits[l].intercept);
    }
}

TEST(WeightedLasso, DegenerateColumnGetsZero) {
    auto d = random_design(41, 30, 4);
    d.design.col(2).setConstant(5.0);
    const LassoFit fit = fit_weighted_lasso(d, 1e-3 * compute_lambda_max(d));
    EXPECT_EQ(fit.coefficients[2], 0.0);
}

TEST(WeightedLasso, RejectsNonFiniteInput) {
    auto d = random_design(43, 10, 2);
    d.response[3] = std::nan("");
    EXPECT_THROW(fit_weighted_lasso(d, 0.1), InvalidInput);
    EXPECT_THROW(fit_weighted_lasso(random_design(1, 10, 2), 0.0), InvalidInput);
}

TEST(WeightedLasso, ConvergenceErrorCarriesLastIterate) {
    const auto d = random_design(47, 50, 10);
    SolverOptions opts;
    opts.max_iter = 1;
    opts.tol = 1e-15;
    try {
        fit_weighted_lasso(d, 1e-3 * compute_lambda_max(d), std::nullopt, opts);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.last_iterate().coefficients.size(), 10);
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
    }
}

TEST(CrossValidation, PureNoiseSelectsLargeLambdas) {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(900 + seed);
        WeightedDesign d;
        d.design.resize(100, 10);
        for (Index i = 0; i < 100; ++i)
            for (Index j = 0; j < 10; ++j) d.design(i, j) = rng.normal();
        d.response.resize(100);
        for (Index i = 0; i < 100; ++i) d.response[i] = rng.normal();
        d.weights = Vector::Ones(100);
        d.penalty_factors = Vector::Ones(10);
        const auto lambdas = make_lambda_path(compute_lambda_max(d), 100, 1e-3);
        const auto cv = cross_validate_lambda(d, make_folds(100, 5, seed), lambdas);
        if (cv.index < 10) ++hits;
    }
    EXPECT_GE(hits, 40);
}

TEST(CrossValidation, LeaveOneOutPrefersFitOnExactLinearData) {
    WeightedDesign d;
    d.design.resize(6, 1);
    d.design << -2.5, -1.0, 0.0, 0.5, 1.5, 3.0;
    d.response = 2.0 * d.design.col(0).array() + 1.0;
    d.weights = Vector::Ones(6);
    d.penalty_factors = Vector::Ones(1);
    const auto lambdas = make_lambda_path(compute_lambda_max(d), 20, 1e-3);
    FoldPartition loo{6, 6, {0, 1, 2, 3, 4, 5}};
    const auto cv = cross_validate_lambda(d, loo, lambdas);
    EXPECT_LT(cv.errors.back(), cv.errors.front());
    EXPECT_GT(cv.index, 0u);
}

TEST(CrossValidation, EqualWeightsMatchOrdinaryMse) {
    auto d = random_design(53, 40, 5);
    d.weights = Vector::Constant(40, 2.5);
    const auto lambdas = make_lambda_path(compute_lambda_max(d), 15, 1e-2);
    const auto folds = make_folds(40, 4, 3);
    const auto cv = cross_validate_lambda(d, folds, lambdas);
    // Ordinary CV MSE computed directly.
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
        double total = 0.0;
        for (int k = 0; k < 4; ++k) {
            const auto held = folds.members(k);
            const auto path = fit_lasso_path(subset_rows(d, folds.complement(k)), lambdas);
            double sse = 0.0;
            for (Index i : held) {
                const double e = d.response[i] - path.fits[l].intercept - d.design.row(i).dot(path.fits[l].coefficients);
                sse += e * e;
            }
            total += sse / static_cast<double>(held.size());
        }
        EXPECT_NEAR(cv.errors[l], total / 4, 1e-12);
    }
}

TEST(CrossValidation, ZeroWeightFoldIsError) {
    auto d = random_design(59, 10, 2);
    FoldPartition folds{10, 2, {0, 0, 0, 0, 0, 1, 1, 1, 1, 1}};
    for (Index i = 5; i < 10; ++i) d.weights[i] = 0.0;
    const auto lambdas = make_lambda_path(1.0, 3, 0.1);
    EXPECT_THROW(cross_validate_lambda(d, folds, lambdas), InvalidInput);
}
