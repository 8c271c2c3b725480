#include "raitr/concordance.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace raitr;

namespace {

// O(n^2) reference: sum over ordered pairs with strictly larger score.
double brute_pairwise(const Vector& u, const Vector& v, const Vector& f) {
    long double total = 0;
    for (Index i = 0; i < f.size(); ++i)
        for (Index j = 0; j < f.size(); ++j)
            if (i != j && f[i] > f[j]) total += u[i] * v[j] - u[j] * v[i];
    return static_cast<double>(total);
}

double brute_scale(const Vector& u, const Vector& v) {
    double s = 0;
    for (Index i = 0; i < u.size(); ++i)
        for (Index j = 0; j < u.size(); ++j) s += std::abs(u[i] * v[j]) + std::abs(u[j] * v[i]);
    return std::max(1.0, s);
}

Vector random_vector(Rng& rng, Index n, double sd = 1.0) {
    Vector x(n);
    for (Index i = 0; i < n; ++i) x[i] = sd * rng.normal();
    return x;
}

Vector scores_with_ties(Rng& rng, Index n, double tie_fraction) {
    Vector f = random_vector(rng, n);
    for (Index i = 1; i < n; ++i)
        if (rng.uniform() < tie_fraction) f[i] = f[static_cast<Index>(rng.below(static_cast<std::uint64_t>(i)))];
    return f;
}

}  // namespace

TEST(Concordance, IpwHandExample) {
    Vector w(2), f(2);
    w << 2, 0;
    f << 1, 0;
    EXPECT_DOUBLE_EQ(concordance_ipw(w, f), 1.0);
}

TEST(Concordance, AllScoresEqualGiveZero) {
    Rng rng(1);
    const Vector w = random_vector(rng, 20);
    EXPECT_EQ(concordance_ipw(w, Vector::Constant(20, 0.3)), 0.0);
    EXPECT_EQ(concordance_dr(w, random_vector(rng, 20), Vector::Constant(20, 0.3)), 0.0);
}

TEST(Concordance, IpwMatchesBruteForce) {
    Rng rng(2);
    const Vector w = random_vector(rng, 5), f = random_vector(rng, 5);
    double brute = 0;
    for (Index i = 0; i < 5; ++i)
        for (Index j = 0; j < 5; ++j)
            if (i != j && f[i] > f[j]) brute += w[i] - w[j];
    EXPECT_NEAR(concordance_ipw(w, f), brute / 20.0, 1e-12);
}

TEST(Concordance, DrHandExampleAndReduction) {
    Vector u(2), v(2), f(2);
    u << 1, 0;
    v << 1, 2;
    f << 1, 0;
    EXPECT_DOUBLE_EQ(concordance_dr(u, v, f), 1.0);

    Rng rng(3);
    const Vector w = random_vector(rng, 40), g = scores_with_ties(rng, 40, 0.2);
    EXPECT_EQ(concordance_dr(w, Vector::Ones(40), g), concordance_ipw(w, g));
}

TEST(Concordance, DrMatchesBruteForce) {
    Rng rng(4);
    const Vector u = random_vector(rng, 6), v = random_vector(rng, 6), f = random_vector(rng, 6);
    EXPECT_NEAR(concordance_dr(u, v, f), brute_pairwise(u, v, f) / 30.0, 1e-12);
}

TEST(Concordance, FastSumMatchesBruteForceOn200Instances) {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        const Index n = 2 + static_cast<Index>(rng.below(299));
        const double ties = t % 2 == 0 ? 0.0 : rng.uniform(0.05, 0.6);
        const Vector u = random_vector(rng, n, 3.0), v = random_vector(rng, n), f = scores_with_ties(rng, n, ties);
        const double fast = fast_pairwise_sum(as_span(u), as_span(v), as_span(f));
        EXPECT_LE(std::abs(fast - brute_pairwise(u, v, f)), 1e-10 * brute_scale(u, v)) << "instance " << t;
    }
}

TEST(Concordance, FastSumWithTenPercentTies) {
    Rng rng(6);
    const Vector u = random_vector(rng, 500), v = random_vector(rng, 500), f = scores_with_ties(rng, 500, 0.1);
    EXPECT_LE(std::abs(fast_pairwise_sum(as_span(u), as_span(v), as_span(f)) - brute_pairwise(u, v, f)),
              1e-10 * brute_scale(u, v));
}

TEST(Concordance, ReversedScoresNegate) {
    Rng rng(7);
    const Vector u = random_vector(rng, 60), v = random_vector(rng, 60), f = random_vector(rng, 60);
    const Vector neg = -f;
    EXPECT_NEAR(fast_pairwise_sum(as_span(u), as_span(v), as_span(neg)),
                -fast_pairwise_sum(as_span(u), as_span(v), as_span(f)), 1e-10);
    EXPECT_NEAR(concordance_ipw(u, neg), -concordance_ipw(u, f), 1e-12);
    EXPECT_NEAR(concordance_dr(u, v, neg), -concordance_dr(u, v, f), 1e-12);
}

TEST(Concordance, EqualFactorsGiveZero) {
    Rng rng(8);
    const Vector u = random_vector(rng, 50), f = scores_with_ties(rng, 50, 0.2);
    EXPECT_NEAR(brute_pairwise(u, u, f), 0.0, 1e-12);
    EXPECT_NEAR(fast_pairwise_sum(as_span(u), as_span(u), as_span(f)), 0.0, 1e-12);
}

TEST(Concordance, InvariantUnderMonotoneTransforms) {
    Rng rng(9);
    const Vector u = random_vector(rng, 80), v = random_vector(rng, 80), f = scores_with_ties(rng, 80, 0.15);
    const Vector g = f.unaryExpr([](double s) { return std::exp(3 * s) + 7; });
    EXPECT_EQ(concordance_ipw(u, f), concordance_ipw(u, g));
    EXPECT_EQ(concordance_dr(u, v, f), concordance_dr(u, v, g));
}

TEST(Concordance, RejectsTooFew) {
    EXPECT_THROW(concordance_ipw(Vector::Ones(1), Vector::Ones(1)), InvalidInput);
    EXPECT_THROW(concordance_dr(Vector::Ones(1), Vector::Ones(1), Vector::Ones(1)), InvalidInput);
}

TEST(Concordance, PseudoOutcomesFollowDefinition) {
    Vector y(3), a(3), pi(3), mu_pos(3), mu_neg(3);
    y << 1.0, 2.0, -1.0;
    a << 1, -1, 1;
    pi << 0.6, 0.3, 0.5;
    mu_pos << 0.5, 0.0, 0.2;
    mu_neg << 0.2, 1.0, -0.5;
    const auto nu = nuisance_from_values(a, pi, mu_pos, mu_neg, 0.01);
    const auto po = make_pseudo_outcomes(y, a, nu);
    EXPECT_DOUBLE_EQ(po.w[0], (1.0 - 0.2) * (1.0 - 0.6) / 0.6);
    EXPECT_DOUBLE_EQ(po.w[1], (2.0 - 1.0) * (0.0 - 0.3) / 0.7);
    EXPECT_DOUBLE_EQ(po.v[0], 1.0 / 0.6);
    EXPECT_DOUBLE_EQ(po.v[1], 0.0);
    EXPECT_EQ(po.u, po.w);
}

TEST(ModelDf, CountsTerms) {
    const std::vector<double> zeros(4, 0.0), dfs{3.0, 4.2, 5.0, 2.5};
    EXPECT_EQ(model_df(zeros, zeros, dfs), 0.0);
    const std::vector<double> lin{1.0, 0.0, -2.0, 0.0}, non{0.0, 0.7, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(model_df(lin, non, dfs), 6.2);
    const std::vector<double> absent{0.0, 0.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(model_df(lin, non, absent), 2.0);
}

TEST(Cic, ScoreArithmetic) {
    const auto a = cic_score(100, 0.3, 5, KappaMode::log_n);
    EXPECT_NEAR(a.cic, 30 - 5 * std::log(100.0), 1e-12);
    EXPECT_NEAR(a.cic, 6.974, 1e-3);
    EXPECT_DOUBLE_EQ(cic_score(100, 0.3, 5, KappaMode::two).cic, 20.0);
    EXPECT_DOUBLE_EQ(cic_score(100, 0.3, 0, KappaMode::log_n).cic, 30.0);
    EXPECT_DOUBLE_EQ(cic_score(100, 0.3, 0, KappaMode::two).cic, 30.0);
    const auto b = cic_score(57, -0.12, 3.3, KappaMode::two);
    EXPECT_EQ(a.cic, 100.0 * a.concordance - a.kappa * a.df);
    EXPECT_EQ(b.cic, 57.0 * b.concordance - b.kappa * b.df);
}

TEST(Cic, SelectionRules) {
    Rng rng(10);
    const Index n = 60;
    PseudoOutcomes po;
    po.w = random_vector(rng, n);
    po.u = po.w;
    po.v = Vector::Ones(n);
    std::vector<CicCandidate> path;
    for (int k = 0; k < 8; ++k) path.push_back({1.0 / (k + 1), random_vector(rng, n), static_cast<double>(k)});

    // Zero kappa selects the maximum raw concordance.
    const auto none = select_lambda_cic(path, po, KappaMode::none, ConcordanceEstimator::ipw);
    std::size_t argmax = 0;
    for (std::size_t k = 0; k < path.size(); ++k)
        if (concordance_ipw(po.w, path[k].scores) > concordance_ipw(po.w, path[argmax].scores)) argmax = k;
    EXPECT_EQ(none.index, argmax);
    for (const auto& e : none.trace) EXPECT_EQ(e.cic, static_cast<double>(n) * e.concordance - e.kappa * e.df);

    const auto single = select_lambda_cic(std::span(path).first(1), po, KappaMode::log_n, ConcordanceEstimator::dr);
    EXPECT_EQ(single.lambda_star, path[0].lambda);

    // Equal CIC: smaller df wins, then larger lambda.
    std::vector<CicCandidate> tied{{0.5, Vector::Zero(n), 2.0}, {0.9, Vector::Zero(n), 2.0}, {0.1, Vector::Zero(n), 2.0}};
    EXPECT_EQ(select_lambda_cic(tied, po, KappaMode::two, ConcordanceEstimator::ipw).lambda_star, 0.9);
    tied[2].df = 1.0;
    tied[2].scores.setZero();
    const auto r = select_lambda_cic(tied, po, KappaMode::none, ConcordanceEstimator::ipw);
    EXPECT_EQ(r.lambda_star, 0.1);
}
