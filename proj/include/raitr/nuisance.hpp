#pragma once

// Cross-fitted propensity, main-effect and reference-arm outcome estimates.

#include "raitr/dataset.hpp"
#include "raitr/folds.hpp"
#include "raitr/learners.hpp"
#include "raitr/parallel.hpp"

#include <string>
#include <vector>

namespace raitr {

struct NuisanceConfig {
    int folds = 5;
    LearnerSpec propensity;
    LearnerSpec outcome;
    double clip = 0.05;
};

/// Per-observation nuisance values. Each entry was predicted by models that
/// never saw the observation's own fold.
struct NuisanceEstimates {
    Vector pi_treat;     // P(A = +1 | x), clipped
    Vector pi_observed;  // P(A = a_i | x), clipped
    Vector m_hat;        // (mu_pos + mu_neg) / 2
    Vector mu_ref_hat;   // E(Y | x, A = -1)
    std::vector<int> fold_of;
    int folds = 0;

    void validate(Index n) const {
        if (pi_treat.size() != n || pi_observed.size() != n || m_hat.size() != n || mu_ref_hat.size() != n)
            throw InvalidInput("nuisance estimates are not aligned with the data");
        if (!all_finite(pi_treat) || !all_finite(pi_observed) || !all_finite(m_hat) || !all_finite(mu_ref_hat))
            throw NumericError("nuisance estimates contain non-finite values");
        if ((pi_observed.array() <= 0.0).any() || (pi_observed.array() > 1.0).any())
            throw NumericError("observed-arm propensities must lie in (0, 1]");
    }
};

/// Arm identity: P(A = a_i | x) from P(A = +1 | x).
inline Vector observed_arm_probability(const Vector& pi_treat, const Vector& a) {
    Vector out(a.size());
    for (Index i = 0; i < a.size(); ++i) out[i] = a[i] > 0 ? pi_treat[i] : 1.0 - pi_treat[i];
    return out;
}

inline Vector clip_probabilities(const Vector& p, double eps) {
    return p.unaryExpr([eps](double v) { return std::clamp(v, eps, 1.0 - eps); });
}

/// Nuisance values supplied directly, e.g. the true simulation functions.
inline NuisanceEstimates nuisance_from_values(const Vector& a, const Vector& pi_treat, const Vector& mu_pos,
                                              const Vector& mu_neg, double clip) {
    NuisanceEstimates nu;
    nu.pi_treat = clip_probabilities(pi_treat, clip);
    nu.pi_observed = observed_arm_probability(nu.pi_treat, a);
    nu.m_hat = 0.5 * (mu_pos + mu_neg);
    nu.mu_ref_hat = mu_neg;
    nu.fold_of.assign(static_cast<std::size_t>(a.size()), 0);
    nu.folds = 1;
    nu.validate(a.size());
    return nu;
}

/// K-fold cross-fitting: for each fold, propensity and arm-specific outcome
/// models are trained on the complement and evaluated on the fold.
inline NuisanceEstimates crossfit_nuisance(const Dataset& data, const NuisanceConfig& cfg, std::uint64_t seed) {
    data.validate();
    if (!(cfg.clip >= 0.0 && cfg.clip < 0.5)) throw InvalidInput("propensity clip must lie in [0, 0.5)");
    const Index n = data.n();
    const FoldPartition folds = make_folds(static_cast<int>(n), cfg.folds, derive_seed(seed, "crossfit-folds"));

    Vector pi(n), mu_pos(n), mu_neg(n);
    const Vector treated = (data.a.array() > 0).cast<double>();
    parallel_for(static_cast<std::size_t>(cfg.folds), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        const auto train = folds.complement(k);
        const auto test = folds.members(k);
        std::vector<Index> pos, neg;
        for (Index i : train) (data.a[i] > 0 ? pos : neg).push_back(i);
        if (pos.size() < 10 || neg.size() < 10)
            throw InvalidInput("treatment arm " + std::string(pos.size() < 10 ? "+1" : "-1") + " has only " +
                               std::to_string(std::min(pos.size(), neg.size())) +
                               " observations outside fold " + std::to_string(k) +
                               " (need 10); use fewer folds");
        const Matrix x_test = take_rows(data.X, test);
        const auto prop = fit_learner(cfg.propensity, take_rows(data.X, train), take(treated, train), Task::binary,
                                      derive_seed(seed, "propensity", kk));
        const auto out_pos = fit_learner(cfg.outcome, take_rows(data.X, pos), take(data.y, pos), Task::regression,
                                         derive_seed(seed, "outcome-treated", kk));
        const auto out_neg = fit_learner(cfg.outcome, take_rows(data.X, neg), take(data.y, neg), Task::regression,
                                         derive_seed(seed, "outcome-reference", kk));
        const Vector p_k = prop.predict(x_test), pos_k = out_pos.predict(x_test), neg_k = out_neg.predict(x_test);
        for (std::size_t r = 0; r < test.size(); ++r) {
            pi[test[r]] = p_k[static_cast<Index>(r)];
            mu_pos[test[r]] = pos_k[static_cast<Index>(r)];
            mu_neg[test[r]] = neg_k[static_cast<Index>(r)];
        }
    });

    NuisanceEstimates nu;
    nu.pi_treat = clip_probabilities(pi, cfg.clip);
    nu.pi_observed = observed_arm_probability(nu.pi_treat, data.a);
    nu.m_hat = 0.5 * (mu_pos + mu_neg);
    nu.mu_ref_hat = mu_neg;
    nu.fold_of = folds.fold_of;
    nu.folds = cfg.folds;
    nu.validate(n);
    return nu;
}

}  // namespace raitr
