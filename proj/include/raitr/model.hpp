#pragma once

// Reluctant additive treatment-rule pipeline: weighted linear lasso on the
// modulated design, per-covariate spline features, complexity-weighted
// penalties and a final penalized fit tuned by concordance or CV.

#include "raitr/common.hpp"
#include "raitr/concordance.hpp"
#include "raitr/dataset.hpp"
#include "raitr/lasso.hpp"
#include "raitr/nuisance.hpp"
#include "raitr/parallel.hpp"
#include "raitr/spline.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace raitr {

enum class Selection { cic_logn, cic_2, cic_logn_dr, cic_2_dr, cv };
enum class RuleKind { raitr, linear };

inline const std::vector<Selection>& all_selections() {
    static const std::vector<Selection> all{Selection::cic_logn, Selection::cic_2, Selection::cic_logn_dr,
                                            Selection::cic_2_dr, Selection::cv};
    return all;
}

inline std::string to_string(Selection s) {
    switch (s) {
        case Selection::cic_logn: return "cic_logn";
        case Selection::cic_2: return "cic_2";
        case Selection::cic_logn_dr: return "cic_logn_dr";
        case Selection::cic_2_dr: return "cic_2_dr";
        case Selection::cv: return "cv";
    }
    return "?";
}

inline Selection parse_selection(const std::string& s) {
    for (Selection sel : all_selections())
        if (to_string(sel) == s) return sel;
    throw Error(ErrorKind::usage, "unknown selection mode '" + s + "' (expected cic_logn, cic_2, cic_logn_dr, cic_2_dr or cv)");
}

inline std::string to_string(RuleKind r) { return r == RuleKind::raitr ? "raitr" : "linear"; }

inline RuleKind parse_rule_kind(const std::string& s) {
    if (s == "raitr") return RuleKind::raitr;
    if (s == "linear") return RuleKind::linear;
    throw Error(ErrorKind::usage, "unknown rule kind '" + s + "' (expected raitr or linear)");
}

struct PathConfig {
    int n_lambda = 100;
    double lambda_ratio = 0.0;  // 0 picks the size-dependent default
    int cv_folds = 5;
    SolverOptions solver{.truncate_path = true};
};

struct RaitrConfig {
    std::uint64_t seed = 1;
    NuisanceConfig nuisance;
    PathConfig path;
    Selection selection = Selection::cic_logn;
    RuleKind rule = RuleKind::raitr;
};

/// Shortest decimal that reads back to the same double.
inline std::string shortest_decimal(double v) {
    std::array<char, 32> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

/// Fitting configuration as flat key/value text; keys match the run-config keys.
inline std::map<std::string, std::string> describe_config(const RaitrConfig& cfg) {
    std::map<std::string, std::string> out{
        {"seed", std::to_string(cfg.seed)},
        {"folds", std::to_string(cfg.nuisance.folds)},
        {"clip", shortest_decimal(cfg.nuisance.clip)},
        {"propensity_learner", to_string(cfg.nuisance.propensity.kind)},
        {"outcome_learner", to_string(cfg.nuisance.outcome.kind)},
        {"n_lambda", std::to_string(cfg.path.n_lambda)},
        {"lambda_ratio", shortest_decimal(cfg.path.lambda_ratio)},
        {"cv_folds", std::to_string(cfg.path.cv_folds)},
        {"selection", to_string(cfg.selection)},
        {"rule", to_string(cfg.rule)},
    };
    for (const auto& [model, spec] : {std::pair{"propensity", &cfg.nuisance.propensity},
                                      std::pair{"outcome", &cfg.nuisance.outcome}})
        for (const auto& [name, value] : spec->hyperparameters)
            out[std::string(model) + "_" + name] = shortest_decimal(value);
    return out;
}

/// One row of the lambda-selection trace. Fields that do not apply to the
/// active selection mode are NaN.
struct SelectionRecord {
    double lambda = 0.0;
    double df = 0.0;
    double concordance = std::numeric_limits<double>::quiet_NaN();
    double kappa = std::numeric_limits<double>::quiet_NaN();
    double cic = std::numeric_limits<double>::quiet_NaN();
    double cv_error = std::numeric_limits<double>::quiet_NaN();
};

struct RaitrModel {
    RuleKind rule = RuleKind::raitr;
    Selection selection = Selection::cic_logn;

    // Stage 1: response y - m_hat on (a/2)[1, x] plus a free intercept.
    double stage1_intercept = 0.0;
    double stage1_effect_intercept = 0.0;
    Vector stage1_coefficients;
    double lambda1 = 0.0;

    std::vector<std::optional<FittedSpline>> splines;
    Vector fitted_sd;
    Vector gamma;

    // Final CATE: final_intercept + beta_lin' x + sum_j beta_non_j g_j(x_j).
    double outcome_intercept = 0.0;
    double final_intercept = 0.0;
    Vector beta_lin;
    Vector beta_non;
    double lambda2 = 0.0;
    std::size_t selected_index = 0;

    std::vector<SelectionRecord> selection_trace;
    Vector column_means;
    Vector column_sds;
    std::vector<std::string> column_names;
    std::map<std::string, std::string> config_echo;

    Index p() const { return beta_lin.size(); }

    int nonlinear_term_count() const { return static_cast<int>((beta_non.array() != 0.0).count()); }
    int linear_term_count() const { return static_cast<int>((beta_lin.array() != 0.0).count()); }

    /// Contribution of covariate j to the CATE at the given values.
    Vector covariate_contribution(Index j, const Vector& values) const {
        Vector out = beta_lin[j] * values;
        if (beta_non[j] != 0.0 && splines[j]) out += beta_non[j] * evaluate_spline(*splines[j], values);
        return out;
    }
};

// ---- penalty factors -----------------------------------------------------

/// min(sqrt(p), 1 + 1/s_j); a zero or NaN spread gives sqrt(p).
inline Vector compute_penalty_factors(const Vector& fitted_sds, Index p) {
    if (p < 1) throw InvalidInput("compute_penalty_factors: p must be at least 1");
    const double cap = std::sqrt(static_cast<double>(p));
    Vector gamma(fitted_sds.size());
    for (Index j = 0; j < fitted_sds.size(); ++j) {
        const double s = fitted_sds[j];
        gamma[j] = s > 0.0 ? std::min(cap, 1.0 + 1.0 / s) : cap;
    }
    return gamma;
}

// ---- designs ---------------------------------------------------------------

/// Unmodulated CATE features [1, x, G].
inline Matrix cate_features(const Matrix& x, const Matrix& g) {
    Matrix f(x.rows(), 1 + x.cols() + g.cols());
    f.col(0).setOnes();
    f.middleCols(1, x.cols()) = x;
    if (g.cols() > 0) f.rightCols(g.cols()) = g;
    return f;
}

inline Matrix modulate(const Matrix& features, const Vector& a) { return (0.5 * a).asDiagonal() * features; }

inline std::vector<double> lambda_grid(const WeightedDesign& d, const PathConfig& cfg) {
    if (cfg.n_lambda < 1) throw InvalidInput("n_lambda must be positive");
    const double ratio = cfg.lambda_ratio > 0 ? cfg.lambda_ratio : default_lambda_ratio(d.rows(), d.cols());
    return make_lambda_path(compute_lambda_max(d), cfg.n_lambda, ratio);
}

// ---- stage 1 ---------------------------------------------------------------

struct Stage1Result {
    LassoFit fit;  // coefficients: [effect intercept, beta_1]
    std::vector<double> lambdas;
    std::vector<double> cv_errors;
    Vector residuals;
};

inline WeightedDesign stage1_design(const Dataset& data, const NuisanceEstimates& nu) {
    return WeightedDesign{modulate(cate_features(data.X, Matrix(data.n(), 0)), data.a), data.y - nu.m_hat,
                          nu.pi_observed.cwiseInverse(),
                          [&] {
                              Vector pf = Vector::Ones(data.p() + 1);
                              pf[0] = 0.0;
                              return pf;
                          }(),
                          true};
}

/// Weighted lasso of y - m_hat on (a/2)[1, x]; lambda by weighted K-fold CV.
/// Residuals subtract the full stage-1 fit.
inline Stage1Result fit_stage1(const Dataset& data, const NuisanceEstimates& nu, const PathConfig& cfg,
                               std::uint64_t seed) {
    nu.validate(data.n());
    const WeightedDesign d = stage1_design(data, nu);
    Stage1Result out;
    out.lambdas = lambda_grid(d, cfg);
    const auto folds = make_folds(static_cast<int>(data.n()), cfg.cv_folds, derive_seed(seed, "stage1-cv"));
    const CvResult cv = cross_validate_lambda(d, folds, out.lambdas, cfg.solver);
    out.cv_errors = cv.errors;
    const LassoPath path = fit_lasso_path(d, std::span<const double>(out.lambdas.data(), cv.index + 1), cfg.solver);
    out.fit = path.fits.back();
    out.residuals = d.response - out.fit.predict(d.design);
    return out;
}

// ---- spline features -------------------------------------------------------

struct NonlinearFeatures {
    std::vector<std::optional<FittedSpline>> splines;
    Matrix G;
    Vector fitted_sd;
    Vector spline_df;  // zero for absent splines
};

inline bool has_enough_distinct_values(const Vector& x, std::size_t needed = 4) {
    std::set<double> seen;
    for (double v : x) {
        seen.insert(v);
        if (seen.size() >= needed) return true;
    }
    return false;
}

/// Weighted smoothing spline of the modulated residual 2 a r on each covariate.
inline NonlinearFeatures build_nonlinear_features(const Dataset& data, const Vector& residuals,
                                                  const NuisanceEstimates& nu) {
    const Index n = data.n(), p = data.p();
    if (residuals.size() != n) throw InvalidInput("build_nonlinear_features: residuals not aligned with data");
    const Vector weights = nu.pi_observed.cwiseInverse();
    const Vector target = 2.0 * data.a.cwiseProduct(residuals);
    NonlinearFeatures out;
    out.splines.resize(static_cast<std::size_t>(p));
    out.G = Matrix::Zero(n, p);
    out.fitted_sd = Vector::Zero(p);
    out.spline_df = Vector::Zero(p);
    parallel_for(static_cast<std::size_t>(p), [&](std::size_t jj) {
        const auto j = static_cast<Index>(jj);
        const Vector x = data.X.col(j);
        if (!has_enough_distinct_values(x)) return;
        try {
            FittedSpline s = fit_weighted_smoothing_spline(x, target, weights);
            out.G.col(j) = evaluate_spline(s, x);
            out.fitted_sd[j] = weighted_sd(out.G.col(j), weights);
            s.fitted_sd = out.fitted_sd[j];
            out.spline_df[j] = s.effective_df;
            out.splines[jj] = std::move(s);
        } catch (const DegenerateInput&) {
        }
    });
    return out;
}

// ---- stage 3 ---------------------------------------------------------------

struct Stage3Path {
    Matrix features;  // [1, x, G], unmodulated
    Vector penalty_factors;
    LassoPath path;
};

inline WeightedDesign stage3_design(const Dataset& data, const NuisanceEstimates& nu, const Matrix& features,
                                    const Vector& penalty_factors) {
    return WeightedDesign{modulate(features, data.a), data.y - nu.m_hat, nu.pi_observed.cwiseInverse(),
                          penalty_factors, true};
}

/// Full lambda path over (a/2)[1, x, G]: the effect intercept is free, linear
/// columns carry factor 1 and nonlinear columns factor gamma_j.
inline Stage3Path fit_stage3(const Dataset& data, const NuisanceEstimates& nu, const Matrix& G, const Vector& gamma,
                             const PathConfig& cfg) {
    const Index p = data.p();
    if (G.rows() != data.n() || G.cols() != p || gamma.size() != p)
        throw InvalidInput("fit_stage3: feature matrix or penalty factors have the wrong shape");
    Stage3Path out;
    out.features = cate_features(data.X, G);
    out.penalty_factors.resize(2 * p + 1);
    out.penalty_factors[0] = 0.0;
    out.penalty_factors.segment(1, p).setOnes();
    out.penalty_factors.tail(p) = gamma;
    const WeightedDesign d = stage3_design(data, nu, out.features, out.penalty_factors);
    const auto lambdas = lambda_grid(d, cfg);
    out.path = fit_lasso_path(d, lambdas, cfg.solver);
    return out;
}

// ---- orchestration -----------------------------------------------------------

/// Everything up to lambda selection; shared across selection modes.
struct PreparedFit {
    RuleKind rule = RuleKind::raitr;
    NuisanceEstimates nuisance;
    Stage1Result stage1;
    NonlinearFeatures features;
    Vector gamma;
    Stage3Path stage3;
};

namespace detail {

template <typename F>
auto run_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.kind(), std::string(stage) + ": " + e.what());
    } catch (const std::exception& e) {
        throw NumericError(std::string(stage) + ": " + e.what());
    }
}

inline Vector path_cate(const Stage3Path& s, std::size_t k) { return s.features * s.path.fits[k].coefficients; }

}  // namespace detail

/// Replaces the spline features and final path for another rule kind,
/// reusing nuisance estimates and the stage-1 fit.
inline PreparedFit with_rule(const PreparedFit& base, const Dataset& data, RuleKind rule, const PathConfig& cfg) {
    PreparedFit out;
    out.rule = rule;
    out.nuisance = base.nuisance;
    out.stage1 = base.stage1;
    const Index p = data.p();
    if (rule == RuleKind::raitr) {
        out.features = detail::run_stage("spline features", [&] {
            return build_nonlinear_features(data, out.stage1.residuals, out.nuisance);
        });
    } else {
        out.features.splines.resize(static_cast<std::size_t>(p));
        out.features.G = Matrix::Zero(data.n(), p);
        out.features.fitted_sd = Vector::Zero(p);
        out.features.spline_df = Vector::Zero(p);
    }
    out.gamma = compute_penalty_factors(out.features.fitted_sd, p);
    out.stage3 = detail::run_stage("stage 3", [&] {
        return fit_stage3(data, out.nuisance, out.features.G, out.gamma, cfg);
    });
    return out;
}

inline PreparedFit prepare_fit(const Dataset& data, const RaitrConfig& cfg, const NuisanceEstimates& nu) {
    detail::run_stage("input", [&] {
        data.validate();
        nu.validate(data.n());
        return 0;
    });
    PreparedFit base;
    base.nuisance = nu;
    base.stage1 = detail::run_stage("stage 1", [&] { return fit_stage1(data, nu, cfg.path, cfg.seed); });
    return with_rule(base, data, cfg.rule, cfg.path);
}

struct SelectionResult {
    std::size_t index = 0;
    std::vector<SelectionRecord> trace;
};

inline SelectionResult select_lambda(const PreparedFit& prep, const Dataset& data, Selection selection,
                                     const RaitrConfig& cfg) {
    const auto& s3 = prep.stage3;
    const Index p = data.p();
    const std::size_t n_path = s3.path.fits.size();
    std::vector<CicCandidate> candidates(n_path);
    for (std::size_t k = 0; k < n_path; ++k) {
        const Vector& c = s3.path.fits[k].coefficients;
        candidates[k].lambda = s3.path.lambdas[k];
        candidates[k].scores = detail::path_cate(s3, k);
        candidates[k].df = model_df(std::span<const double>(c.data() + 1, static_cast<std::size_t>(p)),
                                    std::span<const double>(c.data() + 1 + p, static_cast<std::size_t>(p)),
                                    as_span(prep.features.spline_df));
    }
    const PseudoOutcomes po = make_pseudo_outcomes(data.y, data.a, prep.nuisance);
    SelectionResult out;
    out.trace.resize(n_path);

    if (selection == Selection::cv) {
        const WeightedDesign d = stage3_design(data, prep.nuisance, s3.features, s3.penalty_factors);
        const auto folds = make_folds(static_cast<int>(data.n()), cfg.path.cv_folds, derive_seed(cfg.seed, "stage3-cv"));
        const CvResult cv = cross_validate_lambda(d, folds, s3.path.lambdas, cfg.path.solver);
        out.index = cv.index;
        for (std::size_t k = 0; k < n_path; ++k) {
            out.trace[k].lambda = candidates[k].lambda;
            out.trace[k].df = candidates[k].df;
            out.trace[k].concordance = concordance_ipw(po.w, candidates[k].scores);
            if (k < cv.errors.size()) out.trace[k].cv_error = cv.errors[k];
        }
        return out;
    }

    const KappaMode kappa =
        (selection == Selection::cic_logn || selection == Selection::cic_logn_dr) ? KappaMode::log_n : KappaMode::two;
    const ConcordanceEstimator est = (selection == Selection::cic_logn_dr || selection == Selection::cic_2_dr)
                                         ? ConcordanceEstimator::dr
                                         : ConcordanceEstimator::ipw;
    const CicSelection sel = select_lambda_cic(candidates, po, kappa, est);
    out.index = sel.index;
    for (std::size_t k = 0; k < n_path; ++k) {
        const auto& e = sel.trace[k];
        out.trace[k].lambda = e.lambda;
        out.trace[k].df = e.df;
        out.trace[k].concordance = e.concordance;
        out.trace[k].kappa = e.kappa;
        out.trace[k].cic = e.cic;
    }
    return out;
}

/// Packages the prepared fit at the lambda chosen by the given selection mode.
inline RaitrModel finalize_fit(const PreparedFit& prep, const Dataset& data, Selection selection,
                               const RaitrConfig& cfg) {
    const SelectionResult sel = detail::run_stage("lambda selection", [&] {
        return select_lambda(prep, data, selection, cfg);
    });
    const Index p = data.p();
    RaitrModel m;
    m.rule = prep.rule;
    m.selection = selection;
    m.stage1_intercept = prep.stage1.fit.intercept;
    m.stage1_effect_intercept = prep.stage1.fit.coefficients[0];
    m.stage1_coefficients = prep.stage1.fit.coefficients.tail(p);
    m.lambda1 = prep.stage1.fit.lambda;
    m.splines = prep.features.splines;
    m.fitted_sd = prep.features.fitted_sd;
    m.gamma = prep.gamma;
    const LassoFit& fit = prep.stage3.path.fits[sel.index];
    m.outcome_intercept = fit.intercept;
    m.final_intercept = fit.coefficients[0];
    m.beta_lin = fit.coefficients.segment(1, p);
    m.beta_non = fit.coefficients.tail(p);
    for (Index j = 0; j < p; ++j)
        if (!m.splines[static_cast<std::size_t>(j)]) m.beta_non[j] = 0.0;
    m.lambda2 = fit.lambda;
    m.selected_index = sel.index;
    m.selection_trace = sel.trace;
    m.column_means = data.X.colwise().mean().transpose();
    m.column_sds.resize(p);
    for (Index j = 0; j < p; ++j)
        m.column_sds[j] = std::sqrt((data.X.col(j).array() - m.column_means[j]).square().mean());
    m.column_names = data.names_or_default();
    m.config_echo = describe_config(cfg);
    m.config_echo["selection"] = to_string(selection);
    m.config_echo["rule"] = to_string(prep.rule);
    return m;
}

/// Cross-fits nuisance models (unless supplied), then runs every stage.
inline RaitrModel fit_raitr(const Dataset& data, const RaitrConfig& cfg,
                            const std::optional<NuisanceEstimates>& supplied = std::nullopt) {
    detail::run_stage("input", [&] {
        data.validate();
        return 0;
    });
    const NuisanceEstimates nu = supplied ? *supplied : detail::run_stage("nuisance", [&] {
        return crossfit_nuisance(data, cfg.nuisance, derive_seed(cfg.seed, "nuisance"));
    });
    const PreparedFit prep = prepare_fit(data, cfg, nu);
    return finalize_fit(prep, data, cfg.selection, cfg);
}

// ---- prediction ------------------------------------------------------------

inline Vector predict_cate(const RaitrModel& m, const Matrix& x) {
    const Index p = m.p();
    if (x.cols() != p)
        throw InvalidInput("predict: expected " + std::to_string(p) + " covariate columns, got " +
                           std::to_string(x.cols()));
    if (!all_finite(x)) throw InvalidInput("predict: non-finite covariate values");
    Vector f = (x * m.beta_lin).array() + m.final_intercept;
    for (Index j = 0; j < p; ++j) {
        const auto& s = m.splines[static_cast<std::size_t>(j)];
        if (m.beta_non[j] != 0.0 && s) f += m.beta_non[j] * evaluate_spline(*s, x.col(j));
    }
    return f;
}

/// Sign of the CATE with zero mapped to +1.
inline Vector rule_from_cate(const Vector& cate) {
    return cate.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

inline Vector predict_rule(const RaitrModel& m, const Matrix& x) { return rule_from_cate(predict_cate(m, x)); }

}  // namespace raitr
