#pragma once

// Simulation scenarios with known truth, rule evaluation, design diagnostics
// and the paired-outcome benchmark protocol.

#include "raitr/common.hpp"
#include "raitr/dataset.hpp"
#include "raitr/model.hpp"
#include "raitr/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace raitr {

enum class Family { linear, highly_nonlinear, tree, polynomial, cosine };

inline std::string to_string(Family f) {
    switch (f) {
        case Family::linear: return "linear";
        case Family::highly_nonlinear: return "highly_nonlinear";
        case Family::tree: return "tree";
        case Family::polynomial: return "polynomial";
        case Family::cosine: return "cosine";
    }
    return "?";
}

inline Family parse_family(const std::string& s) {
    for (Family f : {Family::linear, Family::highly_nonlinear, Family::tree, Family::polynomial, Family::cosine})
        if (to_string(f) == s) return f;
    throw Error(ErrorKind::usage,
                "unknown scenario family '" + s + "' (expected linear, highly_nonlinear, tree, polynomial or cosine)");
}

/// Large- and small-effect main-effect scales of each family.
inline std::pair<double, double> family_effect_scales(Family f) {
    switch (f) {
        case Family::linear: return {0.1, 3.0};
        case Family::highly_nonlinear: return {1.0, 8.0};
        case Family::tree: return {1.0, 5.0};
        case Family::polynomial: return {0.1, 2.0};
        case Family::cosine: return {1.0, 1.0};
    }
    return {1.0, 1.0};
}

struct ScenarioSpec {
    Family family = Family::linear;
    Index n = 1000;
    Index p = 100;
    double c = 0.1;
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 1) throw InvalidInput("scenario: n must be positive");
        if (p < 8) throw InvalidInput("scenario: p must be at least 8");
        if (!(c > 0.0) || !std::isfinite(c)) throw InvalidInput("scenario: c must be positive");
    }
};

inline double sign_of(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

/// i.i.d. Unif(-2, 2) entries, filled row by row.
inline Matrix gen_covariates(Index n, Index p, std::uint64_t seed) {
    if (n < 1 || p < 1) throw InvalidInput("gen_covariates: n and p must be positive");
    Rng rng(seed);
    Matrix x(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) x(i, j) = rng.uniform(-2.0, 2.0);
    return x;
}

inline Vector true_propensity(const Matrix& x) {
    if (x.cols() < 3) throw InvalidInput("true_propensity: need at least 3 covariates");
    Vector out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) out[i] = sigmoid(x(i, 0) - x(i, 1) + 0.5 * x(i, 2));
    return out;
}

inline Vector true_main_effect(const Matrix& x, double c) {
    if (x.cols() < 5) throw InvalidInput("true_main_effect: need at least 5 covariates");
    Vector out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (Index j = 0; j < 5; ++j) s += x(i, j) + (2.0 / 3.0) * (2.0 * x(i, j) * x(i, j) - 1.0);
        out[i] = -c * s;
    }
    return out;
}

inline double true_delta_row(Family f, const double* x) {
    switch (f) {
        case Family::linear: return x[0] - x[1] + 0.5 * x[2] + x[3] - x[4] - 0.5 * x[5];
        case Family::highly_nonlinear:
            return x[0] * x[0] * x[0] + std::abs(x[2]) * std::exp(x[4]) + 5.0 * std::sin(2.0 * M_PI * x[6]) +
                   5.0 * std::cos(2.0 * M_PI * x[5]) - (x[3] + x[7]) * (x[3] + x[7]) + 3.0 * std::abs(x[1] + x[4]);
        case Family::tree:
            return 3.0 * ((x[0] + 0.5 > 0) ? sign_of(x[1] - 0.5) : 0.0) +
                   2.5 * ((x[0] + 0.5 < 0) ? sign_of(x[3] - 0.5) : 0.0) + 0.5;
        case Family::polynomial: return 0.2 + x[0] * x[0] + x[1] * x[1] - x[2] * x[2] - x[3] * x[3];
        case Family::cosine: return 0.5 * std::cos(2.0 * x[0]) * (2.0 * x[0]);
    }
    throw InvalidInput("true_delta: unknown family");
}

inline Vector true_delta(Family f, const Matrix& x) {
    if (x.cols() < 8) throw InvalidInput("true_delta: need at least 8 covariates");
    Vector out(x.rows());
    double row[8];
    for (Index i = 0; i < x.rows(); ++i) {
        for (Index j = 0; j < 8; ++j) row[j] = x(i, j);
        out[i] = true_delta_row(f, row);
    }
    return out;
}

/// Simulated data together with its generating functions.
struct ScenarioData {
    ScenarioSpec spec;
    Dataset data;

    Vector main_effect(const Matrix& x) const { return true_main_effect(x, spec.c); }
    Vector delta(const Matrix& x) const { return true_delta(spec.family, x); }
    Vector propensity(const Matrix& x) const { return true_propensity(x); }

    /// Nuisance estimates equal to the truth.
    NuisanceEstimates oracle_nuisance(double clip) const {
        const Vector m = main_effect(data.X), d = delta(data.X);
        return nuisance_from_values(data.a, propensity(data.X), m + 0.5 * d, m - 0.5 * d, clip);
    }
};

inline constexpr double kNoiseSd = 2.0;

inline ScenarioData gen_dataset(const ScenarioSpec& spec) {
    spec.validate();
    ScenarioData out;
    out.spec = spec;
    Dataset& d = out.data;
    d.X = gen_covariates(spec.n, spec.p, derive_seed(spec.seed, "covariates"));
    const Vector pi = true_propensity(d.X), m = true_main_effect(d.X, spec.c), delta = true_delta(spec.family, d.X);
    Rng treat(derive_seed(spec.seed, "treatment"));
    Rng noise(derive_seed(spec.seed, "noise"));
    d.a.resize(spec.n);
    d.y.resize(spec.n);
    for (Index i = 0; i < spec.n; ++i) {
        d.a[i] = treat.bernoulli(pi[i]) ? 1.0 : -1.0;
        d.y[i] = m[i] + 0.5 * d.a[i] * delta[i] + kNoiseSd * noise.normal();
    }
    return out;
}

// ---- evaluation -----------------------------------------------------------

struct EvaluationReport {
    double value = 0.0;
    double agreement = 0.0;
    double optimal_value = 0.0;
    double always_treat_value = 0.0;
};

/// Value and agreement of +/-1 labels given the true main effect and CATE.
inline EvaluationReport evaluate_rule(const Vector& labels, const Vector& main_effect, const Vector& delta) {
    const Index n = labels.size();
    if (n < 1) throw InvalidInput("evaluate_rule: empty test set");
    if (main_effect.size() != n || delta.size() != n) throw InvalidInput("evaluate_rule: length mismatch");
    double value = 0, optimal = 0, always = 0, agree = 0;
    for (Index i = 0; i < n; ++i) {
        const double best = delta[i] >= 0 ? 1.0 : -1.0;
        value += main_effect[i] + 0.5 * labels[i] * delta[i];
        optimal += main_effect[i] + 0.5 * best * delta[i];
        always += main_effect[i] + 0.5 * delta[i];
        agree += labels[i] == best ? 1.0 : 0.0;
    }
    const double nn = static_cast<double>(n);
    return {value / nn, agree / nn, optimal / nn, always / nn};
}

/// sqrt(Var(delta) / (Var(main) + noise variance)) from population moments.
inline double signal_strength_of(const Vector& delta, const Vector& main_effect, double noise_var = kNoiseSd * kNoiseSd) {
    auto var = [](const Vector& v) { return (v.array() - v.mean()).square().mean(); };
    return std::sqrt(var(delta) / (var(main_effect) + noise_var));
}

inline double signal_strength(Family f, double c, Index mc_n, std::uint64_t seed) {
    if (mc_n < 10000) throw InvalidInput("signal_strength: need at least 10000 Monte Carlo draws");
    const Matrix x = gen_covariates(mc_n, 8, seed);
    return signal_strength_of(true_delta(f, x), true_main_effect(x, c));
}

struct BalanceReport {
    std::vector<double> smd;
    double proportion_treated = 0.0;
};

/// Absolute standardized mean difference per column; pooled SD is
/// sqrt((s1^2 + s2^2) / 2) with sample variances.
inline BalanceReport covariate_balance(const Dataset& d, std::span<const Index> columns) {
    std::vector<Index> pos, neg;
    for (Index i = 0; i < d.n(); ++i) (d.a[i] > 0 ? pos : neg).push_back(i);
    if (pos.size() < 2 || neg.size() < 2) throw InvalidInput("covariate_balance: each arm needs at least 2 observations");
    auto moments = [&](const std::vector<Index>& rows, Index j) {
        double mean = 0;
        for (Index i : rows) mean += d.X(i, j);
        mean /= static_cast<double>(rows.size());
        double ss = 0;
        for (Index i : rows) ss += (d.X(i, j) - mean) * (d.X(i, j) - mean);
        return std::pair{mean, ss / static_cast<double>(rows.size() - 1)};
    };
    BalanceReport out;
    for (Index j : columns) {
        if (j < 0 || j >= d.p()) throw InvalidInput("covariate_balance: column index out of range");
        const auto [m1, v1] = moments(pos, j);
        const auto [m0, v0] = moments(neg, j);
        const double pooled = std::sqrt(0.5 * (v1 + v0));
        out.smd.push_back(pooled > 0 ? std::abs(m1 - m0) / pooled : 0.0);
    }
    out.proportion_treated = static_cast<double>(pos.size()) / static_cast<double>(d.n());
    return out;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw InvalidInput("median of empty sample");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/// Median absolute deviation, without a normal-consistency constant.
inline double median_absolute_deviation(const Vector& x) {
    std::vector<double> v(x.data(), x.data() + x.size());
    const double med = median_of(v);
    for (double& e : v) e = std::abs(e - med);
    return median_of(v);
}

inline std::vector<Index> mad_filter(const Matrix& x, double threshold) {
    std::vector<Index> keep;
    for (Index j = 0; j < x.cols(); ++j)
        if (median_absolute_deviation(x.col(j)) >= threshold) keep.push_back(j);
    return keep;
}

// ---- paired-outcome benchmark ---------------------------------------------

/// Units with both potential outcomes observed.
struct PairedData {
    Matrix X;
    Vector y_pos;
    Vector y_neg;
    std::vector<std::string> column_names;
};

/// A treatment-rule method: trains on the observed-arm data and labels the
/// test units. test_units indexes the rows of the (filtered) paired data.
using RuleMethod =
    std::function<Vector(const Dataset& train, const Matrix& x_test, std::span<const Index> test_units)>;

struct NamedMethod {
    std::string name;
    RuleMethod method;
};

struct BenchmarkRecord {
    int replicate = 0;
    std::string method;
    double agreement = 0.0;
    double value = 0.0;
};

struct BenchmarkSummary {
    std::string method;
    double mean_agreement = 0.0, sd_agreement = 0.0;
    double mean_value = 0.0, sd_value = 0.0;
};

struct BenchmarkResult {
    Index excluded_units = 0;
    PairedData used;  // units with both outcomes present
    std::vector<BenchmarkRecord> records;
    std::vector<BenchmarkSummary> summaries;
};

inline PairedData complete_units(const PairedData& d, Index& excluded) {
    std::vector<Index> keep;
    for (Index i = 0; i < d.X.rows(); ++i)
        if (std::isfinite(d.y_pos[i]) && std::isfinite(d.y_neg[i]) && d.X.row(i).allFinite()) keep.push_back(i);
    excluded = d.X.rows() - static_cast<Index>(keep.size());
    return PairedData{take_rows(d.X, keep), take(d.y_pos, keep), take(d.y_neg, keep), d.column_names};
}

inline double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double e : v) ss += (e - mean) * (e - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Repeated random train/test splits; the observed arm of each training unit
/// is drawn uniformly. Agreement is against argmax(y_pos, y_neg) (ties to +1)
/// and value is the mean outcome of the chosen arm on the test units.
inline BenchmarkResult paired_outcome_benchmark(const PairedData& paired, int n_reps, double train_fraction,
                                                std::uint64_t seed, const std::vector<NamedMethod>& methods) {
    if (paired.y_pos.size() != paired.X.rows() || paired.y_neg.size() != paired.X.rows())
        throw InvalidInput("benchmark: outcome columns do not match covariate rows");
    if (n_reps < 1) throw InvalidInput("benchmark: need at least one replicate");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("benchmark: train fraction must lie in (0, 1)");
    BenchmarkResult out;
    out.used = complete_units(paired, out.excluded_units);
    const Index n = out.used.X.rows();
    const auto n_train = static_cast<Index>(std::floor(train_fraction * static_cast<double>(n)));
    if (n_train < 2 || n - n_train < 1) throw InvalidInput("benchmark: too few complete units for a train/test split");

    std::vector<std::vector<BenchmarkRecord>> per_rep(static_cast<std::size_t>(n_reps));
    parallel_for(static_cast<std::size_t>(n_reps), [&](std::size_t r) {
        Rng rng(derive_seed(seed, "benchmark-replicate", r));
        std::vector<Index> units(static_cast<std::size_t>(n));
        std::iota(units.begin(), units.end(), 0);
        rng.shuffle(units.begin(), units.end());
        std::vector<Index> train(units.begin(), units.begin() + n_train), test(units.begin() + n_train, units.end());
        std::sort(train.begin(), train.end());
        std::sort(test.begin(), test.end());
        Dataset tr;
        tr.X = take_rows(out.used.X, train);
        tr.column_names = out.used.column_names;
        tr.a.resize(n_train);
        tr.y.resize(n_train);
        for (Index k = 0; k < n_train; ++k) {
            tr.a[k] = rng.bernoulli(0.5) ? 1.0 : -1.0;
            const Index u = train[static_cast<std::size_t>(k)];
            tr.y[k] = tr.a[k] > 0 ? out.used.y_pos[u] : out.used.y_neg[u];
        }
        const Matrix x_test = take_rows(out.used.X, test);
        for (const auto& m : methods) {
            const Vector labels = m.method(tr, x_test, test);
            if (labels.size() != static_cast<Index>(test.size()))
                throw InvalidInput("benchmark: method '" + m.name + "' returned the wrong number of labels");
            double agree = 0, value = 0;
            for (std::size_t k = 0; k < test.size(); ++k) {
                const Index u = test[k];
                const double best = out.used.y_pos[u] >= out.used.y_neg[u] ? 1.0 : -1.0;
                const double label = labels[static_cast<Index>(k)];
                agree += label == best ? 1.0 : 0.0;
                value += label > 0 ? out.used.y_pos[u] : out.used.y_neg[u];
            }
            const double nt = static_cast<double>(test.size());
            per_rep[r].push_back({static_cast<int>(r), m.name, agree / nt, value / nt});
        }
    });
    for (const auto& rep : per_rep) out.records.insert(out.records.end(), rep.begin(), rep.end());
    for (const auto& m : methods) {
        std::vector<double> ag, va;
        for (const auto& rec : out.records)
            if (rec.method == m.name) {
                ag.push_back(rec.agreement);
                va.push_back(rec.value);
            }
        BenchmarkSummary s;
        s.method = m.name;
        s.mean_agreement = std::accumulate(ag.begin(), ag.end(), 0.0) / static_cast<double>(ag.size());
        s.mean_value = std::accumulate(va.begin(), va.end(), 0.0) / static_cast<double>(va.size());
        s.sd_agreement = sample_sd(ag);
        s.sd_value = sample_sd(va);
        out.summaries.push_back(s);
    }
    return out;
}

// ---- simulation study -------------------------------------------------------

/// One tidy result row.
struct SimulationRecord {
    int replicate = 0;
    std::string method;
    std::string metric;
    double value = 0.0;
};

struct SimulationConfig {
    ScenarioSpec scenario;
    int reps = 20;
    Index test_n = 10000;
    RaitrConfig fit;  // selection/rule fields are ignored; every method is run
    bool oracle_nuisance = false;
};

/// Method names in output order.
inline const std::vector<std::string>& simulation_methods() {
    static const std::vector<std::string> names{"raitr_cic",  "raitr_2k",   "raitr_dr",   "raitr_2k_dr",
                                                "raitr_cv",   "linear_cic", "linear_2k",  "linear_dr",
                                                "linear_2k_dr", "linear_cv", "always_treat"};
    return names;
}

inline std::vector<SimulationRecord> run_replicate(const SimulationConfig& cfg, int rep) {
    ScenarioSpec spec = cfg.scenario;
    spec.seed = derive_seed(cfg.scenario.seed, "replicate", static_cast<std::uint64_t>(rep));
    const ScenarioData sim = gen_dataset(spec);
    const Matrix x_test = gen_covariates(cfg.test_n, spec.p, derive_seed(spec.seed, "test-covariates"));
    const Vector m_test = true_main_effect(x_test, spec.c), d_test = true_delta(spec.family, x_test);

    RaitrConfig fit_cfg = cfg.fit;
    fit_cfg.seed = derive_seed(spec.seed, "fit");
    const NuisanceEstimates nu = cfg.oracle_nuisance
                                     ? sim.oracle_nuisance(fit_cfg.nuisance.clip)
                                     : crossfit_nuisance(sim.data, fit_cfg.nuisance, derive_seed(fit_cfg.seed, "nuisance"));
    fit_cfg.rule = RuleKind::raitr;
    const PreparedFit prep = prepare_fit(sim.data, fit_cfg, nu);
    const PreparedFit linear = with_rule(prep, sim.data, RuleKind::linear, fit_cfg.path);

    static const std::vector<std::string> suffix{"cic", "2k", "dr", "2k_dr", "cv"};
    std::vector<SimulationRecord> out;
    auto record = [&](const std::string& method, const Vector& labels, int nonlinear, int linear_terms) {
        const EvaluationReport rep_eval = evaluate_rule(labels, m_test, d_test);
        out.push_back({rep, method, "agreement", rep_eval.agreement});
        out.push_back({rep, method, "value", rep_eval.value});
        out.push_back({rep, method, "optimal_value", rep_eval.optimal_value});
        out.push_back({rep, method, "nonlinear_terms", static_cast<double>(nonlinear)});
        out.push_back({rep, method, "linear_terms", static_cast<double>(linear_terms)});
    };
    for (const PreparedFit* p : {&prep, &linear}) {
        const std::string prefix = p->rule == RuleKind::raitr ? "raitr_" : "linear_";
        for (std::size_t s = 0; s < all_selections().size(); ++s) {
            const RaitrModel model = finalize_fit(*p, sim.data, all_selections()[s], fit_cfg);
            record(prefix + suffix[s], predict_rule(model, x_test), model.nonlinear_term_count(),
                   model.linear_term_count());
        }
    }
    record("always_treat", Vector::Ones(cfg.test_n), 0, 0);
    return out;
}

/// Runs all replicates; rows are ordered by replicate, then method, then metric.
inline std::vector<SimulationRecord> run_simulation(const SimulationConfig& cfg) {
    cfg.scenario.validate();
    if (cfg.reps < 1) throw InvalidInput("simulation: reps must be positive");
    if (cfg.test_n < 1) throw InvalidInput("simulation: test_n must be positive");
    std::vector<std::vector<SimulationRecord>> per_rep(static_cast<std::size_t>(cfg.reps));
    parallel_for(per_rep.size(), [&](std::size_t r) { per_rep[r] = run_replicate(cfg, static_cast<int>(r)); });
    std::vector<SimulationRecord> out;
    for (auto& rows : per_rep) out.insert(out.end(), rows.begin(), rows.end());
    return out;
}

/// Mean of one (method, metric) column across replicates.
inline double mean_metric(const std::vector<SimulationRecord>& rows, const std::string& method,
                          const std::string& metric) {
    double s = 0;
    int k = 0;
    for (const auto& r : rows)
        if (r.method == method && r.metric == metric) {
            s += r.value;
            ++k;
        }
    if (k == 0) throw InvalidInput("no rows for method '" + method + "' metric '" + metric + "'");
    return s / k;
}

}  // namespace raitr
