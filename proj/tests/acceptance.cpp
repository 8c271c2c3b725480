// Acceptance checks: one PASS/FAIL line per criterion at its stated tolerance.
// Usage: raitr_acceptance [--only N]... ; exit status is nonzero if any check fails.

#include "raitr/concordance.hpp"
#include "raitr/io.hpp"
#include "raitr/lasso.hpp"
#include "raitr/model.hpp"
#include "raitr/scenario.hpp"
#include "raitr/spline.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef RAITR_CLI_PATH
#error "RAITR_CLI_PATH must name the command-line tool"
#endif

using namespace raitr;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string title;
    std::function<Outcome()> check;
};

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double correlation(const Vector& x, const Vector& y) {
    const Vector a = x.array() - x.mean(), b = y.array() - y.mean();
    return a.dot(b) / (a.norm() * b.norm());
}

// ---- 1: signal-strength table ----------------------------------------------------

Outcome signal_strength_table() {
    struct Row {
        Family family;
        double c;
        double reported;
    };
    const std::vector<Row> rows{{Family::linear, 3.0, 0.18},           {Family::linear, 0.1, 1.20},
                                {Family::polynomial, 2.0, 0.26},       {Family::polynomial, 0.1, 1.16},
                                {Family::tree, 5.0, 0.21},             {Family::tree, 1.0, 1.14},
                                {Family::highly_nonlinear, 8.0, 0.07}, {Family::highly_nonlinear, 1.0, 0.49}};
    const auto start = std::chrono::steady_clock::now();
    bool all = true;
    std::string detail;
    for (const auto& r : rows) {
        const double s = signal_strength(r.family, r.c, 200000, derive_seed(1, "signal-strength"));
        const bool ok = std::abs(s - r.reported) <= 0.02;
        all = all && ok;
        detail += fmt("%s c=%g: %.3f vs %.2f%s; ", to_string(r.family).c_str(), r.c, s, r.reported, ok ? "" : " (off)");
    }
    const double secs = seconds_since(start);
    detail += fmt("runtime %.1fs (limit 60s)", secs);
    return {all && secs < 60.0, detail};
}

// ---- 2: covariate-balance table ----------------------------------------------------

Outcome covariate_balance_table() {
    const double reported[5] = {0.86, 0.85, 0.38, 0.05, 0.05};
    const std::vector<Index> cols{0, 1, 2, 3, 4};
    const auto start = std::chrono::steady_clock::now();
    const int reps = 100;
    std::vector<double> smd(5, 0.0);
    double treated = 0;
    for (int r = 0; r < reps; ++r) {
        const ScenarioData sim =
            gen_dataset({Family::linear, 1000, 1000, 0.1, derive_seed(1, "balance", static_cast<std::uint64_t>(r))});
        const BalanceReport b = covariate_balance(sim.data, cols);
        for (int k = 0; k < 5; ++k) smd[static_cast<std::size_t>(k)] += b.smd[static_cast<std::size_t>(k)] / reps;
        treated += b.proportion_treated / reps;
    }
    bool all = std::abs(treated - 0.50) <= 0.02;
    std::string detail;
    for (int k = 0; k < 5; ++k) {
        const bool ok = std::abs(smd[static_cast<std::size_t>(k)] - reported[k]) <= 0.04;
        all = all && ok;
        detail += fmt("X%d %.3f vs %.2f%s; ", k + 1, smd[static_cast<std::size_t>(k)], reported[k], ok ? "" : " (off)");
    }
    const double secs = seconds_since(start);
    detail += fmt("treated %.3f vs 0.50; runtime %.1fs (limit 120s)", treated, secs);
    return {all && secs < 120.0, detail};
}

// ---- 3: fast pairwise sum vs brute force ----------------------------------------------

Outcome concordance_oracle() {
    Rng rng(derive_seed(1, "concordance-oracle"));
    double worst = 0;
    int failures = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const auto n = static_cast<Index>(2 + rng.below(299));
        Vector u(n), v(n), f(n);
        const bool ties = inst % 2 == 0;
        for (Index i = 0; i < n; ++i) {
            u[i] = rng.normal() * 3.0;
            v[i] = inst % 4 == 1 ? 1.0 : rng.uniform(0.5, 4.0);
            f[i] = ties ? std::floor(rng.uniform(0, 8)) : rng.normal();
        }
        long double brute = 0, scale = 0;
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) {
                if (i != j && f[i] > f[j]) brute += u[i] * v[j] - u[j] * v[i];
                scale += std::abs(u[i] * v[j]) + std::abs(u[j] * v[i]);
            }
        const double fast = fast_pairwise_sum(as_span(u), as_span(v), as_span(f));
        const double rel = static_cast<double>(std::abs(static_cast<long double>(fast) - brute) / std::max(scale, 1.0L));
        worst = std::max(worst, rel);
        failures += rel > 1e-10;
    }
    return {failures == 0,
            fmt("200 instances (n in 2..300, half with tied scores); worst error relative to sum of |terms| %.2e; "
                "%d above 1e-10",
                worst, failures)};
}

// ---- 4: lasso KKT suite -----------------------------------------------------------------

double kkt_violation(const WeightedDesign& d, const LassoFit& fit, double lambda_max) {
    const Vector w = d.weights / d.weights.sum();
    const Vector resid = d.response - fit.predict(d.design);
    double worst = 0;
    for (Index j = 0; j < d.cols(); ++j) {
        const auto col = d.design.col(j);
        const double mean = d.intercept ? col.dot(w) : 0.0;
        const double sd = std::sqrt((col.array() - mean).square().matrix().dot(w));
        const double grad = (((col.array() - mean) / sd) * w.array() * resid.array()).sum();
        const double beta = fit.coefficients[j] * sd;
        const double thr = fit.lambda * d.penalty_factors[j];
        const double viol = beta != 0.0 ? std::abs(grad - thr * (beta > 0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(grad) - thr);
        worst = std::max(worst, viol / lambda_max);
    }
    return worst;
}

Outcome lasso_kkt_suite() {
    Rng rng(derive_seed(1, "kkt-suite"));
    double worst = 0;
    int bad_fits = 0, fits = 0, nonzero_at_max = 0;
    for (int prob = 0; prob < 50; ++prob) {
        const auto n = static_cast<Index>(20 + rng.below(200));
        const auto q = static_cast<Index>(2 + rng.below(40));
        WeightedDesign d;
        d.design.resize(n, q);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < q; ++j) d.design(i, j) = rng.normal() * (1.0 + static_cast<double>(j % 4));
        Vector beta = Vector::Zero(q);
        for (Index j = 0; j < q; j += 3) beta[j] = rng.normal();
        d.response = d.design * beta;
        for (Index i = 0; i < n; ++i) d.response[i] += rng.normal() + 1.0;
        d.weights.resize(n);
        for (Index i = 0; i < n; ++i) d.weights[i] = rng.uniform(0.05, 5.0);
        d.penalty_factors.resize(q);
        for (Index j = 0; j < q; ++j) d.penalty_factors[j] = rng.uniform(0.25, 3.0);
        if (prob % 3 == 0) d.penalty_factors[0] = 0.0;
        const double lmax = compute_lambda_max(d);
        const LassoPath path = fit_lasso_path(d, make_lambda_path(lmax, 100, default_lambda_ratio(n, q)));
        for (const auto& fit : path.fits) {
            const double v = kkt_violation(d, fit, lmax);
            worst = std::max(worst, v);
            bad_fits += v > 1e-4;
            ++fits;
        }
        for (double scale : {1.0, 1.5, 10.0}) {
            const LassoFit at_max = fit_weighted_lasso(d, scale * lmax);
            for (Index j = 0; j < q; ++j)
                if (d.penalty_factors[j] > 0 && at_max.coefficients[j] != 0.0) ++nonzero_at_max;
        }
    }
    return {bad_fits == 0 && nonzero_at_max == 0,
            fmt("%d path fits on 50 problems; worst KKT residual %.2e x lambda_max (limit 1e-4); %d penalized "
                "coefficients nonzero at lambda >= lambda_max",
                fits, worst, nonzero_at_max)};
}

// ---- 5: spline correctness -----------------------------------------------------------------

Outcome spline_correctness() {
    Rng rng(derive_seed(1, "spline-checks"));
    const Index n = 200;
    Vector x(n), r(n), w(n);
    for (Index i = 0; i < n; ++i) {
        x[i] = rng.uniform(-2, 2);
        r[i] = -0.4 + 1.3 * x[i];
        w[i] = rng.uniform(0.1, 5.0);
    }
    Matrix a(n, 2);
    a.col(0).setOnes();
    a.col(1) = x;
    const Matrix atw = a.transpose() * w.asDiagonal();
    const Vector coef = (atw * a).ldlt().solve(atw * r);
    const FittedSpline line = fit_weighted_smoothing_spline(x, r, w);
    double line_err = 0;
    for (Index i = 0; i < n; ++i) line_err = std::max(line_err, std::abs(line(x[i]) - coef[0] - coef[1] * x[i]));

    const Vector grid = Vector::LinSpaced(n, -2, 2);
    Vector noisy(n);
    for (Index i = 0; i < n; ++i) noisy[i] = std::sin(grid[i]) + 0.1 * rng.normal();
    const FittedSpline sine = fit_weighted_smoothing_spline(grid, noisy, Vector::Ones(n));
    double sse = 0;
    for (Index i = 0; i < n; ++i) sse += std::pow(sine(grid[i]) - std::sin(grid[i]), 2);
    const double rmse = std::sqrt(sse / static_cast<double>(n));
    return {line_err <= 1e-6 && line.effective_df <= 2.05 && rmse < 0.05,
            fmt("linear data: max deviation from weighted line %.2e (limit 1e-6), df %.4f (limit 2.05); "
                "sine: RMSE %.4f (limit 0.05)",
                line_err, line.effective_df, rmse)};
}

// ---- 6, 7: simulation properties ------------------------------------------------------------

SimulationConfig desk_simulation(Family family) {
    SimulationConfig cfg;
    cfg.scenario = {family, 1000, 100, 0.1, 1};
    cfg.reps = 20;
    cfg.test_n = 10000;
    cfg.fit.nuisance.propensity.kind = LearnerKind::ridge;
    cfg.fit.nuisance.outcome.kind = LearnerKind::ridge;
    return cfg;
}

double fraction_positive(const std::vector<SimulationRecord>& rows, const std::string& method, const std::string& metric) {
    int hit = 0, total = 0;
    for (const auto& r : rows)
        if (r.method == method && r.metric == metric) {
            hit += r.value > 0;
            ++total;
        }
    return static_cast<double>(hit) / total;
}

Outcome reluctance_property() {
    const auto start = std::chrono::steady_clock::now();
    const auto rows = run_simulation(desk_simulation(Family::linear));
    const double secs = seconds_since(start);
    const double raitr = mean_metric(rows, "raitr_cic", "agreement");
    const double linear = mean_metric(rows, "linear_cic", "agreement");
    const double with_nonlinear = fraction_positive(rows, "raitr_cic", "nonlinear_terms");
    return {std::abs(raitr - linear) <= 0.05 && with_nonlinear <= 0.3 && secs < 1800.0,
            fmt("agreement RAITR-CIC %.3f vs linear-CIC %.3f (|diff| %.3f, limit 0.05); runs with a nonlinear term "
                "%.2f (limit 0.30); runtime %.0fs (limit 1800s)",
                raitr, linear, std::abs(raitr - linear), with_nonlinear, secs)};
}

Outcome flexibility_property() {
    const auto start = std::chrono::steady_clock::now();
    const auto rows = run_simulation(desk_simulation(Family::polynomial));
    const double secs = seconds_since(start);
    const double raitr = mean_metric(rows, "raitr_cic", "agreement");
    const double linear = mean_metric(rows, "linear_cic", "agreement");
    const double always = mean_metric(rows, "always_treat", "agreement");
    return {raitr - linear >= 0.05 && raitr - always >= 0.05,
            fmt("agreement RAITR-CIC %.3f, linear-CIC %.3f, always-treat %.3f (margin %.3f, required 0.05); "
                "runtime %.0fs",
                raitr, linear, always, raitr - std::max(linear, always), secs)};
}

// ---- 8: exact inequalities ---------------------------------------------------------------------

Outcome exact_inequalities() {
    Rng rng(derive_seed(1, "inequality-suite"));
    int sets = 0, violations = 0, optimal_mismatch = 0;
    for (Family f : {Family::linear, Family::highly_nonlinear, Family::tree, Family::polynomial, Family::cosine})
        for (double c : {0.1, 1.0, 8.0})
            for (int s = 0; s < 4; ++s) {
                const Matrix x = gen_covariates(5000, 8, rng.below(1u << 30));
                const Vector m = true_main_effect(x, c), delta = true_delta(f, x);
                const Vector best = delta.unaryExpr([](double v) { return v >= 0 ? 1.0 : -1.0; });
                const EvaluationReport opt = evaluate_rule(best, m, delta);
                optimal_mismatch += opt.agreement != 1.0;
                std::vector<Vector> rules{Vector::Ones(5000), -Vector::Ones(5000), -best};
                for (int k = 0; k < 5; ++k) {
                    Vector flip = best;
                    for (Index i = 0; i < 5000; ++i)
                        if (rng.bernoulli(0.1 * (k + 1))) flip[i] = -flip[i];
                    rules.push_back(flip);
                }
                for (const auto& rule : rules) {
                    const EvaluationReport r = evaluate_rule(rule, m, delta);
                    violations += r.value > r.optimal_value;
                    ++sets;
                }
            }
    // Fitted rules from a small simulation in every family.
    for (Family f : {Family::linear, Family::highly_nonlinear, Family::tree, Family::polynomial, Family::cosine}) {
        SimulationConfig cfg;
        cfg.scenario = {f, 300, 10, 0.5, 3};
        cfg.reps = 2;
        cfg.test_n = 2000;
        cfg.fit.nuisance.propensity.kind = LearnerKind::ridge;
        cfg.fit.nuisance.outcome.kind = LearnerKind::ridge;
        const auto rows = run_simulation(cfg);
        for (std::size_t k = 0; k + 2 < rows.size(); ++k)
            if (rows[k].metric == "value") {
                violations += rows[k].value > rows[k + 1].value;  // next row is optimal_value
                ++sets;
            }
    }
    return {violations == 0 && optimal_mismatch == 0,
            fmt("%d evaluated (rule, test set) pairs: %d with value > optimal value; %d optimal rules with "
                "agreement != 1",
                sets, violations, optimal_mismatch)};
}

// ---- 9: cosine-curve recovery ---------------------------------------------------------------

Outcome cosine_recovery() {
    const Vector grid = Vector::LinSpaced(201, -2, 2);
    const Vector truth = grid.unaryExpr([](double v) { return 0.5 * std::cos(2 * v) * 2 * v; });
    int pass_default = 0, pass_two_dr = 0;
    std::string corrs;
    for (int r = 0; r < 20; ++r) {
        ScenarioSpec spec{Family::cosine, 1000, 10, 1.0, derive_seed(1, "replicate", static_cast<std::uint64_t>(r))};
        const ScenarioData sim = gen_dataset(spec);
        RaitrConfig cfg;
        cfg.seed = derive_seed(spec.seed, "fit");
        const auto nu = crossfit_nuisance(sim.data, cfg.nuisance, derive_seed(cfg.seed, "nuisance"));
        const PreparedFit prep = prepare_fit(sim.data, cfg, nu);
        const double c_default =
            correlation(finalize_fit(prep, sim.data, Selection::cic_logn, cfg).covariate_contribution(0, grid), truth);
        const double c_two_dr =
            correlation(finalize_fit(prep, sim.data, Selection::cic_2_dr, cfg).covariate_contribution(0, grid), truth);
        pass_default += c_default > 0.9;
        pass_two_dr += c_two_dr > 0.9;
        corrs += fmt("%.2f ", c_default);
    }
    std::printf("   info: kappa = 2 doubly robust selection reaches correlation > 0.9 in %d of 20 seeds\n", pass_two_dr);
    return {pass_default >= 15,
            fmt("default selection (kappa = log n): correlation > 0.9 in %d of 20 seeds (required 15); correlations: %s",
                pass_default, corrs.c_str())};
}

// ---- 10: CLI determinism ------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

Outcome cli_determinism() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "raitr_acceptance_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);

    const ScenarioData sim = gen_dataset({Family::polynomial, 300, 10, 0.1, 5});
    {
        std::ofstream train(dir / "train.csv"), paired(dir / "paired.csv");
        train << "y,a";
        paired << "y_pos,y_neg";
        for (Index j = 0; j < 10; ++j) {
            train << ",x" << j + 1;
            paired << ",x" << j + 1;
        }
        train << "\n";
        paired << "\n";
        const Vector m = sim.main_effect(sim.data.X), delta = sim.delta(sim.data.X);
        for (Index i = 0; i < 300; ++i) {
            train << format_number(sim.data.y[i]) << "," << (sim.data.a[i] > 0 ? 1 : 0);
            paired << format_number(m[i] + 0.5 * delta[i]) << "," << format_number(m[i] - 0.5 * delta[i]);
            for (Index j = 0; j < 10; ++j) {
                train << "," << format_number(sim.data.X(i, j));
                paired << "," << format_number(sim.data.X(i, j));
            }
            train << "\n";
            paired << "\n";
        }
    }
    const std::string cli = RAITR_CLI_PATH;
    const std::string common = " --seed 11 --propensity_learner ridge --outcome_learner ridge";
    const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
        {"fit --data train.csv --model model_R.json --trace trace_R.csv" + common, {"model_R.json", "trace_R.csv"}},
        {"predict --model model_R.json --data train.csv --out predict_R.csv", {"predict_R.csv"}},
        {"evaluate --model model_R.json --data train.csv --family polynomial --c 0.1 --out oracle_R.csv",
         {"oracle_R.csv"}},
        {"evaluate --mode paired --model model_R.json --data paired.csv --out paired_R.csv", {"paired_R.csv"}},
        {"simulate --family tree --n 200 --p 10 --reps 2 --test_n 500 --mc_n 10000 --out sim_R.csv "
         "--balance-out balance_R.csv --signal-out signal_R.csv" +
             common,
         {"sim_R.csv", "balance_R.csv", "signal_R.csv"}},
        {"benchmark --data paired.csv --reps 3 --out bench_R.csv --summary-out summary_R.csv" + common,
         {"bench_R.csv", "summary_R.csv"}},
    };
    int compared = 0, differing = 0, failed_runs = 0;
    std::string detail;
    for (const auto& [args, outputs] : commands) {
        for (const char* round : {"1", "2"}) {
            std::string line = args;
            for (std::size_t pos; (pos = line.find("_R.")) != std::string::npos;) line.replace(pos, 2, std::string("_") + round);
            const std::string cmd = "cd '" + dir.string() + "' && '" + cli + "' " + line + " > /dev/null 2>&1";
            if (std::system(cmd.c_str()) != 0) {
                ++failed_runs;
                detail += "failed: " + line + "; ";
            }
        }
        for (const auto& out : outputs) {
            std::string a = out, b = out;
            a.replace(a.find("_R."), 2, "_1");
            b.replace(b.find("_R."), 2, "_2");
            const std::string ta = slurp(dir / a), tb = slurp(dir / b);
            ++compared;
            if (ta.empty() || ta != tb) {
                ++differing;
                detail += "differs: " + out + "; ";
            }
        }
    }
    fs::remove_all(dir);
    return {failed_runs == 0 && differing == 0,
            fmt("%d output files from fit, predict, evaluate (oracle, paired), simulate, benchmark compared across "
                "two runs: %d differ, %d runs failed. %s",
                compared, differing, failed_runs, detail.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "signal-strength table within 0.02 of the eight reported values", signal_strength_table},
        {2, "covariate-balance table within 0.04, proportion treated within 0.02", covariate_balance_table},
        {3, "fast pairwise sum equals brute force to 1e-10 relative", concordance_oracle},
        {4, "lasso path fits satisfy KKT; lambda >= lambda_max gives zero coefficients", lasso_kkt_suite},
        {5, "spline linear reproduction and sine recovery", spline_correctness},
        {6, "reluctance on a linear effect", reluctance_property},
        {7, "flexibility on a polynomial effect", flexibility_property},
        {8, "optimal value dominates every rule's value", exact_inequalities},
        {9, "cosine-curve recovery for covariate 1", cosine_recovery},
        {10, "CLI outputs are byte-identical across repeated runs", cli_determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--only" && i + 1 < argc)
            only.insert(std::atoi(argv[++i]));
        else {
            std::fprintf(stderr, "usage: %s [--only N]...\n", argv[0]);
            return 2;
        }
    }
    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("AC%-2d %s  %s :: %s\n", c.id, o.pass ? "PASS" : "FAIL", c.title.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
