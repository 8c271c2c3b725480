// Command-line front end: fit, predict, evaluate, simulate, benchmark.
// Exit codes: 0 ok, 2 usage, 3 data, 4 numeric. Errors go to stderr as JSON.

#include "raitr/config.hpp"
#include "raitr/io.hpp"
#include "raitr/model.hpp"
#include "raitr/scenario.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <map>
#include <string>

using namespace raitr;

namespace {

/// Per-subcommand flag storage mirroring every configuration key.
struct ConfigFlags {
    std::string config_file;
    std::map<std::string, std::string> values;
    CLI::App* app = nullptr;

    void attach(CLI::App* sub) {
        app = sub;
        sub->add_option("--config", config_file, "flat key = value configuration file");
        for (const auto& key : config_keys()) {
            values[key.name];
            sub->add_option("--" + key.name, values[key.name], key.help);
        }
    }

    /// Defaults, then the config file, then explicit flags.
    ConfigMap effective() const {
        ConfigMap cfg = default_config();
        if (!config_file.empty()) apply_config_file(cfg, config_file);
        for (const auto& [key, value] : values)
            if (app->count("--" + key) > 0) set_config_value(cfg, key, value);
        return cfg;
    }
};

void emit(const std::string& path, const std::string& text) {
    if (path == "-")
        std::cout << text;
    else
        CsvWriter::write_text_file(path, text);
}

void notice(const std::string& message) { std::cerr << "notice: " << message << "\n"; }

LoadedDataset load_training_data(const std::string& path) {
    LoadedDataset loaded = read_dataset(path);
    if (loaded.remapped_zero_one) notice(path + ": treatment labels coded 0/1; remapped 0 -> -1");
    return loaded;
}

// ---- fit ------------------------------------------------------------------------

struct FitArgs {
    ConfigFlags flags;
    std::string data, model, trace;
};

void run_fit(const FitArgs& args) {
    const ConfigMap cfg_map = args.flags.effective();
    const RaitrConfig cfg = raitr_config_from(cfg_map);
    const LoadedDataset loaded = load_training_data(args.data);
    RaitrModel model = fit_raitr(loaded.data, cfg);
    model.config_echo = cfg_map;
    save_model(model, args.model);

    const std::string hash = config_hash(cfg_map);
    CsvWriter trace(cfg.seed, hash, {"index", "lambda", "df", "concordance", "kappa", "cic", "cv_error", "selected"});
    for (std::size_t k = 0; k < model.selection_trace.size(); ++k) {
        const auto& r = model.selection_trace[k];
        trace.add_row({std::to_string(k), format_number(r.lambda), format_number(r.df), format_number(r.concordance),
                       format_number(r.kappa), format_number(r.cic), format_number(r.cv_error),
                       k == model.selected_index ? "1" : "0"});
    }
    trace.save(args.trace.empty() ? args.model + ".trace.csv" : args.trace);

    nlohmann::json summary{{"n", loaded.data.n()},
                           {"p", loaded.data.p()},
                           {"rule", to_string(model.rule)},
                           {"selection", to_string(model.selection)},
                           {"lambda2", model.lambda2},
                           {"linear_terms", model.linear_term_count()},
                           {"nonlinear_terms", model.nonlinear_term_count()},
                           {"labels_remapped", loaded.remapped_zero_one},
                           {"config_hash", hash}};
    std::cout << summary.dump() << "\n";
}

// ---- predict --------------------------------------------------------------------

struct PredictArgs {
    std::string model, data, out = "-";
};

std::uint64_t model_seed(const RaitrModel& m) {
    const auto it = m.config_echo.find("seed");
    return it == m.config_echo.end() ? 0 : config_u64(m.config_echo, "seed");
}

void run_predict(const PredictArgs& args) {
    const RaitrModel model = load_model(args.model);
    const Matrix x = read_covariates(read_csv(args.data), model.column_names, args.data);
    const Vector cate = predict_cate(model, x), rule = rule_from_cate(cate);
    CsvWriter out(model_seed(model), config_hash(model.config_echo), {"row", "cate", "rule"});
    for (Index i = 0; i < x.rows(); ++i)
        out.add_row({std::to_string(i + 1), format_number(cate[i]), rule[i] > 0 ? "1" : "-1"});
    emit(args.out, out.str());
}

// ---- evaluate ---------------------------------------------------------------------

struct EvaluateArgs {
    ConfigFlags flags;
    std::string model, data, out = "-", mode = "oracle";
};

void run_evaluate(const EvaluateArgs& args) {
    const ConfigMap cfg_map = args.flags.effective();
    const RaitrModel model = load_model(args.model);
    const CsvTable table = read_csv(args.data);
    EvaluationReport report;
    Index used = 0, excluded = 0;
    if (args.mode == "oracle") {
        const ScenarioSpec spec = scenario_from(cfg_map);
        const Matrix x = read_covariates(table, model.column_names, args.data);
        if (x.cols() < 8) throw InvalidInput("evaluate: oracle mode needs at least 8 covariates");
        report = evaluate_rule(predict_rule(model, x), true_main_effect(x, spec.c), true_delta(spec.family, x));
        used = x.rows();
    } else {
        const PairedData complete = complete_units(read_paired(table, args.data), excluded);
        if (complete.X.rows() == 0) throw InvalidInput(args.data + ": no units with both outcomes");
        if (complete.column_names != model.column_names)
            throw InvalidInput(args.data + ": covariate columns do not match the model's");
        const Vector labels = predict_rule(model, complete.X);
        double value = 0, best = 0, always = 0, agree = 0;
        for (Index i = 0; i < labels.size(); ++i) {
            const double yp = complete.y_pos[i], yn = complete.y_neg[i];
            value += labels[i] > 0 ? yp : yn;
            best += std::max(yp, yn);
            always += yp;
            agree += labels[i] == (yp >= yn ? 1.0 : -1.0);
        }
        const double n = static_cast<double>(labels.size());
        report = {value / n, agree / n, best / n, always / n};
        used = labels.size();
        if (excluded > 0) notice(args.data + ": excluded " + std::to_string(excluded) + " units with a missing outcome");
    }
    CsvWriter out(config_u64(cfg_map, "seed"), config_hash(cfg_map), {"metric", "value"});
    out.add_row({"value", format_number(report.value)});
    out.add_row({"agreement", format_number(report.agreement)});
    out.add_row({"optimal_value", format_number(report.optimal_value)});
    out.add_row({"always_treat_value", format_number(report.always_treat_value)});
    out.add_row({"units_used", std::to_string(used)});
    out.add_row({"units_excluded", std::to_string(excluded)});
    emit(args.out, out.str());
}

// ---- simulate ---------------------------------------------------------------------

struct SimulateArgs {
    ConfigFlags flags;
    std::string out = "-", balance_out, signal_out;
};

std::string balance_table(const SimulationConfig& sim, std::uint64_t seed, const std::string& hash) {
    const std::vector<Index> cols{0, 1, 2, 3, 4};
    std::vector<std::vector<double>> smd(cols.size());
    std::vector<double> treated;
    for (int r = 0; r < sim.reps; ++r) {
        ScenarioSpec spec = sim.scenario;
        spec.seed = derive_seed(sim.scenario.seed, "replicate", static_cast<std::uint64_t>(r));
        const BalanceReport b = covariate_balance(gen_dataset(spec).data, cols);
        for (std::size_t k = 0; k < cols.size(); ++k) smd[k].push_back(b.smd[k]);
        treated.push_back(b.proportion_treated);
    }
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    CsvWriter out(seed, hash, {"quantity", "mean", "sd"});
    for (std::size_t k = 0; k < cols.size(); ++k)
        out.add_row({"smd_x" + std::to_string(cols[k] + 1), format_number(mean(smd[k])), format_number(sample_sd(smd[k]))});
    out.add_row({"proportion_treated", format_number(mean(treated)), format_number(sample_sd(treated))});
    return out.str();
}

std::string signal_table(Index mc_n, std::uint64_t seed, const std::string& hash) {
    CsvWriter out(seed, hash, {"family", "effect", "c", "signal_strength"});
    for (Family f : {Family::linear, Family::polynomial, Family::tree, Family::highly_nonlinear}) {
        const auto [large_c, small_c] = family_effect_scales(f);
        for (const auto& [label, c] : {std::pair{"large", large_c}, std::pair{"small", small_c}})
            out.add_row({to_string(f), label, format_number(c),
                         format_number(signal_strength(f, c, mc_n, derive_seed(seed, "signal-strength")))});
    }
    return out.str();
}

void run_simulate(const SimulateArgs& args) {
    const ConfigMap cfg_map = args.flags.effective();
    const SimulationConfig sim = simulation_config_from(cfg_map);
    const std::uint64_t seed = sim.scenario.seed;
    const std::string hash = config_hash(cfg_map);
    if (!args.balance_out.empty()) emit(args.balance_out, balance_table(sim, seed, hash));
    if (!args.signal_out.empty()) {
        const auto mc_n = static_cast<Index>(config_int(cfg_map, "mc_n"));
        if (mc_n < 10000) throw Error(ErrorKind::usage, "configuration key 'mc_n' must be at least 10000");
        emit(args.signal_out, signal_table(mc_n, seed, hash));
    }
    if (args.out.empty()) return;
    CsvWriter out(seed, hash, {"replicate", "method", "metric", "value"});
    for (const auto& r : run_simulation(sim))
        out.add_row({std::to_string(r.replicate), r.method, r.metric, format_number(r.value)});
    emit(args.out, out.str());
}

// ---- benchmark ----------------------------------------------------------------------

struct BenchmarkArgs {
    ConfigFlags flags;
    std::string data, out = "-", summary_out;
};

void run_benchmark(const BenchmarkArgs& args) {
    const ConfigMap cfg_map = args.flags.effective();
    const RaitrConfig cfg = raitr_config_from(cfg_map);
    PairedData paired = read_paired(args.data);
    const double mad_threshold = config_double(cfg_map, "mad_threshold");
    if (mad_threshold > 0) {
        const std::vector<Index> keep = mad_filter(paired.X, mad_threshold);
        if (keep.empty()) throw InvalidInput(args.data + ": no covariate passes the MAD filter");
        std::vector<std::string> names;
        for (Index j : keep) names.push_back(paired.column_names[static_cast<std::size_t>(j)]);
        Matrix kept(paired.X.rows(), static_cast<Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k) kept.col(static_cast<Index>(k)) = paired.X.col(keep[k]);
        notice(args.data + ": MAD filter kept " + std::to_string(keep.size()) + " of " +
               std::to_string(paired.X.cols()) + " covariates");
        paired.X = std::move(kept);
        paired.column_names = std::move(names);
    }
    auto rule_method = [&cfg](RuleKind kind) {
        return [&cfg, kind](const Dataset& train, const Matrix& x_test, std::span<const Index>) {
            RaitrConfig c = cfg;
            c.rule = kind;
            return predict_rule(fit_raitr(train, c), x_test);
        };
    };
    const std::vector<NamedMethod> methods{
        {"raitr", rule_method(RuleKind::raitr)},
        {"linear", rule_method(RuleKind::linear)},
        {"always_treat", [](const Dataset&, const Matrix& x, std::span<const Index>) { return Vector(Vector::Ones(x.rows())); }},
    };
    const auto reps = static_cast<int>(config_int(cfg_map, "reps"));
    const BenchmarkResult res =
        paired_outcome_benchmark(paired, reps, config_double(cfg_map, "train_fraction"), cfg.seed, methods);
    if (res.excluded_units > 0)
        notice(args.data + ": excluded " + std::to_string(res.excluded_units) + " units with a missing outcome");

    const std::string hash = config_hash(cfg_map);
    CsvWriter out(cfg.seed, hash, {"replicate", "method", "agreement", "value"});
    for (const auto& r : res.records)
        out.add_row({std::to_string(r.replicate), r.method, format_number(r.agreement), format_number(r.value)});
    emit(args.out, out.str());
    if (!args.summary_out.empty()) {
        CsvWriter summary(cfg.seed, hash, {"method", "mean_agreement", "sd_agreement", "mean_value", "sd_value"});
        for (const auto& s : res.summaries)
            summary.add_row({s.method, format_number(s.mean_agreement), format_number(s.sd_agreement),
                             format_number(s.mean_value), format_number(s.sd_value)});
        emit(args.summary_out, summary.str());
    }
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage: return 2;
        case ErrorKind::data: return 3;
        case ErrorKind::numeric: return 4;
    }
    return 4;
}

std::string kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage: return "usage";
        case ErrorKind::data: return "data";
        case ErrorKind::numeric: return "numeric";
    }
    return "numeric";
}

int report_error(ErrorKind kind, const std::string& message) {
    const int code = exit_code(kind);
    std::cerr << nlohmann::json{{"error", {{"kind", kind_name(kind)}, {"message", message}, {"exit_code", code}}}}.dump()
              << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reluctant additive individualized treatment rules"};
    app.require_subcommand(1);

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "fit a treatment rule; writes the model file and selection trace");
    fit.flags.attach(fit_cmd);
    fit_cmd->add_option("--data", fit.data, "training CSV with columns y, a and covariates")->required();
    fit_cmd->add_option("--model", fit.model, "output model file (JSON)")->required();
    fit_cmd->add_option("--trace", fit.trace, "selection-trace CSV (default: <model>.trace.csv)");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "per-row CATE and rule from a saved model");
    predict_cmd->add_option("--model", predict.model, "model file")->required();
    predict_cmd->add_option("--data", predict.data, "CSV with the model's covariate columns")->required();
    predict_cmd->add_option("--out", predict.out, "output CSV ('-' for stdout)");

    EvaluateArgs evaluate;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "value and agreement of a saved model's rule");
    evaluate.flags.attach(evaluate_cmd);
    evaluate_cmd->add_option("--model", evaluate.model, "model file")->required();
    evaluate_cmd->add_option("--data", evaluate.data, "test CSV")->required();
    evaluate_cmd->add_option("--out", evaluate.out, "output CSV ('-' for stdout)");
    evaluate_cmd->add_option("--mode", evaluate.mode, "oracle (simulated covariates; uses family and c) or paired")
        ->check(CLI::IsMember({"oracle", "paired"}));

    SimulateArgs simulate;
    auto* simulate_cmd = app.add_subcommand("simulate", "simulation study over one scenario");
    simulate.flags.attach(simulate_cmd);
    simulate_cmd->add_option("--out", simulate.out, "tidy results CSV ('-' for stdout, '' to skip)");
    simulate_cmd->add_option("--balance-out", simulate.balance_out, "covariate-balance table CSV");
    simulate_cmd->add_option("--signal-out", simulate.signal_out, "signal-strength table CSV");

    BenchmarkArgs benchmark;
    auto* benchmark_cmd = app.add_subcommand("benchmark", "repeated train/test benchmark on paired-outcome data");
    benchmark.flags.attach(benchmark_cmd);
    benchmark_cmd->add_option("--data", benchmark.data, "CSV with columns y_pos, y_neg and covariates")->required();
    benchmark_cmd->add_option("--out", benchmark.out, "per-replicate CSV ('-' for stdout)");
    benchmark_cmd->add_option("--summary-out", benchmark.summary_out, "per-method summary CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(ErrorKind::usage, e.what());
    }

    try {
        if (fit_cmd->parsed()) run_fit(fit);
        if (predict_cmd->parsed()) run_predict(predict);
        if (evaluate_cmd->parsed()) run_evaluate(evaluate);
        if (simulate_cmd->parsed()) run_simulate(simulate);
        if (benchmark_cmd->parsed()) run_benchmark(benchmark);
    } catch (const Error& e) {
        return report_error(e.kind(), e.what());
    } catch (const std::bad_alloc&) {
        return report_error(ErrorKind::numeric, "out of memory");
    } catch (const std::exception& e) {
        return report_error(ErrorKind::numeric, std::string("internal error: ") + e.what());
    }
    return 0;
}
