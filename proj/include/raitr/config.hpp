#pragma once

// Flat key = value run configuration. Every key is also a command-line flag
// of the same name; flags override the file, which overrides the defaults.

#include "raitr/model.hpp"
#include "raitr/scenario.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace raitr {

struct ConfigKey {
    std::string name;
    std::string default_value;  // empty: learner or library default
    std::string help;
};

using ConfigMap = std::map<std::string, std::string>;

/// Learner hyperparameters exposed per nuisance model as <model>_<name>.
inline const std::vector<std::string>& learner_hyperparameter_names() {
    static const std::vector<std::string> names{"rounds", "learning_rate", "depth",  "holdout",
                                                "patience", "l2",          "min_child_weight",
                                                "lambda", "lambda_ratio",  "n_lambda", "cv_folds"};
    return names;
}

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k{
            {"seed", "1", "master random seed"},
            {"folds", "5", "cross-fitting folds for the nuisance models"},
            {"clip", "0.05", "propensity clipping level"},
            {"propensity_learner", "boosted_stumps", "propensity learner: boosted_stumps, ridge or lasso"},
            {"outcome_learner", "boosted_stumps", "outcome learner: boosted_stumps, ridge or lasso"},
            {"n_lambda", "100", "length of each lambda path"},
            {"lambda_ratio", "0", "lambda_min / lambda_max; 0 picks the size-dependent default"},
            {"cv_folds", "5", "folds for lambda cross-validation"},
            {"selection", "cic_logn", "final lambda selection: cic_logn, cic_2, cic_logn_dr, cic_2_dr or cv"},
            {"rule", "raitr", "rule class: raitr or linear"},
            {"family", "linear", "simulation family: linear, highly_nonlinear, tree, polynomial or cosine"},
            {"n", "1000", "simulated training size"},
            {"p", "100", "simulated covariate count"},
            {"c", "0.1", "simulated main-effect scale"},
            {"reps", "20", "simulation or benchmark replicates"},
            {"test_n", "10000", "simulated test-set size"},
            {"oracle_nuisance", "false", "use the true nuisance functions in simulations"},
            {"mc_n", "200000", "Monte Carlo draws for the signal-strength table"},
            {"train_fraction", "0.6666666666666666", "benchmark training fraction"},
            {"mad_threshold", "0", "benchmark: drop covariates whose MAD is below this"},
        };
        for (const char* model : {"propensity", "outcome"})
            for (const auto& hp : learner_hyperparameter_names())
                k.push_back({std::string(model) + "_" + hp, "", std::string(model) + " learner " + hp});
        return k;
    }();
    return keys;
}

inline bool is_config_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return true;
    return false;
}

inline ConfigMap default_config() {
    ConfigMap m;
    for (const auto& k : config_keys()) m[k.name] = k.default_value;
    return m;
}

inline void set_config_value(ConfigMap& cfg, const std::string& key, const std::string& value) {
    if (!is_config_key(key)) throw Error(ErrorKind::usage, "unknown configuration key '" + key + "'");
    cfg[key] = value;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

/// Applies "key = value" lines; '#' starts a comment.
inline void apply_config_text(ConfigMap& cfg, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::usage, origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        try {
            set_config_value(cfg, key, trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            throw Error(ErrorKind::usage, origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline void apply_config_file(ConfigMap& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::usage, "cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    apply_config_text(cfg, buf.str(), path);
}

/// FNV-1a over the canonical "key=value\n" listing, as 16 hex digits.
inline std::string config_hash(const ConfigMap& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : cfg)
        for (char ch : k + "=" + v + "\n") {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

// ---- typed access -----------------------------------------------------------

namespace detail {

inline const std::string& config_value(const ConfigMap& cfg, const std::string& key) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) throw Error(ErrorKind::usage, "missing configuration key '" + key + "'");
    return it->second;
}

template <class T>
T parse_config_number(const ConfigMap& cfg, const std::string& key) {
    const std::string& s = config_value(cfg, key);
    T out{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw Error(ErrorKind::usage, "configuration key '" + key + "': cannot parse '" + s + "' as a number");
    return out;
}

}  // namespace detail

inline double config_double(const ConfigMap& cfg, const std::string& key) {
    const double v = detail::parse_config_number<double>(cfg, key);
    if (!std::isfinite(v)) throw Error(ErrorKind::usage, "configuration key '" + key + "' must be finite");
    return v;
}

inline long long config_int(const ConfigMap& cfg, const std::string& key) {
    return detail::parse_config_number<long long>(cfg, key);
}

inline std::uint64_t config_u64(const ConfigMap& cfg, const std::string& key) {
    return detail::parse_config_number<std::uint64_t>(cfg, key);
}

inline bool config_bool(const ConfigMap& cfg, const std::string& key) {
    const std::string& s = detail::config_value(cfg, key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw Error(ErrorKind::usage, "configuration key '" + key + "': expected true or false, got '" + s + "'");
}

namespace detail {

inline long long positive_int(const ConfigMap& cfg, const std::string& key, long long minimum = 1) {
    const long long v = config_int(cfg, key);
    if (v < minimum)
        throw Error(ErrorKind::usage, "configuration key '" + key + "' must be at least " + std::to_string(minimum));
    return v;
}

inline LearnerSpec learner_from(const ConfigMap& cfg, const std::string& model) {
    LearnerSpec spec;
    try {
        spec.kind = parse_learner_kind(config_value(cfg, model + "_learner"));
    } catch (const Error& e) {
        throw Error(ErrorKind::usage, e.what());
    }
    for (const auto& hp : learner_hyperparameter_names()) {
        const std::string key = model + "_" + hp;
        if (!config_value(cfg, key).empty()) spec.hyperparameters[hp] = config_double(cfg, key);
    }
    return spec;
}

}  // namespace detail

inline RaitrConfig raitr_config_from(const ConfigMap& cfg) {
    RaitrConfig out;
    out.seed = config_u64(cfg, "seed");
    out.nuisance.folds = static_cast<int>(detail::positive_int(cfg, "folds", 2));
    out.nuisance.clip = config_double(cfg, "clip");
    if (!(out.nuisance.clip >= 0.0 && out.nuisance.clip < 0.5))
        throw Error(ErrorKind::usage, "configuration key 'clip' must lie in [0, 0.5)");
    out.nuisance.propensity = detail::learner_from(cfg, "propensity");
    out.nuisance.outcome = detail::learner_from(cfg, "outcome");
    out.path.n_lambda = static_cast<int>(detail::positive_int(cfg, "n_lambda", 2));
    out.path.lambda_ratio = config_double(cfg, "lambda_ratio");
    if (!(out.path.lambda_ratio >= 0.0 && out.path.lambda_ratio < 1.0))
        throw Error(ErrorKind::usage, "configuration key 'lambda_ratio' must lie in [0, 1)");
    out.path.cv_folds = static_cast<int>(detail::positive_int(cfg, "cv_folds", 2));
    out.selection = parse_selection(detail::config_value(cfg, "selection"));
    out.rule = parse_rule_kind(detail::config_value(cfg, "rule"));
    return out;
}

inline ScenarioSpec scenario_from(const ConfigMap& cfg) {
    ScenarioSpec s;
    s.family = parse_family(detail::config_value(cfg, "family"));
    s.n = static_cast<Index>(detail::positive_int(cfg, "n"));
    s.p = static_cast<Index>(detail::positive_int(cfg, "p"));
    s.c = config_double(cfg, "c");
    s.seed = config_u64(cfg, "seed");
    try {
        s.validate();
    } catch (const Error& e) {
        throw Error(ErrorKind::usage, e.what());
    }
    return s;
}

inline SimulationConfig simulation_config_from(const ConfigMap& cfg) {
    SimulationConfig out;
    out.scenario = scenario_from(cfg);
    out.reps = static_cast<int>(detail::positive_int(cfg, "reps"));
    out.test_n = static_cast<Index>(detail::positive_int(cfg, "test_n"));
    out.fit = raitr_config_from(cfg);
    out.oracle_nuisance = config_bool(cfg, "oracle_nuisance");
    return out;
}

}  // namespace raitr
