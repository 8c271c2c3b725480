#pragma once

// Pluggable nuisance learners: second-order boosted regression trees, ridge
// (linear or logistic) and lasso (linear or logistic).

#include "raitr/common.hpp"
#include "raitr/folds.hpp"
#include "raitr/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace raitr {

enum class LearnerKind { boosted_trees, ridge, lasso };
enum class Task { regression, binary };

inline std::string to_string(LearnerKind k) {
    switch (k) {
        case LearnerKind::boosted_trees: return "boosted_stumps";
        case LearnerKind::ridge: return "ridge";
        case LearnerKind::lasso: return "lasso";
    }
    return "?";
}

inline LearnerKind parse_learner_kind(const std::string& s) {
    if (s == "boosted_trees" || s == "boosted_stumps" || s == "boost") return LearnerKind::boosted_trees;
    if (s == "ridge") return LearnerKind::ridge;
    if (s == "lasso") return LearnerKind::lasso;
    throw Error(ErrorKind::usage, "unknown learner kind '" + s + "'");
}

struct LearnerSpec {
    LearnerKind kind = LearnerKind::boosted_trees;
    std::map<std::string, double> hyperparameters;

    double get(const std::string& key, double fallback) const {
        const auto it = hyperparameters.find(key);
        return it == hyperparameters.end() ? fallback : it->second;
    }
    bool has(const std::string& key) const { return hyperparameters.count(key) > 0; }
};

struct LinearPredictor {
    double intercept = 0.0;
    Vector coefficients;
    bool logistic = false;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    template <typename Row>
    double predict(const Row& x) const {
        int at = 0;
        while (nodes[at].feature >= 0) at = x[nodes[at].feature] <= nodes[at].threshold ? nodes[at].left : nodes[at].right;
        return nodes[at].value;
    }
};

struct TreeEnsemble {
    double base_score = 0.0;
    std::vector<RegressionTree> trees;
    bool logistic = false;
};

class PredictiveModel {
public:
    PredictiveModel() = default;
    PredictiveModel(LinearPredictor m) : model_(std::move(m)) {}
    PredictiveModel(TreeEnsemble m) : model_(std::move(m)) {}

    /// Predictions on the response scale (probabilities for binary tasks).
    Vector predict(const Matrix& x) const {
        return std::visit([&](const auto& m) { return predict_impl(m, x); }, model_);
    }

    const auto& variant() const { return model_; }

private:
    std::variant<LinearPredictor, TreeEnsemble> model_;

    static Vector predict_impl(const LinearPredictor& m, const Matrix& x) {
        Vector eta = (x * m.coefficients).array() + m.intercept;
        if (m.logistic) eta = eta.unaryExpr([](double t) { return sigmoid(t); });
        return eta;
    }

    static Vector predict_impl(const TreeEnsemble& m, const Matrix& x) {
        Vector out(x.rows());
        for (Index i = 0; i < x.rows(); ++i) {
            double f = m.base_score;
            const auto row = x.row(i);
            for (const auto& t : m.trees) f += t.predict(row);
            out[i] = m.logistic ? sigmoid(f) : f;
        }
        return out;
    }
};

namespace detail {

inline double clip_probability(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

inline PredictiveModel constant_binary_model(double rate, Index p) {
    return LinearPredictor{logit(clip_probability(rate, 1e-6)), Vector::Zero(p), true};
}

// ---- boosted trees -------------------------------------------------------

struct BoostParams {
    int rounds = 200;
    double learning_rate = 0.1;
    int depth = 2;
    double holdout = 0.2;
    int patience = 20;
    double l2 = 1.0;
    double min_child_weight = 1.0;
};

class TreeBuilder {
public:
    TreeBuilder(const Matrix& x, const std::vector<Index>& rows, const BoostParams& params)
        : x_(x), rows_(rows), params_(params) {
        const Index p = x.cols();
        sorted_.resize(static_cast<std::size_t>(p));
        for (Index f = 0; f < p; ++f) {
            auto& order = sorted_[f];
            order.resize(rows.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return x(rows[a], f) < x(rows[b], f); });
        }
        node_of_.resize(rows.size());
    }

    RegressionTree build(const std::vector<double>& grad, const std::vector<double>& hess) {
        RegressionTree tree;
        std::fill(node_of_.begin(), node_of_.end(), 0);
        tree.nodes.push_back({});
        grow(tree, 0, 0, grad, hess);
        return tree;
    }

private:
    const Matrix& x_;
    const std::vector<Index>& rows_;
    BoostParams params_;
    std::vector<std::vector<int>> sorted_;
    std::vector<int> node_of_;

    void grow(RegressionTree& tree, int node, int depth, const std::vector<double>& grad,
              const std::vector<double>& hess) {
        double g_total = 0.0, h_total = 0.0;
        for (std::size_t r = 0; r < rows_.size(); ++r)
            if (node_of_[r] == node) {
                g_total += grad[r];
                h_total += hess[r];
            }
        tree.nodes[node].value = -g_total / (h_total + params_.l2) * params_.learning_rate;
        if (depth >= params_.depth) return;

        const double parent = g_total * g_total / (h_total + params_.l2);
        double best_gain = 0.0;
        int best_feature = -1;
        double best_threshold = 0.0;
        for (std::size_t f = 0; f < sorted_.size(); ++f) {
            double gl = 0.0, hl = 0.0;
            bool any = false;
            double prev = 0.0;
            for (int r : sorted_[f]) {
                if (node_of_[r] != node) continue;
                const double v = x_(rows_[r], static_cast<Index>(f));
                if (any && v > prev && hl >= params_.min_child_weight &&
                    h_total - hl >= params_.min_child_weight) {
                    const double gr = g_total - gl, hr = h_total - hl;
                    const double gain = gl * gl / (hl + params_.l2) + gr * gr / (hr + params_.l2) - parent;
                    if (gain > best_gain + 1e-12) {
                        best_gain = gain;
                        best_feature = static_cast<int>(f);
                        double thr = 0.5 * (prev + v);
                        if (!(thr < v)) thr = prev;
                        best_threshold = thr;
                    }
                }
                gl += grad[r];
                hl += hess[r];
                prev = v;
                any = true;
            }
        }
        if (best_feature < 0) return;

        const int left = static_cast<int>(tree.nodes.size());
        const int right = left + 1;
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        tree.nodes[node].feature = best_feature;
        tree.nodes[node].threshold = best_threshold;
        tree.nodes[node].left = left;
        tree.nodes[node].right = right;
        for (std::size_t r = 0; r < rows_.size(); ++r)
            if (node_of_[r] == node) node_of_[r] = x_(rows_[r], best_feature) <= best_threshold ? left : right;
        grow(tree, left, depth + 1, grad, hess);
        grow(tree, right, depth + 1, grad, hess);
    }
};

inline PredictiveModel fit_boosted(const Matrix& x, const Vector& y, Task task, const BoostParams& params,
                                   std::uint64_t seed) {
    const Index n = x.rows();
    const bool logistic = task == Task::binary;
    std::vector<Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    Rng rng(seed);
    rng.shuffle(all.begin(), all.end());
    const auto n_hold = static_cast<std::size_t>(std::floor(params.holdout * static_cast<double>(n)));
    std::vector<Index> hold, train;
    if (n_hold >= 2 && static_cast<Index>(n_hold) < n - 2) {
        hold.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_hold));
        train.assign(all.begin() + static_cast<std::ptrdiff_t>(n_hold), all.end());
    } else {
        train = all;
    }
    std::sort(hold.begin(), hold.end());
    std::sort(train.begin(), train.end());

    double mean = 0.0;
    for (Index i : train) mean += y[i];
    mean /= static_cast<double>(train.size());
    TreeEnsemble model;
    model.logistic = logistic;
    model.base_score = logistic ? logit(clip_probability(mean, 1e-6)) : mean;

    std::vector<double> f_train(train.size(), model.base_score), f_hold(hold.size(), model.base_score);
    std::vector<double> grad(train.size()), hess(train.size());
    auto loss = [&](double f, double target) {
        if (!logistic) return 0.5 * (f - target) * (f - target);
        // log(1 + e^f) - target * f, stable
        return (f > 0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f))) - target * f;
    };

    TreeBuilder builder(x, train, params);
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t best_rounds = 0;
    int since_best = 0;
    for (int round = 0; round < params.rounds; ++round) {
        for (std::size_t r = 0; r < train.size(); ++r) {
            const double target = y[train[r]];
            if (logistic) {
                const double prob = sigmoid(f_train[r]);
                grad[r] = prob - target;
                hess[r] = std::max(prob * (1.0 - prob), 1e-12);
            } else {
                grad[r] = f_train[r] - target;
                hess[r] = 1.0;
            }
        }
        RegressionTree tree = builder.build(grad, hess);
        for (std::size_t r = 0; r < train.size(); ++r) f_train[r] += tree.predict(x.row(train[r]));
        for (std::size_t r = 0; r < hold.size(); ++r) f_hold[r] += tree.predict(x.row(hold[r]));
        model.trees.push_back(std::move(tree));
        if (hold.empty()) {
            best_rounds = model.trees.size();
            continue;
        }
        double hold_loss = 0.0;
        for (std::size_t r = 0; r < hold.size(); ++r) hold_loss += loss(f_hold[r], y[hold[r]]);
        hold_loss /= static_cast<double>(hold.size());
        if (hold_loss < best_loss - 1e-12) {
            best_loss = hold_loss;
            best_rounds = model.trees.size();
            since_best = 0;
        } else if (++since_best >= params.patience) {
            break;
        }
    }
    model.trees.resize(best_rounds);
    return model;
}

// ---- ridge ---------------------------------------------------------------

struct Scaling {
    Vector center, scale;
    std::vector<char> usable;
};

inline Scaling column_scaling(const Matrix& x) {
    Scaling s;
    const Index p = x.cols();
    s.center = x.colwise().mean().transpose();
    s.scale = Vector::Ones(p);
    s.usable.assign(static_cast<std::size_t>(p), 1);
    for (Index j = 0; j < p; ++j) {
        const double sd = std::sqrt((x.col(j).array() - s.center[j]).square().mean());
        if (!(sd > 1e-12 * (1.0 + x.col(j).cwiseAbs().maxCoeff()))) {
            s.usable[j] = 0;
            s.scale[j] = 1.0;
        } else {
            s.scale[j] = sd;
        }
    }
    return s;
}

inline Matrix apply_scaling(const Matrix& x, const Scaling& s) {
    Matrix z = (x.rowwise() - s.center.transpose()).array().rowwise() / s.scale.transpose().array();
    for (Index j = 0; j < x.cols(); ++j)
        if (!s.usable[j]) z.col(j).setZero();
    return z;
}

inline LinearPredictor unscale(const Scaling& s, double intercept, const Vector& beta_std, bool logistic) {
    LinearPredictor out;
    out.logistic = logistic;
    out.coefficients = beta_std.array() / s.scale.array();
    for (Index j = 0; j < beta_std.size(); ++j)
        if (!s.usable[j]) out.coefficients[j] = 0.0;
    out.intercept = intercept - s.center.dot(out.coefficients);
    return out;
}

/// Ridge regression; objective (1/n)|y - b0 - Z b|^2 + lambda |b|^2 on
/// standardized columns. Without a fixed lambda the penalty is chosen by GCV.
inline PredictiveModel fit_ridge_regression(const Matrix& x, const Vector& y, const LearnerSpec& spec) {
    const Index n = x.rows();
    const Scaling sc = column_scaling(x);
    const Matrix z = apply_scaling(x, sc);
    const double y_mean = y.mean();
    const Vector yc = y.array() - y_mean;
    const double nn = static_cast<double>(n);

    Eigen::BDCSVD<Matrix> svd(z / std::sqrt(nn), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector sv = svd.singularValues();
    const Vector uty = svd.matrixU().transpose() * yc;
    const double yy = yc.squaredNorm();

    double lambda = spec.get("lambda", -1.0);
    if (lambda < 0) {
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 30; ++k) {
            const double cand = std::pow(10.0, -4.0 + 6.0 * k / 30.0);
            double rss = yy - uty.squaredNorm();
            double df = 1.0;
            for (Index m = 0; m < sv.size(); ++m) {
                const double s2 = sv[m] * sv[m];
                const double shrink = cand / (s2 + cand);
                rss += shrink * shrink * uty[m] * uty[m];
                df += s2 / (s2 + cand);
            }
            const double denom = 1.0 - df / nn;
            if (denom <= 0) continue;
            const double gcv = rss / nn / (denom * denom);
            if (gcv < best) {
                best = gcv;
                lambda = cand;
            }
        }
        if (lambda < 0) lambda = 1.0;
    }
    // beta = V diag(s / (s^2 + lambda)) U' yc / sqrt(n)
    Vector factor(sv.size());
    for (Index m = 0; m < sv.size(); ++m) factor[m] = sv[m] / (sv[m] * sv[m] + lambda);
    const Vector beta = svd.matrixV() * (factor.asDiagonal() * uty) / std::sqrt(nn);
    return unscale(sc, y_mean, beta, false);
}

/// L2-penalized logistic regression by Newton iterations.
inline PredictiveModel fit_ridge_logistic(const Matrix& x, const Vector& y, const LearnerSpec& spec) {
    const Index n = x.rows(), p = x.cols();
    const double lambda = spec.get("lambda", 1e-2);
    const Scaling sc = column_scaling(x);
    Matrix za(n, p + 1);
    za.col(0).setOnes();
    za.rightCols(p) = apply_scaling(x, sc);
    Vector theta = Vector::Zero(p + 1);
    theta[0] = logit(clip_probability(y.mean(), 1e-6));
    const double nn = static_cast<double>(n);
    for (int it = 0; it < 100; ++it) {
        const Vector eta = za * theta;
        Vector prob(n), w(n);
        for (Index i = 0; i < n; ++i) {
            prob[i] = sigmoid(eta[i]);
            w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-10);
        }
        Vector grad = za.transpose() * (prob - y) / nn;
        Matrix hess = za.transpose() * w.asDiagonal() * za / nn;
        for (Index j = 1; j <= p; ++j) {
            grad[j] += 2.0 * lambda * theta[j];
            hess(j, j) += 2.0 * lambda;
        }
        const Vector step = hess.ldlt().solve(grad);
        theta -= step;
        if (step.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    return unscale(sc, theta[0], theta.tail(p), true);
}

// ---- lasso ---------------------------------------------------------------

inline PredictiveModel fit_lasso_regression(const Matrix& x, const Vector& y, const LearnerSpec& spec,
                                            std::uint64_t seed) {
    const Index n = x.rows(), p = x.cols();
    WeightedDesign d{x, y, Vector::Ones(n), Vector::Ones(p), true};
    const int n_lambda = static_cast<int>(spec.get("n_lambda", 50));
    const double lam_max = compute_lambda_max(d);
    const auto lambdas = make_lambda_path(lam_max, n_lambda, default_lambda_ratio(n, p));
    const int k = std::clamp(static_cast<int>(spec.get("cv_folds", 5)), 2, static_cast<int>(n));
    const auto cv = cross_validate_lambda(d, make_folds(static_cast<int>(n), k, seed), lambdas);
    const LassoPath path = fit_lasso_path(d, std::span<const double>(lambdas.data(), cv.index + 1));
    const LassoFit& fit = path.fits.back();
    return LinearPredictor{fit.intercept, fit.coefficients, false};
}

/// Proximal-Newton (IRLS) l1-penalized logistic regression at
/// lambda = lambda_ratio * lambda_max.
inline PredictiveModel fit_lasso_logistic(const Matrix& x, const Vector& y, const LearnerSpec& spec) {
    const Index n = x.rows(), p = x.cols();
    const double ybar = y.mean();
    const Scaling sc = column_scaling(x);
    const Matrix z = apply_scaling(x, sc);
    double lam_max = 0.0;
    for (Index j = 0; j < p; ++j) lam_max = std::max(lam_max, std::abs(z.col(j).dot(y.array().matrix() - Vector::Constant(n, ybar))) / static_cast<double>(n));
    const double lambda = std::max(spec.get("lambda_ratio", 0.05) * lam_max, 1e-12);

    double b0 = logit(clip_probability(ybar, 1e-6));
    Vector beta = Vector::Zero(p);
    std::optional<LassoFit> warm;
    for (int it = 0; it < 50; ++it) {
        const Vector eta = (x * beta).array() + b0;
        Vector w(n), work(n);
        for (Index i = 0; i < n; ++i) {
            const double prob = sigmoid(eta[i]);
            w[i] = std::max(prob * (1.0 - prob), 1e-5);
            work[i] = eta[i] + (y[i] - prob) / w[i];
        }
        const double scale = static_cast<double>(n) / w.sum();
        WeightedDesign d{x, work, w, Vector::Ones(p), true};
        const LassoFit fit = fit_weighted_lasso(d, lambda * scale, warm);
        const double change = std::max((fit.coefficients - beta).cwiseAbs().maxCoeff(), std::abs(fit.intercept - b0));
        beta = fit.coefficients;
        b0 = fit.intercept;
        warm = fit;
        if (change < 1e-8) break;
    }
    return LinearPredictor{b0, beta, true};
}

}  // namespace detail

/// Fits a nuisance learner. Binary tasks expect y in {0, 1} and predict probabilities.
inline PredictiveModel fit_learner(const LearnerSpec& spec, const Matrix& x, const Vector& y, Task task,
                                   std::uint64_t seed) {
    if (x.rows() != y.size()) throw InvalidInput("fit_learner: X rows and y length differ");
    if (x.rows() < 10)
        throw InvalidInput("fit_learner: need at least 10 observations, got " + std::to_string(x.rows()));
    if (!all_finite(x) || !all_finite(y)) throw InvalidInput("fit_learner: non-finite input");
    if (task == Task::binary) {
        if (((y.array() != 0.0) && (y.array() != 1.0)).any())
            throw InvalidInput("fit_learner: binary response must be coded 0/1");
        const double rate = y.mean();
        if (rate == 0.0 || rate == 1.0) return detail::constant_binary_model(rate, x.cols());
    }
    switch (spec.kind) {
        case LearnerKind::boosted_trees: {
            detail::BoostParams bp;
            bp.rounds = static_cast<int>(spec.get("rounds", bp.rounds));
            bp.learning_rate = spec.get("learning_rate", bp.learning_rate);
            bp.depth = static_cast<int>(spec.get("depth", bp.depth));
            bp.holdout = spec.get("holdout", bp.holdout);
            bp.patience = static_cast<int>(spec.get("patience", bp.patience));
            bp.l2 = spec.get("l2", bp.l2);
            bp.min_child_weight = spec.get("min_child_weight", bp.min_child_weight);
            return detail::fit_boosted(x, y, task, bp, seed);
        }
        case LearnerKind::ridge:
            return task == Task::binary ? detail::fit_ridge_logistic(x, y, spec)
                                        : detail::fit_ridge_regression(x, y, spec);
        case LearnerKind::lasso:
            return task == Task::binary ? detail::fit_lasso_logistic(x, y, spec)
                                        : detail::fit_lasso_regression(x, y, spec, seed);
    }
    throw InvalidInput("fit_learner: unknown learner kind");
}

}  // namespace raitr
