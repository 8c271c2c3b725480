#pragma once

#include "raitr/common.hpp"

#include <string>
#include <vector>

namespace raitr {

/// Observed (X, y, a) with treatment labels coded -1 / +1.
struct Dataset {
    Matrix X;
    Vector y;
    Vector a;
    std::vector<std::string> column_names;

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }

    Index treated_count() const { return static_cast<Index>((a.array() > 0).count()); }

    void validate() const {
        if (n() < 1) throw InvalidInput("dataset: no observations");
        if (p() < 1) throw InvalidInput("dataset: no covariates");
        if (y.size() != n() || a.size() != n()) throw InvalidInput("dataset: y/a length does not match X rows");
        if (!column_names.empty() && static_cast<Index>(column_names.size()) != p())
            throw InvalidInput("dataset: column_names length does not match X columns");
        if (!all_finite(X) || !all_finite(y)) throw InvalidInput("dataset: non-finite covariate or outcome values");
        for (Index i = 0; i < n(); ++i)
            if (a[i] != 1.0 && a[i] != -1.0)
                throw InvalidInput("dataset: treatment label at row " + std::to_string(i) + " is not -1 or +1");
        const Index treated = treated_count();
        if (treated == 0 || treated == n()) throw InvalidInput("dataset: only one treatment arm present");
    }

    std::vector<std::string> names_or_default() const {
        if (!column_names.empty()) return column_names;
        std::vector<std::string> out;
        for (Index j = 0; j < p(); ++j) out.push_back("x" + std::to_string(j + 1));
        return out;
    }
};

}  // namespace raitr
