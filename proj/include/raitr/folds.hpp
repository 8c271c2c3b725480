#pragma once

#include "raitr/common.hpp"

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace raitr {

/// Balanced assignment of n observations to K folds.
struct FoldPartition {
    int n = 0;
    int K = 0;
    std::vector<int> fold_of;

    std::vector<Index> members(int k) const {
        std::vector<Index> out;
        for (int i = 0; i < n; ++i)
            if (fold_of[i] == k) out.push_back(i);
        return out;
    }

    std::vector<Index> complement(int k) const {
        std::vector<Index> out;
        for (int i = 0; i < n; ++i)
            if (fold_of[i] != k) out.push_back(i);
        return out;
    }

    std::vector<int> sizes() const {
        std::vector<int> out(K, 0);
        for (int f : fold_of) ++out[f];
        return out;
    }
};

/// Uniformly random balanced partition; fold sizes differ by at most one.
inline FoldPartition make_folds(int n, int K, std::uint64_t seed) {
    if (K < 2) throw InvalidInput("make_folds: need at least 2 folds, got " + std::to_string(K));
    if (K > n)
        throw InvalidInput("make_folds: " + std::to_string(K) + " folds requested for " +
                           std::to_string(n) + " observations");
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    rng.shuffle(perm.begin(), perm.end());
    FoldPartition out{n, K, std::vector<int>(n)};
    for (int i = 0; i < n; ++i) out.fold_of[perm[i]] = i % K;
    return out;
}

template <typename Derived>
Matrix take_rows(const Eigen::MatrixBase<Derived>& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
    return out;
}

inline Vector take(const Vector& v, const std::vector<Index>& rows) {
    Vector out(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<Index>(r)] = v[rows[r]];
    return out;
}

}  // namespace raitr
