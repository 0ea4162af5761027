#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "embcert/kmeanspp.hpp"
#include "embcert/parallel.hpp"
#include "embcert/types.hpp"

/**
 * @file neighbors.hpp
 *
 * @brief Exact k-nearest-neighbor search and k-NN label consistency of a
 * labeled embedding set.
 *
 * Distances are Euclidean. On unit vectors |a - b|^2 = 2 - 2<a, b>, so the
 * neighbor order is the cosine order as well.
 */

namespace embcert {

using NeighborMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Neighbor count given either as an absolute number or as a fraction of N.
struct KSpec {
    std::variant<Index, double> value = Index{1};

    static KSpec absolute(Index k) { return KSpec{k}; }
    static KSpec fraction(double f) { return KSpec{f}; }

    /// Absolute k, or max(1, round(fraction * n)); must land in [1, n - 1].
    Index resolve(Index n) const {
        Index k = 0;
        if (const auto* abs = std::get_if<Index>(&value)) {
            k = *abs;
        } else {
            const double f = std::get<double>(value);
            if (!(f > 0.0 && f <= 1.0)) {
                throw UsageError("k fraction must lie in (0, 1], got " + std::to_string(f));
            }
            k = std::max<Index>(1, static_cast<Index>(std::llround(f * static_cast<double>(n))));
        }
        if (k < 1 || k > n - 1) {
            throw Error("k=" + std::to_string(k) + " out of range [1, " + std::to_string(n - 1) + "] for N=" +
                        std::to_string(n));
        }
        return k;
    }
};

struct ConsistencyConfig {
    KSpec k = KSpec::fraction(0.01);
    double tau = 0.5;
};

/**
 * Brute-force k nearest neighbors of every row among the other rows.
 * Row i of the result lists neighbor indices by increasing distance;
 * equal distances go to the smaller index.
 */
inline NeighborMatrix knn_indices(const EmbeddingSet& set, Index k, int threads = 1) {
    const Index n = set.size();
    if (k < 1 || k > n - 1) {
        throw Error("k=" + std::to_string(k) + " out of range [1, " + std::to_string(n - 1) + "]");
    }
    const Matrix& x = set.data();
    const Index dim = set.dim();
    NeighborMatrix out(n, k);

    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t qi) {
        const auto q = static_cast<Index>(qi);
        std::vector<std::pair<double, Index>> cand;
        cand.reserve(static_cast<std::size_t>(n - 1));
        for (Index j = 0; j < n; ++j) {
            if (j != q) {
                cand.emplace_back(detail::squared_distance(x.row(q).data(), x.row(j).data(), dim), j);
            }
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (Index j = 0; j < k; ++j) {
            out(q, j) = cand[static_cast<std::size_t>(j)].second;
        }
    });
    return out;
}

/// Fraction of each point's k nearest neighbors that share its label.
inline std::vector<double> consistency_scores(const EmbeddingSet& set, Index k, int threads = 1) {
    if (!set.has_labels()) {
        throw Error("consistency scores need a labeled embedding set ('" + set.dataset_id() + "' is unlabeled)");
    }
    const NeighborMatrix nn = knn_indices(set, k, threads);
    const auto& labels = *set.labels();
    std::vector<double> scores(static_cast<std::size_t>(set.size()));
    for (Index i = 0; i < set.size(); ++i) {
        Index agree = 0;
        for (Index j = 0; j < k; ++j) {
            agree += labels[static_cast<std::size_t>(nn(i, j))] == labels[static_cast<std::size_t>(i)];
        }
        scores[static_cast<std::size_t>(i)] = static_cast<double>(agree) / static_cast<double>(k);
    }
    return scores;
}

struct FilterResult {
    EmbeddingSet kept;
    std::vector<Index> kept_rows;
    std::vector<double> scores;
    Index k = 0;
};

/**
 * Keeps rows whose consistency score is >= tau, in original order. The
 * threshold is inclusive, so tau = 0 keeps every row.
 */
inline FilterResult filter_consistent(const EmbeddingSet& set, const ConsistencyConfig& cfg, int threads = 1) {
    if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0)) {
        throw UsageError("tau must lie in [0, 1], got " + std::to_string(cfg.tau));
    }
    if (!set.has_labels()) {
        throw Error("consistency filtering needs a labeled embedding set ('" + set.dataset_id() + "' is unlabeled)");
    }
    const Index k = cfg.k.resolve(set.size());
    std::vector<double> scores = consistency_scores(set, k, threads);

    std::vector<Index> rows;
    for (Index i = 0; i < set.size(); ++i) {
        if (scores[static_cast<std::size_t>(i)] >= cfg.tau) {
            rows.push_back(i);
        }
    }
    if (rows.empty()) {
        std::map<double, Index> histogram;
        for (double s : scores) {
            ++histogram[s];
        }
        std::string msg = "consistency filter (k=" + std::to_string(k) + ", tau=" + std::to_string(cfg.tau) +
                          ") removed all " + std::to_string(set.size()) + " rows; score distribution:";
        for (const auto& [score, count] : histogram) {
            msg += " " + std::to_string(score) + "x" + std::to_string(count);
        }
        throw Error(msg);
    }
    EmbeddingSet kept = set.subset(rows, FilterTag{static_cast<int>(k), cfg.tau});
    return FilterResult{std::move(kept), std::move(rows), std::move(scores), k};
}

}  // namespace embcert
