#pragma once

#include <limits>
#include <vector>

#include "embcert/random.hpp"
#include "embcert/types.hpp"

namespace embcert {

namespace detail {

inline double squared_distance(const double* a, const double* b, Index dim) {
    double sum = 0;
    for (Index d = 0; d < dim; ++d) {
        const double diff = a[d] - b[d];
        sum += diff * diff;
    }
    return sum;
}

}  // namespace detail

/**
 * k-means++ seeding: the first center is uniform over rows, each further
 * center is drawn with probability proportional to its squared distance to
 * the nearest chosen center. Returns row indices of the chosen centers.
 */
inline std::vector<Index> kmeanspp_seeds(const Matrix& points, Index k, Rng& rng) {
    const Index n = points.rows();
    const Index dim = points.cols();
    if (k < 1 || k > n) {
        throw Error("k-means++ needs 1 <= k <= N, got k=" + std::to_string(k) + ", N=" + std::to_string(n));
    }

    std::vector<Index> chosen;
    chosen.reserve(static_cast<std::size_t>(k));
    std::vector<char> taken(static_cast<std::size_t>(n), 0);

    auto pick_uniform_untaken = [&]() {
        Index remaining = n - static_cast<Index>(chosen.size());
        auto target = static_cast<Index>(uniform01(rng) * static_cast<double>(remaining));
        for (Index i = 0; i < n; ++i) {
            if (!taken[static_cast<std::size_t>(i)] && target-- == 0) {
                return i;
            }
        }
        return n - 1;
    };

    Index first = pick_uniform_untaken();
    chosen.push_back(first);
    taken[static_cast<std::size_t>(first)] = 1;

    std::vector<double> closest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    while (static_cast<Index>(chosen.size()) < k) {
        const double* c = points.row(chosen.back()).data();
        double total = 0;
        for (Index i = 0; i < n; ++i) {
            auto& best = closest[static_cast<std::size_t>(i)];
            best = std::min(best, detail::squared_distance(points.row(i).data(), c, dim));
            total += best;
        }

        Index next = -1;
        if (total > 0) {
            double target = uniform01(rng) * total;
            for (Index i = 0; i < n; ++i) {
                target -= closest[static_cast<std::size_t>(i)];
                if (target < 0 && closest[static_cast<std::size_t>(i)] > 0) {
                    next = i;
                    break;
                }
            }
            if (next < 0) {
                // Rounding left target >= 0 after the scan; take the last candidate with mass.
                for (Index i = n - 1; i >= 0; --i) {
                    if (closest[static_cast<std::size_t>(i)] > 0) {
                        next = i;
                        break;
                    }
                }
            }
        }
        if (next < 0 || taken[static_cast<std::size_t>(next)]) {
            // Every remaining point coincides with a chosen center.
            next = pick_uniform_untaken();
        }
        chosen.push_back(next);
        taken[static_cast<std::size_t>(next)] = 1;
    }
    return chosen;
}

}  // namespace embcert
