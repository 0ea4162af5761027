#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"

using namespace embcert;
using fixtures::angle;

namespace {

EmbeddingSet points_at(std::initializer_list<double> degrees, std::optional<std::vector<int>> labels = {}) {
    Matrix m(static_cast<Index>(degrees.size()), 2);
    Index i = 0;
    for (double d : degrees) m.row(i++) = angle(d);
    return EmbeddingSet(std::move(m), std::move(labels));
}

// Square corners with labels [0, 0, 1, 1]: every point has one same-label and
// one cross-label neighbor at equal distance, the opposite corner farther.
EmbeddingSet half_consistent_square() { return points_at({0, 270, 90, 180}, std::vector<int>{0, 0, 1, 1}); }

}  // namespace

TEST(Knn, HandComputedAngles) {
    const auto nn = knn_indices(points_at({0, 10, 180}), 1);
    EXPECT_EQ(nn(0, 0), 1);
    EXPECT_EQ(nn(1, 0), 0);
    EXPECT_EQ(nn(2, 0), 1);
}

TEST(Knn, FullNeighborhoodIsPermutationOfOthers) {
    Rng rng = make_rng(3);
    EmbeddingSet s(fixtures::random_unit(12, 4, rng));
    const auto nn = knn_indices(s, 11);
    for (Index i = 0; i < 12; ++i) {
        std::vector<Index> row(nn.row(i).data(), nn.row(i).data() + 11);
        std::sort(row.begin(), row.end());
        std::vector<Index> expect;
        for (Index j = 0; j < 12; ++j) {
            if (j != i) expect.push_back(j);
        }
        EXPECT_EQ(row, expect);
    }
}

TEST(Knn, TiesGoToLowerIndex) {
    const auto nn = knn_indices(points_at({30, 30, 31}), 1);
    EXPECT_EQ(nn(2, 0), 0);
    EXPECT_EQ(nn(0, 0), 1);
}

TEST(Knn, KOutOfRange) {
    EmbeddingSet s = points_at({0, 90, 180});
    EXPECT_THROW(knn_indices(s, 0), Error);
    EXPECT_THROW(knn_indices(s, 3), Error);
}

TEST(Knn, MatchesSortOracleOnRandomSets) {
    Rng rng = make_rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const Index n = 2 + static_cast<Index>(uniform01(rng) * 498);
        const Index m = 2 + static_cast<Index>(uniform01(rng) * 10);
        const Index k = 1 + static_cast<Index>(uniform01(rng) * static_cast<double>(std::min<Index>(n - 1, 15)));
        Matrix data = fixtures::random_unit(n, m, rng);
        // Force some exact duplicates to exercise the tie rule.
        for (Index d = 0; d + 1 < n && d < 4; d += 2) data.row(d + 1) = data.row(d);
        EmbeddingSet s(data);
        const auto nn = knn_indices(s, k, 1 + trial % 3);
        for (Index i = 0; i < n; ++i) {
            std::vector<std::pair<double, Index>> all;
            for (Index j = 0; j < n; ++j) {
                if (j == i) continue;
                double d2 = 0;
                for (Index c = 0; c < m; ++c) d2 += (data(i, c) - data(j, c)) * (data(i, c) - data(j, c));
                all.emplace_back(d2, j);
            }
            std::sort(all.begin(), all.end());
            for (Index r = 0; r < k; ++r) {
                ASSERT_EQ(nn(i, r), all[static_cast<std::size_t>(r)].second)
                    << "trial " << trial << " row " << i << " rank " << r;
            }
        }
    }
}

TEST(Consistency, AllSameLabelScoresOne) {
    Rng rng = make_rng(5);
    EmbeddingSet s(fixtures::random_unit(30, 3, rng), std::vector<int>(30, 2));
    for (double v : consistency_scores(s, 4)) EXPECT_EQ(v, 1.0);
}

TEST(Consistency, HalfConsistentFixture) {
    for (double v : consistency_scores(half_consistent_square(), 2)) EXPECT_EQ(v, 0.5);
}

TEST(Consistency, AllNeighborsDisagree) {
    const auto scores = consistency_scores(points_at({0, 5, 180}, std::vector<int>{0, 1, 0}), 1);
    EXPECT_EQ(scores[0], 0.0);
    EXPECT_EQ(scores[1], 0.0);
}

TEST(Consistency, NeedsLabels) {
    EXPECT_THROW(consistency_scores(points_at({0, 90, 180}), 1), Error);
}

TEST(Filter, TauZeroKeepsEverythingInOrder) {
    const EmbeddingSet s = fixtures::clustered(fixtures::three_centers(), 20, 5, 1);
    ConsistencyConfig cfg;
    cfg.tau = 0;
    const auto r = filter_consistent(s, cfg);
    EXPECT_EQ(r.kept.data(), s.data());
    EXPECT_EQ(*r.kept.labels(), *s.labels());
    ASSERT_TRUE(r.kept.filter());
    EXPECT_EQ(r.kept.filter()->tau, 0.0);
}

TEST(Filter, TauOneOnPureSetKeepsEverything) {
    Rng rng = make_rng(5);
    EmbeddingSet s(fixtures::random_unit(30, 3, rng), std::vector<int>(30, 0));
    ConsistencyConfig cfg;
    cfg.tau = 1.0;
    cfg.k = KSpec::absolute(3);
    EXPECT_EQ(filter_consistent(s, cfg).kept.size(), 30);
}

TEST(Filter, ThresholdIsInclusive) {
    ConsistencyConfig cfg;
    cfg.k = KSpec::absolute(2);
    cfg.tau = 0.5;
    EXPECT_EQ(filter_consistent(half_consistent_square(), cfg).kept.size(), 4);
}

TEST(Filter, EmptyResultIsAnError) {
    ConsistencyConfig cfg;
    cfg.k = KSpec::absolute(2);
    cfg.tau = 0.6;
    EXPECT_THROW(filter_consistent(half_consistent_square(), cfg), Error);
}

TEST(Filter, DropsNoisyLabels) {
    const Matrix centers = fixtures::three_centers();
    EmbeddingSet clean = fixtures::clustered(centers, 100, 100, 4);
    std::vector<int> labels = *clean.labels();
    labels[3] = 1;
    labels[150] = 2;
    EmbeddingSet noisy(clean.data(), labels);
    ConsistencyConfig cfg;
    cfg.k = KSpec::absolute(10);
    const auto r = filter_consistent(noisy, cfg);
    EXPECT_EQ(std::count(r.kept_rows.begin(), r.kept_rows.end(), 3), 0);
    EXPECT_EQ(std::count(r.kept_rows.begin(), r.kept_rows.end(), 150), 0);
    EXPECT_EQ(r.kept.size(), 298);
}

TEST(KSpec, FractionResolves) {
    EXPECT_EQ(KSpec::fraction(0.01).resolve(5000), 50);
    EXPECT_EQ(KSpec::fraction(0.01).resolve(30), 1);
    EXPECT_EQ(KSpec::absolute(7).resolve(8), 7);
    EXPECT_THROW(KSpec::absolute(8).resolve(8), Error);
    EXPECT_THROW(KSpec::fraction(0.0).resolve(8), UsageError);
}
