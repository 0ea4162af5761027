#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"

using namespace embcert;
using fixtures::unit_rows;

namespace {

std::shared_ptr<const GmmModel> fitted(const EmbeddingSet& train, Index n_comp, std::uint64_t seed = 0) {
    GmmFitConfig cfg;
    cfg.n_comp = n_comp;
    cfg.seed = seed;
    return std::make_shared<const GmmModel>(fit_gmm(train, cfg));
}

Eigen::MatrixXd random_rotation(Index m, Rng& rng) {
    Eigen::MatrixXd a(m, m);
    std::normal_distribution<double> g;
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j) a(i, j) = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    return qr.householderQ();
}

}  // namespace

TEST(Delta, IdenticalViewsGiveZero) {
    AugmentedBatch b("s", unit_rows({{0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}}));
    EXPECT_EQ(delta(b), 0.0);
}

TEST(Delta, TwoOrthogonalViews) {
    EXPECT_DOUBLE_EQ(delta(AugmentedBatch("s", unit_rows({{1, 0}, {0, 1}}))), 1.0);
}

TEST(Delta, NeedsTwoViews) {
    EXPECT_THROW(delta(AugmentedBatch("s", unit_rows({{1, 0}}))), Error);
}

TEST(Delta, InvariantUnderRotation) {
    Rng rng = make_rng(12);
    for (int t = 0; t < 20; ++t) {
        const Index m = 3 + t % 6;
        AugmentedBatch b("s", fixtures::random_unit(2 + t % 5, m, rng));
        const Eigen::MatrixXd q = random_rotation(m, rng);
        Matrix rotated = b.views() * q.transpose();
        EXPECT_NEAR(delta(AugmentedBatch("r", rotated, true)), delta(b), 1e-10);
    }
}

TEST(Ensembled, SingleViewEqualsDensity) {
    Rng rng = make_rng(2);
    EmbeddingSet train(fixtures::random_unit(200, 3, rng));
    auto model = fitted(train, 2);
    Matrix v = fixtures::random_unit(1, 3, rng);
    EXPECT_EQ(ensembled_density_score(*model, v), density_score(*model, v.row(0)));
}

TEST(Ensembled, MeanOfDensitiesInLogSpace) {
    Vector w(1);
    w << 1;
    GmmModel m(w, Matrix::Zero(1, 2), {Eigen::MatrixXd::Identity(2, 2)}, CovStructure::full, FitMeta{});
    Matrix same(2, 2);
    same << 0.3, 0.4, 0.4, 0.3;
    const double a = density_score(m, same.row(0));
    EXPECT_NEAR(ensembled_density_score(m, same), a, 1e-15);

    // log p = c - |z|^2/2; |z|^2 = 2 ln 3 gives ln p = c - ln 3, |z| = 0 gives c.
    Matrix two(2, 2);
    two << 0, 0, std::sqrt(2 * std::log(3.0)), 0;
    const double c = density_score(m, two.row(0));
    EXPECT_NEAR(ensembled_density_score(m, two) - (c - std::log(3.0)), std::log(2.0), 1e-12);
}

TEST(Entropy, ClosedForms) {
    EXPECT_EQ(entropy_score(DownstreamRecord::make("a", {0, 1, 0})), 0.0);
    EXPECT_NEAR(entropy_score(DownstreamRecord::make("a", std::vector<double>(10, 0.1))), 2.302585092994046, 1e-12);
    EXPECT_NEAR(entropy_score(DownstreamRecord::make("a", {0.5, 0.5})), 0.6931471805599453, 1e-15);
}

TEST(MaxScore, Examples) {
    EXPECT_EQ(max_score(DownstreamRecord::make("a", {0, 1})), 1.0);
    EXPECT_DOUBLE_EQ(max_score(DownstreamRecord::make("a", std::vector<double>(4, 0.25))), 0.25);
    EXPECT_DOUBLE_EQ(max_score(DownstreamRecord::make("a", {0.2, 0.7, 0.1})), 0.7);
}

TEST(ScorerSpec, ModelMustMatchMeasure) {
    Rng rng = make_rng(2);
    EmbeddingSet train(fixtures::random_unit(50, 3, rng), std::vector<int>(50, 0));
    auto plain = fitted(train, 1);
    ConsistencyConfig cc;
    cc.tau = 0;
    auto filtered = fitted(filter_consistent(train, cc).kept, 1);
    EXPECT_THROW(ScorerSpec(Measure::p_emb), UsageError);
    EXPECT_THROW(ScorerSpec(Measure::p_emb_ktau, plain), UsageError);
    EXPECT_THROW(ScorerSpec(Measure::p_emb, filtered), UsageError);
    EXPECT_THROW(ScorerSpec(Measure::delta, plain), UsageError);
    EXPECT_NO_THROW(ScorerSpec(Measure::p_emb_ens_ktau, filtered));
}

TEST(ScoreDataset, DeltaOnIdenticalViewsIsZero) {
    std::vector<AugmentedBatch> batches;
    for (int i = 0; i < 5; ++i) batches.emplace_back(std::to_string(i), unit_rows({{0, 1}, {0, 1}}));
    DatasetInputs in{"d", std::nullopt, batches, std::nullopt};
    const ScoreVector s = score_dataset(ScorerSpec(Measure::delta), in);
    EXPECT_EQ(s.orientation(), Orientation::uncertainty_high);
    for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(ScoreDataset, TrainingDataDenserThanFarPoints) {
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Unit(6, 0);
    Rng rng = make_rng(31);
    EmbeddingSet train(sample_vmf(mu, 50, 300, rng));
    auto model = fitted(train, 3);
    Matrix far = sample_vmf(-mu, 50, 100, rng);
    const auto in = score_dataset(ScorerSpec(Measure::p_emb, model), DatasetInputs{"t", train, {}, {}});
    const auto out = score_dataset(ScorerSpec(Measure::p_emb, model), DatasetInputs{"f", EmbeddingSet(far), {}, {}});
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    EXPECT_GT(mean(in.values()), mean(out.values()));
    EXPECT_EQ(in.sample_ids().front(), "0");
}

TEST(ScoreDataset, TauZeroFilteredModelMatchesPlain) {
    const EmbeddingSet train = fixtures::clustered(fixtures::three_centers(), 60, 30, 9);
    ConsistencyConfig cc;
    cc.tau = 0;
    auto plain = fitted(train, 3, 4);
    auto filtered = fitted(filter_consistent(train, cc).kept, 3, 4);
    Rng rng = make_rng(5);
    std::vector<AugmentedBatch> batches;
    for (int i = 0; i < 20; ++i) batches.emplace_back("q" + std::to_string(i), fixtures::random_unit(3, 2, rng));
    DatasetInputs in{"q", std::nullopt, batches, std::nullopt};
    EXPECT_EQ(score_dataset(ScorerSpec(Measure::p_emb, plain), in).values(),
              score_dataset(ScorerSpec(Measure::p_emb_ktau, filtered), in).values());
    EXPECT_EQ(score_dataset(ScorerSpec(Measure::p_emb_ens, plain), in).values(),
              score_dataset(ScorerSpec(Measure::p_emb_ens_ktau, filtered), in).values());
}

TEST(ScoreDataset, MissingInputsAreUsageErrors) {
    DatasetInputs empty{"e", std::nullopt, std::nullopt, std::nullopt};
    EXPECT_THROW(score_dataset(ScorerSpec(Measure::delta), empty), UsageError);
    EXPECT_THROW(score_dataset(ScorerSpec(Measure::entropy), empty), UsageError);
}

TEST(ScoreDataset, DimensionMismatchNamesSample) {
    Rng rng = make_rng(2);
    auto model = fitted(EmbeddingSet(fixtures::random_unit(50, 3, rng)), 1);
    std::vector<AugmentedBatch> batches{AugmentedBatch("odd", unit_rows({{1, 0}, {0, 1}}))};
    try {
        score_dataset(ScorerSpec(Measure::p_emb_ens, model), DatasetInputs{"d", {}, batches, {}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("odd"), std::string::npos);
    }
}
