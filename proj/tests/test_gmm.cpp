#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"

using namespace embcert;

namespace {

GmmModel standard_normal_2d(Index n_comp = 1) {
    Vector w = Vector::Constant(n_comp, 1.0 / static_cast<double>(n_comp));
    Matrix mu = Matrix::Zero(n_comp, 2);
    std::vector<Eigen::MatrixXd> chol(static_cast<std::size_t>(n_comp), Eigen::MatrixXd::Identity(2, 2));
    return GmmModel(w, mu, chol, CovStructure::full, FitMeta{});
}

// Worst center error under the best matching of fitted to true centers.
double matched_center_error(const Matrix& fitted, const Matrix& truth) {
    std::vector<Index> perm(static_cast<std::size_t>(truth.rows()));
    std::iota(perm.begin(), perm.end(), Index{0});
    double best = std::numeric_limits<double>::infinity();
    do {
        double worst = 0;
        for (Index i = 0; i < truth.rows(); ++i) {
            worst = std::max(worst, (fitted.row(perm[static_cast<std::size_t>(i)]) - truth.row(i)).norm());
        }
        best = std::min(best, worst);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST(LogDensity, StandardNormalAtOrigin) {
    Matrix z = Matrix::Zero(1, 2);
    EXPECT_NEAR(log_density(standard_normal_2d(), z)[0], -1.8378770664093453, 1e-12);
}

TEST(LogDensity, DuplicatedComponentsMatchSingle) {
    Rng rng = make_rng(4);
    Matrix z = fixtures::random_unit(50, 2, rng) * 3.0;
    const Vector one = log_density(standard_normal_2d(1), z);
    const Vector two = log_density(standard_normal_2d(2), z);
    EXPECT_LT((one - two).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LogDensity, HigherAtHeaviestMeanThanFarAway) {
    Vector w(2);
    w << 0.7, 0.3;
    Matrix mu(2, 2);
    mu << 1, 0, 0, 1;
    std::vector<Eigen::MatrixXd> chol(2, 0.1 * Eigen::MatrixXd::Identity(2, 2));
    GmmModel m(w, mu, chol, CovStructure::full, FitMeta{});
    Matrix z(2, 2);
    z << 1, 0, 40, -40;
    const Vector lp = log_density(m, z);
    EXPECT_GT(lp[0], lp[1]);
    EXPECT_TRUE(std::isfinite(lp[1]));
}

TEST(LogDensity, DimensionMismatchIsAnError) {
    EXPECT_THROW(log_density(standard_normal_2d(), Matrix::Zero(1, 3)), Error);
}

TEST(FitGmm, SingleGaussianMatchesSampleMoments) {
    Eigen::RowVectorXd mu(3);
    mu << 1, 1, 0;
    mu.normalize();
    Rng rng = make_rng(11);
    EmbeddingSet train(sample_vmf(mu, 30, 500, rng));
    GmmFitConfig cfg;
    const GmmModel m = fit_gmm(train, cfg);
    const Eigen::RowVectorXd mean = train.data().colwise().mean();
    const Matrix centered = train.data().rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / 500.0 +
                                1e-6 * Eigen::MatrixXd::Identity(3, 3);
    EXPECT_LT((m.means().row(0) - mean).cwiseAbs().maxCoeff(), 0.02);
    EXPECT_LT((m.covariance(0) - cov).cwiseAbs().maxCoeff(), 0.02);
    EXPECT_DOUBLE_EQ(m.weights()[0], 1.0);
}

TEST(FitGmm, RecoversThreeCircleClusters) {
    const Matrix centers = fixtures::three_centers();
    const EmbeddingSet train = fixtures::clustered(centers, 200, 200, 5);
    GmmFitConfig cfg;
    cfg.n_comp = 3;
    cfg.seed = 5;
    const GmmModel m = fit_gmm(train, cfg);
    EXPECT_LT(matched_center_error(m.means(), centers), 0.05);
}

TEST(FitGmm, DeterministicForSeed) {
    const EmbeddingSet train = fixtures::clustered(fixtures::three_centers(), 100, 50, 6);
    GmmFitConfig cfg;
    cfg.n_comp = 4;
    cfg.n_restarts = 2;
    cfg.seed = 17;
    const GmmModel a = fit_gmm(train, cfg);
    cfg.threads = 3;
    const GmmModel b = fit_gmm(train, cfg);
    EXPECT_EQ(a.weights(), b.weights());
    EXPECT_EQ(a.means(), b.means());
    EXPECT_EQ(a.cholesky_factors(), b.cholesky_factors());
    EXPECT_EQ(a.fit_meta(), b.fit_meta());
}

TEST(FitGmm, LikelihoodTraceIsMonotone) {
    Rng rng = make_rng(8);
    EmbeddingSet train(fixtures::random_unit(600, 4, rng));
    for (CovStructure cov : {CovStructure::full, CovStructure::diagonal}) {
        GmmFitConfig cfg;
        cfg.n_comp = 6;
        cfg.cov_structure = cov;
        cfg.rel_tol = 1e-10;
        const GmmModel m = fit_gmm(train, cfg);
        const auto& h = m.fit_meta().log_likelihood_history;
        ASSERT_GE(h.size(), 2u);
        for (std::size_t i = 1; i < h.size(); ++i) {
            EXPECT_GE(h[i], h[i - 1] - 1e-9) << "iteration " << i;
        }
        EXPECT_DOUBLE_EQ(h.back(), m.fit_meta().final_log_likelihood);
        EXPECT_NEAR(log_density(m, train.data()).sum(), m.fit_meta().final_log_likelihood, 1e-8);
    }
}

TEST(FitGmm, DiagonalModelHasDiagonalFactors) {
    const EmbeddingSet train = fixtures::clustered(fixtures::three_centers(), 50, 50, 2);
    GmmFitConfig cfg;
    cfg.n_comp = 2;
    cfg.cov_structure = CovStructure::diagonal;
    const GmmModel m = fit_gmm(train, cfg);
    for (Index c = 0; c < 2; ++c) {
        EXPECT_EQ(m.cholesky(c)(1, 0), 0.0);
    }
}

TEST(FitGmm, TooManyComponentsNamesBothNumbers) {
    Rng rng = make_rng(1);
    EmbeddingSet train(fixtures::random_unit(5, 3, rng));
    GmmFitConfig cfg;
    cfg.n_comp = 9;
    try {
        fit_gmm(train, cfg);
        FAIL();
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find('9'), std::string::npos);
        EXPECT_NE(msg.find('5'), std::string::npos);
    }
}

TEST(FitGmm, RecordsMetadata) {
    const EmbeddingSet train = fixtures::clustered(fixtures::three_centers(), 30, 50, 2);
    GmmFitConfig cfg;
    cfg.n_comp = 2;
    cfg.seed = 42;
    cfg.ridge_eps = 1e-5;
    const GmmModel m = fit_gmm(train, cfg);
    EXPECT_EQ(m.fit_meta().seed, 42u);
    EXPECT_EQ(m.fit_meta().n_train, 90);
    EXPECT_EQ(m.fit_meta().ridge_eps, 1e-5);
    EXPECT_FALSE(m.fit_meta().filter);
}

TEST(Responsibilities, RowsSumToOne) {
    const EmbeddingSet train = fixtures::clustered(fixtures::three_centers(), 40, 20, 3);
    GmmFitConfig cfg;
    cfg.n_comp = 3;
    const GmmModel m = fit_gmm(train, cfg);
    const Matrix r = responsibilities(m, train.data());
    for (Index i = 0; i < r.rows(); ++i) {
        EXPECT_NEAR(r.row(i).sum(), 1.0, 1e-12);
    }
}

TEST(Bic, ParameterCount) {
    EXPECT_EQ(gmm_parameter_count(1, 2, CovStructure::diagonal), 4.0);
    EXPECT_EQ(gmm_parameter_count(1, 2, CovStructure::full), 5.0);
    EXPECT_EQ(gmm_parameter_count(3, 4, CovStructure::full), 2.0 + 12.0 + 30.0);
}

TEST(Bic, EventuallyIncreasesOnSingleGaussianData) {
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Unit(8, 0);
    Rng rng = make_rng(21);
    EmbeddingSet train(sample_vmf(mu, 40, 400, rng));
    std::vector<double> values;
    for (Index k : {1, 4, 12}) {
        GmmFitConfig cfg;
        cfg.n_comp = k;
        cfg.cov_structure = CovStructure::diagonal;
        values.push_back(bic(fit_gmm(train, cfg), train));
    }
    EXPECT_GT(values.back(), values.front());
    GmmFitConfig cfg;
    const GmmModel m = fit_gmm(train, cfg);
    EXPECT_EQ(bic(m, train), bic(m, train));
}
