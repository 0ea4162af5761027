#include <gtest/gtest.h>

#include <numeric>

#include "fixtures.hpp"

using namespace embcert;

TEST(Vmf, UniformWhenKappaZero) {
    Rng rng = make_rng(1);
    const Matrix x = sample_vmf(Eigen::RowVectorXd::Unit(8, 0), 0, 10000, rng);
    EXPECT_LT(x.colwise().mean().norm(), 0.05);
}

TEST(Vmf, ConcentratesAroundMean) {
    Rng rng = make_rng(2);
    Eigen::RowVectorXd mu(3);
    mu << 1, 2, 2;
    mu.normalize();
    const Matrix x = sample_vmf(mu, 200, 1000, rng);
    const Eigen::RowVectorXd dir = x.colwise().mean().normalized();
    EXPECT_LT(std::acos(std::min(1.0, dir.dot(mu))) * 180 / std::numbers::pi, 2.0);
}

TEST(Vmf, OutputsAreUnitNorm) {
    Rng rng = make_rng(3);
    for (double kappa : {0.0, 1.0, 50.0, 1e4}) {
        const Matrix x = sample_vmf(Eigen::RowVectorXd::Unit(5, 2), kappa, 500, rng);
        EXPECT_LT((x.rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-12);
    }
}

TEST(World, SeparatedClustersClassifyAlmostPerfectly) {
    SynthConfig c;
    c.kappa = 200;
    c.per_cluster_n = 100;
    c.seed = 4;
    const SynthWorld w = generate_world(c);
    EXPECT_GT(downstream_accuracy(w.downstream_test), 0.99);
    EXPECT_EQ(w.train.size(), 1000);
    EXPECT_EQ(w.test_batches.size(), 200u);
    EXPECT_EQ(w.test_batches[0].n_views(), 4);
}

TEST(World, NoViewNoiseGivesZeroDelta) {
    SynthConfig c;
    c.m = 6;
    c.n_clusters = 3;
    c.per_cluster_n = 20;
    c.view_noise_sigma = 0;
    const SynthWorld w = generate_world(c);
    for (const auto& b : w.test_batches) EXPECT_EQ(delta(b), 0.0);
}

TEST(World, LabelNoiseCorruptsRequestedFraction) {
    SynthConfig c;
    c.n_clusters = 4;
    c.per_cluster_n = 500;
    c.label_noise = 0.2;
    const SynthWorld w = generate_world(c);
    const auto corrupted = std::count(w.train_corrupted.begin(), w.train_corrupted.end(), true);
    EXPECT_NEAR(static_cast<double>(corrupted) / 2000.0, 0.2, 0.03);
    for (std::size_t i = 0; i < w.train_corrupted.size(); ++i) {
        EXPECT_EQ(w.train_corrupted[i], (*w.train.labels())[i] != w.train_true_labels[i]);
    }
}

TEST(World, UniformOodIsLessDense) {
    SynthConfig c;
    c.per_cluster_n = 200;
    c.seed = 6;
    const SynthWorld w = generate_world(c);
    GmmFitConfig f;
    f.n_comp = 10;
    auto model = std::make_shared<const GmmModel>(fit_gmm(w.train, f));
    const ScorerSpec spec(Measure::p_emb, model);
    const auto in = score_dataset(spec, DatasetInputs{"t", std::nullopt, w.test_batches, std::nullopt});
    const auto out = score_dataset(spec, DatasetInputs{"o", w.ood, std::nullopt, std::nullopt});
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    EXPECT_LT(mean(out.values()), mean(in.values()));
}

TEST(World, ShiftedClustersKeepAngle) {
    SynthConfig c;
    c.n_clusters = 3;
    c.per_cluster_n = 50;
    c.ood_mode = OodMode::shifted_clusters;
    c.kappa = 1e5;
    const SynthWorld w = generate_world(c);
    for (Index i = 0; i < w.ood.size(); ++i) {
        double best = -1;
        for (Index k = 0; k < w.centers.rows(); ++k) best = std::max(best, w.ood.data().row(i).dot(w.centers.row(k)));
        EXPECT_NEAR(std::acos(best), c.ood_angle, 0.05);
    }
}

TEST(World, SameSeedSameWorld) {
    SynthConfig c;
    c.per_cluster_n = 30;
    c.seed = 77;
    const SynthWorld a = generate_world(c);
    const SynthWorld b = generate_world(c);
    EXPECT_EQ(a.train.data(), b.train.data());
    EXPECT_EQ(a.ood.data(), b.ood.data());
    c.seed = 78;
    EXPECT_NE(generate_world(c).train.data(), a.train.data());
}

TEST(World, InvalidConfigIsUsageError) {
    SynthConfig c;
    c.label_noise = 1.0;
    EXPECT_THROW(generate_world(c), UsageError);
    c = SynthConfig{};
    c.m = 1;
    EXPECT_THROW(generate_world(c), UsageError);
}
