#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace embcert;

namespace {

const SynthWorld& world() {
    static const SynthWorld w = [] {
        SynthConfig c;
        c.m = 4;
        c.n_clusters = 3;
        c.per_cluster_n = 60;
        c.kappa = 4;
        c.label_noise = 0.1;
        c.seed = 3;
        return generate_world(c);
    }();
    return w;
}

SweepInputs inputs(std::vector<Measure> measures, std::vector<Notion> notions) {
    const SynthWorld& w = world();
    SweepInputs in{w.train,
                   DatasetInputs{"test", std::nullopt, w.test_batches, w.downstream_test},
                   {DatasetInputs{"ood", std::nullopt, w.ood_batches, w.downstream_ood}},
                   GmmFitConfig{},
                   ConsistencyConfig{},
                   std::move(measures),
                   std::move(notions),
                   1};
    in.fit.n_comp = 3;
    in.fit.seed = 10;
    in.consistency.k = KSpec::absolute(5);
    return in;
}

}  // namespace

TEST(Sweep, RowAndSummaryCounts) {
    SweepGrid grid{SweepAxis::n_comp, {2, 10, 50}, 3};
    const auto t = sweep(grid, inputs({Measure::p_emb}, {Notion::epistemic}));
    EXPECT_EQ(t.rows.size(), 9u);
    EXPECT_EQ(t.summary.size(), 3u);
    const std::string csv = render_sweep_csv(t);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 9 + 6);
}

TEST(Sweep, SummaryIsMeanAndSampleStddev) {
    SweepGrid grid{SweepAxis::n_comp, {2}, 3};
    const auto t = sweep(grid, inputs({Measure::p_emb}, {Notion::epistemic}));
    const double a = t.rows[0].auroc, b = t.rows[1].auroc, c = t.rows[2].auroc;
    const double mean = (a + b + c) / 3;
    EXPECT_DOUBLE_EQ(t.summary[0].mean, mean);
    const double var = ((a - mean) * (a - mean) + (b - mean) * (b - mean) + (c - mean) * (c - mean)) / 2;
    EXPECT_NEAR(t.summary[0].stddev, std::sqrt(var), 1e-15);
}

TEST(Sweep, TauZeroRowEqualsPlainDensity) {
    SweepGrid grid{SweepAxis::tau, {0.0, 0.5}, 1};
    auto in = inputs({Measure::p_emb_ktau}, {Notion::aleatoric, Notion::epistemic});
    const auto t = sweep(grid, in);
    auto model = std::make_shared<const GmmModel>(fit_gmm(in.train, in.fit));
    const auto plain = evaluate({ScorerSpec(Measure::p_emb, model)}, in.in_dist, in.ood, in.notions);
    std::size_t matched = 0;
    for (const auto& row : t.rows) {
        if (row.value != 0.0) continue;
        for (const auto& inst : plain) {
            if (inst.notion == row.notion && inst.out_dist_id == row.out_dist) {
                EXPECT_EQ(row.auroc, inst.auroc);
                ++matched;
            }
        }
    }
    EXPECT_EQ(matched, 2u);
}

TEST(Sweep, TransformPrefixMatchesSingleViewScoring) {
    SweepGrid grid{SweepAxis::n_transforms, {1, 2, 4}, 1};
    auto in = inputs({Measure::p_emb_ens, Measure::delta}, {Notion::epistemic});
    EXPECT_THROW(sweep(grid, in), Error);  // delta needs two views
    in.measures = {Measure::p_emb_ens};
    const auto t = sweep(grid, in);
    ASSERT_EQ(t.rows.size(), 3u);
    auto model = std::make_shared<const GmmModel>(fit_gmm(in.train, in.fit));
    const auto single = evaluate({ScorerSpec(Measure::p_emb, model)}, in.in_dist, in.ood, in.notions);
    EXPECT_EQ(t.rows[0].auroc, single[0].auroc);
    const auto full = evaluate({ScorerSpec(Measure::p_emb_ens, model)}, in.in_dist, in.ood, in.notions);
    EXPECT_EQ(t.rows[2].auroc, full[0].auroc);
}

TEST(Sweep, ScheduleIndependent) {
    SweepGrid grid{SweepAxis::k_frac, {0.02, 0.05, 0.1}, 2};
    auto in = inputs({Measure::p_emb_ktau, Measure::entropy}, {Notion::aleatoric, Notion::overall});
    const std::string serial = render_sweep_csv(sweep(grid, in));
    in.threads = 4;
    EXPECT_EQ(render_sweep_csv(sweep(grid, in)), serial);
}

TEST(Sweep, PlotDataHasOneFigurePerNotion) {
    SweepGrid grid{SweepAxis::n_comp, {1, 2}, 2};
    const auto t = sweep(grid, inputs({Measure::p_emb, Measure::max_score}, {Notion::aleatoric, Notion::epistemic}));
    const auto j = sweep_plot_data(t);
    EXPECT_EQ(j["axis"], "n_comp");
    ASSERT_TRUE(j["figures"].contains("aleatoric_n_comp"));
    ASSERT_TRUE(j["figures"].contains("epistemic_n_comp"));
    const auto& series = j["figures"]["epistemic_n_comp"]["series"];
    EXPECT_EQ(series.size(), 2u);
    EXPECT_EQ(series[0]["x"].size(), 2u);
}

TEST(Sweep, InvalidGridsAreUsageErrors) {
    auto in = inputs({Measure::p_emb}, {Notion::epistemic});
    EXPECT_THROW(sweep(SweepGrid{SweepAxis::n_comp, {}, 1}, in), UsageError);
    EXPECT_THROW(sweep(SweepGrid{SweepAxis::n_comp, {3, 2}, 1}, in), UsageError);
    EXPECT_THROW(sweep(SweepGrid{SweepAxis::n_comp, {2.5}, 1}, in), UsageError);
    EXPECT_THROW(sweep(SweepGrid{SweepAxis::tau, {0.1}, 1}, in), UsageError);
    EXPECT_THROW(sweep(SweepGrid{SweepAxis::n_transforms, {8}, 1}, in), UsageError);
    EXPECT_THROW(parse_sweep_axis("width"), UsageError);
}
