#include <gtest/gtest.h>

#include <map>
#include <set>

#include <hetfx/pipeline.hpp>
#include <hetfx/synth.hpp>

using namespace hetfx;

namespace {

EstimationSample sample_of(const SynthOutput& s) {
    const WeightVector w = ipw_weights(as_span(s.propensity), s.data.treatment());
    return EstimationSample::from(s.data, 0, as_span(s.propensity), w);
}

SynthOutput rct(Index n, Index clusters, std::uint64_t seed) {
    DgpConfig c = default_config("rct-linear");
    c.n = n;
    c.clusters = clusters;
    c.seed = seed;
    return generate(c);
}

PipelineConfig constant_only(EffectMethod m) {
    PipelineConfig cfg;
    cfg.method = m;
    cfg.selector.kind = SelectorKind::fixed_lambda;
    cfg.selector.lambda = 1e12;
    cfg.splits = 3;
    cfg.seed = 17;
    return cfg;
}

double half_ipw_ate(const EstimationSample& s, const IndexList& rows) {
    double wt = 0, wc = 0, yt = 0, yc = 0;
    for (Index i : rows) {
        const auto r = static_cast<Eigen::Index>(i);
        if (s.d[i]) {
            wt += s.weights(r);
            yt += s.weights(r) * s.y(r);
        } else {
            wc += s.weights(r);
            yc += s.weights(r) * s.y(r);
        }
    }
    return yt / wt - yc / wc;
}

} // namespace

TEST(HonestSplit, SingletonClustersHalve) {
    IndexList c(10);
    std::iota(c.begin(), c.end(), Index{0});
    const SplitHalves h = honest_split(10, c, 5);
    EXPECT_EQ(h.training.size(), 5u);
    EXPECT_EQ(h.estimation.size(), 5u);
}

TEST(HonestSplit, DeterministicAndClusterRespecting) {
    const SynthOutput s = rct(3000, 60, 3);
    const IndexList c = s.data.cluster_index();
    const SplitHalves a = honest_split(3000, c, 99), b = honest_split(3000, c, 99);
    EXPECT_EQ(a.training, b.training);
    EXPECT_NE(a.training, honest_split(3000, c, 100).training);
    std::set<Index> train_clusters;
    for (Index i : a.training) train_clusters.insert(c[i]);
    for (Index i : a.estimation) EXPECT_FALSE(train_clusters.count(c[i]));
    // Greedy balance: the halves differ by at most the largest cluster.
    std::map<Index, Index> sizes;
    for (Index k : c) sizes[k]++;
    Index largest = 0;
    for (auto [k, m] : sizes) largest = std::max(largest, m);
    const auto diff = static_cast<long long>(a.training.size()) - static_cast<long long>(a.estimation.size());
    EXPECT_LE(std::llabs(diff), static_cast<long long>(largest));
}

TEST(HonestSplit, SingleClusterRejected) {
    EXPECT_THROW(honest_split(10, IndexList(10, 0), 1), DomainError);
}

TEST(RunSplit, ConstantOnlySelectorGivesHalfIpwAte) {
    const SynthOutput s = rct(4000, 80, 4);
    const EstimationSample sample = sample_of(s);
    for (EffectMethod m : {EffectMethod::mcm_none, EffectMethod::mcm_one_step}) {
        const PipelineConfig cfg = constant_only(m);
        const SplitResult r = run_split(sample, cfg, 0);
        EXPECT_EQ(r.plan.inter, IndexList{0});
        EXPECT_NEAR(r.delta(0), half_ipw_ate(sample, r.estimation), 1e-10);
        for (Eigen::Index j = 1; j < r.delta.size(); ++j) EXPECT_EQ(r.delta(j), 0.0);
    }
}

TEST(RunSplit, ZeroOutcomeGivesZeroCates) {
    const SynthOutput s = rct(2000, 40, 5);
    EstimationSample sample = sample_of(s);
    sample.y.setZero();
    PipelineConfig cfg;
    cfg.splits = 2;
    const PipelineResult r = run_pipeline(sample, cfg);
    EXPECT_EQ(r.ensemble.bagged.cwiseAbs().maxCoeff(), 0.0);
}

TEST(BagCates, AveragesOverSplits) {
    SplitResult a, b;
    a.predictions = Vector::Constant(4, 1.0);
    b.predictions = Vector::Constant(4, 3.0);
    EXPECT_EQ(bag_cates({a}).bagged, a.predictions);
    const CateEnsemble e = bag_cates({a, b});
    EXPECT_EQ(e.bagged, Vector::Constant(4, 2.0));
    EXPECT_EQ(e.splits(), 2u);
    EXPECT_THROW(bag_cates({}), DomainError);
}

TEST(GroupAverage, Cases) {
    Vector v(4);
    v << 1, 2, 3, 6;
    EXPECT_DOUBLE_EQ(group_average(v, Flags{1, 1, 1, 1}), 3.0);
    EXPECT_DOUBLE_EQ(group_average(v, Flags{0, 0, 1, 0}), 3.0);
    EXPECT_DOUBLE_EQ(group_average(v, Flags{1, 0, 0, 1}), 3.5);
    EXPECT_THROW(group_average(v, Flags{0, 0, 0, 0}), DomainError);
}

TEST(Pipeline, EstimationHalfOutcomesNeverReachSelection) {
    const SynthOutput s = rct(3000, 60, 6);
    const EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.seed = 8;
    const SplitResult base = run_split(sample, cfg, 0);
    EstimationSample shuffled = sample;
    Rng rng(1);
    IndexList est = base.estimation;
    IndexList perm = est;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 0; k < est.size(); ++k)
        shuffled.y(static_cast<Eigen::Index>(est[k])) = sample.y(static_cast<Eigen::Index>(perm[k]));
    const SplitResult moved = run_split(shuffled, cfg, 0);
    EXPECT_EQ(moved.plan.inter, base.plan.inter);
    EXPECT_EQ(moved.plan.main, base.plan.main);
    EXPECT_EQ(moved.selection.lambda, base.selection.lambda);
}

TEST(Pipeline, RefitIsLinearInTheOutcome) {
    const SynthOutput s = rct(3000, 60, 7);
    const EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.seed = 9;
    const SplitResult base = run_split(sample, cfg, 0);
    EstimationSample scaled = sample;
    scaled.y = 2.5 * sample.y + Vector::Constant(sample.y.size(), 0.0);
    const SplitResult r = rebuild_split(scaled, cfg, 0, base.plan);
    EXPECT_LT((r.delta - 2.5 * base.delta).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Pipeline, WorkerCountDoesNotChangeResults) {
    const SynthOutput s = rct(3000, 60, 8);
    const EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.splits = 4;
    cfg.seed = 10;
    cfg.workers = 1;
    const PipelineResult a = run_pipeline(sample, cfg);
    cfg.workers = 3;
    const PipelineResult b = run_pipeline(sample, cfg);
    EXPECT_EQ(a.ensemble.predictions, b.ensemble.predictions);
    EXPECT_EQ(a.ensemble.selected, b.ensemble.selected);
}

TEST(Pipeline, SplitPredictionsTrackTruth) {
    const SynthOutput s = generate(default_config("rct-linear"));
    const EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.splits = 2;
    cfg.seed = 11;
    const PipelineResult r = run_pipeline(sample, cfg);
    for (const auto& sp : r.splits) EXPECT_GT(pearson_correlation(as_span(sp.predictions), as_span(s.tau)), 0.6);
    EXPECT_GT(pearson_correlation(as_span(r.ensemble.bagged), as_span(s.tau)), 0.9);
}

TEST(Pipeline, MomRefitUsesModifiedOutcome) {
    const SynthOutput s = rct(3000, 60, 12);
    const EstimationSample sample = sample_of(s);
    PipelineConfig cfg = constant_only(EffectMethod::mom);
    const SplitResult r = run_split(sample, cfg, 0);
    // Intercept-only refit of y* with unit weights is its plain mean.
    double sum = 0.0;
    for (Index i : r.estimation) {
        const auto k = static_cast<Eigen::Index>(i);
        const double p = sample.pscore(k);
        sum += sample.y(k) * ((sample.d[i] ? 1.0 : 0.0) - p) / (p * (1.0 - p));
    }
    EXPECT_NEAR(r.delta(0), sum / static_cast<double>(r.estimation.size()), 1e-10);
    EXPECT_FALSE(r.group_normalized);
}

TEST(Prepare, TrimsAndReweights) {
    const SynthOutput s = generate(default_config("obs-sparse"));
    const PreparedData p = prepare(s.data);
    ASSERT_TRUE(p.trim.has_value());
    EXPECT_EQ(p.data.size(), p.retained.size());
    EXPECT_NEAR(p.weights.group_sum(p.data.treatment(), true), 1.0, 1e-12);
    EXPECT_NEAR(p.weights.group_sum(p.data.treatment(), false), 1.0, 1e-12);
    const PreparedData all = prepare(s.data, false);
    EXPECT_EQ(all.data.size(), s.data.size());
}
