#include <gtest/gtest.h>

#include <hetfx/inference.hpp>
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

BootstrapConfig boot(Index b, std::uint64_t seed) {
    BootstrapConfig c;
    c.replications = b;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Averages, EqualScoresGiveMeanDifference) {
    const std::vector<double> y{3, 5, 1, 2, 6}, p(5, 0.5);
    const Flags d{1, 1, 0, 0, 0};
    const WeightVector w = ipw_weights(p, d);
    const AverageEffects a = estimate_averages(y, d, p, w.values);
    EXPECT_NEAR(a.ate, 4.0 - 3.0, 1e-12);
    EXPECT_NEAR(a.atet, 1.0, 1e-12);
    EXPECT_NEAR(a.atent, 1.0, 1e-12);
}

TEST(Averages, ConstantOutcomeGivesZero) {
    const std::vector<double> y(6, 2.0), p{0.2, 0.3, 0.6, 0.5, 0.7, 0.4};
    const Flags d{1, 0, 1, 0, 1, 0};
    const WeightVector w = ipw_weights(p, d);
    const AverageEffects a = estimate_averages(y, d, p, w.values);
    EXPECT_NEAR(a.ate, 0.0, 1e-12);
    EXPECT_NEAR(a.atet, 0.0, 1e-12);
    EXPECT_NEAR(a.atent, 0.0, 1e-12);
}

TEST(Averages, OddsReweightingOracle) {
    const std::vector<double> y{1, 4, 2, 7}, p{0.4, 0.6, 0.3, 0.8};
    const Flags d{1, 1, 0, 0};
    const WeightVector w = ipw_weights(p, d);
    const AverageEffects a = estimate_averages(y, d, p, w.values);
    const double q2 = 0.3 / 0.7, q3 = 0.8 / 0.2;
    EXPECT_NEAR(a.atet, 2.5 - (q2 * 2 + q3 * 7) / (q2 + q3), 1e-12);
    const double r0 = 0.6 / 0.4, r1 = 0.4 / 0.6;
    EXPECT_NEAR(a.atent, (r0 * 1 + r1 * 4) / (r0 + r1) - 4.5, 1e-12);
    const double wt = 1 / 0.4 + 1 / 0.6, wc = 1 / 0.7 + 1 / 0.2;
    EXPECT_NEAR(a.ate, (1 / 0.4 * 1 + 1 / 0.6 * 4) / wt - (1 / 0.7 * 2 + 1 / 0.2 * 7) / wc, 1e-12);
}

TEST(Averages, SingleMonthCurveMatchesScalar) {
    const SynthOutput s = rct(500, 20, 1);
    const WeightVector w = ipw_weights(as_span(s.propensity), s.data.treatment());
    const Vector y = s.data.outcome(0);
    const auto curve = monthly_effect_curve(s.data.outcomes(), s.data.treatment(), as_span(s.propensity), w.values);
    ASSERT_EQ(curve.size(), 1u);
    EXPECT_EQ(curve[0].ate, estimate_averages(as_span(y), s.data.treatment(), as_span(s.propensity), w.values).ate);
}

TEST(Averages, IdenticalMonthsGiveFlatCurve) {
    const SynthOutput s = rct(500, 20, 2);
    const WeightVector w = ipw_weights(as_span(s.propensity), s.data.treatment());
    Matrix y(s.data.size(), 4);
    for (Eigen::Index m = 0; m < 4; ++m) y.col(m) = s.data.outcome(0);
    const auto curve = monthly_effect_curve(y, s.data.treatment(), as_span(s.propensity), w.values);
    for (const auto& a : curve) EXPECT_EQ(a.ate, curve[0].ate);
}

TEST(BootstrapSe, DivisorB) {
    EXPECT_DOUBLE_EQ(bootstrap_se(std::vector<double>{1, 3}), 1.0);
    EXPECT_DOUBLE_EQ(bootstrap_se(std::vector<double>{0, 2}), 1.0);
    EXPECT_THROW(bootstrap_se(std::vector<double>{1}), DomainError);
}

TEST(BootstrapSe, Stars) {
    EXPECT_EQ(significance_stars(3.0, 1.0), "***");
    EXPECT_EQ(significance_stars(2.0, 1.0), "**");
    EXPECT_EQ(significance_stars(1.7, 1.0), "*");
    EXPECT_EQ(significance_stars(1.0, 1.0), "");
    EXPECT_EQ(significance_stars(1.0, 0.0), "");
}

TEST(AverageBootstrap, ZeroOutcomeHasZeroSe) {
    const SynthOutput s = rct(1000, 40, 3);
    const Matrix y = Matrix::Zero(s.data.size(), 1);
    BootstrapConfig c = boot(30, 4);
    const AverageBootstrap r = bootstrap_averages(y, s.data.treatment(), s.data.confounders(), as_span(s.propensity),
                                                  s.data.cluster_index(), c);
    for (double v : r.se[0]) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(r.used, 30u);
}

TEST(AverageBootstrap, DeterministicAcrossWorkers) {
    const SynthOutput s = rct(1000, 40, 5);
    BootstrapConfig c = boot(25, 6);
    const auto a = bootstrap_averages(s.data.outcomes(), s.data.treatment(), s.data.confounders(), as_span(s.propensity),
                                      s.data.cluster_index(), c);
    c.workers = 3;
    const auto b = bootstrap_averages(s.data.outcomes(), s.data.treatment(), s.data.confounders(), as_span(s.propensity),
                                      s.data.cluster_index(), c);
    EXPECT_EQ(a.replicates, b.replicates);
}

TEST(CateBootstrap, SigmaIsPopulationSdOfReplicateCates) {
    const SynthOutput s = rct(3000, 60, 7);
    const EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.splits = 2;
    cfg.seed = 3;
    const PipelineResult pr = run_pipeline(sample, cfg);
    const CateBootstrapResult b = bootstrap_cates(sample, pr.splits, boot(40, 9));
    EXPECT_EQ(b.used, 40u);
    for (Eigen::Index i : {Eigen::Index{0}, Eigen::Index{17}, Eigen::Index{2999}}) {
        const Vector zi = sample.z.row(i).transpose();
        const Vector v = b.replicate_deltas * zi;
        EXPECT_NEAR(b.sigma(i), bootstrap_se(as_span(v)), 1e-10);
    }
    EXPECT_LT((b.delta - (pr.splits[0].delta + pr.splits[1].delta) / 2.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CateBootstrap, SingleClusterIsDegenerate) {
    const SynthOutput s = rct(2000, 40, 8);
    EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.splits = 1;
    cfg.seed = 5;
    const PipelineResult pr = run_pipeline(sample, cfg);
    // Collapse the resampling units into one: every replication redraws it.
    sample.clusters.assign(sample.size(), 0);
    const CateBootstrapResult b = bootstrap_cates(sample, pr.splits, boot(10, 1));
    EXPECT_LT(b.sigma.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CateBootstrap, RefitUsesIntersectionWithEstimationHalf) {
    const SynthOutput s = rct(2000, 40, 9);
    const EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.splits = 1;
    cfg.seed = 6;
    const PipelineResult pr = run_pipeline(sample, cfg);
    EstimationSample perturbed = sample;
    for (Index i : pr.splits[0].training) perturbed.y(static_cast<Eigen::Index>(i)) += 100.0;
    const SplitResult rebuilt = rebuild_split(perturbed, cfg, 0, pr.splits[0].plan);
    const auto a = bootstrap_cates(sample, pr.splits, boot(15, 2));
    const auto b = bootstrap_cates(perturbed, {rebuilt}, boot(15, 2));
    EXPECT_LT((a.replicate_deltas - b.replicate_deltas).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CateBootstrap, SingletonClustersMatchOrdinaryBootstrap) {
    DgpConfig c = default_config("rct-linear");
    c.n = 600;
    c.clusters = 600;
    c.seed = 10;
    SynthOutput s = generate(c);
    EstimationSample sample = sample_of(s);
    std::iota(sample.clusters.begin(), sample.clusters.end(), Index{0});
    PipelineConfig cfg;
    cfg.splits = 1;
    cfg.seed = 4;
    const PipelineResult pr = run_pipeline(sample, cfg);
    const SplitResult& sp = pr.splits[0];
    const BootstrapConfig bc = boot(12, 33);
    const auto res = bootstrap_cates(sample, pr.splits, bc);

    // Independent replay: row-level multiplicities, group-renormalized
    // frequency-scaled weights, plain WLS on the plan's design rows.
    const Matrix zr = select_rows(sample.z, sp.estimation);
    Flags dr;
    for (Index i : sp.estimation) dr.push_back(sample.d[i]);
    const Matrix x = sp.plan.design(zr, dr);
    for (std::size_t row = 0; row < res.replication_ids.size(); ++row) {
        const Index b = res.replication_ids[row];
        Rng rng = make_rng(bc.seed, StreamTag::bootstrap_cates, b);
        std::uniform_int_distribution<Index> pick(0, sample.size() - 1);
        std::vector<double> mult(sample.size(), 0.0);
        for (Index k = 0; k < sample.size(); ++k) mult[pick(rng)] += 1.0;
        Vector w(static_cast<Eigen::Index>(sp.estimation.size()));
        double mass[2] = {0, 0};
        for (std::size_t a = 0; a < sp.estimation.size(); ++a) {
            w(static_cast<Eigen::Index>(a)) = mult[sp.estimation[a]] * sp.estimation_weights(static_cast<Eigen::Index>(a));
            mass[dr[a]] += w(static_cast<Eigen::Index>(a));
        }
        for (std::size_t a = 0; a < sp.estimation.size(); ++a) w(static_cast<Eigen::Index>(a)) /= mass[dr[a]];
        const Vector beta = wols_fit(x, sp.estimation_response, w).beta;
        Vector delta = Vector::Zero(sample.z.cols());
        for (std::size_t a = 0; a < sp.plan.inter.size(); ++a)
            delta(static_cast<Eigen::Index>(sp.plan.inter[a])) = beta(static_cast<Eigen::Index>(sp.plan.main.size() + a));
        EXPECT_LT((delta - res.replicate_deltas.row(static_cast<Eigen::Index>(row)).transpose()).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(CateBootstrap, TooManyUnidentifiedReplicationsIsAnError) {
    const SynthOutput s = rct(2000, 40, 11);
    EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.splits = 1;
    cfg.seed = 7;
    const PipelineResult pr = run_pipeline(sample, cfg);
    // A design column that is nonzero in one cluster only: most draws miss it.
    SplitResult sp = pr.splits[0];
    const Index target = sample.clusters[sp.estimation.front()];
    const auto last = sample.z.cols() - 1;
    for (Eigen::Index i = 0; i < sample.z.rows(); ++i)
        sample.z(i, last) = sample.clusters[static_cast<Index>(i)] == target ? 1.0 + 0.01 * static_cast<double>(i % 7) : 0.0;
    sp.plan.inter = {0, static_cast<Index>(last)};
    sp.plan.main.clear();
    sp.plan.kind = RefitKind::joint;
    const SplitResult rebuilt = rebuild_split(sample, cfg, 0, sp.plan);
    EXPECT_THROW(bootstrap_cates(sample, {rebuilt}, boot(50, 3)), NumericalError);
}

TEST(CateBootstrap, ZeroOutcomeAndDeterminism) {
    const SynthOutput s = rct(2000, 40, 12);
    EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.splits = 2;
    cfg.seed = 8;
    const PipelineResult pr = run_pipeline(sample, cfg);
    BootstrapConfig bc = boot(20, 4);
    const auto a = bootstrap_cates(sample, pr.splits, bc);
    bc.workers = 3;
    const auto b = bootstrap_cates(sample, pr.splits, bc);
    EXPECT_EQ(a.replicate_deltas, b.replicate_deltas);

    sample.y.setZero();
    const PipelineResult zero = run_pipeline(sample, cfg);
    const auto z = bootstrap_cates(sample, zero.splits, boot(20, 4));
    EXPECT_EQ(z.sigma.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CateBootstrap, GroupMeanSeIsLinear) {
    const SynthOutput s = rct(2000, 40, 13);
    const EstimationSample sample = sample_of(s);
    PipelineConfig cfg;
    cfg.splits = 2;
    cfg.seed = 9;
    const PipelineResult pr = run_pipeline(sample, cfg);
    const auto b = bootstrap_cates(sample, pr.splits, boot(30, 5));
    const Flags all(sample.size(), 1);
    const Vector a = group_profile(sample.z, all);
    EXPECT_NEAR(b.point_of(a), group_average(pr.ensemble.bagged, all), 1e-10);
    const Vector v = b.replicate_deltas * a;
    EXPECT_NEAR(b.se_of(a), bootstrap_se(as_span(v)), 1e-10);
}
