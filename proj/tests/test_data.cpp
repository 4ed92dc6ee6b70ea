#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <hetfx/data.hpp>
#include <hetfx/io.hpp>
#include <hetfx/synth.hpp>

using namespace hetfx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::path(::testing::TempDir()) / "hetfx_data_tests";
    fs::create_directories(dir);
    return dir / name;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p);
    out << s;
}

Schema minimal_schema() {
    Schema s;
    s.treatment = "D";
    s.outcomes = {"y"};
    s.confounders = {"x"};
    s.cluster = "cl";
    s.id = "id";
    return s;
}

double sd_oracle(const std::vector<double>& a, const std::vector<double>& b, double factor) {
    auto m = [](const std::vector<double>& v) { double s = 0; for (double x : v) s += x; return s / v.size(); };
    auto var = [&](const std::vector<double>& v) { double mu = m(v), s = 0; for (double x : v) s += (x - mu) * (x - mu); return s / (v.size() - 1); };
    return 100.0 * std::abs(m(a) - m(b)) / std::sqrt(factor * (var(a) + var(b)));
}

// Two-point sample with the given mean and standard deviation.
std::vector<double> two_point(double mean, double sd) { return {mean - sd / std::sqrt(2.0), mean + sd / std::sqrt(2.0)}; }

} // namespace

// ---------------------------------------------------------------------------
// load_dataset

TEST(LoadDataset, MinimalFileHasConstantOnlyDesign) {
    const auto p = scratch("minimal.csv");
    write_text(p, "id,cl,D,y,x\n1,a,0,1.5,0.1\n2,a,1,2.5,0.2\n3,b,0,0.5,0.3\n4,b,1,3.0,0.4\n");
    const Dataset d = load_dataset(p.string(), minimal_schema());
    EXPECT_EQ(d.size(), 4u);
    ASSERT_EQ(d.heterogeneity().cols(), 1);
    EXPECT_TRUE((d.heterogeneity().array() == 1.0).all());
    EXPECT_EQ(d.treated_count(), 2u);
    EXPECT_EQ(d.cluster_count(), 2u);
    EXPECT_EQ(d.outcome(0)(3), 3.0);
}

TEST(LoadDataset, NonBinaryTreatmentIsRejected) {
    const auto p = scratch("bad_d.csv");
    write_text(p, "id,cl,D,y,x\n1,a,0,1,0\n2,a,2,1,0\n3,b,1,1,0\n");
    EXPECT_THROW(load_dataset(p.string(), minimal_schema()), ValidationError);
}

TEST(LoadDataset, MissingColumnIsSchemaError) {
    const auto p = scratch("no_x.csv");
    write_text(p, "id,cl,D,y\n1,a,0,1\n2,b,1,1\n");
    EXPECT_THROW(load_dataset(p.string(), minimal_schema()), SchemaError);
}

TEST(LoadDataset, NonFiniteCellNamesRowAndColumn) {
    const auto p = scratch("inf.csv");
    write_text(p, "id,cl,D,y,x\n1,a,0,1,0\n2,a,1,inf,0\n3,b,1,1,0\n");
    try {
        load_dataset(p.string(), minimal_schema());
        FAIL();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 2"), std::string::npos);
        EXPECT_NE(msg.find("'y'"), std::string::npos);
    }
}

TEST(LoadDataset, DuplicateIdsAreRejected) {
    const auto p = scratch("dup.csv");
    write_text(p, "id,cl,D,y,x\n1,a,0,1,0\n1,a,1,1,0\n");
    EXPECT_THROW(load_dataset(p.string(), minimal_schema()), ValidationError);
}

TEST(LoadDataset, SyntheticFileRoundTripsBitExactly) {
    DgpConfig cfg = default_config("obs-sparse");
    cfg.n = 1000;
    cfg.p = 20;
    cfg.delta.conservativeResize(20);
    cfg.beta.conservativeResize(20);
    cfg.months = 3;
    const SynthOutput s = generate(cfg);
    const auto p = scratch("roundtrip.csv");
    const Schema schema = write_dataset(p.string(), s.data);
    const Dataset back = load_dataset(p.string(), schema);
    EXPECT_EQ(back.outcomes(), s.data.outcomes());
    EXPECT_EQ(back.confounders(), s.data.confounders());
    EXPECT_EQ(back.heterogeneity(), s.data.heterogeneity());
    EXPECT_EQ(back.characteristics(), s.data.characteristics());
    EXPECT_EQ(back.treatment(), s.data.treatment());
    EXPECT_EQ(back.cluster_ids(), s.data.cluster_ids());
    EXPECT_EQ(back.obs_ids(), s.data.obs_ids());
    EXPECT_EQ(back.heterogeneity_names(), s.data.heterogeneity_names());
}

// ---------------------------------------------------------------------------
// Feature expansion

TEST(ExpandFeatures, SingleBinaryVariable) {
    Matrix raw(4, 1);
    raw << 0, 1, 1, 0;
    const FeatureMatrix f = expand_features(raw, infer_feature_spec(raw, {"b"}));
    EXPECT_EQ(f.names, (std::vector<std::string>{"const", "b"}));
    EXPECT_EQ(f.values.cols(), 2);
}

TEST(ExpandFeatures, TwoPositiveVariablesGiveTwelveColumns) {
    Matrix raw(3, 2);
    raw << 1.0, 2.0, 2.0, 0.5, 3.0, 1.5;
    FeatureSpec spec = infer_feature_spec(raw, {"u", "v"});
    const FeatureMatrix f = expand_features(raw, spec);
    const std::vector<std::string> expected{"const", "u",   "v",   "u*v", "u^2",    "u^3",
                                            "u^4",   "v^2", "v^3", "v^4", "log(u)", "log(v)"};
    EXPECT_EQ(f.names, expected);
    ASSERT_EQ(f.values.cols(), 12);
    for (Eigen::Index i = 0; i < 3; ++i) {
        const double u = raw(i, 0), v = raw(i, 1);
        const std::vector<double> row{1, u, v, u * v, u * u, u * u * u, u * u * u * u, v * v, v * v * v, v * v * v * v,
                                      std::log(u), std::log(v)};
        for (Eigen::Index j = 0; j < 12; ++j) EXPECT_DOUBLE_EQ(f.values(i, j), row[static_cast<std::size_t>(j)]);
    }
}

TEST(ExpandFeatures, NonPositiveColumnSkipsLogWithWarning) {
    Matrix raw(3, 1);
    raw << -1.0, 2.0, 3.0;
    const FeatureMatrix f = expand_features(raw, infer_feature_spec(raw, {"u"}));
    EXPECT_EQ(f.values.cols(), 5);  // const, u, u^2..u^4
    ASSERT_EQ(f.diagnostics.warnings.size(), 1u);
}

TEST(ExpandFeatures, DeterministicOrder) {
    Matrix raw = Matrix::Random(20, 4).cwiseAbs().array() + 0.1;
    const auto spec = infer_feature_spec(raw, {"a", "b", "c", "d"});
    const auto f1 = expand_features(raw, spec), f2 = expand_features(raw, spec);
    EXPECT_EQ(f1.names, f2.names);
    EXPECT_EQ(f1.values, f2.values);
    // 1 + 4 levels + 6 pairs + 12 powers + 4 logs
    EXPECT_EQ(f1.values.cols(), 27);
}

TEST(ExpandFeatures, InvalidSpecRejected) {
    Matrix raw = Matrix::Ones(3, 1);
    FeatureSpec spec = infer_feature_spec(raw, {"u"});
    spec.polynomial_order = 5;
    EXPECT_THROW(expand_features(raw, spec), DomainError);
}

// ---------------------------------------------------------------------------
// Screening

TEST(ScreenFeatures, RareBinaryAmongTreatedIsDropped) {
    const Index n = 1000;
    Matrix z(n, 3);
    Flags d(n, 0);
    Rng rng(5);
    std::normal_distribution<double> nd;
    for (Index i = 0; i < n; ++i) {
        d[i] = i < 400 ? 1 : 0;
        z(i, 0) = 1.0;
        z(i, 1) = (i < 2) ? 1.0 : ((i >= 400 && i % 3 == 0) ? 1.0 : 0.0);  // 0.5% of treated
        z(i, 2) = nd(rng);
    }
    FeatureSpec spec;
    const ScreenedFeatures s = screen_features(z, {"const", "rare", "x"}, spec, d);
    EXPECT_EQ(s.kept, (IndexList{0, 2}));
    ASSERT_EQ(s.dropped.size(), 1u);
    EXPECT_EQ(s.dropped[0].name, "rare");
}

TEST(ScreenFeatures, DuplicateColumnLaterCopyDropped) {
    Matrix z(50, 3);
    z.col(0).setOnes();
    z.col(1) = Vector::LinSpaced(50, 0.0, 1.0).array().square();
    z.col(2) = z.col(1);
    Flags d(50);
    for (Index i = 0; i < 50; ++i) d[i] = i % 2;
    const ScreenedFeatures s = screen_features(z, {"const", "a", "a_copy"}, FeatureSpec{}, d);
    EXPECT_EQ(s.names, (std::vector<std::string>{"const", "a"}));
}

TEST(ScreenFeatures, IndependentNormalsAllKept) {
    const Index n = 5000, p = 200;
    Matrix z(n, p + 1);
    Rng rng(11);
    std::normal_distribution<double> nd;
    z.col(0).setOnes();
    for (Index j = 1; j <= p; ++j)
        for (Index i = 0; i < n; ++i) z(i, j) = nd(rng);
    Flags d(n);
    for (Index i = 0; i < n; ++i) d[i] = i % 2;
    std::vector<std::string> names(p + 1, "v");
    const ScreenedFeatures s = screen_features(z, names, FeatureSpec{}, d);
    EXPECT_EQ(s.kept.size(), p + 1);
    EXPECT_TRUE(s.dropped.empty());
}

TEST(ScreenFeatures, ConstantNeverDroppedAndWidthNeverGrows) {
    Matrix z = Matrix::Ones(10, 3);
    Flags d{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    const ScreenedFeatures s = screen_features(z, {"const", "k1", "k2"}, FeatureSpec{}, d);
    EXPECT_EQ(s.kept, IndexList{0});
    EXPECT_LE(s.values.cols(), z.cols());
}

// ---------------------------------------------------------------------------
// Standardized differences

TEST(StandardizedDifference, EqualMeansGiveZero) {
    EXPECT_EQ(standardized_difference(std::vector<double>{1, 2, 3}, std::vector<double>{0, 2, 4}), 0.0);
}

TEST(StandardizedDifference, UnitVariancesMeanGapOne) {
    const std::vector<double> a{1, 2, 3}, b{0, 1, 2};
    EXPECT_NEAR(standardized_difference(a, b), 100.0, 1e-12);
}

TEST(StandardizedDifference, DescriptiveTableRowBothDenominators) {
    const auto a = two_point(4.58, 2.02), b = two_point(4.16, 2.05);
    const double half = standardized_difference(a, b);
    const double full = standardized_difference(a, b, SdDenominator::full_sum);
    EXPECT_NEAR(half, sd_oracle(a, b, 0.5), 1e-12);
    EXPECT_NEAR(full, sd_oracle(a, b, 1.0), 1e-12);
    EXPECT_NEAR(half, 20.6, 0.05);
    EXPECT_NEAR(full, 14.6, 0.05);
    // The printed value 14.50 matches the full-sum denominator, not the default one.
    EXPECT_LT(std::abs(full - 14.50), 0.15);
    EXPECT_GT(std::abs(half - 14.50), 5.0);
}

TEST(StandardizedDifference, ZeroVarianceCases) {
    EXPECT_EQ(standardized_difference(std::vector<double>{2, 2}, std::vector<double>{2, 2, 2}), 0.0);
    EXPECT_THROW(standardized_difference(std::vector<double>{2, 2}, std::vector<double>{3, 3}), DomainError);
}

TEST(StandardizedDifference, SymmetricAndShiftInvariant) {
    Rng rng(3);
    std::normal_distribution<double> nd(1.0, 2.0);
    std::vector<double> a(40), b(55);
    for (auto& v : a) v = nd(rng);
    for (auto& v : b) v = nd(rng) + 0.7;
    const double s = standardized_difference(a, b);
    EXPECT_NEAR(standardized_difference(b, a), s, 1e-12);
    for (auto& v : a) v += 123.0;
    for (auto& v : b) v += 123.0;
    EXPECT_NEAR(standardized_difference(a, b), s, 1e-9);
}

// ---------------------------------------------------------------------------
// Pseudo starts

TEST(PseudoStarts, DegenerateDonorDistribution) {
    const std::vector<int> treated(10, 2), exits{5, 6, 7};
    const PseudoStarts p = assign_pseudo_starts(treated, exits, 1);
    EXPECT_EQ(p.starts, (std::vector<int>{2, 2, 2}));
    EXPECT_EQ(p.eligible, (Flags{1, 1, 1}));
}

TEST(PseudoStarts, FrequenciesFollowDonors) {
    const std::vector<int> treated{1, 1, 3};
    const std::vector<int> exits(3000, 100);
    const PseudoStarts p = assign_pseudo_starts(treated, exits, 42);
    const double ones = static_cast<double>(std::count(p.starts.begin(), p.starts.end(), 1)) / 3000.0;
    EXPECT_NEAR(ones, 2.0 / 3.0, 0.02);
    EXPECT_NEAR(1.0 - ones, 1.0 / 3.0, 0.02);
}

TEST(PseudoStarts, EarlyExitIsIneligible) {
    const std::vector<int> treated{3}, exits{1};
    const PseudoStarts p = assign_pseudo_starts(treated, exits, 9);
    EXPECT_EQ(p.starts[0], 3);
    EXPECT_EQ(p.eligible[0], 0);
}

TEST(PseudoStarts, DeterministicGivenSeed) {
    const std::vector<int> treated{1, 2, 3, 4, 5};
    const std::vector<int> exits(100, 3);
    EXPECT_EQ(assign_pseudo_starts(treated, exits, 8).starts, assign_pseudo_starts(treated, exits, 8).starts);
}

TEST(PseudoStarts, EmptyStratumNamed) {
    const std::vector<int> treated{1, 2};
    const std::vector<std::string> ts{"a", "a"}, cs{"a", "zz"};
    const std::vector<int> exits{4, 4};
    try {
        assign_pseudo_starts(treated, exits, 1, ts, cs);
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("'zz'"), std::string::npos);
    }
}

TEST(PseudoStarts, StratifiedKolmogorovSmirnovSmall) {
    // Donor distributions differ by stratum.
    std::vector<int> treated;
    std::vector<std::string> ts;
    for (int k = 1; k <= 12; ++k)
        for (int r = 0; r < k; ++r) {
            treated.push_back(k);
            ts.push_back("early");
        }
    for (int k = 1; k <= 12; ++k)
        for (int r = 0; r < 13 - k; ++r) {
            treated.push_back(k);
            ts.push_back("late");
        }
    const Index n = 10000;
    std::vector<int> exits(n, 100);
    std::vector<std::string> cs(n);
    for (Index i = 0; i < n; ++i) cs[i] = i % 2 ? "early" : "late";
    const PseudoStarts p = assign_pseudo_starts(treated, exits, 77, ts, cs);
    for (const std::string stratum : {"early", "late"}) {
        std::vector<double> donor_cdf(13, 0.0), got_cdf(13, 0.0);
        double nd = 0, ng = 0;
        for (std::size_t i = 0; i < treated.size(); ++i)
            if (ts[i] == stratum) { donor_cdf[treated[i]] += 1; nd += 1; }
        for (Index i = 0; i < n; ++i)
            if (cs[i] == stratum) { got_cdf[p.starts[i]] += 1; ng += 1; }
        double a = 0, b = 0, ks = 0;
        for (int k = 1; k <= 12; ++k) {
            a += donor_cdf[k] / nd;
            b += got_cdf[k] / ng;
            ks = std::max(ks, std::abs(a - b));
        }
        EXPECT_LT(ks, 0.05) << stratum;
    }
}
