#include <gtest/gtest.h>

#include <hetfx/solvers.hpp>

using namespace hetfx;

namespace {

struct Problem {
    Matrix x;
    Vector y;
    Vector w;
    IndexList clusters;
};

// Intercept plus p-1 normal columns; y depends on the first `active` columns.
Problem make_problem(Index n, Index p, Index active, std::uint64_t seed, double noise = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u(0.5, 2.0);
    Problem pr;
    pr.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    pr.y.resize(static_cast<Eigen::Index>(n));
    pr.w.resize(static_cast<Eigen::Index>(n));
    for (Index i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        pr.x(r, 0) = 1.0;
        for (Eigen::Index j = 1; j < pr.x.cols(); ++j) pr.x(r, j) = nd(rng);
        double mu = 0.5;
        for (Index j = 1; j <= active; ++j) mu += (j % 2 ? 1.0 : -0.8) * pr.x(r, static_cast<Eigen::Index>(j));
        pr.y(r) = mu + noise * nd(rng);
        pr.w(r) = u(rng);
        pr.clusters.push_back(i % 40);
    }
    return pr;
}

// KKT threshold for an unpenalized intercept: max_j |2 sum_i w_i (x_ij - xbar_j)(y_i - ybar)| / loading_j.
double kkt_lambda_max(const Matrix& x, const Vector& y, const Vector& w, const std::vector<double>& loadings) {
    const double sw = w.sum();
    const double ybar = w.dot(y) / sw;
    double best = 0.0;
    for (Eigen::Index j = 1; j < x.cols(); ++j) {
        const double xbar = w.dot(x.col(j)) / sw;
        double s = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) s += w(i) * (x(i, j) - xbar) * (y(i) - ybar);
        best = std::max(best, std::abs(2.0 * s) / loadings[static_cast<Index>(j)]);
    }
    return best;
}

} // namespace

// ---------------------------------------------------------------------------
// WOLS

TEST(Wols, ExactInterpolation) {
    const Problem pr = make_problem(50, 4, 0, 1);
    Vector beta(4);
    beta << 0.3, -1.2, 2.0, 0.7;
    const Vector y = pr.x * beta;
    EXPECT_LT((wols_fit(pr.x, y, pr.w).beta - beta).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Wols, HandSolvedNormalEquations) {
    Matrix x(3, 2);
    x << 1, 0, 1, 1, 1, 3;
    Vector y(3);
    y << 1, 2, 2;
    // X'X = [[3,4],[4,10]], X'y = [5,8]; det 14.
    const double b0 = (10.0 * 5.0 - 4.0 * 8.0) / 14.0;
    const double b1 = (3.0 * 8.0 - 4.0 * 5.0) / 14.0;
    const Vector b = wols_fit(x, y, Vector::Ones(3)).beta;
    EXPECT_NEAR(b(0), b0, 1e-12);
    EXPECT_NEAR(b(1), b1, 1e-12);
}

TEST(Wols, DoublingWeightsLeavesSolution) {
    const Problem pr = make_problem(60, 5, 3, 2);
    const Vector a = wols_fit(pr.x, pr.y, pr.w).beta;
    const Vector b = wols_fit(pr.x, pr.y, 2.0 * pr.w).beta;
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Wols, ZeroWeightsRejected) {
    const Problem pr = make_problem(10, 2, 1, 3);
    EXPECT_THROW(wols_fit(pr.x, pr.y, Vector::Zero(10)), DomainError);
}

TEST(Wols, RankDeficientColumnDropped) {
    Problem pr = make_problem(40, 3, 1, 4);
    Matrix x(40, 4);
    x << pr.x, pr.x.col(1) - pr.x.col(2);
    const WolsResult r = wols_fit(x, pr.y, pr.w);
    EXPECT_EQ(r.dropped, IndexList{3});
    EXPECT_LT((r.beta.head(3) - wols_fit(pr.x, pr.y, pr.w).beta).cwiseAbs().maxCoeff(), 1e-10);
}

// ---------------------------------------------------------------------------
// LASSO

TEST(Lasso, ZeroPenaltyMatchesWols) {
    const Problem pr = make_problem(300, 8, 4, 5);
    const auto loadings = unit_loadings(8, {0});
    const Vector a = weighted_lasso(pr.x, pr.y, pr.w, 0.0, loadings).coefficients;
    const Vector b = wols_fit(pr.x, pr.y, pr.w).beta;
    EXPECT_LE((a - b).norm() / b.norm(), 1e-6);
}

TEST(Lasso, KktThresholdZeroesEveryPenalizedCoefficient) {
    const Problem pr = make_problem(400, 10, 3, 6);
    std::vector<double> loadings = unit_loadings(10, {0});
    loadings[4] = 2.5;
    const double oracle = kkt_lambda_max(pr.x, pr.y, pr.w, loadings);
    EXPECT_NEAR(lasso_lambda_max(pr.x, pr.y, pr.w, loadings), oracle, 1e-9 * oracle);
    const LassoSolution at = weighted_lasso(pr.x, pr.y, pr.w, oracle * (1 + 1e-12), loadings);
    EXPECT_TRUE(at.selected.empty());
    for (Eigen::Index j = 1; j < 10; ++j) EXPECT_EQ(at.coefficients(j), 0.0);
    EXPECT_NEAR(at.coefficients(0), pr.w.dot(pr.y) / pr.w.sum(), 1e-12);
    const LassoSolution above = weighted_lasso(pr.x, pr.y, pr.w, 3.0 * oracle, loadings);
    EXPECT_TRUE(above.selected.empty());
    const LassoSolution below = weighted_lasso(pr.x, pr.y, pr.w, 0.98 * oracle, loadings);
    EXPECT_FALSE(below.selected.empty());
}

TEST(Lasso, OrthonormalColumnSoftThreshold) {
    Vector x = Vector::LinSpaced(20, -1.0, 2.0);
    x /= x.norm();
    Rng rng(8);
    std::normal_distribution<double> nd;
    Vector y(20);
    for (auto& v : y) v = nd(rng);
    y += 1.7 * x;
    const double ols = x.dot(y);
    for (double lambda : {0.0, 0.5, 1.0, 2.0 * std::abs(ols) - 0.01, 2.0 * std::abs(ols) + 0.01, 10.0}) {
        const double expected = (ols > 0 ? 1.0 : -1.0) * std::max(std::abs(ols) - lambda / 2.0, 0.0);
        const LassoSolution s = weighted_lasso(x, y, Vector::Ones(20), lambda, {1.0});
        EXPECT_NEAR(s.coefficients(0), expected, 1e-12) << lambda;
    }
}

TEST(Lasso, ObjectiveNonIncreasingAcrossPasses) {
    const Problem pr = make_problem(500, 30, 6, 9);
    LassoOptions opt;
    opt.record_objective = true;
    const double lmax = lasso_lambda_max(pr.x, pr.y, pr.w, unit_loadings(30, {0}));
    const LassoSolution s = weighted_lasso(pr.x, pr.y, pr.w, 0.05 * lmax, unit_loadings(30, {0}), opt);
    ASSERT_GE(s.objective_trace.size(), 2u);
    for (std::size_t k = 1; k < s.objective_trace.size(); ++k)
        EXPECT_LE(s.objective_trace[k], s.objective_trace[k - 1] * (1 + 1e-12) + 1e-12);
}

TEST(Lasso, PathIsContinuousInLambda) {
    const Problem pr = make_problem(300, 12, 5, 10);
    const auto loadings = unit_loadings(12, {0});
    const LassoProblem problem(weighted_gram(pr.x, pr.y, pr.w), loadings);
    const auto grid = lambda_grid(problem.lambda_max(), 20, 1e-3);
    for (std::size_t g = 0; g + 1 < grid.size(); ++g) {
        const double mid = std::sqrt(grid[g] * grid[g + 1]);
        const Vector a = problem.solve(mid).coefficients;
        const Vector b = problem.solve(mid * (1 + 1e-7)).coefficients;
        EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-5);
    }
}

TEST(Lasso, NegativeLambdaRejected) {
    const Problem pr = make_problem(20, 3, 1, 11);
    EXPECT_THROW(weighted_lasso(pr.x, pr.y, pr.w, -1.0, unit_loadings(3, {0})), DomainError);
}

TEST(Lasso, LambdaGridIsLogSpaced) {
    const auto g = lambda_grid(10.0, 100, 1e-4);
    ASSERT_EQ(g.size(), 100u);
    EXPECT_EQ(g.front(), 10.0);
    EXPECT_NEAR(g.back(), 1e-3, 1e-15);
    EXPECT_NEAR(g[1] / g[0], g[50] / g[49], 1e-12);
}

TEST(PostLasso, ReproducesRestrictedWols) {
    const Problem pr = make_problem(200, 8, 3, 12);
    const IndexList cols{0, 2, 5};
    const Vector refit = post_lasso_refit(pr.x, pr.y, pr.w, cols);
    const Vector direct = wols_fit(select_cols(pr.x, cols), pr.y, pr.w).beta;
    for (std::size_t k = 0; k < cols.size(); ++k) EXPECT_EQ(refit(static_cast<Eigen::Index>(cols[k])), direct(static_cast<Eigen::Index>(k)));
    EXPECT_EQ(refit(1), 0.0);
}

// ---------------------------------------------------------------------------
// Cross-validation

TEST(CrossValidation, SingletonZeroGridIsWols) {
    const Problem pr = make_problem(300, 6, 3, 13);
    CvOptions opt;
    opt.grid = {0.0};
    const LassoFit f = cross_validate_lambda(pr.x, pr.y, pr.w, pr.clusters, unit_loadings(6, {0}), 1, opt);
    EXPECT_EQ(f.lambda, 0.0);
    EXPECT_LT((f.post_lasso - wols_fit(pr.x, pr.y, pr.w).beta).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CrossValidation, GridAboveThresholdGivesInterceptOnly) {
    const Problem pr = make_problem(300, 6, 3, 14);
    const auto loadings = unit_loadings(6, {0});
    const double lmax = lasso_lambda_max(pr.x, pr.y, pr.w, loadings);
    CvOptions opt;
    opt.grid = {1.01 * lmax, 2 * lmax, 5 * lmax};
    const LassoFit f = cross_validate_lambda(pr.x, pr.y, pr.w, pr.clusters, loadings, 1, opt);
    EXPECT_TRUE(f.selected.empty());
    EXPECT_EQ(f.lambda, 5 * lmax);  // ties go to the largest lambda
    EXPECT_NEAR(f.post_lasso(0), pr.w.dot(pr.y) / pr.w.sum(), 1e-12);
    for (Eigen::Index j = 1; j < 6; ++j) EXPECT_EQ(f.post_lasso(j), 0.0);
}

TEST(CrossValidation, FindsActiveColumns) {
    const Problem pr = make_problem(2000, 40, 4, 15);
    const LassoFit f = cross_validate_lambda(pr.x, pr.y, pr.w, pr.clusters, unit_loadings(40, {0}), 3);
    for (Index j = 1; j <= 4; ++j) EXPECT_NE(std::find(f.selected.begin(), f.selected.end(), j), f.selected.end());
    EXPECT_EQ(f.cv_table.size(), 100u);
    for (const auto& row : f.cv_table) {
        EXPECT_TRUE(std::isfinite(row.mean_mse));
        EXPECT_EQ(row.fold_mse.size(), 10u);
    }
}

TEST(CrossValidation, DeterministicGivenSeed) {
    const Problem pr = make_problem(500, 15, 3, 16);
    const auto a = cross_validate_lambda(pr.x, pr.y, pr.w, pr.clusters, unit_loadings(15, {0}), 77);
    const auto b = cross_validate_lambda(pr.x, pr.y, pr.w, pr.clusters, unit_loadings(15, {0}), 77);
    EXPECT_EQ(a.lambda, b.lambda);
    EXPECT_EQ(a.post_lasso, b.post_lasso);
}

TEST(CrossValidation, FewerClustersThanFoldsIsAnError) {
    Problem pr = make_problem(100, 3, 1, 17);
    for (Index i = 0; i < 100; ++i) pr.clusters[i] = i % 5;
    EXPECT_THROW(cross_validate_lambda(pr.x, pr.y, pr.w, pr.clusters, unit_loadings(3, {0}), 1), DomainError);
}

TEST(CrossValidation, SingleFoldRejected) {
    const Problem pr = make_problem(100, 3, 1, 18);
    CvOptions opt;
    opt.folds = 1;
    EXPECT_THROW(cross_validate_lambda(pr.x, pr.y, pr.w, pr.clusters, unit_loadings(3, {0}), 1, opt), DomainError);
}

TEST(ClusterPartition, RespectsClustersAndSeed) {
    IndexList clusters;
    Rng sizes(3);
    std::uniform_int_distribution<int> sz(1, 30);
    for (Index c = 0; c < 60; ++c)
        for (int k = sz(sizes); k > 0; --k) clusters.push_back(c);
    Rng a(42), b(42);
    const IndexList pa = cluster_partition(clusters, 10, a);
    const IndexList pb = cluster_partition(clusters, 10, b);
    EXPECT_EQ(pa, pb);
    std::map<Index, Index> part_of;
    for (Index i = 0; i < clusters.size(); ++i) {
        auto [it, fresh] = part_of.try_emplace(clusters[i], pa[i]);
        EXPECT_EQ(it->second, pa[i]);
    }
}

// ---------------------------------------------------------------------------
// Adaptive loadings

TEST(AdaptiveLoadings, UnitPilot) {
    const std::vector<double> init{1.0, 1.0, 1.0};
    EXPECT_EQ(adaptive_loadings(init, {}), (std::vector<double>{1, 1, 1}));
}

TEST(AdaptiveLoadings, FloorEngages) {
    const std::vector<double> init{0.0};
    EXPECT_EQ(adaptive_loadings(init, {}, 1.0, 1e-6)[0], 1e6);
}

TEST(AdaptiveLoadings, Reciprocal) {
    const std::vector<double> init{2.0, 0.5};
    EXPECT_EQ(adaptive_loadings(init, {}), (std::vector<double>{0.5, 2.0}));
}

TEST(AdaptiveLoadings, InterceptLoadingZero) {
    const std::vector<double> init{3.0, 0.5};
    EXPECT_EQ(adaptive_loadings(init, {0}), (std::vector<double>{0.0, 2.0}));
}

TEST(AdaptiveLasso, SelectsActiveColumnsWhenWiderThanTall) {
    const Problem pr = make_problem(120, 200, 3, 19, 0.5);
    const LassoFit f = cross_validate_adaptive(pr.x, pr.y, pr.w, pr.clusters, {0}, 5);
    for (Index j = 1; j <= 3; ++j) EXPECT_NE(std::find(f.selected.begin(), f.selected.end(), j), f.selected.end());
    EXPECT_EQ(f.loadings[0], 0.0);
}
