#pragma once
// Weighted least squares, weighted LASSO by cyclic coordinate descent,
// K-fold cross-validation of the penalty on the Post-LASSO criterion, and
// adaptive penalty loadings.
//
// The LASSO objective is
//     sum_i w_i (y_i - x_i b)^2 + lambda * sum_j loading_j |b_j|
// with loading 0 marking unpenalized columns. Unpenalized columns are
// profiled out exactly (weighted centering when the unpenalized block is an
// intercept) and the penalized block is solved in covariance form, where
// each coordinate update divides by the column's weighted squared norm, i.e.
// works on standardized columns. Coefficients are always reported on the
// original scale.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "linalg.hpp"
#include "random.hpp"

namespace hetfx {

// ---------------------------------------------------------------------------
// Sufficient statistics

struct WeightedGram {
    Matrix gram;    ///< X' W X
    Vector xty;     ///< X' W y
    double yty = 0; ///< y' W y
    double mass = 0;///< sum of weights

    WeightedGram& operator+=(const WeightedGram& o) {
        gram += o.gram;
        xty += o.xty;
        yty += o.yty;
        mass += o.mass;
        return *this;
    }

    static WeightedGram zero(Eigen::Index p) { return {Matrix::Zero(p, p), Vector::Zero(p), 0.0, 0.0}; }

    /// Weighted residual sum of squares of coefficients `beta`.
    double rss(const Vector& beta) const {
        return std::max(0.0, yty - 2.0 * beta.dot(xty) + beta.dot(gram * beta));
    }
};

inline WeightedGram weighted_gram(const Matrix& x, const Vector& y, const Vector& w) {
    const Vector sw = w.cwiseSqrt();
    const Matrix xs = sw.asDiagonal() * x;
    WeightedGram g;
    g.gram = Matrix::Zero(x.cols(), x.cols());
    g.gram.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose());
    g.gram = g.gram.selfadjointView<Eigen::Lower>();
    const Vector wy = w.cwiseProduct(y);
    g.xty = x.transpose() * wy;
    g.yty = wy.dot(y);
    g.mass = w.sum();
    return g;
}

inline WeightedGram weighted_gram(const Matrix& x, const Vector& y, const Vector& w, const IndexList& rows) {
    return weighted_gram(select_rows(x, rows), gather(y, rows), gather(w, rows));
}

// ---------------------------------------------------------------------------
// Weighted least squares

struct WolsResult {
    Vector beta;        ///< full length; dropped columns are zero
    IndexList dropped;  ///< columns removed as linearly dependent on earlier ones
};

namespace detail {

inline void check_weights(const Vector& w, Eigen::Index n) {
    if (w.size() != n) throw DomainError("weight vector length must match the number of rows");
    bool positive = false;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (!(w(i) >= 0.0) || !std::isfinite(w(i))) throw DomainError("weights must be finite and nonnegative");
        positive = positive || w(i) > 0.0;
    }
    if (!positive) throw DomainError("all weights are zero");
}

} // namespace detail

/// Minimizes sum_i w_i (y_i - x_i b)^2 by Householder QR on the
/// sqrt(w)-scaled design; dependent columns are dropped greedily in column order.
inline WolsResult wols_fit(const Matrix& x, const Vector& y, const Vector& w, double rel_tol = 1e-11) {
    if (y.size() != x.rows()) throw DomainError("response length must match the number of rows");
    detail::check_weights(w, x.rows());
    const Vector sw = w.cwiseSqrt();
    const Matrix xs = sw.asDiagonal() * x;
    const GreedyBasis basis = greedy_basis(normalized_gram(xs), rel_tol);
    WolsResult out;
    out.beta = Vector::Zero(x.cols());
    out.dropped = basis.dropped;
    if (basis.kept.empty()) return out;
    const Matrix xk = select_cols(xs, basis.kept);
    const Vector b = xk.householderQr().solve(sw.cwiseProduct(y));
    for (std::size_t a = 0; a < basis.kept.size(); ++a) out.beta(static_cast<Eigen::Index>(basis.kept[a])) = b(static_cast<Eigen::Index>(a));
    return out;
}

// ---------------------------------------------------------------------------
// LASSO

struct LassoOptions {
    double tol = 1e-10;                 ///< on standardized coefficient change, relative to the response scale
    std::size_t max_cycles = 100000;
    bool record_objective = false;
};

struct LassoSolution {
    double lambda = 0.0;
    Vector coefficients;                ///< original scale, full length
    IndexList selected;                 ///< penalized columns with nonzero coefficient
    std::size_t cycles = 0;
    std::vector<double> objective_trace;///< penalized objective after each coordinate pass
};

/// Unit loadings with zeros on the unpenalized columns.
inline std::vector<double> unit_loadings(Index p, const IndexList& unpenalized) {
    std::vector<double> l(p, 1.0);
    for (Index j : unpenalized) l.at(j) = 0.0;
    return l;
}

/// Penalized quadratic problem with the unpenalized block profiled out.
class LassoProblem {
public:
    LassoProblem(const WeightedGram& g, std::vector<double> loadings) : loadings_(std::move(loadings)) {
        const auto p = static_cast<Index>(g.gram.rows());
        if (loadings_.size() != p) throw DomainError("one penalty loading per column is required");
        p_ = p;
        for (Index j = 0; j < p; ++j) {
            if (!(loadings_[j] >= 0.0) || !std::isfinite(loadings_[j])) throw DomainError("penalty loadings must be finite and >= 0");
            (loadings_[j] == 0.0 ? unpen_ : pen_).push_back(j);
        }
        const Matrix guu = sub(g.gram, unpen_, unpen_);
        const Matrix gup = sub(g.gram, unpen_, pen_);
        const Vector cu = gather(g.xty, unpen_);
        const Vector cp = gather(g.xty, pen_);
        // M = G_UU^{-1} G_UP and u = G_UU^{-1} c_U through one greedy factorization.
        const GreedyBasis basis = greedy_basis(guu);
        for (Index k : basis.dropped) unpen_dropped_.push_back(unpen_[k]);
        proj_ = Matrix::Zero(static_cast<Eigen::Index>(unpen_.size()), static_cast<Eigen::Index>(pen_.size()));
        urhs_ = Vector::Zero(static_cast<Eigen::Index>(unpen_.size()));
        if (!basis.kept.empty()) {
            const auto lower = basis.chol.triangularView<Eigen::Lower>();
            const Matrix rhs_p = select_rows(gup, basis.kept);
            const Vector rhs_u = gather(cu, basis.kept);
            const Matrix mp = lower.transpose().solve(lower.solve(rhs_p));
            const Vector mu = lower.transpose().solve(lower.solve(rhs_u));
            for (std::size_t a = 0; a < basis.kept.size(); ++a) {
                proj_.row(static_cast<Eigen::Index>(basis.kept[a])) = mp.row(static_cast<Eigen::Index>(a));
                urhs_(static_cast<Eigen::Index>(basis.kept[a])) = mu(static_cast<Eigen::Index>(a));
            }
        }
        a_ = sub(g.gram, pen_, pen_) - gup.transpose() * proj_;
        a_ = 0.5 * (a_ + a_.transpose()).eval();
        b_ = cp - gup.transpose() * urhs_;
        null_rss_ = std::max(0.0, g.yty - cu.dot(urhs_));
        const double maxdiag = a_.size() ? a_.diagonal().cwiseAbs().maxCoeff() : 0.0;
        active_.assign(pen_.size(), true);
        for (std::size_t k = 0; k < pen_.size(); ++k)
            active_[k] = a_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) > 1e-13 * maxdiag &&
                         a_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) > 0.0;
    }

    const IndexList& unpenalized() const { return unpen_; }
    const IndexList& penalized() const { return pen_; }
    const IndexList& dropped_unpenalized() const { return unpen_dropped_; }

    /// Smallest lambda at which every penalized coefficient is zero:
    /// max_j |2 b_j| / loading_j on the profiled problem.
    double lambda_max() const {
        double m = 0.0;
        for (std::size_t k = 0; k < pen_.size(); ++k)
            if (active_[k]) m = std::max(m, 2.0 * std::abs(b_(static_cast<Eigen::Index>(k))) / loadings_[pen_[k]]);
        return m;
    }

    /// Penalized-block coordinate descent. `warm` holds penalized
    /// coefficients (in penalized order) and is updated in place.
    LassoSolution solve(double lambda, Vector& warm, const LassoOptions& opt = {}) const {
        if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
        const auto q = static_cast<Eigen::Index>(pen_.size());
        if (warm.size() != q) warm = Vector::Zero(q);
        Vector& beta = warm;
        Vector r = b_ - a_ * beta;
        const double thr = opt.tol * std::sqrt(null_rss_);
        LassoSolution sol;
        sol.lambda = lambda;

        auto objective = [&]() {
            double pen = 0.0;
            for (Eigen::Index k = 0; k < q; ++k) pen += loadings_[pen_[static_cast<Index>(k)]] * std::abs(beta(k));
            return null_rss_ - 2.0 * b_.dot(beta) + beta.dot(a_ * beta) + lambda * pen;
        };
        auto update = [&](Eigen::Index k) {
            const double akk = a_(k, k);
            const double g = r(k) + akk * beta(k);
            const double t = 0.5 * lambda * loadings_[pen_[static_cast<Index>(k)]];
            const double nb = (g > t ? g - t : (g < -t ? g + t : 0.0)) / akk;
            const double delta = nb - beta(k);
            if (delta != 0.0) {
                r.noalias() -= a_.col(k) * delta;
                beta(k) = nb;
            }
            return std::sqrt(akk) * std::abs(delta);
        };

        std::vector<Eigen::Index> active_set;
        while (true) {
            double change = 0.0;
            active_set.clear();
            for (Eigen::Index k = 0; k < q; ++k) {
                if (!active_[static_cast<Index>(k)]) {
                    beta(k) = 0.0;
                    continue;
                }
                change = std::max(change, update(k));
                if (beta(k) != 0.0) active_set.push_back(k);
            }
            ++sol.cycles;
            if (opt.record_objective) sol.objective_trace.push_back(objective());
            if (change <= thr) break;
            // Iterate on the current active set until it settles, then re-check all coordinates.
            while (true) {
                double inner = 0.0;
                for (Eigen::Index k : active_set) inner = std::max(inner, update(k));
                ++sol.cycles;
                if (opt.record_objective) sol.objective_trace.push_back(objective());
                if (inner <= thr) break;
                if (sol.cycles > opt.max_cycles) break;
            }
            if (sol.cycles > opt.max_cycles) {
                std::ostringstream msg;
                msg << "coordinate descent did not converge in " << opt.max_cycles << " passes (lambda " << lambda
                    << ", last change " << change << ", threshold " << thr << ")";
                throw NumericalError(msg.str());
            }
        }
        sol.coefficients = full_coefficients(beta);
        for (Eigen::Index k = 0; k < q; ++k)
            if (beta(k) != 0.0) sol.selected.push_back(pen_[static_cast<Index>(k)]);
        return sol;
    }

    LassoSolution solve(double lambda, const LassoOptions& opt = {}) const {
        Vector warm;
        return solve(lambda, warm, opt);
    }

    /// Unpenalized coefficients follow from the penalized ones in closed form.
    Vector full_coefficients(const Vector& pen_beta) const {
        Vector out = Vector::Zero(static_cast<Eigen::Index>(p_));
        const Vector u = urhs_ - proj_ * pen_beta;
        for (std::size_t a = 0; a < unpen_.size(); ++a) out(static_cast<Eigen::Index>(unpen_[a])) = u(static_cast<Eigen::Index>(a));
        for (std::size_t k = 0; k < pen_.size(); ++k) out(static_cast<Eigen::Index>(pen_[k])) = pen_beta(static_cast<Eigen::Index>(k));
        return out;
    }

private:
    static Matrix sub(const Matrix& m, const IndexList& rows, const IndexList& cols) {
        Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t a = 0; a < rows.size(); ++a)
            for (std::size_t b = 0; b < cols.size(); ++b)
                out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = m(static_cast<Eigen::Index>(rows[a]), static_cast<Eigen::Index>(cols[b]));
        return out;
    }

    Index p_ = 0;
    std::vector<double> loadings_;
    IndexList unpen_, pen_, unpen_dropped_;
    Matrix proj_;
    Vector urhs_;
    Matrix a_;
    Vector b_;
    double null_rss_ = 0.0;
    std::vector<bool> active_;
};

/// Weighted LASSO at a single penalty value.
inline LassoSolution weighted_lasso(const Matrix& x, const Vector& y, const Vector& w, double lambda,
                                    const std::vector<double>& loadings, const LassoOptions& opt = {}) {
    if (y.size() != x.rows()) throw DomainError("response length must match the number of rows");
    detail::check_weights(w, x.rows());
    const LassoProblem problem(weighted_gram(x, y, w), loadings);
    return problem.solve(lambda, opt);
}

inline double lasso_lambda_max(const Matrix& x, const Vector& y, const Vector& w, const std::vector<double>& loadings) {
    return LassoProblem(weighted_gram(x, y, w), loadings).lambda_max();
}

/// `count` log-spaced values from lambda_max down to min_ratio * lambda_max.
inline std::vector<double> lambda_grid(double lambda_max, std::size_t count = 100, double min_ratio = 1e-4) {
    if (lambda_max <= 0.0 || count <= 1) return {std::max(lambda_max, 0.0)};
    std::vector<double> grid(count);
    const double lo = std::log(lambda_max * min_ratio), hi = std::log(lambda_max);
    for (std::size_t k = 0; k < count; ++k)
        grid[k] = std::exp(hi + (lo - hi) * static_cast<double>(k) / static_cast<double>(count - 1));
    grid.front() = lambda_max;
    return grid;
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Cluster-respecting balanced partition: clusters are visited in random
/// order and each goes to the currently smallest part (ties to the lowest
/// part index). Returns the part of each row.
inline IndexList cluster_partition(const IndexList& cluster_of_row, Index parts, Rng& rng) {
    if (parts < 1) throw DomainError("need at least one part");
    Index clusters = 0;
    for (Index c : cluster_of_row) clusters = std::max(clusters, c + 1);
    std::vector<Index> size(clusters, 0);
    for (Index c : cluster_of_row) ++size[c];
    IndexList order(clusters);
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Index> part_of_cluster(clusters, 0), load(parts, 0);
    for (Index c : order) {
        if (size[c] == 0) continue;
        const Index best = static_cast<Index>(std::min_element(load.begin(), load.end()) - load.begin());
        part_of_cluster[c] = best;
        load[best] += size[c];
    }
    IndexList out(cluster_of_row.size());
    for (Index i = 0; i < cluster_of_row.size(); ++i) out[i] = part_of_cluster[cluster_of_row[i]];
    return out;
}

/// Renumbers arbitrary cluster labels densely in order of first appearance.
inline IndexList dense_clusters(const IndexList& labels) {
    std::map<Index, Index> ids;
    IndexList out;
    out.reserve(labels.size());
    for (Index c : labels) out.push_back(ids.try_emplace(c, ids.size()).first->second);
    return out;
}

enum class CvCriterion { post_lasso, lasso };

struct CvOptions {
    Index folds = 10;
    std::size_t grid_size = 100;
    double min_ratio = 1e-4;
    std::vector<double> grid;           ///< explicit grid; overrides grid_size/min_ratio when non-empty
    CvCriterion criterion = CvCriterion::post_lasso;
    LassoOptions lasso;
};

struct CvRow {
    double lambda = 0.0;
    double mean_mse = 0.0;
    std::vector<double> fold_mse;
    std::size_t selected_size = 0;      ///< full-sample selected set size at this lambda
};

struct LassoFit {
    double lambda = 0.0;
    Vector coefficients;                ///< LASSO coefficients at the chosen lambda
    IndexList unpenalized;
    IndexList selected;                 ///< penalized columns with nonzero LASSO coefficient
    Vector post_lasso;                  ///< WLS refit on selected and unpenalized columns
    std::vector<CvRow> cv_table;
    std::vector<double> loadings;
    Diagnostics diagnostics;

    /// selected and unpenalized columns, ascending.
    IndexList support() const {
        IndexList s = unpenalized;
        s.insert(s.end(), selected.begin(), selected.end());
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        return s;
    }
};

/// WLS restricted to `columns`, scattered back to full length.
inline Vector post_lasso_refit(const Matrix& x, const Vector& y, const Vector& w, const IndexList& columns,
                               Diagnostics* diag = nullptr) {
    Vector out = Vector::Zero(x.cols());
    if (columns.empty()) return out;
    const WolsResult r = wols_fit(select_cols(x, columns), y, w);
    for (Index k : r.dropped)
        if (diag) diag->warn("post-LASSO column " + std::to_string(columns[k]) + " dropped as collinear");
    for (std::size_t k = 0; k < columns.size(); ++k) out(static_cast<Eigen::Index>(columns[k])) = r.beta(static_cast<Eigen::Index>(k));
    return out;
}

namespace detail {

inline IndexList merged_support(const IndexList& unpen, const IndexList& selected) {
    IndexList s = unpen;
    s.insert(s.end(), selected.begin(), selected.end());
    std::sort(s.begin(), s.end());
    return s;
}

inline Vector gram_refit(const WeightedGram& g, const IndexList& cols) {
    Vector out = Vector::Zero(g.gram.rows());
    if (cols.empty()) return out;
    Matrix sub(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(cols.size()));
    Vector rhs(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t a = 0; a < cols.size(); ++a) {
        rhs(static_cast<Eigen::Index>(a)) = g.xty(static_cast<Eigen::Index>(cols[a]));
        for (std::size_t b = 0; b < cols.size(); ++b)
            sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = g.gram(static_cast<Eigen::Index>(cols[a]), static_cast<Eigen::Index>(cols[b]));
    }
    // Scale to unit diagonal so the dependence tolerance is relative.
    Vector s(sub.rows());
    for (Eigen::Index j = 0; j < sub.rows(); ++j) s(j) = sub(j, j) > 0 ? 1.0 / std::sqrt(sub(j, j)) : 0.0;
    const Matrix scaled = s.asDiagonal() * sub * s.asDiagonal();
    const NormalSolution sol = solve_normal_equations(scaled, s.cwiseProduct(rhs));
    const Vector b = s.cwiseProduct(sol.beta);
    for (std::size_t a = 0; a < cols.size(); ++a) out(static_cast<Eigen::Index>(cols[a])) = b(static_cast<Eigen::Index>(a));
    return out;
}

} // namespace detail

/// K-fold cross-validation of lambda. Folds are cluster-respecting; for each
/// lambda and fold, the LASSO is fit on the training folds, refit by WLS on
/// its support (Post-LASSO), and scored by weighted mean squared error on
/// the held-out fold. The lambda with the smallest mean error wins; ties go
/// to the largest lambda. The final model is fit on all rows.
inline LassoFit cross_validate_lambda(const Matrix& x, const Vector& y, const Vector& w, const IndexList& clusters,
                                      const std::vector<double>& loadings, std::uint64_t seed,
                                      const CvOptions& opt = {}) {
    const Eigen::Index n = x.rows();
    if (y.size() != n || static_cast<Eigen::Index>(clusters.size()) != n)
        throw DomainError("design, response and clusters must have equal length");
    detail::check_weights(w, n);
    if (opt.folds < 2) throw DomainError("cross-validation needs at least two folds");

    const WeightedGram full = weighted_gram(x, y, w);
    const LassoProblem full_problem(full, loadings);

    std::vector<double> grid = opt.grid;
    if (grid.empty()) grid = lambda_grid(full_problem.lambda_max(), opt.grid_size, opt.min_ratio);
    if (grid.empty()) throw DomainError("empty lambda grid");
    std::sort(grid.begin(), grid.end(), std::greater<>());

    Rng rng = make_rng(seed, StreamTag::cross_validation);
    const IndexList fold_of = cluster_partition(dense_clusters(clusters), opt.folds, rng);
    std::vector<IndexList> fold_rows(opt.folds);
    for (Index i = 0; i < fold_of.size(); ++i) fold_rows[fold_of[i]].push_back(i);
    std::vector<WeightedGram> fold_gram;
    for (Index k = 0; k < opt.folds; ++k) {
        if (fold_rows[k].empty()) throw DomainError("cross-validation fold " + std::to_string(k) + " is empty (too few clusters)");
        fold_gram.push_back(weighted_gram(x, y, w, fold_rows[k]));
        if (!(fold_gram.back().mass > 0.0))
            throw DomainError("cross-validation fold " + std::to_string(k) + " has zero weight mass");
    }

    LassoFit fit;
    fit.loadings = loadings;
    fit.unpenalized = full_problem.unpenalized();
    fit.cv_table.resize(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        fit.cv_table[g].lambda = grid[g];
        fit.cv_table[g].fold_mse.assign(opt.folds, 0.0);
    }

    for (Index k = 0; k < opt.folds; ++k) {
        WeightedGram train = WeightedGram::zero(x.cols());
        for (Index m = 0; m < opt.folds; ++m)
            if (m != k) train += fold_gram[m];
        const LassoProblem problem(train, loadings);
        const WeightedGram& held = fold_gram[k];
        Vector warm;
        IndexList last_support;
        Vector last_refit;
        bool have_last = false;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const LassoSolution sol = problem.solve(grid[g], warm, opt.lasso);
            Vector coef;
            if (opt.criterion == CvCriterion::post_lasso) {
                const IndexList support = detail::merged_support(problem.unpenalized(), sol.selected);
                if (!have_last || support != last_support) {
                    last_refit = detail::gram_refit(train, support);
                    last_support = support;
                    have_last = true;
                }
                coef = last_refit;
            } else {
                coef = sol.coefficients;
            }
            fit.cv_table[g].fold_mse[k] = held.rss(coef) / held.mass;
        }
    }

    double null_scale = full.mass > 0 ? full.yty / full.mass : 0.0;
    std::size_t best = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        auto& row = fit.cv_table[g];
        row.mean_mse = std::accumulate(row.fold_mse.begin(), row.fold_mse.end(), 0.0) / static_cast<double>(opt.folds);
        if (!std::isfinite(row.mean_mse)) throw NumericalError("non-finite cross-validation error");
        if (row.mean_mse < fit.cv_table[best].mean_mse - 1e-12 * std::max(null_scale, 1e-300)) best = g;
    }

    // Full-sample path (warm-started) for the table and the chosen model.
    Vector warm;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const LassoSolution sol = full_problem.solve(grid[g], warm, opt.lasso);
        fit.cv_table[g].selected_size = sol.selected.size();
        if (g == best) {
            fit.lambda = grid[g];
            fit.coefficients = sol.coefficients;
            fit.selected = sol.selected;
        }
    }
    fit.post_lasso = post_lasso_refit(x, y, w, fit.support(), &fit.diagnostics);
    return fit;
}

/// LASSO at a fixed penalty followed by the Post-LASSO refit.
inline LassoFit fixed_lambda_fit(const Matrix& x, const Vector& y, const Vector& w, double lambda,
                                 const std::vector<double>& loadings, const LassoOptions& opt = {}) {
    detail::check_weights(w, x.rows());
    const LassoProblem problem(weighted_gram(x, y, w), loadings);
    const LassoSolution sol = problem.solve(lambda, opt);
    LassoFit fit;
    fit.lambda = lambda;
    fit.loadings = loadings;
    fit.unpenalized = problem.unpenalized();
    fit.coefficients = sol.coefficients;
    fit.selected = sol.selected;
    fit.post_lasso = post_lasso_refit(x, y, w, fit.support(), &fit.diagnostics);
    return fit;
}

// ---------------------------------------------------------------------------
// Adaptive LASSO

/// loading_j = 1 / max(|init_j|, floor)^gamma on penalized columns, 0 on unpenalized.
inline std::vector<double> adaptive_loadings(std::span<const double> init, const IndexList& unpenalized,
                                             double gamma = 1.0, double floor = 1e-6) {
    std::vector<double> out(init.size());
    for (std::size_t j = 0; j < init.size(); ++j) out[j] = 1.0 / std::pow(std::max(std::abs(init[j]), floor), gamma);
    for (Index j : unpenalized) out.at(j) = 0.0;
    return out;
}

/// Ridge pilot: minimizes the weighted RSS plus penalty * sum of squared
/// penalized coefficients.
inline Vector ridge_fit(const WeightedGram& g, const IndexList& unpenalized, double penalty) {
    Matrix a = g.gram;
    std::vector<bool> unpen(static_cast<Index>(a.rows()), false);
    for (Index j : unpenalized) unpen.at(j) = true;
    for (Eigen::Index j = 0; j < a.rows(); ++j)
        if (!unpen[static_cast<Index>(j)]) a(j, j) += penalty;
    return solve_normal_equations(a, g.xty).beta;
}

struct AdaptiveOptions {
    double gamma = 1.0;
    double floor = 1e-6;
    double pilot_ratio = 1e-3;  ///< ridge penalty as a multiple of the unit-loading lambda_max
};

inline LassoFit cross_validate_adaptive(const Matrix& x, const Vector& y, const Vector& w, const IndexList& clusters,
                                        const IndexList& unpenalized, std::uint64_t seed, const CvOptions& opt = {},
                                        const AdaptiveOptions& aopt = {}) {
    detail::check_weights(w, x.rows());
    const WeightedGram g = weighted_gram(x, y, w);
    const auto unit = unit_loadings(static_cast<Index>(x.cols()), unpenalized);
    const double lmax = LassoProblem(g, unit).lambda_max();
    const Vector pilot = ridge_fit(g, unpenalized, aopt.pilot_ratio * std::max(lmax, 1e-12));
    const auto loadings = adaptive_loadings(as_span(pilot), unpenalized, aopt.gamma, aopt.floor);
    return cross_validate_lambda(x, y, w, clusters, loadings, seed, opt);
}

} // namespace hetfx
