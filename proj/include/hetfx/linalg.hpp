#pragma once
// Small dense linear-algebra helpers shared by the estimators.

#include "core.hpp"

namespace hetfx {

/// Columns kept by a greedy pass in column order: a column is dropped when
/// its squared residual after projection on the already-kept columns falls
/// below rel_tol times its squared norm. Earlier columns always win.
struct GreedyBasis {
    IndexList kept;
    IndexList dropped;
    Matrix chol;  ///< lower Cholesky factor of gram(kept, kept)
};

inline GreedyBasis greedy_basis(const Matrix& gram, double rel_tol = 1e-11) {
    const Eigen::Index k = gram.rows();
    GreedyBasis out;
    Matrix l = Matrix::Zero(k, k);
    Eigen::Index r = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double gjj = gram(j, j);
        Vector w(r);
        for (Eigen::Index a = 0; a < r; ++a) {
            double s = gram(static_cast<Eigen::Index>(out.kept[static_cast<Index>(a)]), j);
            for (Eigen::Index b = 0; b < a; ++b) s -= l(a, b) * w(b);
            w(a) = s / l(a, a);
        }
        const double d = gjj - w.squaredNorm();
        if (gjj > 0.0 && std::isfinite(d) && d > rel_tol * gjj) {
            l.row(r).head(r) = w.transpose();
            l(r, r) = std::sqrt(d);
            out.kept.push_back(static_cast<Index>(j));
            ++r;
        } else {
            out.dropped.push_back(static_cast<Index>(j));
        }
    }
    out.chol = l.topLeftCorner(r, r);
    return out;
}

struct NormalSolution {
    Vector beta;        ///< full length; dropped columns are zero
    IndexList dropped;
};

/// Solves gram * beta = rhs after greedy removal of dependent columns.
inline NormalSolution solve_normal_equations(const Matrix& gram, const Vector& rhs, double rel_tol = 1e-11) {
    NormalSolution out;
    out.beta = Vector::Zero(gram.rows());
    if (gram.rows() == 0) return out;
    const GreedyBasis basis = greedy_basis(gram, rel_tol);
    out.dropped = basis.dropped;
    if (basis.kept.empty()) return out;
    const Vector c = gather(rhs, basis.kept);
    const auto lower = basis.chol.triangularView<Eigen::Lower>();
    const Vector y = lower.solve(c);
    const Vector b = lower.transpose().solve(y);
    for (std::size_t a = 0; a < basis.kept.size(); ++a) out.beta(static_cast<Eigen::Index>(basis.kept[a])) = b(static_cast<Eigen::Index>(a));
    return out;
}

/// Gram matrix of the column-normalized design, used for dependence checks.
inline Matrix normalized_gram(const Matrix& a) {
    Matrix g = a.transpose() * a;
    for (Eigen::Index j = 0; j < g.rows(); ++j) {
        const double s = g(j, j) > 0.0 ? 1.0 / std::sqrt(g(j, j)) : 0.0;
        g.row(j) *= s;
        g.col(j) *= s;
    }
    return g;
}

} // namespace hetfx
