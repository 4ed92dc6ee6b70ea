#pragma once
// Modified covariate method (MCM): the treatment is recoded T = 2D - 1 and
// the outcome is regressed on T * Z / 2 with group-normalized IPW weights,
// so the coefficient vector delta approximates the CATE directly,
// gamma(z) = z * delta. Main effects of Z can be absorbed jointly
// (one-step) or by residualizing first (two-step). The modified outcome
// method (MOM) is provided as an alternative.

#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "solvers.hpp"

namespace hetfx {

enum class AugmentationMode { none, one_step, two_step };
enum class EffectMethod { mcm_none, mcm_one_step, mcm_two_step, mom };
enum class SelectorKind { cv_lasso, cv_adaptive_lasso, fixed_lambda };

inline std::string to_string(EffectMethod m) {
    switch (m) {
    case EffectMethod::mcm_none: return "mcm-none";
    case EffectMethod::mcm_one_step: return "mcm-one-step";
    case EffectMethod::mcm_two_step: return "mcm-two-step";
    case EffectMethod::mom: return "mom";
    }
    return "?";
}

inline EffectMethod effect_method_from_string(const std::string& s) {
    if (s == "mcm-none") return EffectMethod::mcm_none;
    if (s == "mcm-one-step") return EffectMethod::mcm_one_step;
    if (s == "mcm-two-step") return EffectMethod::mcm_two_step;
    if (s == "mom") return EffectMethod::mom;
    throw DomainError("unknown method '" + s + "' (expected mcm-none, mcm-one-step, mcm-two-step or mom)");
}

inline AugmentationMode augmentation_of(EffectMethod m) {
    switch (m) {
    case EffectMethod::mcm_one_step: return AugmentationMode::one_step;
    case EffectMethod::mcm_two_step: return AugmentationMode::two_step;
    default: return AugmentationMode::none;
    }
}

inline std::string to_string(SelectorKind k) {
    switch (k) {
    case SelectorKind::cv_lasso: return "cv-lasso";
    case SelectorKind::cv_adaptive_lasso: return "cv-adaptive-lasso";
    case SelectorKind::fixed_lambda: return "fixed-lambda";
    }
    return "?";
}

inline SelectorKind selector_from_string(const std::string& s) {
    if (s == "cv-lasso") return SelectorKind::cv_lasso;
    if (s == "cv-adaptive-lasso") return SelectorKind::cv_adaptive_lasso;
    if (s == "fixed-lambda") return SelectorKind::fixed_lambda;
    throw DomainError("unknown selector '" + s + "' (expected cv-lasso, cv-adaptive-lasso or fixed-lambda)");
}

struct SelectorConfig {
    SelectorKind kind = SelectorKind::cv_lasso;
    double lambda = 0.0;        ///< fixed-lambda only
    bool post_lasso = true;     ///< report the WLS refit on the support instead of the shrunken coefficients
    CvOptions cv;
    AdaptiveOptions adaptive;
};

/// Runs the configured selector on (x, y, w).
inline LassoFit run_selector(const Matrix& x, const Vector& y, const Vector& w, const IndexList& unpenalized,
                             const SelectorConfig& sel, const IndexList& clusters, std::uint64_t seed) {
    switch (sel.kind) {
    case SelectorKind::fixed_lambda:
        return fixed_lambda_fit(x, y, w, sel.lambda, unit_loadings(static_cast<Index>(x.cols()), unpenalized), sel.cv.lasso);
    case SelectorKind::cv_adaptive_lasso:
        return cross_validate_adaptive(x, y, w, clusters, unpenalized, seed, sel.cv, sel.adaptive);
    case SelectorKind::cv_lasso:
    default:
        return cross_validate_lambda(x, y, w, clusters, unit_loadings(static_cast<Index>(x.cols()), unpenalized), seed, sel.cv);
    }
}

inline const Vector& chosen_coefficients(const LassoFit& fit, const SelectorConfig& sel) {
    return sel.post_lasso ? fit.post_lasso : fit.coefficients;
}

// ---------------------------------------------------------------------------
// Design transformation

struct McmDesign {
    Vector transformed;       ///< T_i = 2 D_i - 1
    Matrix modified;          ///< T_i Z_ij / 2
    std::optional<Matrix> main;  ///< Z itself, for one-step augmentation
    std::vector<std::string> block_labels;  ///< "main" / "interaction" per stacked column

    Index p() const { return static_cast<Index>(modified.cols()); }

    /// [Z | T Z / 2] when the main block is present, else T Z / 2.
    Matrix stacked() const {
        if (!main) return modified;
        Matrix out(modified.rows(), main->cols() + modified.cols());
        out << *main, modified;
        return out;
    }

    /// Constant columns of each block stay unpenalized.
    IndexList unpenalized() const { return main ? IndexList{0, static_cast<Index>(main->cols())} : IndexList{0}; }
};

inline McmDesign mcm_transform(const Flags& d, const Matrix& z, bool with_main = false) {
    if (static_cast<Index>(z.rows()) != d.size()) throw DomainError("treatment length must match rows of Z");
    McmDesign out;
    out.transformed.resize(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) out.transformed(i) = 2.0 * d[static_cast<Index>(i)] - 1.0;
    out.modified = (0.5 * out.transformed).asDiagonal() * z;
    if (with_main) {
        out.main = z;
        out.block_labels.assign(static_cast<Index>(z.cols()), "main");
    }
    out.block_labels.insert(out.block_labels.end(), static_cast<Index>(z.cols()), "interaction");
    return out;
}

// ---------------------------------------------------------------------------
// Efficiency augmentation

struct AugmentationResult {
    Vector adjusted;                 ///< outcome handed to the MCM fit
    std::optional<LassoFit> main_fit;
    AugmentationMode mode = AugmentationMode::none;
};

/// none: identity. two_step: residualize y on a cross-validated weighted
/// LASSO of y on Z. one_step: identity here; fit_mcm stacks the main block.
inline AugmentationResult efficiency_augment(const Vector& y, const Matrix& z, const Vector& w, AugmentationMode mode,
                                             const SelectorConfig& sel, const IndexList& clusters, std::uint64_t seed) {
    AugmentationResult out;
    out.mode = mode;
    out.adjusted = y;
    if (mode == AugmentationMode::two_step) {
        out.main_fit = run_selector(z, y, w, {0}, sel, clusters, seed);
        out.adjusted = y - z * chosen_coefficients(*out.main_fit, sel);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fitting

struct EffectFit {
    EffectMethod method = EffectMethod::mcm_none;
    Vector delta;             ///< over Z columns; selected coefficients, zero elsewhere
    Vector lasso_delta;       ///< shrunken LASSO coefficients over Z columns
    IndexList selected;       ///< Z columns in the support of delta (always includes the constant)
    Vector main;              ///< main-effect coefficients over Z (augmented methods only)
    IndexList selected_main;
    double lambda = 0.0;
    std::vector<CvRow> cv_table;
    Diagnostics diagnostics;

    Vector predict(const Matrix& z) const { return z * delta; }
};

namespace detail {

inline IndexList block_support(const IndexList& support, Index lo, Index hi) {
    IndexList out;
    for (Index j : support)
        if (j >= lo && j < hi) out.push_back(j - lo);
    return out;
}

} // namespace detail

/// Fits the weighted MCM with the requested augmentation and selector.
inline EffectFit fit_mcm(const Matrix& z, const Flags& d, const Vector& y, const Vector& w, AugmentationMode mode,
                         const SelectorConfig& sel, const IndexList& clusters, std::uint64_t seed) {
    const auto p = static_cast<Index>(z.cols());
    EffectFit fit;
    fit.method = mode == AugmentationMode::one_step   ? EffectMethod::mcm_one_step
                 : mode == AugmentationMode::two_step ? EffectMethod::mcm_two_step
                                                      : EffectMethod::mcm_none;
    const AugmentationResult aug = efficiency_augment(y, z, w, mode, sel, clusters, seed);
    if (aug.main_fit) {
        fit.main = chosen_coefficients(*aug.main_fit, sel);
        fit.selected_main = aug.main_fit->support();
        fit.diagnostics.merge(aug.main_fit->diagnostics);
    }
    const McmDesign design = mcm_transform(d, z, mode == AugmentationMode::one_step);
    const Matrix x = design.stacked();
    const LassoFit lf = run_selector(x, aug.adjusted, w, design.unpenalized(), sel, clusters, seed);
    fit.diagnostics.merge(lf.diagnostics);
    fit.lambda = lf.lambda;
    fit.cv_table = lf.cv_table;
    const Vector& coef = chosen_coefficients(lf, sel);
    const IndexList support = lf.support();
    if (mode == AugmentationMode::one_step) {
        fit.delta = coef.tail(static_cast<Eigen::Index>(p));
        fit.lasso_delta = lf.coefficients.tail(static_cast<Eigen::Index>(p));
        fit.main = coef.head(static_cast<Eigen::Index>(p));
        fit.selected = detail::block_support(support, p, 2 * p);
        fit.selected_main = detail::block_support(support, 0, p);
    } else {
        fit.delta = coef;
        fit.lasso_delta = lf.coefficients;
        fit.selected = support;
    }
    return fit;
}

/// y*_i = y_i (D_i - p_i) / (p_i (1 - p_i)); E[y* | Z] equals the CATE.
inline Vector mom_transform(const Vector& y, const Flags& d, std::span<const double> pscore) {
    if (static_cast<Index>(y.size()) != d.size() || pscore.size() != d.size())
        throw DomainError("outcome, treatment and scores must have equal length");
    Vector out(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double p = pscore[static_cast<Index>(i)];
        if (!(p > 0.0 && p < 1.0)) throw DomainError("propensity score outside (0,1) at row " + std::to_string(i));
        out(i) = y(i) * (d[static_cast<Index>(i)] - p) / (p * (1.0 - p));
    }
    return out;
}

/// MOM: cross-validated LASSO of the modified outcome on Z (constant
/// unpenalized). Unweighted unless `weights` is given.
inline EffectFit fit_mom(const Matrix& z, const Flags& d, const Vector& y, std::span<const double> pscore,
                         const SelectorConfig& sel, const IndexList& clusters, std::uint64_t seed,
                         const Vector* weights = nullptr) {
    const Vector ystar = mom_transform(y, d, pscore);
    const Vector w = weights ? *weights : Vector::Ones(z.rows());
    const LassoFit lf = run_selector(z, ystar, w, {0}, sel, clusters, seed);
    EffectFit fit;
    fit.method = EffectMethod::mom;
    fit.delta = chosen_coefficients(lf, sel);
    fit.lasso_delta = lf.coefficients;
    fit.selected = lf.support();
    fit.lambda = lf.lambda;
    fit.cv_table = lf.cv_table;
    fit.diagnostics = lf.diagnostics;
    return fit;
}

// ---------------------------------------------------------------------------
// Refits on a frozen support (estimation half and bootstrap replications)

enum class RefitKind {
    joint,       ///< WLS of y on [Z_main | T Z_inter / 2]; main block may be empty
    sequential,  ///< WLS of y on Z_main, then of the residual on T Z_inter / 2
    outcome,     ///< WLS of the modified outcome on Z_inter
};

struct RefitPlan {
    RefitKind kind = RefitKind::joint;
    IndexList main;
    IndexList inter;

    Index width() const { return main.size() + inter.size(); }

    static RefitPlan from_fit(const EffectFit& fit) {
        RefitPlan plan;
        plan.inter = fit.selected;
        switch (fit.method) {
        case EffectMethod::mcm_one_step: plan.main = fit.selected_main; break;
        case EffectMethod::mcm_two_step:
            plan.kind = RefitKind::sequential;
            plan.main = fit.selected_main;
            break;
        case EffectMethod::mom: plan.kind = RefitKind::outcome; break;
        default: break;
        }
        return plan;
    }

    /// Design rows for this plan; `d` is ignored for the outcome kind.
    Matrix design(const Matrix& z, const Flags& d) const {
        Matrix out(z.rows(), static_cast<Eigen::Index>(width()));
        for (std::size_t a = 0; a < main.size(); ++a) out.col(static_cast<Eigen::Index>(a)) = z.col(static_cast<Eigen::Index>(main[a]));
        for (std::size_t a = 0; a < inter.size(); ++a) {
            auto col = out.col(static_cast<Eigen::Index>(main.size() + a));
            col = z.col(static_cast<Eigen::Index>(inter[a]));
            if (kind != RefitKind::outcome)
                for (Eigen::Index i = 0; i < z.rows(); ++i) col(i) *= d[static_cast<Index>(i)] ? 0.5 : -0.5;
        }
        return out;
    }
};

struct RefitCoefficients {
    Vector delta;       ///< over Z columns
    Vector main;        ///< over Z columns
    IndexList dropped;  ///< plan-column positions that were not identified

    bool identified() const { return dropped.empty(); }
};

namespace detail {

inline RefitCoefficients scatter(const RefitPlan& plan, const Vector& main_b, const Vector& inter_b, Index p) {
    RefitCoefficients out;
    out.delta = Vector::Zero(static_cast<Eigen::Index>(p));
    out.main = Vector::Zero(static_cast<Eigen::Index>(p));
    for (std::size_t a = 0; a < plan.main.size(); ++a) out.main(static_cast<Eigen::Index>(plan.main[a])) = main_b(static_cast<Eigen::Index>(a));
    for (std::size_t a = 0; a < plan.inter.size(); ++a) out.delta(static_cast<Eigen::Index>(plan.inter[a])) = inter_b(static_cast<Eigen::Index>(a));
    return out;
}

inline NormalSolution scaled_solve(const Matrix& g, const Vector& c) {
    Vector s(g.rows());
    for (Eigen::Index j = 0; j < g.rows(); ++j) s(j) = g(j, j) > 0 ? 1.0 / std::sqrt(g(j, j)) : 0.0;
    NormalSolution sol = solve_normal_equations(s.asDiagonal() * g * s.asDiagonal(), s.cwiseProduct(c));
    sol.beta = s.cwiseProduct(sol.beta);
    return sol;
}

} // namespace detail

/// Refit from rows by QR-based WLS.
inline RefitCoefficients refit_rows(const RefitPlan& plan, const Matrix& z, const Flags& d, const Vector& response,
                                    const Vector& w) {
    const Matrix x = plan.design(z, d);
    const auto nm = static_cast<Eigen::Index>(plan.main.size());
    const auto ni = static_cast<Eigen::Index>(plan.inter.size());
    Vector mb = Vector::Zero(nm), ib;
    IndexList dropped;
    if (plan.kind == RefitKind::sequential) {
        Vector resid = response;
        if (nm > 0) {
            const WolsResult m = wols_fit(x.leftCols(nm), response, w);
            mb = m.beta;
            dropped = m.dropped;
            resid -= x.leftCols(nm) * mb;
        }
        const WolsResult r = wols_fit(x.rightCols(ni), resid, w);
        ib = r.beta;
        for (Index k : r.dropped) dropped.push_back(k + static_cast<Index>(nm));
    } else {
        const WolsResult r = wols_fit(x, response, w);
        mb = r.beta.head(nm);
        ib = r.beta.tail(ni);
        dropped = r.dropped;
    }
    RefitCoefficients out = detail::scatter(plan, mb, ib, static_cast<Index>(z.cols()));
    out.dropped = dropped;
    return out;
}

/// Same refit from sufficient statistics over the plan's design columns.
inline RefitCoefficients refit_from_gram(const RefitPlan& plan, const Matrix& gram, const Vector& xty, Index p) {
    const auto nm = static_cast<Eigen::Index>(plan.main.size());
    const auto ni = static_cast<Eigen::Index>(plan.inter.size());
    Vector mb = Vector::Zero(nm), ib;
    IndexList dropped;
    if (plan.kind == RefitKind::sequential) {
        Vector rhs = xty.tail(ni);
        if (nm > 0) {
            const NormalSolution m = detail::scaled_solve(gram.topLeftCorner(nm, nm), xty.head(nm));
            mb = m.beta;
            dropped = m.dropped;
            rhs -= gram.bottomLeftCorner(ni, nm) * mb;
        }
        const NormalSolution r = detail::scaled_solve(gram.bottomRightCorner(ni, ni), rhs);
        ib = r.beta;
        for (Index k : r.dropped) dropped.push_back(k + static_cast<Index>(nm));
    } else {
        const NormalSolution r = detail::scaled_solve(gram, xty);
        mb = r.beta.head(nm);
        ib = r.beta.tail(ni);
        dropped = r.dropped;
    }
    RefitCoefficients out = detail::scatter(plan, mb, ib, p);
    out.dropped = dropped;
    return out;
}

} // namespace hetfx
