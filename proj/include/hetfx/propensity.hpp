#pragma once
// Participation model: logistic regression by iteratively reweighted least
// squares, common-support trimming, and group-normalized inverse probability
// weights.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "linalg.hpp"

namespace hetfx {

struct LogitOptions {
    double tol = 1e-8;            ///< on the gradient norm divided by the weight mass
    int max_iter = 100;
    double separation_cap = 30.0; ///< |linear index| beyond this is treated as separation
    double collinearity_tol = 1e-11;
};

/// Fitted logistic participation model over [intercept, X].
struct PropensityModel {
    Vector coefficients;          ///< intercept first; dropped columns hold 0
    Vector std_errors;            ///< inverse-information standard errors (0 for dropped)
    std::vector<bool> active;     ///< false for columns dropped as collinear
    std::vector<std::string> names;
    int iterations = 0;
    double gradient_norm = 0.0;
    std::vector<double> loglik_trace;  ///< log-likelihood after each accepted step
    Diagnostics diagnostics;

    Vector linear_predictor(const Matrix& x) const {
        if (x.cols() + 1 != coefficients.size()) throw DomainError("covariate matrix width does not match the model");
        return (x * coefficients.tail(x.cols())).array() + coefficients(0);
    }

    /// Predicted participation probabilities, kept strictly inside (0,1).
    Vector predict(const Matrix& x) const {
        Vector eta = linear_predictor(x);
        return eta.unaryExpr([](double e) {
            const double p = 1.0 / (1.0 + std::exp(-e));
            return std::clamp(p, 1e-15, 1.0 - 1e-15);
        });
    }
};

namespace detail {

[[noreturn]] inline void separation(double cap) {
    std::ostringstream msg;
    msg << "logit separation detected (|linear index| > " << cap
        << "); trim the sample or remove the separating covariates";
    throw NumericalError(msg.str());
}

inline double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double logit_loglik(const Vector& eta, const Flags& d, const Vector& f) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        ll += f(i) * ((d[static_cast<Index>(i)] ? eta(i) : 0.0) - log1pexp(eta(i)));
    return ll;
}

} // namespace detail

/// Maximum-likelihood logit fit. `frequency` (optional) holds nonnegative
/// integer-like case weights, used by the bootstrap.
inline PropensityModel fit_logit(const Matrix& x, const Flags& d, const LogitOptions& opt = {},
                                 std::vector<std::string> names = {}, std::span<const double> frequency = {}) {
    const Eigen::Index n = x.rows();
    const Eigen::Index k = x.cols() + 1;
    if (static_cast<Index>(n) != d.size()) throw DomainError("treatment length must match covariate rows");
    if (!frequency.empty() && frequency.size() != d.size()) throw DomainError("frequency weights must match rows");
    Vector f = frequency.empty() ? Vector::Ones(n) : to_vector(frequency);

    PropensityModel model;
    model.names.push_back("intercept");
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        model.names.push_back(static_cast<Index>(j) < names.size() ? names[static_cast<Index>(j)] : "x" + std::to_string(j + 1));

    Matrix design(n, k);
    design.col(0).setOnes();
    design.rightCols(x.cols()) = x;

    // Collinearity screen on the frequency-weighted design.
    const Matrix scaled = f.cwiseSqrt().asDiagonal() * design;
    const GreedyBasis basis = greedy_basis(normalized_gram(scaled), opt.collinearity_tol);
    if (basis.kept.empty() || basis.kept.front() != 0) throw NumericalError("logit design has no usable intercept");
    model.active.assign(static_cast<Index>(k), false);
    for (Index j : basis.kept) model.active[j] = true;
    for (Index j : basis.dropped) model.diagnostics.warn("propensity column '" + model.names[j] + "' dropped as collinear");
    const Matrix a = select_cols(design, basis.kept);
    const Eigen::Index r = a.cols();

    double mass = f.sum();
    double treated = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) treated += d[static_cast<Index>(i)] ? f(i) : 0.0;
    if (treated <= 0.0 || treated >= mass) throw DomainError("logit needs both treated and control observations");

    Vector beta = Vector::Zero(r);
    beta(0) = std::log(treated / (mass - treated));
    Vector yd(n);
    for (Eigen::Index i = 0; i < n; ++i) yd(i) = d[static_cast<Index>(i)];

    Vector eta = a * beta;
    double ll = detail::logit_loglik(eta, d, f);
    model.loglik_trace.push_back(ll);
    Matrix hessian;
    bool converged = false;
    for (int it = 0; it < opt.max_iter; ++it) {
        const Vector p = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
        const Vector grad = a.transpose() * f.cwiseProduct(yd - p);
        const Vector curv = f.cwiseProduct(p.cwiseProduct((1.0 - p.array()).matrix()));
        hessian = a.transpose() * curv.asDiagonal() * a;
        model.gradient_norm = grad.norm() / mass;
        model.iterations = it;
        if (model.gradient_norm <= opt.tol) {
            converged = true;
            break;
        }
        const NormalSolution step = solve_normal_equations(hessian, grad, 1e-14);
        double t = 1.0, gain = 0.0;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
            const Vector cand = beta + t * step.beta;
            const Vector cand_eta = a * cand;
            const double cand_ll = detail::logit_loglik(cand_eta, d, f);
            if (std::isfinite(cand_ll) && cand_ll >= ll) {
                gain = cand_ll - ll;
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
        }
        if (eta.cwiseAbs().maxCoeff() > opt.separation_cap) detail::separation(opt.separation_cap);
        if (!accepted) {
            // No ascent direction left at machine precision.
            model.iterations = it + 1;
            converged = model.gradient_norm <= std::sqrt(opt.tol);
            break;
        }
        model.loglik_trace.push_back(ll);
        // Rounding floor: steps no longer move the likelihood.
        if (gain <= 1e-14 * std::abs(ll) && model.gradient_norm <= std::sqrt(opt.tol)) {
            model.iterations = it + 1;
            converged = true;
            break;
        }
    }
    if (eta.cwiseAbs().maxCoeff() > opt.separation_cap) detail::separation(opt.separation_cap);
    if (!converged) {
        std::ostringstream msg;
        msg << "logit did not converge after " << opt.max_iter << " iterations (gradient norm "
            << model.gradient_norm << ")";
        throw NumericalError(msg.str());
    }

    model.coefficients = Vector::Zero(k);
    model.std_errors = Vector::Zero(k);
    const Matrix cov = hessian.ldlt().solve(Matrix::Identity(r, r));
    for (std::size_t a_i = 0; a_i < basis.kept.size(); ++a_i) {
        const auto j = static_cast<Eigen::Index>(basis.kept[a_i]);
        model.coefficients(j) = beta(static_cast<Eigen::Index>(a_i));
        model.std_errors(j) = std::sqrt(std::max(0.0, cov(static_cast<Eigen::Index>(a_i), static_cast<Eigen::Index>(a_i))));
    }
    return model;
}

/// Average marginal effect per covariate (intercept excluded): the
/// discrete 0->1 contrast for binary columns, mean p(1-p) coef otherwise.
inline std::vector<double> average_marginal_effects(const PropensityModel& model, const Matrix& x) {
    std::vector<double> out;
    if (x.cols() == 0) return out;
    const Vector eta = model.linear_predictor(x);
    auto sigmoid = [](double e) { return 1.0 / (1.0 + std::exp(-e)); };
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double coef = model.coefficients(j + 1);
        double sum = 0.0;
        if (is_binary_column(x, j)) {
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const double base = eta(i) - coef * x(i, j);
                sum += sigmoid(base + coef) - sigmoid(base);
            }
        } else {
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const double p = sigmoid(eta(i));
                sum += p * (1.0 - p) * coef;
            }
        }
        out.push_back(sum / static_cast<double>(x.rows()));
    }
    return out;
}

struct TrimResult {
    double lower = 0.0;  ///< 0.5th percentile of treated scores
    double upper = 1.0;  ///< 99.5th percentile of control scores
    IndexList retained;
    Index dropped_treated = 0;
    Index dropped_controls = 0;
};

struct TrimOptions {
    double lower_quantile = 0.005;
    double upper_quantile = 0.995;
};

/// Common-support trimming: drop every observation with a score below the
/// lower quantile of the treated or above the upper quantile of the controls.
inline TrimResult trim_common_support(std::span<const double> pscore, const Flags& d, const TrimOptions& opt = {}) {
    if (pscore.size() != d.size()) throw DomainError("scores and treatment must have equal length");
    std::vector<double> treated, controls;
    for (Index i = 0; i < d.size(); ++i) {
        if (!(pscore[i] > 0.0 && pscore[i] < 1.0)) throw DomainError("propensity scores must lie in (0,1)");
        (d[i] ? treated : controls).push_back(pscore[i]);
    }
    if (treated.empty() || controls.empty()) throw DomainError("trimming needs treated and control observations");
    TrimResult out;
    out.lower = quantile(treated, opt.lower_quantile);
    out.upper = quantile(controls, opt.upper_quantile);
    Index kept_treated = 0, kept_controls = 0;
    for (Index i = 0; i < d.size(); ++i) {
        if (pscore[i] < out.lower || pscore[i] > out.upper) {
            (d[i] ? out.dropped_treated : out.dropped_controls)++;
        } else {
            out.retained.push_back(i);
            (d[i] ? kept_treated : kept_controls)++;
        }
    }
    if (kept_treated == 0 || kept_controls == 0)
        throw DomainError("common-support trimming removed every treated or every control observation");
    return out;
}

/// Nonnegative weights summing to one within the treated and within the
/// controls: the displayed IPW weight times the transformed treatment.
struct WeightVector {
    std::vector<double> values;

    double group_sum(const Flags& d, bool treated) const {
        std::vector<double> part;
        for (Index i = 0; i < values.size(); ++i)
            if ((d[i] != 0) == treated) part.push_back(values[i]);
        return stable_sum(part);
    }
};

/// Treated: (1/p_i)/sum_treated(1/p); controls: (1/(1-p_i))/sum_controls(1/(1-p)).
/// Optional frequency weights multiply each term.
inline WeightVector ipw_weights(std::span<const double> pscore, const Flags& d, std::span<const double> frequency = {}) {
    if (pscore.size() != d.size()) throw DomainError("scores and treatment must have equal length");
    if (!frequency.empty() && frequency.size() != d.size()) throw DomainError("frequency weights must match rows");
    WeightVector w;
    w.values.resize(d.size());
    std::vector<double> raw1, raw0;
    for (Index i = 0; i < d.size(); ++i) {
        const double p = pscore[i];
        if (!(p > 0.0 && p < 1.0)) throw DomainError("propensity score outside (0,1) at row " + std::to_string(i));
        const double f = frequency.empty() ? 1.0 : frequency[i];
        w.values[i] = d[i] ? f / p : f / (1.0 - p);
        (d[i] ? raw1 : raw0).push_back(w.values[i]);
    }
    const double s1 = stable_sum(raw1), s0 = stable_sum(raw0);
    if (!(s1 > 0.0) || !(s0 > 0.0)) throw DomainError("IPW weights need positive mass in both treatment groups");
    for (Index i = 0; i < d.size(); ++i) w.values[i] /= d[i] ? s1 : s0;
    return w;
}

} // namespace hetfx
