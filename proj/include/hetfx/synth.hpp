#pragma once
// Synthetic data with known CATEs. Covariates W are standard normal; the
// confounders X are the first p_x columns of W and the heterogeneity design
// is Z = [1, W_1 .. W_{p-1}], so tau_i = z_i' delta exactly.

#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "random.hpp"

namespace hetfx {

struct DgpConfig {
    std::string name;
    Index n = 1000;
    Index clusters = 50;
    Index p_x = 3;                 ///< confounders
    Index p = 10;                  ///< heterogeneity columns including the constant
    Vector delta;                  ///< length p
    Vector beta;                   ///< main effects, length p
    Vector a;                      ///< propensity index coefficients, length p_x; zero means randomized
    double intercept = 0.0;        ///< propensity index intercept
    double sigma = 1.0;
    double cluster_sd = 0.0;
    double nonlinear = 0.0;        ///< adds nonlinear * (W_1^2 - 1) to tau
    Index months = 1;              ///< outcome columns; the effect fades linearly to zero in the last one
    Index characteristics = 5;     ///< leading W columns copied to the characteristic block
    std::uint64_t seed = 0;

    void validate() const {
        if (n < 2) throw DomainError("n must be at least 2");
        if (clusters < 1 || clusters > n) throw DomainError("cluster count must lie in 1..n");
        if (p < 1) throw DomainError("p must be at least 1");
        if (static_cast<Index>(delta.size()) != p || static_cast<Index>(beta.size()) != p)
            throw DomainError("delta and beta must have length p");
        if (static_cast<Index>(a.size()) != p_x) throw DomainError("propensity coefficients must have length p_x");
        if (months < 1) throw DomainError("need at least one outcome month");
        if (sigma < 0.0 || cluster_sd < 0.0) throw DomainError("standard deviations must be nonnegative");
    }

    Index width() const { return std::max({p_x, p > 0 ? p - 1 : 0, characteristics, Index{1}}); }

    /// Non-constant columns of Z with a nonzero delta.
    IndexList true_support() const {
        IndexList s;
        for (Eigen::Index j = 1; j < delta.size(); ++j)
            if (delta(j) != 0.0) s.push_back(static_cast<Index>(j));
        return s;
    }
};

inline constexpr double kPropensityFloor = 0.02;
inline constexpr double kPropensityCeiling = 0.98;

struct SynthOutput {
    Dataset data;
    Vector tau;                 ///< true CATE (first outcome month)
    Matrix y0, y1;              ///< potential outcomes, N x months
    Vector propensity;
    double true_ate = 0.0, true_atet = 0.0, true_atent = 0.0;
};

inline SynthOutput generate(const DgpConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<Eigen::Index>(cfg.n);
    const auto k = static_cast<Eigen::Index>(cfg.width());
    Rng rng = make_rng(cfg.seed, StreamTag::synth);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Matrix w(n, k);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < k; ++j) w(i, j) = normal(rng);
    std::uniform_int_distribution<Index> pick(0, cfg.clusters - 1);
    IndexList cluster(cfg.n);
    for (auto& c : cluster) c = pick(rng);
    Vector effect(static_cast<Eigen::Index>(cfg.clusters));
    for (auto& e : effect) e = cfg.cluster_sd * normal(rng);

    Matrix z(n, static_cast<Eigen::Index>(cfg.p));
    z.col(0).setOnes();
    if (cfg.p > 1) z.rightCols(static_cast<Eigen::Index>(cfg.p - 1)) = w.leftCols(static_cast<Eigen::Index>(cfg.p - 1));
    const Matrix x = w.leftCols(static_cast<Eigen::Index>(cfg.p_x));

    SynthOutput out;
    out.tau = z * cfg.delta;
    if (cfg.nonlinear != 0.0) out.tau.array() += cfg.nonlinear * (w.col(0).array().square() - 1.0);
    out.propensity.resize(n);
    Flags d(cfg.n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double index = cfg.intercept + x.row(i).dot(cfg.a);
        const double p = std::clamp(1.0 / (1.0 + std::exp(-index)), kPropensityFloor, kPropensityCeiling);
        out.propensity(i) = p;
        d[static_cast<Index>(i)] = unif(rng) < p ? 1 : 0;
    }
    const auto m = static_cast<Eigen::Index>(cfg.months);
    out.y0.resize(n, m);
    out.y1.resize(n, m);
    const Vector base = z * cfg.beta;
    for (Eigen::Index t = 0; t < m; ++t) {
        const double fade = m == 1 ? 1.0 : static_cast<double>(m - 1 - t) / static_cast<double>(m - 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double y0 = base(i) + effect(static_cast<Eigen::Index>(cluster[static_cast<Index>(i)])) + cfg.sigma * normal(rng);
            out.y0(i, t) = y0;
            out.y1(i, t) = y0 + fade * out.tau(i);
        }
    }

    Dataset::Columns c;
    c.outcomes.resize(n, m);
    for (Eigen::Index i = 0; i < n; ++i) c.outcomes.row(i) = d[static_cast<Index>(i)] ? out.y1.row(i) : out.y0.row(i);
    c.treatment = d;
    c.confounders = x;
    c.heterogeneity = z;
    for (Index i = 0; i < cfg.n; ++i) {
        c.cluster_ids.push_back("c" + std::to_string(cluster[i]));
        c.obs_ids.push_back(std::to_string(i + 1));
    }
    for (Index t = 0; t < cfg.months; ++t) c.outcome_names.push_back(cfg.months == 1 ? "y" : "y" + std::to_string(t + 1));
    for (Index j = 0; j < cfg.p_x; ++j) c.confounder_names.push_back("w" + std::to_string(j + 1));
    c.heterogeneity_names.push_back("const");
    for (Index j = 1; j < cfg.p; ++j) c.heterogeneity_names.push_back("w" + std::to_string(j));
    c.characteristics = w.leftCols(static_cast<Eigen::Index>(cfg.characteristics));
    for (Index j = 0; j < cfg.characteristics; ++j) c.characteristic_names.push_back("w" + std::to_string(j + 1));
    out.data = Dataset::create(std::move(c));

    std::vector<double> all, treated, controls;
    for (Eigen::Index i = 0; i < n; ++i) {
        all.push_back(out.tau(i));
        (d[static_cast<Index>(i)] ? treated : controls).push_back(out.tau(i));
    }
    out.true_ate = mean(all);
    out.true_atet = treated.empty() ? 0.0 : mean(treated);
    out.true_atent = controls.empty() ? 0.0 : mean(controls);
    return out;
}

/// Named configurations: rct-linear, obs-sparse, null, and rct-nonlinear
/// (for studying approximation error only).
inline std::vector<DgpConfig> default_configs() {
    std::vector<DgpConfig> out;
    {
        DgpConfig c;
        c.name = "rct-linear";
        c.n = 20000;
        c.clusters = 400;
        c.p_x = 3;
        c.p = 12;
        c.delta = Vector::Zero(12);
        c.delta << 0.2, 0.5, -0.5, 0.0, 0.5, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0;
        c.beta = Vector::Zero(12);
        c.beta << 1.0, 0.8, 0.0, -0.6, 0.0, 0.4, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0;
        c.a = Vector::Zero(3);
        c.sigma = 1.0;
        c.cluster_sd = 0.3;
        c.seed = 20240101;
        out.push_back(c);
    }
    {
        DgpConfig c;
        c.name = "obs-sparse";
        c.n = 10000;
        c.clusters = 50;
        c.p_x = 3;
        c.p = 200;
        c.delta = Vector::Zero(200);
        c.delta(0) = -0.5;
        c.delta(1) = 0.5;
        c.delta(4) = -0.5;
        c.delta(6) = 0.5;
        c.delta(9) = -0.5;
        c.delta(12) = 0.5;
        c.beta = Vector::Zero(200);
        c.beta(0) = 1.0;
        c.beta(1) = 1.0;
        c.beta(2) = -0.8;
        c.beta(3) = 0.6;
        c.beta(5) = 0.5;
        c.a = Vector::Zero(3);
        c.a << 0.8, -0.6, 0.5;
        c.sigma = 1.0;
        c.cluster_sd = 0.2;
        c.seed = 20240202;
        out.push_back(c);
    }
    {
        DgpConfig c;
        c.name = "null";
        c.n = 5000;
        c.clusters = 100;
        c.p_x = 3;
        c.p = 12;
        c.delta = Vector::Zero(12);
        c.beta = Vector::Zero(12);
        c.beta << 1.0, 0.8, 0.0, -0.6, 0.0, 0.4, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0;
        c.a = Vector::Zero(3);
        c.a << 0.5, -0.5, 0.0;
        c.sigma = 1.0;
        c.cluster_sd = 0.2;
        c.seed = 20240303;
        out.push_back(c);
    }
    {
        DgpConfig c = out.front();
        c.name = "rct-nonlinear";
        c.nonlinear = 0.4;
        c.seed = 20240404;
        out.push_back(c);
    }
    return out;
}

inline DgpConfig default_config(const std::string& name) {
    for (const auto& c : default_configs())
        if (c.name == name) return c;
    throw DomainError("unknown synthetic configuration '" + name + "'");
}

} // namespace hetfx
