#pragma once
// Honest splitting and bagging. Each split selects heterogeneity variables
// on one half and re-estimates their coefficients on the other half; CATE
// predictions for every observation are averaged over splits.

#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "effects.hpp"
#include "parallel.hpp"
#include "propensity.hpp"
#include "random.hpp"

namespace hetfx {

/// Everything the estimators need for one outcome on the trimmed sample.
struct EstimationSample {
    Matrix z;                 ///< heterogeneity design, constant first
    Flags d;
    Vector y;
    IndexList clusters;       ///< dense cluster index per row
    Vector pscore;
    Vector weights;           ///< group-normalized IPW weights
    Matrix x;                 ///< confounders, for per-split propensity refits
    std::vector<std::string> z_names;

    Index size() const { return d.size(); }
    Index cluster_count() const {
        Index c = 0;
        for (Index k : clusters) c = std::max(c, k + 1);
        return c;
    }

    static EstimationSample from(const Dataset& data, Index outcome, std::span<const double> pscore,
                                 const WeightVector& w) {
        if (pscore.size() != data.size() || w.values.size() != data.size())
            throw DomainError("scores and weights must cover every row");
        EstimationSample s;
        s.z = data.heterogeneity();
        s.d = data.treatment();
        s.y = data.outcome(outcome);
        s.clusters = data.cluster_index();
        s.pscore = to_vector(pscore);
        s.weights = to_vector(w.values);
        s.x = data.confounders();
        s.z_names = data.heterogeneity_names();
        return s;
    }
};

/// Propensity fit on the full sample, optional common-support trimming, and
/// weights on the retained rows.
struct PreparedData {
    PropensityModel model;
    std::optional<TrimResult> trim;
    IndexList retained;
    Dataset data;             ///< retained rows only
    Vector pscore;            ///< aligned with `data`
    WeightVector weights;
};

inline PreparedData prepare(const Dataset& raw, bool trim = true, const LogitOptions& logit = {},
                            const TrimOptions& trim_opt = {}) {
    PropensityModel model = fit_logit(raw.confounders(), raw.treatment(), logit, raw.confounder_names());
    const Vector p = model.predict(raw.confounders());
    IndexList retained(raw.size());
    std::iota(retained.begin(), retained.end(), Index{0});
    std::optional<TrimResult> tr;
    if (trim) {
        tr = trim_common_support(as_span(p), raw.treatment(), trim_opt);
        retained = tr->retained;
    }
    Dataset data = raw.subset(retained);
    Vector pk = gather(p, retained);
    WeightVector w = ipw_weights(as_span(pk), data.treatment());
    return PreparedData{std::move(model), std::move(tr), std::move(retained), std::move(data), std::move(pk), std::move(w)};
}

struct PipelineConfig {
    EffectMethod method = EffectMethod::mcm_one_step;
    SelectorConfig selector;
    Index splits = 30;
    bool renormalize_weights = true;     ///< re-normalize half-sample weights within treatment groups
    bool reestimate_propensity = false;  ///< refit the participation model inside each half
    bool mom_weighted = false;           ///< MOM with group-normalized weights instead of unit weights
    LogitOptions logit;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

struct SplitHalves {
    IndexList training;
    IndexList estimation;
};

/// Cluster-respecting random halving, balanced greedily on row counts.
inline SplitHalves honest_split(Index n, const IndexList& clusters, std::uint64_t seed) {
    if (n < 2) throw DomainError("honest splitting needs at least two rows");
    if (clusters.size() != n) throw DomainError("cluster ids must cover every row");
    const IndexList dense = dense_clusters(clusters);
    Index count = 0;
    for (Index c : dense) count = std::max(count, c + 1);
    if (count < 2) throw DomainError("honest splitting needs at least two clusters");
    Rng rng(seed);
    const IndexList part = cluster_partition(dense, 2, rng);
    SplitHalves out;
    for (Index i = 0; i < n; ++i) (part[i] == 0 ? out.training : out.estimation).push_back(i);
    return out;
}

struct SplitResult {
    Index split = 0;
    std::uint64_t seed = 0;
    IndexList training;
    IndexList estimation;
    EffectFit selection;            ///< fit on the training half
    RefitPlan plan;                 ///< frozen support
    Vector delta;                   ///< estimation-half coefficients over Z
    Vector main;
    Vector predictions;             ///< Z_i delta for every row
    Vector estimation_response;     ///< refit response on the estimation rows
    Vector estimation_weights;      ///< refit base weights on the estimation rows
    bool group_normalized = true;   ///< refit weights are re-normalized within treatment groups
    Diagnostics diagnostics;
};

namespace detail {

inline Vector group_normalize(const Vector& w, const Flags& d) {
    double s[2] = {0.0, 0.0};
    for (Eigen::Index i = 0; i < w.size(); ++i) s[d[static_cast<Index>(i)]] += w(i);
    Vector out = w;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double m = s[d[static_cast<Index>(i)]];
        out(i) = m > 0.0 ? w(i) / m : 0.0;
    }
    return out;
}

inline Flags gather_flags(const Flags& d, const IndexList& rows) {
    Flags out;
    out.reserve(rows.size());
    for (Index i : rows) out.push_back(d[i]);
    return out;
}

inline IndexList gather_index(const IndexList& v, const IndexList& rows) {
    IndexList out;
    out.reserve(rows.size());
    for (Index i : rows) out.push_back(v[i]);
    return out;
}

/// Scores, weights and response for one half.
struct HalfInputs {
    Matrix z;
    Flags d;
    Vector y;
    IndexList clusters;
    Vector pscore;
    Vector weights;
    bool group_normalized = true;
};

inline HalfInputs half_inputs(const EstimationSample& s, const IndexList& rows, const PipelineConfig& cfg,
                              Diagnostics& diag) {
    HalfInputs h;
    h.z = select_rows(s.z, rows);
    h.d = gather_flags(s.d, rows);
    h.y = gather(s.y, rows);
    h.clusters = dense_clusters(gather_index(s.clusters, rows));
    Index treated = 0;
    for (auto v : h.d) treated += v;
    if (treated == 0 || treated == rows.size())
        throw DomainError("a split half contains only treated or only control observations");
    if (cfg.reestimate_propensity) {
        const PropensityModel m = fit_logit(select_rows(s.x, rows), h.d, cfg.logit);
        diag.merge(m.diagnostics);
        h.pscore = m.predict(select_rows(s.x, rows));
        h.weights = to_vector(ipw_weights(as_span(h.pscore), h.d).values);
    } else {
        h.pscore = gather(s.pscore, rows);
        h.weights = gather(s.weights, rows);
    }
    if (cfg.method == EffectMethod::mom) {
        h.group_normalized = cfg.mom_weighted;
        h.weights = cfg.mom_weighted ? group_normalize(h.weights, h.d) : Vector::Ones(h.z.rows());
    } else {
        h.group_normalized = cfg.renormalize_weights;
        if (cfg.renormalize_weights) h.weights = group_normalize(h.weights, h.d);
    }
    return h;
}

} // namespace detail

/// Fits the configured method on one half.
inline EffectFit fit_effect(const EffectMethod method, const detail::HalfInputs& h, const SelectorConfig& sel,
                            std::uint64_t seed) {
    if (method == EffectMethod::mom) {
        const Vector* w = h.group_normalized ? &h.weights : nullptr;
        return fit_mom(h.z, h.d, h.y, as_span(h.pscore), sel, h.clusters, seed, w);
    }
    return fit_mcm(h.z, h.d, h.y, h.weights, augmentation_of(method), sel, h.clusters, seed);
}

inline std::uint64_t split_seed(std::uint64_t master, Index s) { return derive_seed(master, StreamTag::split, s); }

namespace detail {

/// Estimation-half refit of a frozen support, shared by fresh fits and by
/// rebuilds from stored selections.
inline void refit_estimation_half(const EstimationSample& sample, const PipelineConfig& cfg, SplitResult& r) {
    const HalfInputs est = half_inputs(sample, r.estimation, cfg, r.diagnostics);
    r.estimation_response = cfg.method == EffectMethod::mom ? mom_transform(est.y, est.d, as_span(est.pscore)) : est.y;
    r.group_normalized = est.group_normalized;
    r.estimation_weights = est.weights;
    const RefitCoefficients coef = refit_rows(r.plan, est.z, est.d, r.estimation_response, est.weights);
    for (Index k : coef.dropped) {
        const bool is_main = k < r.plan.main.size();
        const Index col = is_main ? r.plan.main[k] : r.plan.inter[k - r.plan.main.size()];
        r.diagnostics.warn("split " + std::to_string(r.split) + ": " + (is_main ? "main-effect" : "interaction") +
                           " column '" + (col < sample.z_names.size() ? sample.z_names[col] : std::to_string(col)) +
                           "' not identified on the estimation half; dropped");
    }
    r.delta = coef.delta;
    r.main = coef.main;
    r.predictions = sample.z * r.delta;
}

} // namespace detail

/// One honest split: select on the training half, refit the frozen support
/// on the estimation half, predict for every row.
inline SplitResult run_split(const EstimationSample& sample, const PipelineConfig& cfg, Index s) {
    SplitResult r;
    r.split = s;
    r.seed = split_seed(cfg.seed, s);
    const SplitHalves halves = honest_split(sample.size(), sample.clusters, r.seed);
    r.training = halves.training;
    r.estimation = halves.estimation;

    const detail::HalfInputs train = detail::half_inputs(sample, r.training, cfg, r.diagnostics);
    const std::uint64_t cv_seed = derive_seed(r.seed, StreamTag::cross_validation);
    r.selection = fit_effect(cfg.method, train, cfg.selector, cv_seed);
    r.diagnostics.merge(r.selection.diagnostics);
    r.plan = RefitPlan::from_fit(r.selection);
    detail::refit_estimation_half(sample, cfg, r);
    return r;
}

/// Rebuilds split s from a stored support without rerunning selection.
inline SplitResult rebuild_split(const EstimationSample& sample, const PipelineConfig& cfg, Index s,
                                 const RefitPlan& plan) {
    SplitResult r;
    r.split = s;
    r.seed = split_seed(cfg.seed, s);
    const SplitHalves halves = honest_split(sample.size(), sample.clusters, r.seed);
    r.training = halves.training;
    r.estimation = halves.estimation;
    r.plan = plan;
    detail::refit_estimation_half(sample, cfg, r);
    return r;
}

struct CateEnsemble {
    Matrix predictions;            ///< S x N
    Vector bagged;                 ///< column means of `predictions`
    std::vector<IndexList> selected;

    Index splits() const { return static_cast<Index>(predictions.rows()); }
};

inline CateEnsemble bag_cates(const std::vector<SplitResult>& results) {
    if (results.empty()) throw DomainError("bagging needs at least one split");
    const Eigen::Index n = results.front().predictions.size();
    CateEnsemble e;
    e.predictions.resize(static_cast<Eigen::Index>(results.size()), n);
    for (std::size_t s = 0; s < results.size(); ++s) {
        if (results[s].predictions.size() != n) throw DomainError("split predictions cover different row sets");
        e.predictions.row(static_cast<Eigen::Index>(s)) = results[s].predictions.transpose();
        e.selected.push_back(results[s].plan.inter);
    }
    e.bagged = e.predictions.colwise().mean().transpose();
    return e;
}

inline double group_average(const Vector& cate, const Flags& group) {
    if (group.size() != static_cast<Index>(cate.size())) throw DomainError("group flags must cover every row");
    double sum = 0.0, count = 0.0;
    for (Eigen::Index i = 0; i < cate.size(); ++i)
        if (group[static_cast<Index>(i)]) {
            sum += cate(i);
            count += 1.0;
        }
    if (count == 0.0) throw DomainError("group is empty");
    return sum / count;
}

inline double group_average(const CateEnsemble& e, const Flags& group) { return group_average(e.bagged, group); }

struct PipelineResult {
    std::vector<SplitResult> splits;
    CateEnsemble ensemble;
    Diagnostics diagnostics;
};

inline PipelineResult run_pipeline(const EstimationSample& sample, const PipelineConfig& cfg) {
    if (cfg.splits < 1) throw DomainError("need at least one split");
    PipelineResult out;
    out.splits.resize(cfg.splits);
    parallel_for(cfg.splits, cfg.workers, [&](std::size_t s) { out.splits[s] = run_split(sample, cfg, s); });
    for (const auto& r : out.splits) out.diagnostics.merge(r.diagnostics);
    out.ensemble = bag_cates(out.splits);
    return out;
}

} // namespace hetfx
