#pragma once
// Average effects (ATE, ATET, ATENT) and cluster-bootstrap standard errors
// for average effects and for bagged CATEs.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "core.hpp"
#include "effects.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "propensity.hpp"
#include "random.hpp"

namespace hetfx {

enum class Estimand { ate, atet, atent };

inline std::string to_string(Estimand e) {
    switch (e) {
    case Estimand::ate: return "ATE";
    case Estimand::atet: return "ATET";
    case Estimand::atent: return "ATENT";
    }
    return "?";
}

struct EffectEstimate {
    Estimand estimand = Estimand::ate;
    double value = 0.0;
    double se = 0.0;
    Index replications = 0;   ///< 0 when no standard error was computed
};

/// Point estimates plus the weighted potential-outcome levels behind them.
struct AverageEffects {
    double ate = 0.0, atet = 0.0, atent = 0.0;
    double treated_level = 0.0;        ///< sum over treated of w y
    double control_level = 0.0;        ///< sum over controls of w y
    double treated_mean = 0.0;         ///< mean outcome of the treated
    double control_counterfactual = 0.0;  ///< odds-reweighted control mean (ATET baseline)
    double treated_counterfactual = 0.0;  ///< odds-reweighted treated mean (ATENT)
    double control_mean = 0.0;

    std::vector<EffectEstimate> estimates() const {
        return {{Estimand::ate, ate, 0.0, 0}, {Estimand::atet, atet, 0.0, 0}, {Estimand::atent, atent, 0.0, 0}};
    }
};

/// ATE from the group-normalized weights; ATET and ATENT by normalized odds
/// reweighting of the other group. `frequency` multiplies every term.
inline AverageEffects estimate_averages(std::span<const double> y, const Flags& d, std::span<const double> pscore,
                                        std::span<const double> w, std::span<const double> frequency = {}) {
    const Index n = d.size();
    if (y.size() != n || pscore.size() != n || w.size() != n) throw DomainError("inputs must have equal length");
    if (!frequency.empty() && frequency.size() != n) throw DomainError("frequency weights must match rows");
    std::vector<double> t_wy, c_wy, t_y, t_f, c_y, c_f, q_y, q, r_y, r;
    for (Index i = 0; i < n; ++i) {
        const double f = frequency.empty() ? 1.0 : frequency[i];
        if (f == 0.0) continue;
        const double p = pscore[i];
        if (!(p > 0.0 && p < 1.0)) throw DomainError("propensity score outside (0,1) at row " + std::to_string(i));
        if (d[i]) {
            t_wy.push_back(w[i] * y[i]);
            t_y.push_back(f * y[i]);
            t_f.push_back(f);
            r.push_back(f * (1.0 - p) / p);
            r_y.push_back(r.back() * y[i]);
        } else {
            c_wy.push_back(w[i] * y[i]);
            c_y.push_back(f * y[i]);
            c_f.push_back(f);
            q.push_back(f * p / (1.0 - p));
            q_y.push_back(q.back() * y[i]);
        }
    }
    if (t_f.empty() || c_f.empty()) throw DomainError("average effects need treated and control observations");
    AverageEffects a;
    a.treated_level = stable_sum(t_wy);
    a.control_level = stable_sum(c_wy);
    a.treated_mean = stable_sum(t_y) / stable_sum(t_f);
    a.control_mean = stable_sum(c_y) / stable_sum(c_f);
    a.control_counterfactual = stable_sum(q_y) / stable_sum(q);
    a.treated_counterfactual = stable_sum(r_y) / stable_sum(r);
    a.ate = a.treated_level - a.control_level;
    a.atet = a.treated_mean - a.control_counterfactual;
    a.atent = a.treated_counterfactual - a.control_mean;
    return a;
}

/// estimate_averages applied to each outcome column.
inline std::vector<AverageEffects> monthly_effect_curve(const Matrix& outcomes, const Flags& d,
                                                        std::span<const double> pscore, std::span<const double> w) {
    if (outcomes.cols() < 1) throw DomainError("need at least one outcome column");
    std::vector<AverageEffects> out;
    for (Eigen::Index m = 0; m < outcomes.cols(); ++m) {
        const Vector col = outcomes.col(m);
        out.push_back(estimate_averages(as_span(col), d, pscore, w));
    }
    return out;
}

/// Standard deviation with divisor B.
inline double bootstrap_se(std::span<const double> replicates) {
    if (replicates.size() < 2) throw DomainError("a bootstrap standard error needs at least two replications");
    RunningMoments m;
    for (double v : replicates) m.add(v);
    return m.population_sd();
}

/// Two-sided normal significance stars at 10/5/1 percent.
inline std::string significance_stars(double value, double se) {
    if (!(se > 0.0)) return "";
    const double z = std::abs(value / se);
    if (z >= 2.5758293035489) return "***";
    if (z >= 1.9599639845401) return "**";
    if (z >= 1.6448536269515) return "*";
    return "";
}

struct BootstrapConfig {
    Index replications = 1000;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    double max_excluded_share = 0.05;
    bool reestimate_propensity = true;   ///< average-effect bootstrap only
    LogitOptions logit;
};

/// Cluster counts for one replication: C uniform draws with replacement.
inline std::vector<Index> draw_cluster_counts(Index clusters, std::uint64_t seed, StreamTag tag, Index b) {
    Rng rng = make_rng(seed, tag, b);
    std::uniform_int_distribution<Index> pick(0, clusters - 1);
    std::vector<Index> counts(clusters, 0);
    for (Index k = 0; k < clusters; ++k) ++counts[pick(rng)];
    return counts;
}

// ---------------------------------------------------------------------------
// Average effects

struct AverageBootstrap {
    Index requested = 0, used = 0, excluded = 0;
    std::vector<AverageEffects> point;          ///< per outcome column
    std::vector<std::array<double, 3>> se;      ///< ATE, ATET, ATENT per outcome column
    Matrix replicates;                          ///< used x (3 * columns), column-major per outcome

    std::vector<EffectEstimate> estimates(Index column) const {
        const auto& p = point.at(column);
        const auto& s = se.at(column);
        return {{Estimand::ate, p.ate, s[0], used}, {Estimand::atet, p.atet, s[1], used}, {Estimand::atent, p.atent, s[2], used}};
    }
};

/// Cluster bootstrap of ATE/ATET/ATENT for each outcome column. With
/// `reestimate_propensity`, the logit and weights are refit in every
/// replication on the resampled clusters; otherwise the given scores are kept.
inline AverageBootstrap bootstrap_averages(const Matrix& outcomes, const Flags& d, const Matrix& x,
                                           std::span<const double> pscore, const IndexList& clusters,
                                           const BootstrapConfig& cfg) {
    const Index n = d.size();
    if (cfg.replications < 2) throw DomainError("bootstrap needs B >= 2");
    if (static_cast<Index>(outcomes.rows()) != n || pscore.size() != n || clusters.size() != n)
        throw DomainError("bootstrap inputs must have equal length");
    const IndexList dense = dense_clusters(clusters);
    Index nc = 0;
    for (Index c : dense) nc = std::max(nc, c + 1);
    const auto m = static_cast<Index>(outcomes.cols());

    AverageBootstrap out;
    out.requested = cfg.replications;
    const WeightVector w0 = ipw_weights(pscore, d);
    for (Eigen::Index j = 0; j < outcomes.cols(); ++j) {
        const Vector col = outcomes.col(j);
        out.point.push_back(estimate_averages(as_span(col), d, pscore, w0.values));
    }

    std::vector<std::vector<double>> reps(cfg.replications);
    parallel_for(cfg.replications, cfg.workers, [&](std::size_t b) {
        const auto counts = draw_cluster_counts(nc, cfg.seed, StreamTag::bootstrap_averages, b);
        std::vector<double> f(n);
        double treated = 0.0, controls = 0.0;
        for (Index i = 0; i < n; ++i) {
            f[i] = static_cast<double>(counts[dense[i]]);
            (d[i] ? treated : controls) += f[i];
        }
        if (treated == 0.0 || controls == 0.0) return;
        std::vector<double> p(pscore.begin(), pscore.end());
        try {
            if (cfg.reestimate_propensity) {
                const PropensityModel model = fit_logit(x, d, cfg.logit, {}, f);
                const Vector pv = model.predict(x);
                p.assign(pv.data(), pv.data() + pv.size());
            }
            const WeightVector w = ipw_weights(p, d, f);
            std::vector<double> row;
            for (Eigen::Index j = 0; j < outcomes.cols(); ++j) {
                const Vector col = outcomes.col(j);
                const AverageEffects a = estimate_averages(as_span(col), d, p, w.values, f);
                row.insert(row.end(), {a.ate, a.atet, a.atent});
            }
            reps[b] = std::move(row);
        } catch (const Error&) {
            // Flagged as excluded below.
        }
    });

    std::vector<const std::vector<double>*> ok;
    for (const auto& r : reps)
        if (!r.empty()) ok.push_back(&r);
    out.used = ok.size();
    out.excluded = out.requested - out.used;
    if (static_cast<double>(out.excluded) > cfg.max_excluded_share * static_cast<double>(out.requested))
        throw NumericalError(std::to_string(out.excluded) + " of " + std::to_string(out.requested) +
                             " bootstrap replications failed (empty treatment group or logit failure)");
    if (out.used < 2) throw NumericalError("fewer than two usable bootstrap replications");
    out.replicates.resize(static_cast<Eigen::Index>(out.used), static_cast<Eigen::Index>(3 * m));
    for (std::size_t b = 0; b < ok.size(); ++b)
        for (Index k = 0; k < 3 * m; ++k) out.replicates(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) = (*ok[b])[k];
    for (Index j = 0; j < m; ++j) {
        std::array<double, 3> s{};
        for (Index k = 0; k < 3; ++k) {
            const Vector col = out.replicates.col(static_cast<Eigen::Index>(3 * j + k));
            s[k] = bootstrap_se(as_span(col));
        }
        out.se.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bagged CATEs

/// What a per-replication statistic sees.
struct ReplicationView {
    Index replication = 0;
    const Vector& cate;                      ///< bagged CATE for every row under this replication
    const std::vector<Index>& cluster_counts;
    const IndexList& cluster_of_row;

    double multiplicity(Index i) const { return static_cast<double>(cluster_counts[cluster_of_row[i]]); }
};

struct ReplicationStatistic {
    std::string name;
    std::function<std::vector<double>(const ReplicationView&)> compute;
};

struct CateBootstrapResult {
    Index requested = 0, used = 0, excluded = 0;
    IndexList replication_ids;    ///< replication number b of each used row
    Vector delta;                 ///< mean over splits of the point coefficients
    Vector replicate_mean;        ///< mean over replications of the bagged coefficients
    Matrix replicate_deltas;      ///< used x p bagged coefficients per replication
    Matrix covariance;            ///< divisor-B covariance of the bagged coefficients
    Vector sigma;                 ///< per-row standard error of the bagged CATE
    std::vector<Matrix> statistics;   ///< per statistic: used x width
    Matrix split_deltas;          ///< used x p for the tracked split (empty if none)

    /// Standard error of a linear functional a' delta, e.g. a group mean of Z.
    double se_of(const Vector& a) const { return std::sqrt(std::max(0.0, a.dot(covariance * a))); }
    double point_of(const Vector& a) const { return a.dot(delta); }
};

/// Column means of Z over a group, so group means of the CATE are linear in delta.
inline Vector group_profile(const Matrix& z, const Flags& group) {
    if (group.size() != static_cast<Index>(z.rows())) throw DomainError("group flags must cover every row");
    Vector sum = Vector::Zero(z.cols());
    double count = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        if (group[static_cast<Index>(i)]) {
            sum += z.row(i).transpose();
            count += 1.0;
        }
    if (count == 0.0) throw DomainError("group is empty");
    return sum / count;
}

/// Cluster bootstrap of the bagged CATE with frozen supports. Replication b
/// draws C clusters uniformly with replacement from
/// make_rng(seed, StreamTag::bootstrap_cates, b); for each split the drawn
/// multiset is intersected with that split's estimation half (repeats enter
/// as frequency weights), refit weights are re-normalized within treatment
/// groups, and the frozen support is refit by weighted least squares.
class CateBootstrap {
public:
    CateBootstrap(const EstimationSample& sample, const std::vector<SplitResult>& splits)
        : z_(sample.z), clusters_(sample.clusters), nc_(sample.cluster_count()) {
        if (splits.empty()) throw DomainError("bootstrap needs at least one split");
        p_ = static_cast<Index>(z_.cols());
        for (const auto& s : splits) splits_.push_back(build(sample, s));
        delta_ = Vector::Zero(z_.cols());
        for (const auto& s : splits) delta_ += s.delta;
        delta_ /= static_cast<double>(splits.size());
    }

    CateBootstrapResult run(const BootstrapConfig& cfg, const std::vector<ReplicationStatistic>& stats = {},
                            std::optional<Index> track_split = std::nullopt) const {
        if (cfg.replications < 2) throw DomainError("bootstrap needs B >= 2");
        const Index bcount = cfg.replications;
        std::vector<Vector> bagged(bcount);
        std::vector<Vector> tracked(bcount);
        std::vector<std::vector<std::vector<double>>> stat_rows(bcount);
        std::vector<std::uint8_t> ok(bcount, 0);
        parallel_for(bcount, cfg.workers, [&](std::size_t b) {
            const auto counts = draw_cluster_counts(nc_, cfg.seed, StreamTag::bootstrap_cates, b);
            Vector acc = Vector::Zero(static_cast<Eigen::Index>(p_));
            for (std::size_t s = 0; s < splits_.size(); ++s) {
                const auto coef = refit(splits_[s], counts);
                if (!coef) return;
                acc += *coef;
                if (track_split && *track_split == s) tracked[b] = *coef;
            }
            acc /= static_cast<double>(splits_.size());
            if (!stats.empty()) {
                const Vector cate = z_ * acc;
                const ReplicationView view{b, cate, counts, clusters_};
                for (const auto& st : stats) stat_rows[b].push_back(st.compute(view));
            }
            bagged[b] = std::move(acc);
            ok[b] = 1;
        });

        CateBootstrapResult out;
        out.requested = bcount;
        for (auto v : ok) out.used += v;
        out.excluded = bcount - out.used;
        if (static_cast<double>(out.excluded) > cfg.max_excluded_share * static_cast<double>(bcount))
            throw NumericalError(std::to_string(out.excluded) + " of " + std::to_string(bcount) +
                                 " bootstrap replications could not identify the frozen coefficients");
        if (out.used < 2) throw NumericalError("fewer than two usable bootstrap replications");
        out.delta = delta_;
        out.replicate_deltas.resize(static_cast<Eigen::Index>(out.used), static_cast<Eigen::Index>(p_));
        if (track_split) out.split_deltas.resize(static_cast<Eigen::Index>(out.used), static_cast<Eigen::Index>(p_));
        out.statistics.resize(stats.size());
        Eigen::Index row = 0;
        for (Index b = 0; b < bcount; ++b) {
            if (!ok[b]) continue;
            out.replication_ids.push_back(b);
            out.replicate_deltas.row(row) = bagged[b].transpose();
            if (track_split) out.split_deltas.row(row) = tracked[b].transpose();
            for (std::size_t k = 0; k < stats.size(); ++k) {
                const auto& v = stat_rows[b][k];
                Matrix& m = out.statistics[k];
                if (row == 0) m.resize(static_cast<Eigen::Index>(out.used), static_cast<Eigen::Index>(v.size()));
                if (static_cast<Eigen::Index>(v.size()) != m.cols()) throw DomainError("statistic '" + stats[k].name + "' changed width");
                for (std::size_t j = 0; j < v.size(); ++j) m(row, static_cast<Eigen::Index>(j)) = v[j];
            }
            ++row;
        }
        out.replicate_mean = out.replicate_deltas.colwise().mean().transpose();
        const Matrix centered = out.replicate_deltas.rowwise() - out.replicate_mean.transpose();
        out.covariance = centered.transpose() * centered / static_cast<double>(out.used);
        out.sigma.resize(z_.rows());
        for (Eigen::Index i = 0; i < z_.rows(); ++i) {
            const Vector zi = z_.row(i).transpose();
            out.sigma(i) = out.se_of(zi);
        }
        return out;
    }

private:
    struct Block {
        Index cluster;
        int group;        ///< 0 controls, 1 treated
        double mass;      ///< sum of base weights
        Matrix aug;       ///< sum of w [x, y][x, y]'
    };
    struct SplitData {
        RefitPlan plan;
        bool group_normalized;
        std::vector<Block> blocks;
    };

    static SplitData build(const EstimationSample& sample, const SplitResult& r) {
        SplitData sd{r.plan, r.group_normalized, {}};
        const IndexList& rows = r.estimation;
        const Matrix zr = select_rows(sample.z, rows);
        const Flags dr = detail::gather_flags(sample.d, rows);
        const Matrix design = r.plan.design(zr, dr);
        const auto k = design.cols();
        std::map<std::pair<Index, int>, std::size_t> where;
        for (std::size_t a = 0; a < rows.size(); ++a) {
            const Index c = sample.clusters[rows[a]];
            const int g = dr[a];
            auto [it, fresh] = where.try_emplace({c, g}, sd.blocks.size());
            if (fresh) sd.blocks.push_back(Block{c, g, 0.0, Matrix::Zero(k + 1, k + 1)});
            Block& blk = sd.blocks[it->second];
            Vector xt(k + 1);
            xt.head(k) = design.row(static_cast<Eigen::Index>(a)).transpose();
            xt(k) = r.estimation_response(static_cast<Eigen::Index>(a));
            const double w = r.estimation_weights(static_cast<Eigen::Index>(a));
            blk.aug.selfadjointView<Eigen::Lower>().rankUpdate(xt, w);
            blk.mass += w;
        }
        for (auto& blk : sd.blocks) blk.aug = blk.aug.selfadjointView<Eigen::Lower>();
        return sd;
    }

    std::optional<Vector> refit(const SplitData& sd, const std::vector<Index>& counts) const {
        const auto k = static_cast<Eigen::Index>(sd.plan.width());
        Matrix acc[2] = {Matrix::Zero(k + 1, k + 1), Matrix::Zero(k + 1, k + 1)};
        double mass[2] = {0.0, 0.0};
        for (const auto& blk : sd.blocks) {
            const Index n = counts[blk.cluster];
            if (n == 0) continue;
            acc[blk.group].noalias() += static_cast<double>(n) * blk.aug;
            mass[blk.group] += static_cast<double>(n) * blk.mass;
        }
        Matrix g = Matrix::Zero(k + 1, k + 1);
        for (int grp = 0; grp < 2; ++grp) {
            if (mass[grp] <= 0.0) continue;
            g += sd.group_normalized ? Matrix(acc[grp] / mass[grp]) : acc[grp];
        }
        if (sd.group_normalized && sd.plan.kind != RefitKind::outcome && (mass[0] <= 0.0 || mass[1] <= 0.0))
            return std::nullopt;
        const RefitCoefficients c = refit_from_gram(sd.plan, g.topLeftCorner(k, k), g.col(k).head(k), p_);
        if (!c.identified()) return std::nullopt;
        return c.delta;
    }

    const Matrix& z_;
    const IndexList& clusters_;
    Index nc_;
    Index p_ = 0;
    Vector delta_;
    std::vector<SplitData> splits_;
};

inline CateBootstrapResult bootstrap_cates(const EstimationSample& sample, const std::vector<SplitResult>& splits,
                                           const BootstrapConfig& cfg,
                                           const std::vector<ReplicationStatistic>& stats = {},
                                           std::optional<Index> track_split = std::nullopt) {
    return CateBootstrap(sample, splits).run(cfg, stats, track_split);
}

} // namespace hetfx
