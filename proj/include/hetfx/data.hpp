#pragma once
// Observational dataset model, heterogeneity-feature construction and
// screening, pseudo participation starts and balance statistics.

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "core.hpp"
#include "random.hpp"

namespace hetfx {

/// Immutable observational sample: outcomes, binary treatment, confounders X,
/// heterogeneity design Z (first column constant), cluster and row ids.
/// Optional characteristic columns carry descriptive variables used by
/// reports and assignment rules.
class Dataset {
public:
    struct Columns {
        Matrix outcomes;
        Flags treatment;
        Matrix confounders;
        Matrix heterogeneity;
        std::vector<std::string> cluster_ids;
        std::vector<std::string> obs_ids;
        std::vector<std::string> outcome_names;
        std::vector<std::string> confounder_names;
        std::vector<std::string> heterogeneity_names;
        Matrix characteristics;
        std::vector<std::string> characteristic_names;
    };

    static Dataset create(Columns columns) {
        Dataset d;
        d.c_ = std::move(columns);
        d.validate();
        d.index_clusters();
        return d;
    }

    Index size() const { return c_.treatment.size(); }
    const Matrix& outcomes() const { return c_.outcomes; }
    Vector outcome(Index m) const { return c_.outcomes.col(static_cast<Eigen::Index>(m)); }
    const Flags& treatment() const { return c_.treatment; }
    const Matrix& confounders() const { return c_.confounders; }
    const Matrix& heterogeneity() const { return c_.heterogeneity; }
    const Matrix& characteristics() const { return c_.characteristics; }
    const std::vector<std::string>& cluster_ids() const { return c_.cluster_ids; }
    const std::vector<std::string>& obs_ids() const { return c_.obs_ids; }
    const std::vector<std::string>& outcome_names() const { return c_.outcome_names; }
    const std::vector<std::string>& confounder_names() const { return c_.confounder_names; }
    const std::vector<std::string>& heterogeneity_names() const { return c_.heterogeneity_names; }
    const std::vector<std::string>& characteristic_names() const { return c_.characteristic_names; }
    const Columns& columns() const { return c_; }

    /// Dense cluster index per row, numbered by first appearance.
    const IndexList& cluster_index() const { return cluster_index_; }
    Index cluster_count() const { return cluster_count_; }

    Index treated_count() const {
        Index n = 0;
        for (auto d : c_.treatment) n += d;
        return n;
    }

    Dataset subset(const IndexList& rows) const {
        Columns c;
        c.outcomes = select_rows(c_.outcomes, rows);
        c.confounders = select_rows(c_.confounders, rows);
        c.heterogeneity = select_rows(c_.heterogeneity, rows);
        c.characteristics = select_rows(c_.characteristics, rows);
        for (Index r : rows) {
            c.treatment.push_back(c_.treatment[r]);
            c.cluster_ids.push_back(c_.cluster_ids[r]);
            c.obs_ids.push_back(c_.obs_ids[r]);
        }
        c.outcome_names = c_.outcome_names;
        c.confounder_names = c_.confounder_names;
        c.heterogeneity_names = c_.heterogeneity_names;
        c.characteristic_names = c_.characteristic_names;
        return create(std::move(c));
    }

    Dataset with_heterogeneity(Matrix z, std::vector<std::string> names) const {
        Columns c = c_;
        c.heterogeneity = std::move(z);
        c.heterogeneity_names = std::move(names);
        return create(std::move(c));
    }

private:
    void validate() const {
        const Index n = c_.treatment.size();
        const auto rows = static_cast<Eigen::Index>(n);
        if (n < 2) throw ValidationError("dataset needs at least two rows");
        if (c_.outcomes.rows() != rows || c_.confounders.rows() != rows || c_.heterogeneity.rows() != rows ||
            c_.cluster_ids.size() != n || c_.obs_ids.size() != n)
            throw ValidationError("dataset columns disagree on the row count");
        if (c_.characteristics.size() != 0 && c_.characteristics.rows() != rows)
            throw ValidationError("characteristic columns disagree on the row count");
        if (c_.outcomes.cols() < 1) throw ValidationError("dataset needs at least one outcome column");
        if (c_.heterogeneity.cols() < 1) throw ValidationError("heterogeneity design needs the constant column");
        if (static_cast<Index>(c_.outcomes.cols()) != c_.outcome_names.size() ||
            static_cast<Index>(c_.confounders.cols()) != c_.confounder_names.size() ||
            static_cast<Index>(c_.heterogeneity.cols()) != c_.heterogeneity_names.size() ||
            static_cast<Index>(c_.characteristics.cols()) != c_.characteristic_names.size())
            throw ValidationError("column name lists disagree with matrix widths");
        Index treated = 0;
        for (Index i = 0; i < n; ++i) {
            if (c_.treatment[i] > 1) throw ValidationError("treatment must be binary at row " + std::to_string(i));
            treated += c_.treatment[i];
        }
        if (treated == 0 || treated == n) throw ValidationError("dataset needs at least one treated and one control row");
        for (Eigen::Index i = 0; i < rows; ++i)
            if (c_.heterogeneity(i, 0) != 1.0)
                throw ValidationError("first heterogeneity column must be the constant 1 (row " + std::to_string(i) + ")");
        auto check_finite = [&](const Matrix& m, const std::vector<std::string>& names) {
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i)
                    if (!std::isfinite(m(i, j)))
                        throw ValidationError("non-finite value at row " + std::to_string(i) + ", column '" +
                                              names[static_cast<Index>(j)] + "'");
        };
        check_finite(c_.outcomes, c_.outcome_names);
        check_finite(c_.confounders, c_.confounder_names);
        check_finite(c_.heterogeneity, c_.heterogeneity_names);
        check_finite(c_.characteristics, c_.characteristic_names);
        std::unordered_set<std::string> seen;
        for (const auto& id : c_.obs_ids)
            if (!seen.insert(id).second) throw ValidationError("duplicate observation id '" + id + "'");
    }

    void index_clusters() {
        std::unordered_map<std::string, Index> ids;
        cluster_index_.clear();
        cluster_index_.reserve(c_.cluster_ids.size());
        for (const auto& id : c_.cluster_ids) {
            auto [it, inserted] = ids.try_emplace(id, ids.size());
            cluster_index_.push_back(it->second);
        }
        cluster_count_ = ids.size();
    }

    Columns c_;
    IndexList cluster_index_;
    Index cluster_count_ = 0;
};

// ---------------------------------------------------------------------------
// Feature expansion and screening

enum class VariableKind { binary, continuous };

struct RawVariable {
    std::string name;
    VariableKind kind = VariableKind::continuous;
};

struct FeatureSpec {
    std::vector<RawVariable> variables;
    int interaction_order = 2;
    int polynomial_order = 4;
    bool log_transform = true;
    double share_min = 0.01;
    double corr_max = 0.99;

    void validate() const {
        if (polynomial_order < 1 || polynomial_order > 4) throw DomainError("polynomial order must be in 1..4");
        if (interaction_order < 1) throw DomainError("interaction order must be >= 1");
        if (!(share_min > 0.0 && share_min < 0.5)) throw DomainError("share_min must lie in (0, 0.5)");
        if (!(corr_max > 0.0 && corr_max <= 1.0)) throw DomainError("corr_max must lie in (0, 1]");
    }
};

/// Builds a FeatureSpec from raw columns, classifying 0/1 columns as binary.
inline FeatureSpec infer_feature_spec(const Matrix& raw, const std::vector<std::string>& names) {
    FeatureSpec spec;
    for (Eigen::Index j = 0; j < raw.cols(); ++j)
        spec.variables.push_back({names[static_cast<Index>(j)],
                                  is_binary_column(raw, j) ? VariableKind::binary : VariableKind::continuous});
    return spec;
}

struct FeatureMatrix {
    Matrix values;
    std::vector<std::string> names;
    Diagnostics diagnostics;
};

namespace detail {

inline void for_each_combination(Index n, Index k, Index start, IndexList& current,
                                 std::vector<IndexList>& out) {
    if (current.size() == k) {
        out.push_back(current);
        return;
    }
    for (Index i = start; i < n; ++i) {
        current.push_back(i);
        for_each_combination(n, k, i + 1, current, out);
        current.pop_back();
    }
}

} // namespace detail

/// Column order: constant, levels, interactions (lexicographic index tuples,
/// order 2 first), powers 2..order of non-binary columns, logs of strictly
/// positive non-binary columns.
inline FeatureMatrix expand_features(const Matrix& raw, const FeatureSpec& spec) {
    spec.validate();
    const auto p = static_cast<Index>(raw.cols());
    if (spec.variables.size() != p) throw DomainError("feature spec must describe every raw column");
    const Eigen::Index n = raw.rows();

    std::vector<Vector> cols;
    FeatureMatrix out;
    cols.push_back(Vector::Ones(n));
    out.names.push_back("const");
    for (Index j = 0; j < p; ++j) {
        cols.push_back(raw.col(static_cast<Eigen::Index>(j)));
        out.names.push_back(spec.variables[j].name);
    }
    for (Index order = 2; order <= static_cast<Index>(spec.interaction_order); ++order) {
        std::vector<IndexList> combos;
        IndexList current;
        detail::for_each_combination(p, order, 0, current, combos);
        for (const auto& combo : combos) {
            Vector v = Vector::Ones(n);
            std::string name;
            for (Index j : combo) {
                v = v.cwiseProduct(raw.col(static_cast<Eigen::Index>(j)));
                name += (name.empty() ? "" : "*") + spec.variables[j].name;
            }
            cols.push_back(std::move(v));
            out.names.push_back(std::move(name));
        }
    }
    for (Index j = 0; j < p; ++j) {
        if (spec.variables[j].kind == VariableKind::binary) continue;
        for (int power = 2; power <= spec.polynomial_order; ++power) {
            cols.push_back(raw.col(static_cast<Eigen::Index>(j)).array().pow(power).matrix());
            out.names.push_back(spec.variables[j].name + "^" + std::to_string(power));
        }
    }
    if (spec.log_transform) {
        for (Index j = 0; j < p; ++j) {
            if (spec.variables[j].kind == VariableKind::binary) continue;
            const auto col = raw.col(static_cast<Eigen::Index>(j));
            if (n == 0 || col.minCoeff() <= 0.0) {
                out.diagnostics.warn("log of '" + spec.variables[j].name + "' skipped: nonpositive values");
                continue;
            }
            cols.push_back(col.array().log().matrix());
            out.names.push_back("log(" + spec.variables[j].name + ")");
        }
    }
    out.values.resize(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.values.col(static_cast<Eigen::Index>(j)) = cols[j];
    return out;
}

struct DroppedFeature {
    std::string name;
    std::string reason;
};

struct ScreenedFeatures {
    Matrix values;
    std::vector<std::string> names;
    IndexList kept;
    std::vector<DroppedFeature> dropped;
};

/// Drops rare binary columns (share of 0s or 1s below share_min among the
/// treated or among the controls), zero-variance columns, and later members
/// of pairs with |correlation| > corr_max. Column 0 is the constant and is
/// always kept.
inline ScreenedFeatures screen_features(const Matrix& z, const std::vector<std::string>& names,
                                        const FeatureSpec& spec, const Flags& treatment) {
    spec.validate();
    const Eigen::Index n = z.rows();
    if (static_cast<Index>(n) != treatment.size()) throw DomainError("treatment length must match rows of Z");
    Index n1 = 0;
    for (auto d : treatment) n1 += d;
    const Index n0 = treatment.size() - n1;

    ScreenedFeatures out;
    IndexList candidates;
    for (Eigen::Index j = 1; j < z.cols(); ++j) {
        const auto col = z.col(j);
        const double lo = col.minCoeff(), hi = col.maxCoeff();
        if (lo == hi) {
            out.dropped.push_back({names[static_cast<Index>(j)], "zero variance"});
            continue;
        }
        if (is_binary_column(z, j)) {
            double ones1 = 0, ones0 = 0;
            for (Eigen::Index i = 0; i < n; ++i) (treatment[static_cast<Index>(i)] ? ones1 : ones0) += col(i);
            const double s1 = n1 ? ones1 / static_cast<double>(n1) : 0.0;
            const double s0 = n0 ? ones0 / static_cast<double>(n0) : 0.0;
            if (std::min(s1, 1.0 - s1) < spec.share_min || std::min(s0, 1.0 - s0) < spec.share_min) {
                std::ostringstream why;
                why << "binary share below " << spec.share_min << " (treated " << s1 << ", controls " << s0 << ")";
                out.dropped.push_back({names[static_cast<Index>(j)], why.str()});
                continue;
            }
        }
        candidates.push_back(static_cast<Index>(j));
    }

    // Correlation among surviving candidates on standardized columns.
    Matrix std_cols(n, static_cast<Eigen::Index>(candidates.size()));
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        Vector c = z.col(static_cast<Eigen::Index>(candidates[k]));
        c.array() -= c.mean();
        c /= c.norm();
        std_cols.col(static_cast<Eigen::Index>(k)) = c;
    }
    const Matrix corr = std_cols.transpose() * std_cols;
    std::vector<std::size_t> kept_pos;
    out.kept.push_back(0);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        bool redundant = false;
        for (std::size_t m : kept_pos) {
            const double r = corr(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
            if (std::abs(r) > spec.corr_max) {
                out.dropped.push_back({names[candidates[k]], "|correlation| " + std::to_string(std::abs(r)) +
                                                                 " with '" + names[candidates[m]] + "'"});
                redundant = true;
                break;
            }
        }
        if (!redundant) {
            kept_pos.push_back(k);
            out.kept.push_back(candidates[k]);
        }
    }
    out.values = select_cols(z, out.kept);
    for (Index j : out.kept) out.names.push_back(names[j]);
    return out;
}

// ---------------------------------------------------------------------------
// Balance statistics

enum class SdDenominator {
    half_sum,  ///< sqrt(0.5 (var_a + var_b))
    full_sum,  ///< sqrt(var_a + var_b); reproduces the printed descriptive tables
};

/// Standardized difference on a 0-100 scale, variances with divisor n-1.
inline double standardized_difference(std::span<const double> a, std::span<const double> b,
                                      SdDenominator denominator = SdDenominator::half_sum) {
    if (a.empty() || b.empty()) throw DomainError("standardized difference needs two non-empty samples");
    const double ma = mean(a), mb = mean(b);
    const double va = a.size() > 1 ? sample_variance(a) : 0.0;
    const double vb = b.size() > 1 ? sample_variance(b) : 0.0;
    const double pooled = denominator == SdDenominator::half_sum ? 0.5 * (va + vb) : va + vb;
    const double diff = std::abs(ma - mb);
    if (pooled <= 0.0) {
        if (diff == 0.0) return 0.0;
        throw DomainError("standardized difference undefined: zero pooled variance with unequal means");
    }
    return 100.0 * diff / std::sqrt(pooled);
}

// ---------------------------------------------------------------------------
// Pseudo participation starts

struct PseudoStarts {
    std::vector<int> starts;
    Flags eligible;  ///< 0 when the control left unemployment before its drawn start
};

/// Draws a start for each control from the empirical distribution of treated
/// starts in the same stratum (all treated when no strata are given).
inline PseudoStarts assign_pseudo_starts(std::span<const int> treated_starts, std::span<const int> control_exits,
                                         std::uint64_t seed,
                                         std::span<const std::string> treated_strata = {},
                                         std::span<const std::string> control_strata = {}) {
    if (treated_starts.empty()) throw DomainError("pseudo starts need at least one treated start");
    const bool stratified = !treated_strata.empty() || !control_strata.empty();
    if (stratified && (treated_strata.size() != treated_starts.size() || control_strata.size() != control_exits.size()))
        throw DomainError("strata must label every treated and every control observation");

    std::map<std::string, std::vector<int>> donors;
    for (std::size_t i = 0; i < treated_starts.size(); ++i)
        donors[stratified ? treated_strata[i] : std::string()].push_back(treated_starts[i]);

    Rng rng = make_rng(seed, StreamTag::pseudo_starts);
    PseudoStarts out;
    out.starts.reserve(control_exits.size());
    out.eligible.reserve(control_exits.size());
    for (std::size_t i = 0; i < control_exits.size(); ++i) {
        const std::string key = stratified ? control_strata[i] : std::string();
        auto it = donors.find(key);
        if (it == donors.end()) throw DomainError("no treated donor in stratum '" + key + "'");
        std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
        const int start = it->second[pick(rng)];
        out.starts.push_back(start);
        out.eligible.push_back(control_exits[i] >= start ? 1 : 0);
    }
    return out;
}

} // namespace hetfx
