#pragma once
// Quota-constrained assignment rules over bagged CATEs, and a profile of
// characteristics by the sign of the CATE.

#include <charconv>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "inference.hpp"
#include "random.hpp"

namespace hetfx {

enum class RuleKind { observed, random, best_case, worst_case, predicate_with_fill };

inline std::string to_string(RuleKind k) {
    switch (k) {
    case RuleKind::observed: return "observed";
    case RuleKind::random: return "random";
    case RuleKind::best_case: return "best_case";
    case RuleKind::worst_case: return "worst_case";
    case RuleKind::predicate_with_fill: return "predicate_with_fill";
    }
    return "?";
}

inline RuleKind rule_kind_from_string(const std::string& s) {
    for (RuleKind k : {RuleKind::observed, RuleKind::random, RuleKind::best_case, RuleKind::worst_case,
                       RuleKind::predicate_with_fill})
        if (to_string(k) == s) return k;
    throw DomainError("unknown rule kind '" + s + "'");
}

/// Optional cap on how many participants any one group may receive.
struct CapacityLimit {
    IndexList group_of_row;
    std::vector<Index> limit;   ///< per group
};

struct PolicyRule {
    std::string name;
    RuleKind kind = RuleKind::random;
    Index quota = 0;
    std::vector<Flags> predicate;          ///< primary group, then fill group
    std::uint64_t seed = 0;
    std::optional<CapacityLimit> capacity; ///< off by default
};

namespace detail {

inline bool parse_integer(const std::string& s, long long& v) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

/// Ascending id order; numeric when both ids are integers.
inline bool id_less(const std::string& a, const std::string& b) {
    long long x = 0, y = 0;
    if (parse_integer(a, x) && parse_integer(b, y)) return x < y;
    return a < b;
}

} // namespace detail

/// Returns the selected row indices (ascending), exactly `quota` of them.
/// `treatment` is used by the observed rule; `obs_ids` break ties in the
/// ranked rules (row order when empty).
inline IndexList select_participants(const PolicyRule& rule, const Vector& cate, const Flags& treatment = {},
                                     const std::vector<std::string>& obs_ids = {}) {
    const auto n = static_cast<Index>(cate.size());
    if (rule.quota < 1 || rule.quota > n)
        throw DomainError("quota " + std::to_string(rule.quota) + " is infeasible for " + std::to_string(n) + " rows");
    if (!obs_ids.empty() && obs_ids.size() != n) throw DomainError("ids must cover every row");
    auto tie_less = [&](Index a, Index b) { return obs_ids.empty() ? a < b : detail::id_less(obs_ids[a], obs_ids[b]); };

    IndexList order;
    Rng rng = make_rng(rule.seed, StreamTag::policy);
    switch (rule.kind) {
    case RuleKind::observed: {
        if (treatment.size() != n) throw DomainError("observed rule needs the treatment indicator");
        for (Index i = 0; i < n; ++i)
            if (treatment[i]) order.push_back(i);
        if (order.size() != rule.quota)
            throw DomainError("observed rule: " + std::to_string(order.size()) + " treated rows but quota is " +
                              std::to_string(rule.quota));
        break;
    }
    case RuleKind::random: {
        order.resize(n);
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), rng);
        break;
    }
    case RuleKind::best_case:
    case RuleKind::worst_case: {
        order.resize(n);
        std::iota(order.begin(), order.end(), Index{0});
        const bool best = rule.kind == RuleKind::best_case;
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
            if (cate(static_cast<Eigen::Index>(a)) != cate(static_cast<Eigen::Index>(b)))
                return best ? cate(static_cast<Eigen::Index>(a)) > cate(static_cast<Eigen::Index>(b))
                            : cate(static_cast<Eigen::Index>(a)) < cate(static_cast<Eigen::Index>(b));
            return tie_less(a, b);
        });
        break;
    }
    case RuleKind::predicate_with_fill: {
        if (rule.predicate.empty() || rule.predicate.size() > 2)
            throw DomainError("predicate_with_fill needs one or two predicate groups");
        Flags taken(n, 0);
        for (const Flags& g : rule.predicate) {
            if (g.size() != n) throw DomainError("predicate flags must cover every row");
            IndexList members;
            for (Index i = 0; i < n; ++i)
                if (g[i]) {
                    if (taken[i]) throw DomainError("predicate groups must be disjoint");
                    taken[i] = 1;
                    members.push_back(i);
                }
            std::shuffle(members.begin(), members.end(), rng);
            order.insert(order.end(), members.begin(), members.end());
        }
        IndexList rest;
        for (Index i = 0; i < n; ++i)
            if (!taken[i]) rest.push_back(i);
        std::shuffle(rest.begin(), rest.end(), rng);
        order.insert(order.end(), rest.begin(), rest.end());
        break;
    }
    }

    IndexList chosen;
    std::vector<Index> used;
    if (rule.capacity) {
        if (rule.capacity->group_of_row.size() != n) throw DomainError("capacity groups must cover every row");
        used.assign(rule.capacity->limit.size(), 0);
    }
    for (Index i : order) {
        if (chosen.size() == rule.quota) break;
        if (rule.capacity) {
            const Index g = rule.capacity->group_of_row[i];
            if (g >= used.size()) throw DomainError("capacity group out of range");
            if (used[g] >= rule.capacity->limit[g]) continue;
            ++used[g];
        }
        chosen.push_back(i);
    }
    if (chosen.size() != rule.quota) throw DomainError("quota cannot be met under the capacity limits");
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

/// Mean CATE of the selected rows.
inline double evaluate_rule(const IndexList& selection, const Vector& cate) {
    if (selection.empty()) throw DomainError("selection is empty");
    std::vector<double> v;
    v.reserve(selection.size());
    for (Index i : selection) v.push_back(cate(static_cast<Eigen::Index>(i)));
    return mean(v);
}

struct PolicyRow {
    std::string rule;
    double mean_cate = 0.0;
    Index size = 0;
};

// ---------------------------------------------------------------------------
// Characteristics by CATE sign

struct SignProfileRow {
    std::string name;
    double mean_nonnegative = std::numeric_limits<double>::quiet_NaN();
    double mean_negative = std::numeric_limits<double>::quiet_NaN();
    double difference = std::numeric_limits<double>::quiet_NaN();  ///< nonnegative minus negative
    std::optional<double> se;
};

struct SignProfile {
    Index nonnegative = 0;
    Index negative = 0;
    bool nonnegative_empty() const { return nonnegative == 0; }
    bool negative_empty() const { return negative == 0; }
    std::vector<SignProfileRow> rows;
};

namespace detail {

/// Differences in multiplicity-weighted characteristic means between
/// rows with cate >= 0 and rows with cate < 0; NaN when a side is empty.
inline std::vector<double> sign_differences(const Vector& cate, const Matrix& chars,
                                            const std::function<double(Index)>& weight) {
    const auto k = chars.cols();
    Vector pos = Vector::Zero(k), neg = Vector::Zero(k);
    double wp = 0.0, wn = 0.0;
    for (Eigen::Index i = 0; i < cate.size(); ++i) {
        const double w = weight(static_cast<Index>(i));
        if (w == 0.0) continue;
        if (cate(i) >= 0.0) {
            pos += w * chars.row(i).transpose();
            wp += w;
        } else {
            neg += w * chars.row(i).transpose();
            wn += w;
        }
    }
    std::vector<double> out(static_cast<Index>(k), std::numeric_limits<double>::quiet_NaN());
    if (wp > 0.0 && wn > 0.0)
        for (Eigen::Index j = 0; j < k; ++j) out[static_cast<Index>(j)] = pos(j) / wp - neg(j) / wn;
    return out;
}

} // namespace detail

/// Bootstrap statistic for sign_group_profile: the sign groups are
/// recomputed from each replication's bagged CATE and the resampled rows.
inline ReplicationStatistic sign_profile_statistic(const Matrix& chars) {
    return {"sign_profile", [&chars](const ReplicationView& v) {
                return detail::sign_differences(v.cate, chars, [&v](Index i) { return v.multiplicity(i); });
            }};
}

/// Means by CATE sign with the bootstrap SE of each difference taken from
/// `replicates` (rows: replications, columns: characteristics) when given.
/// Replications in which a sign group was empty are ignored for the SE.
inline SignProfile sign_group_profile(const Vector& cate, const Matrix& chars, const std::vector<std::string>& names,
                                      const Matrix* replicates = nullptr) {
    if (chars.rows() != cate.size()) throw DomainError("characteristics must cover every row");
    SignProfile out;
    for (Eigen::Index i = 0; i < cate.size(); ++i) (cate(i) >= 0.0 ? out.nonnegative : out.negative)++;
    for (Eigen::Index j = 0; j < chars.cols(); ++j) {
        SignProfileRow row;
        row.name = static_cast<Index>(j) < names.size() ? names[static_cast<Index>(j)] : "c" + std::to_string(j);
        std::vector<double> pos, neg;
        for (Eigen::Index i = 0; i < cate.size(); ++i) (cate(i) >= 0.0 ? pos : neg).push_back(chars(i, j));
        if (!pos.empty()) row.mean_nonnegative = mean(pos);
        if (!neg.empty()) row.mean_negative = mean(neg);
        if (!pos.empty() && !neg.empty()) {
            row.difference = row.mean_nonnegative - row.mean_negative;
            if (replicates) {
                std::vector<double> v;
                for (Eigen::Index b = 0; b < replicates->rows(); ++b)
                    if (std::isfinite((*replicates)(b, j))) v.push_back((*replicates)(b, j));
                if (v.size() >= 2) row.se = bootstrap_se(v);
            }
        }
        out.rows.push_back(row);
    }
    return out;
}

} // namespace hetfx
