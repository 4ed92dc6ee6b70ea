#pragma once
// Summaries of bagged CATEs: descriptive rows, low/high splits by
// characteristic, kernel density and local-constant regression curves,
// and correlations across estimators.

#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "inference.hpp"
#include "pipeline.hpp"

namespace hetfx {

struct SummaryRow {
    std::string label;
    double mean = 0.0, median = 0.0, sd = 0.0, min = 0.0, max = 0.0;
    double mean_se = std::numeric_limits<double>::quiet_NaN();  ///< mean of per-row SEs, NaN without them
    Index n = 0;
};

inline SummaryRow cate_summary(const std::string& label, const Vector& cate, const Vector* sigma = nullptr) {
    if (cate.size() == 0) throw DomainError("summary of an empty vector");
    const auto v = to_std(cate);
    SummaryRow r;
    r.label = label;
    r.n = v.size();
    r.mean = mean(v);
    r.median = median(v);
    r.sd = v.size() > 1 ? std::sqrt(sample_variance(v)) : 0.0;
    r.min = cate.minCoeff();
    r.max = cate.maxCoeff();
    if (sigma) {
        if (sigma->size() != cate.size()) throw DomainError("standard errors must match the CATE vector");
        r.mean_se = mean(to_std(*sigma));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Low/high splits

struct SplitRow {
    std::string name;
    bool skipped = false;
    std::string note;
    double threshold = 0.0;       ///< median (non-binary) or 0.5 (binary)
    Index n_low = 0, n_high = 0;
    double low = 0.0, high = 0.0, difference = 0.0;  ///< difference = high - low
    std::optional<double> se_low, se_high, se_difference;
};

/// Binary characteristics split as 0/1; others at the median, with the
/// median itself in the high group.
inline Flags high_group(std::span<const double> values, double* threshold = nullptr) {
    Flags g(values.size(), 0);
    if (is_binary_column(values)) {
        for (Index i = 0; i < values.size(); ++i) g[i] = values[i] == 1.0;
        if (threshold) *threshold = 0.5;
        return g;
    }
    const double m = median(std::vector<double>(values.begin(), values.end()));
    for (Index i = 0; i < values.size(); ++i) g[i] = values[i] >= m;
    if (threshold) *threshold = m;
    return g;
}

/// Group means of the bagged CATE by characteristic. SEs come from the
/// bootstrap's coefficient covariance through the group means of Z.
inline std::vector<SplitRow> binary_split_table(const Vector& cate, const Matrix& chars,
                                                const std::vector<std::string>& names, const Matrix& z,
                                                const CateBootstrapResult* boot = nullptr) {
    if (chars.rows() != cate.size() || z.rows() != cate.size()) throw DomainError("inputs must cover every row");
    std::vector<SplitRow> rows;
    for (Eigen::Index j = 0; j < chars.cols(); ++j) {
        SplitRow r;
        r.name = static_cast<Index>(j) < names.size() ? names[static_cast<Index>(j)] : "c" + std::to_string(j);
        const Vector col = chars.col(j);
        const Flags hi = high_group(as_span(col), &r.threshold);
        Flags lo(hi.size());
        for (Index i = 0; i < hi.size(); ++i) lo[i] = !hi[i];
        r.n_high = static_cast<Index>(std::count(hi.begin(), hi.end(), 1));
        r.n_low = hi.size() - r.n_high;
        if (r.n_high == 0 || r.n_low == 0) {
            r.skipped = true;
            r.note = "degenerate: all rows fall on one side";
            rows.push_back(r);
            continue;
        }
        r.low = group_average(cate, lo);
        r.high = group_average(cate, hi);
        r.difference = r.high - r.low;
        if (boot) {
            const Vector zl = group_profile(z, lo), zh = group_profile(z, hi);
            r.se_low = boot->se_of(zl);
            r.se_high = boot->se_of(zh);
            r.se_difference = boot->se_of(zh - zl);
        }
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Kernel smoothing

inline double gaussian_kernel(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

/// 0.9 min(sd, IQR/1.34) n^(-1/5); falls back to sd when the IQR is zero.
inline double silverman_bandwidth(std::span<const double> values) {
    if (values.size() < 2) throw DomainError("automatic bandwidth needs at least two values");
    const double sd = std::sqrt(sample_variance(values));
    std::vector<double> v(values.begin(), values.end());
    const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
    const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    const double h = 0.9 * spread * std::pow(static_cast<double>(values.size()), -0.2);
    if (!(h > 0.0)) throw DomainError("zero bandwidth: the values have no spread");
    return h;
}

inline double evaluate_density(std::span<const double> values, double h, double x) {
    if (!(h > 0.0)) throw DomainError("bandwidth must be positive");
    if (values.empty()) throw DomainError("density of an empty sample");
    double s = 0.0;
    for (double v : values) s += gaussian_kernel((x - v) / h);
    return s / (static_cast<double>(values.size()) * h);
}

struct DensityCurve {
    double bandwidth = 0.0;
    std::vector<double> grid;
    std::vector<double> density;

    double trapezoid_integral() const {
        double s = 0.0;
        for (std::size_t k = 1; k < grid.size(); ++k) s += 0.5 * (density[k] + density[k - 1]) * (grid[k] - grid[k - 1]);
        return s;
    }
};

/// Gaussian kernel density on `points` equally spaced values spanning
/// [min - 4h, max + 4h].
inline DensityCurve kernel_density(std::span<const double> values, std::optional<double> bandwidth = std::nullopt,
                                   std::size_t points = 512) {
    if (values.empty()) throw DomainError("density of an empty sample");
    if (points < 2) throw DomainError("density grid needs at least two points");
    DensityCurve c;
    c.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(values);
    if (!(c.bandwidth > 0.0)) throw DomainError("bandwidth must be positive");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double a = *lo - 4.0 * c.bandwidth, b = *hi + 4.0 * c.bandwidth;
    for (std::size_t k = 0; k < points; ++k) {
        const double x = a + (b - a) * static_cast<double>(k) / static_cast<double>(points - 1);
        c.grid.push_back(x);
        c.density.push_back(evaluate_density(values, c.bandwidth, x));
    }
    return c;
}

struct Histogram {
    std::vector<double> edges;   ///< bins + 1 edges
    std::vector<Index> counts;
};

inline Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
    if (bins < 1) throw DomainError("histogram needs at least one bin");
    Histogram h;
    for (std::size_t k = 0; k <= bins; ++k) h.edges.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins));
    h.counts.assign(bins, 0);
    const double width = hi - lo;
    for (double v : values) {
        if (v < lo || v > hi) continue;
        std::size_t k = width > 0.0 ? static_cast<std::size_t>((v - lo) / width * static_cast<double>(bins)) : 0;
        h.counts[std::min(k, bins - 1)]++;
    }
    return h;
}

struct RegressionCurve {
    double bandwidth = 0.0;
    std::vector<double> grid;
    std::vector<double> value;   ///< NaN at gaps
    Flags gap;                   ///< 1 where the total kernel weight is below 1e-8
    Histogram histogram;
};

/// Nadaraya-Watson regression of y on x with a Gaussian kernel on an
/// equally spaced grid over [min x, max x] (or the given grid).
inline RegressionCurve kernel_regression(std::span<const double> x, std::span<const double> y, double bandwidth,
                                         std::vector<double> grid = {}, std::size_t points = 200,
                                         std::size_t bins = 20) {
    if (!(bandwidth > 0.0)) throw DomainError("bandwidth must be positive");
    if (x.size() != y.size() || x.empty()) throw DomainError("x and y must be non-empty and of equal length");
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    RegressionCurve c;
    c.bandwidth = bandwidth;
    if (grid.empty())
        for (std::size_t k = 0; k < points; ++k)
            grid.push_back(points == 1 ? *lo : *lo + (*hi - *lo) * static_cast<double>(k) / static_cast<double>(points - 1));
    c.grid = std::move(grid);
    for (double g : c.grid) {
        double sw = 0.0, swy = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double k = gaussian_kernel((g - x[i]) / bandwidth);
            sw += k;
            swy += k * y[i];
        }
        const bool empty = sw < 1e-8;
        c.gap.push_back(empty);
        c.value.push_back(empty ? std::numeric_limits<double>::quiet_NaN() : swy / sw);
    }
    c.histogram = histogram(x, bins, *lo, *hi);
    return c;
}

// ---------------------------------------------------------------------------
// Cross-method correlation

struct CorrelationMatrix {
    std::vector<std::string> tags;
    Matrix values;           ///< NaN where undefined
    std::vector<bool> defined;
};

inline CorrelationMatrix correlate_methods(const std::vector<std::pair<std::string, Vector>>& cates) {
    if (cates.empty()) throw DomainError("need at least one CATE vector");
    const Eigen::Index n = cates.front().second.size();
    if (n < 2) throw DomainError("correlation needs at least two rows");
    CorrelationMatrix m;
    const auto k = static_cast<Eigen::Index>(cates.size());
    m.values = Matrix::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
    for (const auto& [tag, v] : cates) {
        if (v.size() != n) throw DomainError("CATE vectors have different lengths");
        m.tags.push_back(tag);
        m.defined.push_back(sample_variance(as_span(v)) > 0.0);
    }
    for (Eigen::Index a = 0; a < k; ++a) {
        if (!m.defined[static_cast<Index>(a)]) continue;
        m.values(a, a) = 1.0;
        for (Eigen::Index b = a + 1; b < k; ++b) {
            if (!m.defined[static_cast<Index>(b)]) continue;
            const double r = pearson_correlation(as_span(cates[static_cast<Index>(a)].second),
                                                 as_span(cates[static_cast<Index>(b)].second));
            m.values(a, b) = m.values(b, a) = r;
        }
    }
    return m;
}

} // namespace hetfx
