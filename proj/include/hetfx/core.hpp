#pragma once
// Shared vocabulary for the hetfx library: matrix aliases, the exception
// hierarchy, a warning sink and a handful of numeric helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hetfx {

inline constexpr const char* kVersion = "1.0.0";

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = std::size_t;
using IndexList = std::vector<Index>;
using Flags = std::vector<std::uint8_t>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input files or configuration do not match the declared schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Data violate a domain invariant (non-binary treatment, NaN cell, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A numerical routine failed (separation, non-convergence, singular system).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Caller asked for something the inputs cannot support (empty group,
/// infeasible quota, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Collects non-fatal warnings (dropped columns, skipped features).
struct Diagnostics {
    std::vector<std::string> warnings;

    void warn(std::string message) { warnings.push_back(std::move(message)); }
    void merge(const Diagnostics& other) {
        warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
    }
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw DomainError(message);
}

} // namespace detail

/// Neumaier-compensated sum.
inline double stable_sum(std::span<const double> values) {
    double sum = 0.0;
    double comp = 0.0;
    for (double v : values) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            comp += (sum - t) + v;
        else
            comp += (v - t) + sum;
        sum = t;
    }
    return sum + comp;
}

inline double mean(std::span<const double> values) {
    if (values.empty()) throw DomainError("mean of an empty sample");
    return stable_sum(values) / static_cast<double>(values.size());
}

/// Sample variance with divisor n-1.
inline double sample_variance(std::span<const double> values) {
    if (values.size() < 2) throw DomainError("sample variance needs at least two values");
    const double m = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return ss / static_cast<double>(values.size() - 1);
}

/// Quantile by linear interpolation between order statistics
/// (position h = (n-1) q on the sorted sample).
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DomainError("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level must lie in [0,1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

/// Running mean/variance (Welford). Identical inputs give exactly zero spread.
class RunningMoments {
public:
    void add(double x) {
        ++count_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(count_);
        m2_ += delta * (x - mean_);
    }
    std::size_t count() const { return count_; }
    double mean() const { return mean_; }
    /// Divisor n, matching the bootstrap standard-error display.
    double population_sd() const {
        return count_ == 0 ? 0.0 : std::sqrt(std::max(m2_, 0.0) / static_cast<double>(count_));
    }
    double sample_sd() const {
        return count_ < 2 ? 0.0 : std::sqrt(std::max(m2_, 0.0) / static_cast<double>(count_ - 1));
    }

private:
    std::size_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2)
        throw DomainError("correlation needs two samples of equal length >= 2");
    const double ma = mean(a);
    const double mb = mean(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::nan("");
    return sab / std::sqrt(saa * sbb);
}

inline std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline Vector to_vector(std::span<const double> values) {
    Vector v(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
    return v;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Matrix select_rows(const Matrix& m, const IndexList& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
    return out;
}

inline Matrix select_cols(const Matrix& m, const IndexList& cols) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(static_cast<Eigen::Index>(cols[c]));
    return out;
}

template <class T>
std::vector<T> gather(std::span<const T> values, const IndexList& rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (Index r : rows) out.push_back(values[r]);
    return out;
}

inline Vector gather(const Vector& values, const IndexList& rows) {
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r)) = values(static_cast<Eigen::Index>(rows[r]));
    return out;
}

inline bool is_binary_column(std::span<const double> values) {
    bool zero = false, one = false;
    for (double v : values) {
        if (v == 0.0) zero = true;
        else if (v == 1.0) one = true;
        else return false;
    }
    return zero && one;
}

inline bool is_binary_column(const Matrix& m, Eigen::Index col) {
    bool zero = false, one = false;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double v = m(i, col);
        if (v == 0.0) zero = true;
        else if (v == 1.0) one = true;
        else return false;
    }
    return zero && one;
}

} // namespace hetfx
