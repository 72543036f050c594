#pragma once

// Two-class multi-view clustering. Samples are indexed by the second mode of
// X (p features x n samples x m views); labels are the signs of a fitted
// sample-mode vector, either from the best rank-one approximation of X or
// from the top left singular vector of its mode-2 unfolding.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nmt/error.hpp"
#include "nmt/model.hpp"
#include "nmt/rank_one.hpp"
#include "nmt/rmt_theory.hpp"
#include "nmt/tensor3.hpp"

namespace nmt {

enum class ClusterMethod { tensor, unfolding };

[[nodiscard]] inline const char* to_string(ClusterMethod m) { return m == ClusterMethod::tensor ? "tensor" : "unfolding"; }

struct ClusteringResult {
    Vec y_hat;                    ///< unit vector of length n
    std::vector<int> labels_hat;  ///< sign(y_hat), with sign(0) = +1
    /// Present only when ground truth was supplied.
    std::optional<double> loss01;
    std::optional<double> accuracy;  ///< max(loss01, 1 - loss01)
    ClusterMethod method = ClusterMethod::tensor;
};

struct TheoryAccuracy {
    double alpha = 0.0;
    double accuracy = 0.5;
    Branch branch = Branch::outside_support;
    SummaryStats stats;
};

/// Standard normal CDF.
[[nodiscard]] inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// phi(alpha / sqrt(1 - alpha^2)), with the limits 0.5 at 0 and 1 at 1.
[[nodiscard]] inline double accuracy_from_alignment(double alpha) {
    if (!(alpha >= 0.0) || alpha > 1.0) throw InvalidArgument("accuracy_from_alignment: alpha must lie in [0, 1]");
    if (alpha == 1.0) return 1.0;
    return normal_cdf(alpha / std::sqrt(1.0 - alpha * alpha));
}

namespace detail {

inline ClusteringResult label_by_sign(Vec y_hat, ClusterMethod method, const std::vector<int>* truth) {
    ClusteringResult r;
    r.method = method;
    r.labels_hat.resize(static_cast<std::size_t>(y_hat.size()));
    for (Eigen::Index i = 0; i < y_hat.size(); ++i) r.labels_hat[static_cast<std::size_t>(i)] = y_hat[i] < 0.0 ? -1 : 1;
    r.y_hat = std::move(y_hat);
    if (truth) {
        if (truth->size() != r.labels_hat.size()) throw DimensionMismatch("clustering: label count differs from n");
        std::size_t wrong = 0;
        for (std::size_t i = 0; i < truth->size(); ++i) wrong += (r.labels_hat[i] != (*truth)[i]) ? 1U : 0U;
        const double loss = static_cast<double>(wrong) / static_cast<double>(truth->size());
        r.loss01 = loss;
        r.accuracy = std::max(loss, 1.0 - loss);
    }
    return r;
}

}  // namespace detail

struct TensorClusterOptions {
    InitStrategy init{};
    PowerOptions power{};
};

/// Labels from the mode-2 vector of the best rank-one approximation. The fit
/// is returned through `fit_out` when given.
[[nodiscard]] inline ClusteringResult cluster_tensor(const Tensor3& X, const std::vector<int>* truth = nullptr,
                                                     const TensorClusterOptions& opt = {},
                                                     RankOneFit* fit_out = nullptr) {
    RankOneFit fit = power_iteration(X, opt.init, opt.power);
    auto r = detail::label_by_sign(fit.v, ClusterMethod::tensor, truth);
    if (fit_out) *fit_out = std::move(fit);
    return r;
}

/// Labels from the top left singular vector of unfold(X, 2).
[[nodiscard]] inline ClusteringResult cluster_unfold(const Tensor3& X, const std::vector<int>* truth = nullptr) {
    if (frobenius_norm(X) == 0.0) throw DegenerateInput("cluster_unfold: zero tensor");
    return detail::label_by_sign(detail::leading_eigvec(detail::gram_mode2(X)), ClusterMethod::unfolding, truth);
}

/// Asymptotic accuracy for dimensions (p, n, m) and signal norms
/// (|mu|, |h|) = (beta_M, beta_T), unit variances.
[[nodiscard]] inline TheoryAccuracy theory_accuracy(double p, double n, double m, double mu_norm, double h_norm,
                                                    const SummaryOptions& opt = {}) {
    if (!(p > 0.0) || !(n > 0.0) || !(m > 0.0)) throw InvalidArgument("theory_accuracy: dimensions must be positive");
    TheoryAccuracy t;
    t.stats = compute_summary_stats(LimitParams::from_dims(p, n, m, h_norm, mu_norm), opt);
    t.alpha = std::clamp(t.stats.alpha2, 0.0, 1.0);
    t.branch = t.stats.branch;
    t.accuracy = accuracy_from_alignment(t.alpha);
    return t;
}

// ---------------------------------------------------------------------------
// Gaussianity of the fitted sample vector
// ---------------------------------------------------------------------------

struct GaussianityThresholds {
    double mean_sigmas = 3.0;  ///< |mean| < mean_sigmas / sqrt(n)
    double variance = 0.1;     ///< |variance - 1| <
    double qq_distance = 0.08;
};

struct GaussianityReport {
    std::vector<double> residuals;  ///< in sample order
    double sign = 1.0;              ///< applied to y_hat before residuals
    double mean = 0.0, variance = 0.0, skewness = 0.0, excess_kurtosis = 0.0;
    /// max_i |Phi(r_(i)) - (i - 1/2)/n| over the sorted residuals.
    double qq_distance = 0.0;
    bool mean_ok = false, variance_ok = false, qq_ok = false;
    [[nodiscard]] bool passed() const noexcept { return mean_ok && variance_ok && qq_ok; }
};

/// Moments and normal-quantile distance of already formed residuals.
[[nodiscard]] inline GaussianityReport normality_diagnostics(std::vector<double> r, const GaussianityThresholds& th = {}) {
    if (r.size() < 2) throw InvalidArgument("normality_diagnostics: need at least two residuals");
    GaussianityReport rep;
    const double n = static_cast<double>(r.size());
    double s1 = 0.0;
    for (double v : r) s1 += v;
    rep.mean = s1 / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : r) {
        const double d = v - rep.mean, d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    rep.variance = m2;
    rep.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
    rep.excess_kurtosis = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
    rep.residuals = r;
    std::sort(r.begin(), r.end());
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double target = (static_cast<double>(i) + 0.5) / n;
        rep.qq_distance = std::max(rep.qq_distance, std::abs(normal_cdf(r[i]) - target));
    }
    rep.mean_ok = std::abs(rep.mean) < th.mean_sigmas / std::sqrt(n);
    rep.variance_ok = std::abs(rep.variance - 1.0) < th.variance;
    rep.qq_ok = rep.qq_distance < th.qq_distance;
    return rep;
}

/// Residuals r_i = (sqrt(n) y_hat_i - alpha y_i) / sqrt(1 - alpha^2) after
/// flipping y_hat to maximize <y_hat, y>.
[[nodiscard]] inline GaussianityReport gaussianity_check(const Vec& y_hat, const std::vector<int>& y, double alpha,
                                                         const GaussianityThresholds& th = {}) {
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw InvalidArgument("gaussianity_check: alpha must lie in (0, 1)");
    if (static_cast<std::size_t>(y_hat.size()) != y.size()) throw DimensionMismatch("gaussianity_check: length mismatch");
    double corr = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) corr += y_hat[static_cast<Eigen::Index>(i)] * y[i];
    const double sign = corr < 0.0 ? -1.0 : 1.0;
    const double rn = std::sqrt(static_cast<double>(y.size()));
    const double scale = 1.0 / std::sqrt(1.0 - alpha * alpha);
    std::vector<double> r(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) r[i] = (rn * sign * y_hat[static_cast<Eigen::Index>(i)] - alpha * y[i]) * scale;
    auto rep = normality_diagnostics(std::move(r), th);
    rep.sign = sign;
    return rep;
}

// ---------------------------------------------------------------------------
// Results rows
// ---------------------------------------------------------------------------

struct ClusterRow {
    std::uint64_t seed = 0;
    Eigen::Index p = 0, n = 0, m = 0;
    double mu_norm = 0.0, h_norm = 0.0;
    ClusterMethod method = ClusterMethod::tensor;
    double loss01 = 0.0, accuracy = 0.0, theory_accuracy = 0.0;
    Branch branch = Branch::outside_support;
};

inline constexpr const char* kClusterRowHeader =
    "seed,p,n,m,mu_norm,h_norm,method,loss01,accuracy,theory_accuracy,branch";

inline void write_row(const ClusterRow& r, std::ostream& os) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%lld,%lld,%lld,%.17g,%.17g,%s,%.17g,%.17g,%.17g,%s\n",
                  static_cast<unsigned long long>(r.seed), static_cast<long long>(r.p), static_cast<long long>(r.n),
                  static_cast<long long>(r.m), r.mu_norm, r.h_norm, to_string(r.method), r.loss01, r.accuracy,
                  r.theory_accuracy, to_string(r.branch));
    os << buf;
}

}  // namespace nmt
