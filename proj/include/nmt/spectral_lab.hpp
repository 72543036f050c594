#pragma once

// Block contraction matrices at a critical point (u, v, w) of T:
//
//         [ 0       T(w)    T(v) ]        T(w) = T(., ., w)  n1 x n2
//   Phi = [ T(w)^T  0       T(u) ]        T(v) = T(., v, .)  n1 x n3
//         [ T(v)^T  T(u)^T  0    ]        T(u) = T(u, ., .)  n2 x n3
//
// and its split Phi = H + L into a noise part H and a low-rank remainder L.
// With T = beta_T M (x) z + W / sqrt(n_T), M = beta_M x y^T + Z / sqrt(n_M):
//
//   H_12 = <w,z> beta_T / sqrt(n_M) Z + W(w) / sqrt(n_T)
//   H_13 = W(v) / sqrt(n_T)
//   H_23 = W(u) / sqrt(n_T)
//   L_12 = <w,z> beta_T beta_M x y^T
//   L_13 = beta_T (beta_M <v,y> x + Z v / sqrt(n_M)) z^T
//   L_23 = beta_T (beta_M <u,x> y + Z^T u / sqrt(n_M)) z^T

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "nmt/error.hpp"
#include "nmt/model.hpp"
#include "nmt/rank_one.hpp"
#include "nmt/rmt_theory.hpp"
#include "nmt/tensor3.hpp"

namespace nmt {

struct BlockMatrix {
    Eigen::Index n1 = 0, n2 = 0, n3 = 0;
    Mat S;  ///< n_T x n_T, symmetric, zero diagonal blocks

    [[nodiscard]] Eigen::Index n_T() const noexcept { return n1 + n2 + n3; }
    [[nodiscard]] std::array<Eigen::Index, 3> offsets() const noexcept { return {0, n1, n1 + n2}; }
    [[nodiscard]] Eigen::Index size_of(int b) const {
        Tensor3::check_mode(b);
        return b == 1 ? n1 : (b == 2 ? n2 : n3);
    }

    /// Block (r, c) with r, c in {1, 2, 3}.
    [[nodiscard]] auto block(int r, int c) const {
        return S.block(offsets()[static_cast<std::size_t>(r - 1)], offsets()[static_cast<std::size_t>(c - 1)], size_of(r),
                       size_of(c));
    }

    [[nodiscard]] double asymmetry() const { return (S - S.transpose()).cwiseAbs().maxCoeff(); }
};

[[nodiscard]] inline BlockMatrix assemble_blocks(const Mat& b12, const Mat& b13, const Mat& b23) {
    if (b12.rows() != b13.rows() || b12.cols() != b23.rows() || b13.cols() != b23.cols()) {
        throw DimensionMismatch("assemble_blocks: inconsistent block shapes");
    }
    BlockMatrix B{b12.rows(), b12.cols(), b13.cols(), Mat()};
    const Eigen::Index n = B.n_T(), o2 = B.n1, o3 = B.n1 + B.n2;
    B.S = Mat::Zero(n, n);
    B.S.block(0, o2, B.n1, B.n2) = b12;
    B.S.block(o2, 0, B.n2, B.n1) = b12.transpose();
    B.S.block(0, o3, B.n1, B.n3) = b13;
    B.S.block(o3, 0, B.n3, B.n1) = b13.transpose();
    B.S.block(o2, o3, B.n2, B.n3) = b23;
    B.S.block(o3, o2, B.n3, B.n2) = b23.transpose();
    return B;
}

namespace detail {
inline void check_fit(const Dims& d, const RankOneFit& fit, const char* who) {
    if (fit.u.size() != d[0] || fit.v.size() != d[1] || fit.w.size() != d[2]) {
        throw DimensionMismatch(std::string(who) + ": fit dimensions do not match");
    }
}

inline const NoiseDraws& oracle_noise(const NestedParams& p, const NestedSample& s, const char* who) {
    if (!s.noise) throw InvalidArgument(std::string(who) + ": sample was not generated in oracle mode");
    if (s.noise->Z.rows() != p.n1 || s.noise->Z.cols() != p.n2 || s.noise->W.dims() != p.dims()) {
        throw DimensionMismatch(std::string(who) + ": noise shapes do not match the parameters");
    }
    return *s.noise;
}
}  // namespace detail

[[nodiscard]] inline BlockMatrix build_phi(const Tensor3& t, const RankOneFit& fit) {
    detail::check_fit(t.dims(), fit, "build_phi");
    return assemble_blocks(contract3(t, fit.w), contract2(t, fit.v), contract1(t, fit.u));
}

[[nodiscard]] inline BlockMatrix build_H(const NestedParams& p, const NestedSample& s, const RankOneFit& fit) {
    detail::check_fit(p.dims(), fit, "build_H");
    const NoiseDraws& nz = detail::oracle_noise(p, s, "build_H");
    const double rT = 1.0 / std::sqrt(static_cast<double>(p.n_T()));
    const double rM = 1.0 / std::sqrt(static_cast<double>(p.n_M()));
    const double wz = fit.w.dot(s.signals.z);
    return assemble_blocks(wz * p.beta_T * rM * nz.Z + rT * contract3(nz.W, fit.w), rT * contract2(nz.W, fit.v),
                           rT * contract1(nz.W, fit.u));
}

[[nodiscard]] inline BlockMatrix build_L(const NestedParams& p, const NestedSample& s, const RankOneFit& fit) {
    detail::check_fit(p.dims(), fit, "build_L");
    const NoiseDraws& nz = detail::oracle_noise(p, s, "build_L");
    const auto& [x, y, z] = s.signals;
    const double rM = 1.0 / std::sqrt(static_cast<double>(p.n_M()));
    const Vec a13 = p.beta_T * (p.beta_M * fit.v.dot(y) * x + rM * (nz.Z * fit.v));
    const Vec a23 = p.beta_T * (p.beta_M * fit.u.dot(x) * y + rM * (nz.Z.transpose() * fit.u));
    return assemble_blocks(fit.w.dot(z) * p.beta_T * p.beta_M * (x * y.transpose()), a13 * z.transpose(),
                           a23 * z.transpose());
}

/// Residuals |Phi q - theta q| for the three exact eigenpairs at a critical
/// point: theta = 2 lambda with q = (u, v, w)/sqrt 3, and theta = -lambda with
/// q = (u, 0, -w)/sqrt 2 and q = (0, v, -w)/sqrt 2.
[[nodiscard]] inline std::array<double, 3> spike_residuals(const BlockMatrix& phi, const RankOneFit& fit) {
    const Eigen::Index n = phi.n_T(), o2 = phi.n1, o3 = phi.n1 + phi.n2;
    Vec q1 = Vec::Zero(n), q2 = Vec::Zero(n), q3 = Vec::Zero(n);
    q1 << fit.u, fit.v, fit.w;
    q1 /= std::sqrt(3.0);
    q2.segment(0, phi.n1) = fit.u;
    q2.segment(o3, phi.n3) = -fit.w;
    q2 /= std::sqrt(2.0);
    q3.segment(o2, phi.n2) = fit.v;
    q3.segment(o3, phi.n3) = -fit.w;
    q3 /= std::sqrt(2.0);
    return {(phi.S * q1 - 2.0 * fit.lambda * q1).norm(), (phi.S * q2 + fit.lambda * q2).norm(),
            (phi.S * q3 + fit.lambda * q3).norm()};
}

struct Outlier {
    double value = 0.0;
    int multiplicity = 1;
};

struct EmpiricalSpectrum {
    std::vector<double> eigenvalues;  ///< ascending
    std::vector<double> bulk;         ///< ascending
    std::vector<Outlier> outliers;    ///< ascending by value
};

struct OutlierOptions {
    double margin = 0.05;
    /// Eigenvalues closer than this (relative to 1 + |value|) count as one
    /// outlier with multiplicity.
    double merge_tol = 1e-6;
};

[[nodiscard]] inline std::vector<double> sorted_eigenvalues(const BlockMatrix& B) {
    Eigen::SelfAdjointEigenSolver<Mat> es(B.S, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw SolverError("eig_spectrum: eigensolver failed");
    const Vec& ev = es.eigenvalues();
    return {ev.data(), ev.data() + ev.size()};
}

/// Full spectrum; eigenvalues further than `margin` outside the union of
/// `support` are outliers. Without a support everything is bulk.
[[nodiscard]] inline EmpiricalSpectrum eig_spectrum(const BlockMatrix& B,
                                                    const std::vector<Interval>& support = {},
                                                    const OutlierOptions& opt = {}) {
    EmpiricalSpectrum out;
    out.eigenvalues = sorted_eigenvalues(B);
    const auto inside = [&](double e) {
        if (support.empty()) return true;
        return std::any_of(support.begin(), support.end(),
                           [&](const Interval& I) { return e >= I.lo - opt.margin && e <= I.hi + opt.margin; });
    };
    for (double e : out.eigenvalues) {
        if (inside(e)) {
            out.bulk.push_back(e);
        } else if (!out.outliers.empty() &&
                   std::abs(e - out.outliers.back().value) <= opt.merge_tol * (1.0 + std::abs(e))) {
            ++out.outliers.back().multiplicity;
        } else {
            out.outliers.push_back({e, 1});
        }
    }
    return out;
}

/// sup_x |F_emp(x) - F_theory(x)| over the jump points of the empirical CDF of
/// `sample` (any order).
[[nodiscard]] inline double kolmogorov_distance(std::vector<double> sample, const SpectrumCurve& theory) {
    if (sample.empty()) throw InvalidArgument("kolmogorov_distance: empty sample");
    std::sort(sample.begin(), sample.end());
    const auto F = theory.cdf();
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double ft = theory.cdf_at(F, sample[i]);
        d = std::max({d, std::abs(static_cast<double>(i + 1) / n - ft), std::abs(static_cast<double>(i) / n - ft)});
    }
    return d;
}

/// CSV with header "index,eigenvalue,outlier".
inline void write_csv(const EmpiricalSpectrum& s, std::ostream& os) {
    os << "index,eigenvalue,outlier\n";
    std::size_t b = 0;
    char buf[80];
    for (std::size_t i = 0; i < s.eigenvalues.size(); ++i) {
        const double e = s.eigenvalues[i];
        const bool is_bulk = b < s.bulk.size() && s.bulk[b] == e;
        if (is_bulk) ++b;
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%d\n", i, e, is_bulk ? 0 : 1);
        os << buf;
    }
}

}  // namespace nmt
