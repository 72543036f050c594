#pragma once

// Best rank-one approximation by alternating tensor power iteration.
//
// Each sweep updates u <- T(., v, w)/|.|, v <- T(u, ., w)/|.|,
// w <- T(u, v, .)/|.|, so lambda = |T(u, v, .)| = T(u, v, w) >= 0 and the
// objective never decreases. Convergence is declared when all three
// critical-point residuals |T(., v, w) - lambda u|, |T(u, ., w) - lambda v|,
// |T(u, v, .) - lambda w| are below `tol`.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nmt/error.hpp"
#include "nmt/model.hpp"
#include "nmt/rng.hpp"
#include "nmt/tensor3.hpp"

namespace nmt {

struct InitStrategy {
    enum class Kind {
        hosvd,   ///< leading left singular vectors of the three unfoldings
        random,  ///< uniform on the spheres, drawn from `seed`
        given,   ///< caller-supplied (u, v, w)
    };
    Kind kind = Kind::hosvd;
    /// Additional random starts; the best objective wins, ties go to the
    /// lowest start index (the primary start has index 0).
    int restarts = 0;
    std::uint64_t seed = 0;
    std::optional<std::array<Vec, 3>> start;

    static InitStrategy hosvd() { return {}; }
    static InitStrategy random(std::uint64_t seed) { return {Kind::random, 0, seed, std::nullopt}; }
    static InitStrategy given(Vec u, Vec v, Vec w) {
        return {Kind::given, 0, 0, std::array<Vec, 3>{std::move(u), std::move(v), std::move(w)}};
    }
};

struct PowerOptions {
    double tol = 1e-10;
    int max_iter = 1000;
};

struct RankOneFit {
    double lambda = 0.0;
    Vec u, v, w;
    int iterations = 0;
    bool converged = false;
    std::array<double, 3> residuals{};
    /// lambda after every sweep of the winning start.
    std::vector<double> objective_trace;
    /// Final objective of every start, in start order.
    std::vector<double> restart_objectives;
    int chosen_start = 0;

    [[nodiscard]] double max_residual() const { return *std::max_element(residuals.begin(), residuals.end()); }
};

struct EmpiricalStats {
    double lambda = 0.0;
    double a1 = 0.0, a2 = 0.0, a3 = 0.0;
};

namespace detail {

/// Deterministic sign: largest-magnitude entry positive (lowest index on ties).
inline void fix_sign(Vec& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[best])) best = i;
    if (v[best] < 0.0) v = -v;
}

/// Leading eigenvector of a symmetric PSD matrix. When the top eigenvalue is
/// degenerate, the projection of the lowest-index basis vector with a nonzero
/// component onto the top eigenspace is returned.
inline Vec leading_eigvec(const Mat& gram) {
    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    if (es.info() != Eigen::Success) throw SolverError("leading_eigvec: eigensolver failed");
    const Vec& ev = es.eigenvalues();
    const Eigen::Index n = ev.size();
    const double top = ev[n - 1];
    const double thresh = top - 1e-10 * std::max(std::abs(top), 1e-300);
    Eigen::Index mult = 0;
    while (mult < n && ev[n - 1 - mult] >= thresh) ++mult;
    Vec out;
    if (mult <= 1) {
        out = es.eigenvectors().col(n - 1);
    } else {
        const Mat q = es.eigenvectors().rightCols(mult);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vec proj = q * q.row(i).transpose();
            if (proj.norm() > 1e-8) {
                out = proj.normalized();
                break;
            }
        }
    }
    fix_sign(out);
    return out;
}

inline Mat gram_mode1(const Tensor3& t) {
    const auto a = t.mode1_view();
    Mat g = Mat::Zero(t.n1(), t.n1());
    g.selfadjointView<Eigen::Lower>().rankUpdate(a);
    return g.selfadjointView<Eigen::Lower>();
}

inline Mat gram_mode2(const Tensor3& t) {
    Mat g = Mat::Zero(t.n2(), t.n2());
    for (Eigen::Index k = 0; k < t.n3(); ++k) g.selfadjointView<Eigen::Lower>().rankUpdate(t.slice(k).transpose());
    return g.selfadjointView<Eigen::Lower>();
}

inline Mat gram_mode3(const Tensor3& t) {
    const auto s = t.slices_view();
    Mat g = Mat::Zero(t.n3(), t.n3());
    g.selfadjointView<Eigen::Lower>().rankUpdate(s.transpose());
    return g.selfadjointView<Eigen::Lower>();
}

inline double normalize_or_throw(Vec& a) {
    const double n = a.norm();
    if (!(n >= 1e-300)) throw DegenerateInput("power_iteration: contraction with vanishing norm");
    a /= n;
    return n;
}

inline RankOneFit run_power(const Tensor3& t, Vec u, Vec v, Vec w, const PowerOptions& opt) {
    RankOneFit fit;
    normalize_or_throw(u);
    normalize_or_throw(v);
    normalize_or_throw(w);
    double lambda = -std::numeric_limits<double>::infinity();
    bool have_lambda = false;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        Vec a = contract_vw(t, v, w);
        if (have_lambda && (a - lambda * u).norm() < opt.tol) {
            const double r2 = (contract_uw(t, u, w) - lambda * v).norm();
            const double r3 = (contract_uv(t, u, v) - lambda * w).norm();
            if (r2 < opt.tol && r3 < opt.tol) {
                fit.converged = true;
                break;
            }
        }
        normalize_or_throw(a);
        u = std::move(a);
        // T(u, ., .) once; both remaining updates reuse it.
        const Mat tu = contract1(t, u);
        Vec b = tu * w;
        normalize_or_throw(b);
        v = std::move(b);
        Vec c = tu.transpose() * v;
        lambda = normalize_or_throw(c);
        w = std::move(c);
        have_lambda = true;
        fit.objective_trace.push_back(lambda);
    }
    fit.iterations = it;
    fit.lambda = contract3s(t, u, v, w);
    fit.residuals = {(contract_vw(t, v, w) - fit.lambda * u).norm(), (contract_uw(t, u, w) - fit.lambda * v).norm(),
                     (contract_uv(t, u, v) - fit.lambda * w).norm()};
    if (fit.converged && fit.max_residual() >= opt.tol) fit.converged = false;
    fit.u = std::move(u);
    fit.v = std::move(v);
    fit.w = std::move(w);
    return fit;
}

}  // namespace detail

/// HOSVD-style starting point: leading left singular vector of each unfolding.
[[nodiscard]] inline std::array<Vec, 3> hosvd_init(const Tensor3& t) {
    return {detail::leading_eigvec(detail::gram_mode1(t)), detail::leading_eigvec(detail::gram_mode2(t)),
            detail::leading_eigvec(detail::gram_mode3(t))};
}

[[nodiscard]] inline RankOneFit power_iteration(const Tensor3& t, const InitStrategy& init = {},
                                                const PowerOptions& opt = {}) {
    if (!(opt.tol > 0.0)) throw InvalidArgument("power_iteration: tol must be positive");
    if (opt.max_iter < 1) throw InvalidArgument("power_iteration: max_iter must be >= 1");
    if (init.restarts < 0) throw InvalidArgument("power_iteration: restarts must be >= 0");
    if (frobenius_norm(t) == 0.0) throw DegenerateInput("power_iteration: zero tensor");

    std::array<Vec, 3> s0;
    switch (init.kind) {
        case InitStrategy::Kind::hosvd: s0 = hosvd_init(t); break;
        case InitStrategy::Kind::random: {
            Rng r = Rng(init.seed).split(0);
            s0 = {r.unit_vector(t.n1()), r.unit_vector(t.n2()), r.unit_vector(t.n3())};
            break;
        }
        case InitStrategy::Kind::given:
            if (!init.start) throw InvalidArgument("power_iteration: given init without vectors");
            s0 = *init.start;
            for (int m = 0; m < 3; ++m)
                if (s0[static_cast<std::size_t>(m)].size() != t.dims()[static_cast<std::size_t>(m)])
                    throw DimensionMismatch("power_iteration: initial vector length mismatch");
            break;
    }

    RankOneFit best = detail::run_power(t, s0[0], s0[1], s0[2], opt);
    std::vector<double> objectives{best.lambda};
    const Rng root(init.seed);
    for (int r = 1; r <= init.restarts; ++r) {
        Rng rr = root.split(100 + static_cast<std::uint64_t>(r));
        RankOneFit cand = detail::run_power(t, rr.unit_vector(t.n1()), rr.unit_vector(t.n2()), rr.unit_vector(t.n3()), opt);
        objectives.push_back(cand.lambda);
        if (cand.lambda > best.lambda) {
            best = std::move(cand);
            best.chosen_start = r;
        }
    }
    best.restart_objectives = std::move(objectives);
    return best;
}

[[nodiscard]] inline EmpiricalStats empirical_stats(const RankOneFit& fit, const Vec3Signals& s) {
    if (fit.u.size() != s.x.size() || fit.v.size() != s.y.size() || fit.w.size() != s.z.size()) {
        throw DimensionMismatch("empirical_stats: fit and signal dimensions differ");
    }
    return {fit.lambda, std::abs(fit.u.dot(s.x)), std::abs(fit.v.dot(s.y)), std::abs(fit.w.dot(s.z))};
}

/// Flip (u, w) and/or (v, w) jointly so that <u, x> >= 0 and <v, y> >= 0.
/// T(u, v, w) and every critical-point identity are unchanged.
inline void align_signs(RankOneFit& fit, const Vec3Signals& s) {
    if (fit.u.dot(s.x) < 0.0) {
        fit.u = -fit.u;
        fit.w = -fit.w;
    }
    if (fit.v.dot(s.y) < 0.0) {
        fit.v = -fit.v;
        fit.w = -fit.w;
    }
}

}  // namespace nmt
