#pragma once

// Deterministic large-dimensional predictions for the nested matrix-tensor
// model with general noise variances.
//
// Limiting spectrum. g = g1 + g2 + g3 where, for xi off the support,
//
//   g1 = c1 / (sT2 (g1 - g) - gb sM2 g2 - xi)
//   g2 = c2 / (sT2 (g2 - g) - gb sM2 g1 - xi)
//   g3 = c3 / (sT2 (g3 - g) - xi)
//
// with gb = beta_T^2 alpha3^2 / (c1 + c2). The coupling gb is either supplied
// (GammaMode::compute) or re-estimated every sweep from the current g3 as
// gb = beta_T^2 (1 - sT2 g3^2 / c3) / (c1 + c2) (GammaMode::approximate).
//
// Summary statistics. With
//   q3(xi)^2 = 1 - sT2 g3^2 / c3,   gamma(xi) = beta_T^2 q3^2 / (c1 + c2),
//   qi(xi)^2 = 1 - (sT2 + sM2 gamma) gi^2 / ci            (i = 1, 2),
//   f(xi)    = xi + (sT2 + sM2 gamma) g - sM2 gamma g3 - beta_T beta_M q1 q2 q3,
// the asymptotic spectral norm solves f(lambda) = 0 to the right of the bulk
// and alpha_i = q_i(lambda). When no such root exists the equation is solved
// at lambda + i*eps using real parts of the g's (epsilon-regularized branch).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "nmt/error.hpp"

namespace nmt {

using cplx = std::complex<double>;

struct LimitParams {
    double c1 = 1.0 / 3, c2 = 1.0 / 3, c3 = 1.0 / 3;
    double beta_T = 0.0, beta_M = 0.0;
    double sigma_T2 = 1.0, sigma_M2 = 1.0;

    static LimitParams from_dims(double n1, double n2, double n3, double beta_T, double beta_M, double sigma_T2 = 1.0,
                                 double sigma_M2 = 1.0) {
        const double nt = n1 + n2 + n3;
        LimitParams p{n1 / nt, n2 / nt, n3 / nt, beta_T, beta_M, sigma_T2, sigma_M2};
        p.validate();
        return p;
    }

    void validate() const {
        if (!(c1 > 0.0) || !(c2 > 0.0) || !(c3 > 0.0)) throw InvalidArgument("LimitParams: ratios must be positive");
        if (std::abs(c1 + c2 + c3 - 1.0) >= 1e-12) throw InvalidArgument("LimitParams: ratios must sum to 1");
        if (!(beta_T >= 0.0) || !(beta_M >= 0.0)) throw InvalidArgument("LimitParams: SNRs must be nonnegative");
        if (!(sigma_T2 > 0.0) || !(sigma_M2 > 0.0)) throw InvalidArgument("LimitParams: variances must be positive");
    }

    [[nodiscard]] std::array<double, 3> c() const noexcept { return {c1, c2, c3}; }
};

enum class GammaMode { compute, approximate };

struct StieltjesOptions {
    double damping = 0.5;  ///< weight of the new iterate
    double tol = 1e-13;    ///< on max |g_new - g|
    int max_sweeps = 10000;
    double residual_tol = 1e-10;
    /// A stalled damped iteration whose last step is below this is handed to
    /// Newton's method.
    double newton_handoff = 1e-6;
};

struct StieltjesSolution {
    cplx xi;
    std::array<cplx, 3> gi{};
    cplx g;
    /// Real for real xi and in compute mode; the approximate update makes it
    /// complex off the real axis.
    cplx gamma_bar;
    GammaMode mode = GammaMode::approximate;
    /// |g_i - c_i / D_i| for the three equations.
    std::array<double, 3> residuals{};
    int sweeps = 0;
    bool newton_polished = false;

    [[nodiscard]] double max_residual() const { return *std::max_element(residuals.begin(), residuals.end()); }
};

/// Fixed-point failure; `last` holds the final iterate.
class StieltjesError : public SolverError {
public:
    StieltjesError(const std::string& what, StieltjesSolution last)
        : SolverError(what, describe(last)), last_(std::move(last)) {}
    [[nodiscard]] const StieltjesSolution& last() const noexcept { return last_; }

private:
    static std::string describe(const StieltjesSolution& s) {
        std::ostringstream os;
        os << "xi=" << s.xi << " g=" << s.g << " sweeps=" << s.sweeps << " residual=" << s.max_residual();
        return os.str();
    }
    StieltjesSolution last_;
};

namespace detail {

struct FixedPointSystem {
    const LimitParams& p;
    cplx xi;
    GammaMode mode;
    double gamma_fixed;

    [[nodiscard]] cplx gamma(const std::array<cplx, 3>& g) const {
        if (mode == GammaMode::compute) return gamma_fixed;
        return p.beta_T * p.beta_T / (p.c1 + p.c2) * (1.0 - p.sigma_T2 * g[2] * g[2] / p.c3);
    }
    [[nodiscard]] cplx dgamma_dg3(const std::array<cplx, 3>& g) const {
        if (mode == GammaMode::compute) return 0.0;
        return -2.0 * p.beta_T * p.beta_T * p.sigma_T2 * g[2] / ((p.c1 + p.c2) * p.c3);
    }

    [[nodiscard]] std::array<cplx, 3> denominators(const std::array<cplx, 3>& g) const {
        const cplx gb = gamma(g);
        const cplx s = g[0] + g[1] + g[2];
        return {p.sigma_T2 * (g[0] - s) - gb * p.sigma_M2 * g[1] - xi,
                p.sigma_T2 * (g[1] - s) - gb * p.sigma_M2 * g[0] - xi, p.sigma_T2 * (g[2] - s) - xi};
    }

    [[nodiscard]] std::array<cplx, 3> map(const std::array<cplx, 3>& g) const {
        const auto d = denominators(g);
        return {p.c1 / d[0], p.c2 / d[1], p.c3 / d[2]};
    }

    [[nodiscard]] std::array<double, 3> residuals(const std::array<cplx, 3>& g) const {
        const auto m = map(g);
        return {std::abs(g[0] - m[0]), std::abs(g[1] - m[1]), std::abs(g[2] - m[2])};
    }

    /// Newton on F(g) = g - map(g); the map is holomorphic in g.
    bool newton(std::array<cplx, 3>& g, double residual_tol, int max_steps = 50) const {
        for (int step = 0; step < max_steps; ++step) {
            const auto d = denominators(g);
            const auto m = map(g);
            Eigen::Vector3cd F(g[0] - m[0], g[1] - m[1], g[2] - m[2]);
            if (F.cwiseAbs().maxCoeff() < 0.1 * residual_tol) return true;
            const cplx gb = gamma(g);
            const cplx dgb = dgamma_dg3(g);
            const double sT = p.sigma_T2, sM = p.sigma_M2;
            // dD_i / dg_j
            Eigen::Matrix3cd dD;
            dD << 0.0, -sT - gb * sM, -sT - sM * g[1] * dgb,
                  -sT - gb * sM, 0.0, -sT - sM * g[0] * dgb,
                  -sT, -sT, 0.0;
            const std::array<double, 3> c = p.c();
            Eigen::Matrix3cd J = Eigen::Matrix3cd::Identity();
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) J(i, j) += c[static_cast<std::size_t>(i)] / (d[static_cast<std::size_t>(i)] * d[static_cast<std::size_t>(i)]) * dD(i, j);
            const Eigen::Vector3cd delta = J.fullPivLu().solve(F);
            if (!delta.allFinite()) return false;
            for (int i = 0; i < 3; ++i) g[static_cast<std::size_t>(i)] -= delta[i];
        }
        const auto r = residuals(g);
        return std::max({r[0], r[1], r[2]}) < residual_tol;
    }
};

inline bool all_finite(const std::array<cplx, 3>& g) {
    return std::all_of(g.begin(), g.end(), [](const cplx& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
}

}  // namespace detail

/// Limiting Stieltjes transform at `xi`. In compute mode `gamma_input` must
/// carry gb. `warm_start` replaces the default initialization g_i = -c_i/xi.
namespace detail {

inline StieltjesSolution solve_once(const LimitParams& p, cplx xi, GammaMode mode, std::optional<double> gamma_input,
                                    const StieltjesOptions& opt, const std::array<cplx, 3>* warm_start) {
    const detail::FixedPointSystem sys{p, xi, mode, gamma_input.value_or(0.0)};

    std::array<cplx, 3> g = warm_start ? *warm_start : std::array<cplx, 3>{-p.c1 / xi, -p.c2 / xi, -p.c3 / xi};
    const double a = opt.damping;
    double step = std::numeric_limits<double>::infinity();
    int sweep = 0;
    for (; sweep < opt.max_sweeps; ++sweep) {
        const auto m = sys.map(g);
        step = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            step = std::max(step, std::abs(m[i] - g[i]));
            g[i] = (1.0 - a) * g[i] + a * m[i];
        }
        if (!detail::all_finite(g)) break;
        if (step < opt.tol) {
            ++sweep;
            break;
        }
    }

    StieltjesSolution sol;
    sol.xi = xi;
    sol.mode = mode;
    sol.sweeps = sweep;
    const auto finish = [&](const std::array<cplx, 3>& gg) {
        sol.gi = gg;
        sol.g = gg[0] + gg[1] + gg[2];
        sol.gamma_bar = sys.gamma(gg);
        sol.residuals = sys.residuals(gg);
    };

    bool ok = detail::all_finite(g) && step < opt.tol;
    if (ok) {
        finish(g);
        if (sol.max_residual() >= opt.residual_tol) {
            auto polished = g;
            if (sys.newton(polished, opt.residual_tol)) {
                g = polished;
                sol.newton_polished = true;
            }
        }
    } else if (detail::all_finite(g) && step < opt.newton_handoff) {
        auto polished = g;
        if (sys.newton(polished, opt.residual_tol)) {
            g = polished;
            sol.newton_polished = true;
            ok = true;
        }
    }
    finish(g);
    if (!ok || !detail::all_finite(g) || sol.max_residual() >= opt.residual_tol) {
        throw StieltjesError("solve_stieltjes: fixed point did not converge", sol);
    }
    if (xi.imag() > 0.0 && !(sol.g.imag() > 0.0)) {
        throw StieltjesError("solve_stieltjes: wrong branch (Im g <= 0 for Im xi > 0)", sol);
    }
    return sol;
}

}  // namespace detail

/// Solves the coupled system at xi. Without a warm start, a failed solve
/// close to the real axis is retried by continuation from Im xi = 1 down to
/// Im xi, halving the imaginary part and warm-starting each level.
[[nodiscard]] inline StieltjesSolution solve_stieltjes(const LimitParams& p, cplx xi,
                                                       GammaMode mode = GammaMode::approximate,
                                                       std::optional<double> gamma_input = std::nullopt,
                                                       const StieltjesOptions& opt = {},
                                                       const std::array<cplx, 3>* warm_start = nullptr) {
    p.validate();
    if (mode == GammaMode::compute && !gamma_input) {
        throw InvalidArgument("solve_stieltjes: compute mode requires gamma_input");
    }
    if (xi == cplx(0.0)) throw InvalidArgument("solve_stieltjes: xi must be nonzero");
    try {
        return detail::solve_once(p, xi, mode, gamma_input, opt, warm_start);
    } catch (const StieltjesError&) {
        if (warm_start || !(xi.imag() > 0.0) || xi.imag() >= 0.5) throw;
        std::vector<double> levels;
        for (double y = 1.0; y > xi.imag(); y *= 0.5) levels.push_back(y);
        std::optional<std::array<cplx, 3>> g;
        for (double y : levels) g = detail::solve_once(p, cplx(xi.real(), y), mode, gamma_input, opt, g ? &*g : nullptr).gi;
        return detail::solve_once(p, xi, mode, gamma_input, opt, &*g);
    }
}

// ---------------------------------------------------------------------------
// Spectral density and support
// ---------------------------------------------------------------------------

struct Interval {
    double lo = 0.0, hi = 0.0;
    friend bool operator==(const Interval&, const Interval&) = default;
};

struct SummaryStats;

struct SpectrumCurve {
    std::vector<double> grid;
    std::vector<double> density;
    std::vector<bool> valid;  ///< false where the solver failed at that point
    std::vector<Interval> support;
    /// Predicted isolated eigenvalues of the block contraction matrix:
    /// 2*lambda (multiplicity 1) and -lambda (multiplicity 2). Empty without
    /// summary statistics.
    std::vector<std::pair<double, int>> spikes;

    /// Trapezoidal mass over valid points.
    [[nodiscard]] double mass() const {
        double m = 0.0;
        for (std::size_t i = 1; i < grid.size(); ++i) {
            if (valid[i] && valid[i - 1]) m += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
        }
        return m;
    }

    /// Cumulative distribution on the grid (trapezoid), normalized to end at 1.
    [[nodiscard]] std::vector<double> cdf() const {
        std::vector<double> F(grid.size(), 0.0);
        for (std::size_t i = 1; i < grid.size(); ++i) {
            const double seg = (valid[i] && valid[i - 1]) ? 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]) : 0.0;
            F[i] = F[i - 1] + seg;
        }
        if (!F.empty() && F.back() > 0.0)
            for (double& v : F) v /= F.back();
        return F;
    }

    /// Linear interpolation of cdf() at x (0 left of the grid, 1 right of it).
    [[nodiscard]] double cdf_at(const std::vector<double>& F, double x) const {
        if (grid.empty() || x <= grid.front()) return 0.0;
        if (x >= grid.back()) return 1.0;
        const auto it = std::upper_bound(grid.begin(), grid.end(), x);
        const auto i = static_cast<std::size_t>(it - grid.begin());
        const double t = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
        return F[i - 1] + t * (F[i] - F[i - 1]);
    }
};

struct DensityOptions {
    double epsilon = 1e-5;
    double threshold = 1e-4;  ///< support = where density exceeds this
    StieltjesOptions solver{};
};

namespace detail {
inline std::vector<Interval> threshold_intervals(const std::vector<double>& grid, const std::vector<double>& dens,
                                                 const std::vector<bool>& valid, double threshold) {
    std::vector<Interval> out;
    bool open = false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const bool in = valid[i] && dens[i] > threshold;
        if (in && !open) {
            out.push_back({grid[i], grid[i]});
            open = true;
        } else if (in) {
            out.back().hi = grid[i];
        } else {
            open = false;
        }
    }
    return out;
}
}  // namespace detail

/// Density (1/pi) Im g(x + i eps) on an ascending grid. In compute mode the
/// coupling gb must be supplied; in approximate mode it is re-estimated per
/// point. Points where the solver fails are marked invalid with density 0.
[[nodiscard]] inline SpectrumCurve density(const LimitParams& p, const std::vector<double>& grid,
                                           GammaMode mode = GammaMode::approximate,
                                           std::optional<double> gamma_input = std::nullopt,
                                           const DensityOptions& opt = {}) {
    p.validate();
    if (!(opt.epsilon > 0.0)) throw InvalidArgument("density: epsilon must be positive");
    if (!std::is_sorted(grid.begin(), grid.end()) || std::adjacent_find(grid.begin(), grid.end()) != grid.end()) {
        throw InvalidArgument("density: grid must be strictly ascending");
    }
    SpectrumCurve out;
    out.grid = grid;
    out.density.assign(grid.size(), 0.0);
    out.valid.assign(grid.size(), false);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        try {
            const auto s = solve_stieltjes(p, cplx(grid[i], opt.epsilon), mode, gamma_input, opt.solver);
            out.density[i] = s.g.imag() / std::numbers::pi;
            out.valid[i] = true;
        } catch (const SolverError&) {
        }
    }
    out.support = detail::threshold_intervals(out.grid, out.density, out.valid, opt.threshold);
    return out;
}

[[nodiscard]] inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> v(n);
    if (n == 1) {
        v[0] = lo;
        return v;
    }
    for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

/// Default scan range [-R, R] with R = 4 max(sT, sM) (1 + beta_T).
[[nodiscard]] inline Interval default_scan_range(const LimitParams& p) {
    const double r = 4.0 * std::sqrt(std::max(p.sigma_T2, p.sigma_M2)) * (1.0 + p.beta_T);
    return {-r, r};
}

struct SupportOptions {
    double epsilon = 1e-6;
    double threshold = 1e-4;
    std::size_t points = 2001;
    GammaMode mode = GammaMode::approximate;
    std::optional<double> gamma_input;
};

/// Intervals where the density exceeds the threshold over `range`.
[[nodiscard]] inline std::vector<Interval> support_edges(const LimitParams& p, Interval range,
                                                         const SupportOptions& opt = {}) {
    if (opt.points < 16) throw InvalidArgument("support_edges: scan grid too coarse (need at least 16 points)");
    if (!(range.lo < range.hi)) throw InvalidArgument("support_edges: empty scan range");
    DensityOptions dopt;
    dopt.epsilon = opt.epsilon;
    dopt.threshold = opt.threshold;
    const auto curve = density(p, linspace(range.lo, range.hi, opt.points), opt.mode, opt.gamma_input, dopt);
    if (curve.support.empty()) throw SolverError("support_edges: no support detected in scan range");
    return curve.support;
}

// ---------------------------------------------------------------------------
// Asymptotic summary statistics
// ---------------------------------------------------------------------------

/// q_i and f evaluated from (real parts of) a Stieltjes solution.
struct SpikeEquation {
    double xi = 0.0;
    std::array<double, 3> g{};
    double g_sum = 0.0;
    double gamma = 0.0;
    std::array<double, 3> q_sq{};  ///< arguments of the square roots
    double f = 0.0;
};

[[nodiscard]] inline SpikeEquation spike_equation(const LimitParams& p, const StieltjesSolution& s) {
    SpikeEquation e;
    e.xi = s.xi.real();
    for (std::size_t i = 0; i < 3; ++i) e.g[i] = s.gi[i].real();
    e.g_sum = e.g[0] + e.g[1] + e.g[2];
    e.q_sq[2] = 1.0 - p.sigma_T2 * e.g[2] * e.g[2] / p.c3;
    e.gamma = p.beta_T * p.beta_T * e.q_sq[2] / (p.c1 + p.c2);
    const double k = p.sigma_T2 + p.sigma_M2 * e.gamma;
    e.q_sq[0] = 1.0 - k * e.g[0] * e.g[0] / p.c1;
    e.q_sq[1] = 1.0 - k * e.g[1] * e.g[1] / p.c2;
    const auto root = [](double a) { return std::sqrt(std::max(a, 0.0)); };
    e.f = e.xi + k * e.g_sum - p.sigma_M2 * e.gamma * e.g[2] -
          p.beta_T * p.beta_M * root(e.q_sq[0]) * root(e.q_sq[1]) * root(e.q_sq[2]);
    return e;
}

enum class Branch { outside_support, epsilon_regularized };

[[nodiscard]] inline const char* to_string(Branch b) {
    return b == Branch::outside_support ? "outside-support" : "epsilon-regularized";
}

struct SummaryStats {
    double lambda_bar = 0.0;
    double alpha1 = 0.0, alpha2 = 0.0, alpha3 = 0.0;
    double gamma_bar = 0.0;
    Branch branch = Branch::outside_support;
    double epsilon_used = 0.0;
    /// Right edge of the bulk for the self-consistent (approximate) system.
    double right_edge = 0.0;
    /// Real parts of g1, g2, g3 at the solution.
    std::array<double, 3> g{};
    /// Sign-change brackets of f found on the scan grid.
    std::vector<Interval> brackets;
};

struct SummaryOptions {
    double epsilon_fallback = 1e-3;
    std::size_t scan_points = 400;
    double root_tol = 1e-12;
    /// Reuse a previously computed right edge (it depends on c, beta_T and
    /// the variances only).
    std::optional<double> right_edge;
    StieltjesOptions solver{};
};

namespace detail {

inline std::optional<StieltjesSolution> real_axis_solution(const LimitParams& p, double xi, const StieltjesOptions& o) {
    try {
        auto s = solve_stieltjes(p, cplx(xi, 0.0), GammaMode::approximate, std::nullopt, o);
        for (const auto& gi : s.gi)
            if (!(gi.real() < 0.0)) return std::nullopt;
        return s;
    } catch (const SolverError&) {
        return std::nullopt;
    }
}

inline bool spike_terms_valid(const LimitParams& p, const SpikeEquation& e) {
    constexpr double kSlack = -1e-8;
    if (e.q_sq[2] < kSlack) return false;
    if (p.beta_T * p.beta_M > 0.0 && (e.q_sq[0] < kSlack || e.q_sq[1] < kSlack)) return false;
    return true;
}

inline std::optional<SpikeEquation> f_outside(const LimitParams& p, double xi, const StieltjesOptions& o) {
    auto s = real_axis_solution(p, xi, o);
    if (!s) return std::nullopt;
    auto e = spike_equation(p, *s);
    if (!spike_terms_valid(p, e)) return std::nullopt;
    return e;
}

inline std::optional<SpikeEquation> f_regularized(const LimitParams& p, double x, double eps, const StieltjesOptions& o) {
    try {
        const auto s = solve_stieltjes(p, cplx(x, eps), GammaMode::approximate, std::nullopt, o);
        auto e = spike_equation(p, s);
        e.xi = x;
        if (!spike_terms_valid(p, e)) return std::nullopt;
        return e;
    } catch (const SolverError&) {
        return std::nullopt;
    }
}

template <class F>
double bisect(F&& positive_at, double neg, double pos, double tol) {
    for (int it = 0; it < 200 && std::abs(pos - neg) > tol * std::max(1.0, std::abs(pos)); ++it) {
        const double mid = 0.5 * (neg + pos);
        if (positive_at(mid)) pos = mid;
        else neg = mid;
    }
    return 0.5 * (neg + pos);
}

}  // namespace detail

/// Right edge of the bulk for the approximate-coupling system: the smallest
/// xi > 0 down to which a real, negative solution exists when scanning
/// leftwards from `start`.
[[nodiscard]] inline double right_edge(const LimitParams& p, double start, const StieltjesOptions& o = {},
                                       int scan_steps = 256) {
    if (!detail::real_axis_solution(p, start, o)) throw SolverError("right_edge: no real solution at scan start");
    double valid = start;
    double invalid = 0.0;
    for (int k = 1; k <= scan_steps; ++k) {
        const double x = start * (1.0 - static_cast<double>(k) / scan_steps);
        if (x <= 0.0) break;
        if (detail::real_axis_solution(p, x, o)) {
            valid = x;
        } else {
            invalid = x;
            break;
        }
    }
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (valid + invalid);
        if (detail::real_axis_solution(p, mid, o)) valid = mid;
        else invalid = mid;
    }
    return valid;
}

[[nodiscard]] inline SummaryStats compute_summary_stats(const LimitParams& p, const SummaryOptions& opt = {}) {
    p.validate();
    if (!(opt.epsilon_fallback > 0.0)) throw InvalidArgument("compute_summary_stats: epsilon_fallback must be positive");
    if (opt.scan_points < 16) throw InvalidArgument("compute_summary_stats: scan grid too coarse");
    const auto& so = opt.solver;
    std::ostringstream trace;

    // Upper end of the scan: valid real solution with f > 0.
    double hi = 1.0;
    for (int k = 0;; ++k) {
        const auto e = detail::f_outside(p, hi, so);
        if (e && e->f > 0.0) break;
        if (k > 60) throw SolverError("compute_summary_stats: f never becomes positive on the right");
        hi *= 2.0;
    }

    SummaryStats st;
    st.right_edge = opt.right_edge ? *opt.right_edge : right_edge(p, hi, so);
    const double edge = st.right_edge;
    if (!(hi > edge)) hi = 2.0 * edge + 1.0;

    // Geometric grid right of the edge.
    const std::size_t n = opt.scan_points;
    std::vector<double> xs(n);
    std::vector<std::optional<SpikeEquation>> fs(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double r = std::pow(10.0, -10.0 + 10.0 * static_cast<double>(k) / static_cast<double>(n - 1));
        xs[k] = edge + (hi - edge) * r;
        fs[k] = detail::f_outside(p, xs[k], so);
    }
    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (fs[k] && fs[k + 1] && ((fs[k]->f > 0.0) != (fs[k + 1]->f > 0.0))) st.brackets.push_back({xs[k], xs[k + 1]});
    }

    const bool matrix_signal = p.beta_T * p.beta_M > 0.0;
    auto finish = [&](const SpikeEquation& e) {
        for (std::size_t i = 0; i < 3; ++i) {
            if (i < 2 && (!matrix_signal || st.branch != Branch::outside_support)) continue;
            if (e.q_sq[i] < -1e-8) {
                throw SolverError("compute_summary_stats: negative alignment argument at the root (inconsistent)",
                                  trace.str());
            }
        }
        st.lambda_bar = e.xi;
        st.g = e.g;
        st.alpha3 = p.beta_T > 0.0 ? std::sqrt(std::max(e.q_sq[2], 0.0)) : 0.0;
        // Below the transition only alpha3 is taken from the regularized
        // root; the matrix alignments vanish there.
        const bool aligned = matrix_signal && st.branch == Branch::outside_support;
        st.alpha1 = aligned ? std::sqrt(std::max(e.q_sq[0], 0.0)) : 0.0;
        st.alpha2 = aligned ? std::sqrt(std::max(e.q_sq[1], 0.0)) : 0.0;
        st.gamma_bar = p.beta_T * p.beta_T * st.alpha3 * st.alpha3 / (p.c1 + p.c2);
        return st;
    };

    if (!st.brackets.empty()) {
        const Interval b = st.brackets.back();  // largest root
        const bool pos_right = detail::f_outside(p, b.hi, so)->f > 0.0;
        const double root = detail::bisect(
            [&](double x) {
                const auto e = detail::f_outside(p, x, so);
                if (!e) return !pos_right;  // treat failures as the edge side
                return (e->f > 0.0) == pos_right;
            },
            b.lo, b.hi, opt.root_tol);
        const auto e = detail::f_outside(p, root, so);
        if (!e) throw SolverError("compute_summary_stats: solver failed at the bracketed root", trace.str());
        st.branch = Branch::outside_support;
        st.epsilon_used = 0.0;
        return finish(*e);
    }

    // Epsilon-regularized branch: scan leftwards into the bulk.
    trace << "no root right of edge " << edge << "; f at scan start " << (fs.front() ? fs.front()->f : NAN) << "\n";
    const double eps = opt.epsilon_fallback;
    const double span = 0.5 * std::max(edge, 1e-3);
    std::vector<double> ys = linspace(edge, edge - span, n);
    std::vector<std::optional<SpikeEquation>> es(n);
    for (std::size_t k = 0; k < n; ++k) es[k] = detail::f_regularized(p, ys[k], eps, so);

    st.branch = Branch::epsilon_regularized;
    st.epsilon_used = eps;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (es[k] && es[k + 1] && es[k]->f > 0.0 && es[k + 1]->f <= 0.0) {
            st.brackets.push_back({ys[k + 1], ys[k]});
            const double root = detail::bisect(
                [&](double x) {
                    const auto e = detail::f_regularized(p, x, eps, so);
                    return e && e->f > 0.0;
                },
                ys[k + 1], ys[k], opt.root_tol);
            const auto e = detail::f_regularized(p, root, eps, so);
            if (e) return finish(*e);
        }
    }

    // No sign change: take the point of smallest |f|, refined by golden section.
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < n; ++k) {
        if (es[k] && (!best || std::abs(es[k]->f) < std::abs(es[*best]->f))) best = k;
    }
    if (!best) {
        for (std::size_t k = 0; k < n; ++k) trace << "x=" << ys[k] << " f=" << (es[k] ? es[k]->f : NAN) << "\n";
        throw SolverError("compute_summary_stats: no solution in either branch", trace.str());
    }
    double a = ys[std::min(*best + 1, n - 1)];
    double b = ys[*best == 0 ? 0 : *best - 1];
    const auto absf = [&](double x) {
        const auto e = detail::f_regularized(p, x, eps, so);
        return e ? std::abs(e->f) : std::numeric_limits<double>::infinity();
    };
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = absf(x1), f2 = absf(x2);
    for (int it = 0; it < 80 && (b - a) > opt.root_tol; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = absf(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = absf(x2);
        }
    }
    auto e = detail::f_regularized(p, 0.5 * (a + b), eps, so);
    if (!e) e = es[*best];
    return finish(*e);
}

/// Alignments from the ratio forms
///   a1^2 = (l + gb sM2 (g1+g2) + sT2 g) / (l + gb sM2 g2 + sT2 (g - g1)),
///   a2^2 = (l + gb sM2 (g1+g2) + sT2 g) / (l + gb sM2 g1 + sT2 (g - g2)),
///   a3^2 = (l + sT2 g) / (l + sT2 (g - g3)).
[[nodiscard]] inline std::array<double, 3> ratio_form_alignments(const LimitParams& p, const SummaryStats& s) {
    const double l = s.lambda_bar, gb = s.gamma_bar;
    const double g1 = s.g[0], g2 = s.g[1], g3 = s.g[2], g = g1 + g2 + g3;
    const double num = l + gb * p.sigma_M2 * (g1 + g2) + p.sigma_T2 * g;
    return {std::sqrt(num / (l + gb * p.sigma_M2 * g2 + p.sigma_T2 * (g - g1))),
            std::sqrt(num / (l + gb * p.sigma_M2 * g1 + p.sigma_T2 * (g - g2))),
            std::sqrt((l + p.sigma_T2 * g) / (l + p.sigma_T2 * (g - g3)))};
}

/// Predicted spikes {2 lambda (x1), -lambda (x2)} of the block matrix.
[[nodiscard]] inline std::vector<std::pair<double, int>> predicted_spikes(const SummaryStats& s) {
    return {{2.0 * s.lambda_bar, 1}, {-s.lambda_bar, 2}};
}

/// Density using the coupling implied by `stats` (compute mode), with spikes.
[[nodiscard]] inline SpectrumCurve density(const LimitParams& p, const std::vector<double>& grid, const SummaryStats& stats,
                                           const DensityOptions& opt = {}) {
    auto curve = density(p, grid, GammaMode::compute, stats.gamma_bar, opt);
    curve.spikes = predicted_spikes(stats);
    return curve;
}

// ---------------------------------------------------------------------------
// Serialization
//
// SpectrumCurve CSV: header "x,density,valid"; one row per grid point.
// SummaryStats JSON: {"lambda_bar", "alpha": [a1, a2, a3], "gamma_bar",
//   "branch": "outside-support" | "epsilon-regularized", "epsilon_used",
//   "right_edge", "g": [g1, g2, g3], "brackets": [[lo, hi], ...]}
// ---------------------------------------------------------------------------

[[nodiscard]] inline nlohmann::json to_json(const SummaryStats& s) {
    nlohmann::json brackets = nlohmann::json::array();
    for (const auto& b : s.brackets) brackets.push_back({b.lo, b.hi});
    return {{"lambda_bar", s.lambda_bar},  {"alpha", {s.alpha1, s.alpha2, s.alpha3}},
            {"gamma_bar", s.gamma_bar},    {"branch", to_string(s.branch)},
            {"epsilon_used", s.epsilon_used}, {"right_edge", s.right_edge},
            {"g", {s.g[0], s.g[1], s.g[2]}}, {"brackets", brackets}};
}

[[nodiscard]] inline SummaryStats summary_from_json(const nlohmann::json& j) {
    SummaryStats s;
    s.lambda_bar = j.at("lambda_bar").get<double>();
    s.alpha1 = j.at("alpha").at(0).get<double>();
    s.alpha2 = j.at("alpha").at(1).get<double>();
    s.alpha3 = j.at("alpha").at(2).get<double>();
    s.gamma_bar = j.at("gamma_bar").get<double>();
    const auto b = j.at("branch").get<std::string>();
    if (b == "outside-support") s.branch = Branch::outside_support;
    else if (b == "epsilon-regularized") s.branch = Branch::epsilon_regularized;
    else throw InvalidArgument("summary_from_json: unknown branch '" + b + "'");
    s.epsilon_used = j.at("epsilon_used").get<double>();
    s.right_edge = j.value("right_edge", 0.0);
    if (j.contains("g"))
        for (std::size_t i = 0; i < 3; ++i) s.g[i] = j.at("g").at(i).get<double>();
    if (j.contains("brackets"))
        for (const auto& br : j.at("brackets")) s.brackets.push_back({br.at(0).get<double>(), br.at(1).get<double>()});
    return s;
}

inline void write_csv(const SpectrumCurve& c, std::ostream& os) {
    os << "x,density,valid\n";
    char buf[96];
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d\n", c.grid[i], c.density[i], c.valid[i] ? 1 : 0);
        os << buf;
    }
}

}  // namespace nmt
