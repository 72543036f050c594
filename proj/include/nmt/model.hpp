#pragma once

// Seeded generators for the nested matrix-tensor model
//
//   M = beta_M x y^T + Z / sqrt(n1 + n2),          Z_ij  ~ N(0, sigma_M2)
//   T = beta_T M ⊗ z + W / sqrt(n1 + n2 + n3),     W_ijk ~ N(0, sigma_T2)
//
// and for the multi-view clustering tensor X = (mu ybar^T + Z) ⊗ h + W, which
// is generated by mapping onto the nested model.
//
// Random streams (children of Rng(seed)):
//   split(0)  planted signals x, y, z (in that order) when not supplied
//   split(1)  Z, column-major
//   split(2)  W, storage order of Tensor3
//   split(10) multi-view mean direction, split(11) multi-view labels

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nmt/config.hpp"
#include "nmt/error.hpp"
#include "nmt/rng.hpp"
#include "nmt/tensor3.hpp"

namespace nmt {

struct Vec3Signals {
    Vec x, y, z;

    void validate(const Dims& dims) const {
        if (x.size() != dims[0] || y.size() != dims[1] || z.size() != dims[2]) {
            throw DimensionMismatch("Vec3Signals: signal lengths do not match (n1, n2, n3)");
        }
        for (const Vec* s : {&x, &y, &z}) {
            if (std::abs(s->norm() - 1.0) > 1e-12) throw InvalidArgument("Vec3Signals: signals must have unit norm");
        }
    }
};

struct NestedParams {
    Eigen::Index n1 = 0, n2 = 0, n3 = 0;
    double beta_T = 0.0;
    double beta_M = 0.0;
    double sigma_T2 = 1.0;
    double sigma_M2 = 1.0;
    std::optional<Vec3Signals> signals;
    std::uint64_t seed = 0;

    [[nodiscard]] Dims dims() const noexcept { return {n1, n2, n3}; }
    [[nodiscard]] Eigen::Index n_M() const noexcept { return n1 + n2; }
    [[nodiscard]] Eigen::Index n_T() const noexcept { return n1 + n2 + n3; }

    void validate() const {
        if (n1 <= 0 || n2 <= 0 || n3 <= 0) throw InvalidArgument("NestedParams: dimensions must be positive");
        if (!(beta_T >= 0.0) || !(beta_M >= 0.0)) throw InvalidArgument("NestedParams: SNRs must be nonnegative");
        if (!(sigma_T2 > 0.0) || !(sigma_M2 > 0.0)) throw InvalidArgument("NestedParams: variances must be positive");
        if (signals) signals->validate(dims());
    }
};

/// Raw Gaussian draws before the 1/sqrt(n) scalings (entries ~ N(0, sigma^2)).
struct NoiseDraws {
    Mat Z;
    Tensor3 W;
};

struct NestedSample {
    Tensor3 T;
    Mat M;
    Vec3Signals signals;
    std::optional<NoiseDraws> noise;
};

enum class GenMode {
    plain,
    oracle,  ///< also retain Z and W for noise/signal decompositions
};

/// Planted signals used for `p`: the supplied ones, or uniform draws on the
/// spheres from the seed.
[[nodiscard]] inline Vec3Signals resolve_signals(const NestedParams& p) {
    if (p.signals) return *p.signals;
    Rng rng = Rng(p.seed).split(0);
    Vec3Signals s;
    s.x = rng.unit_vector(p.n1);
    s.y = rng.unit_vector(p.n2);
    s.z = rng.unit_vector(p.n3);
    return s;
}

[[nodiscard]] inline NestedSample gen_nested(const NestedParams& p, GenMode mode = GenMode::plain) {
    p.validate();
    NestedSample out;
    out.signals = resolve_signals(p);
    const auto& [x, y, z] = out.signals;

    const Rng root(p.seed);
    Rng zrng = root.split(1);
    const double sM = std::sqrt(p.sigma_M2);
    Mat Z(p.n1, p.n2);
    for (Eigen::Index j = 0; j < p.n2; ++j)
        for (Eigen::Index i = 0; i < p.n1; ++i) Z(i, j) = sM * zrng.gaussian();

    Rng wrng = root.split(2);
    const double sT = std::sqrt(p.sigma_T2);
    Tensor3 W(p.dims());
    for (double& e : W.data()) e = sT * wrng.gaussian();

    out.M = p.beta_M * (x * y.transpose()) + Z / std::sqrt(static_cast<double>(p.n_M()));

    const double wscale = 1.0 / std::sqrt(static_cast<double>(p.n_T()));
    out.T = Tensor3(p.dims());
    for (Eigen::Index k = 0; k < p.n3; ++k) {
        out.T.slice(k) = (p.beta_T * z[k]) * out.M + wscale * W.slice(k);
    }
    if (mode == GenMode::oracle) out.noise = NoiseDraws{std::move(Z), std::move(W)};
    return out;
}

// ---------------------------------------------------------------------------
// Multi-view model
// ---------------------------------------------------------------------------

struct MultiViewParams {
    Eigen::Index p = 0, n = 0, m = 0;
    Vec mu;                 ///< length p; its norm is the class separability
    Vec h;                  ///< length m, nonnegative
    std::vector<int> labels;  ///< length n, entries in {-1, +1}
    std::uint64_t seed = 0;

    void validate() const {
        if (p <= 0 || n <= 0 || m <= 0) throw InvalidArgument("MultiViewParams: dimensions must be positive");
        if (mu.size() != p) throw DimensionMismatch("MultiViewParams: mu must have length p");
        if (h.size() != m) throw DimensionMismatch("MultiViewParams: h must have length m");
        if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionMismatch("MultiViewParams: need n labels");
        for (int l : labels)
            if (l != 1 && l != -1) throw InvalidArgument("MultiViewParams: labels must be -1 or +1");
        for (Eigen::Index k = 0; k < m; ++k)
            if (!(h[k] >= 0.0)) throw InvalidArgument("MultiViewParams: h must be nonnegative");
    }

    /// ybar = y / sqrt(n).
    [[nodiscard]] Vec ybar() const {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = labels[static_cast<std::size_t>(i)];
        return v / std::sqrt(static_cast<double>(n));
    }
};

/// Convenience constructor: random mean direction and labels from `seed`,
/// equal view weights h_k = h_norm / sqrt(m).
[[nodiscard]] inline MultiViewParams make_multiview(Eigen::Index p, Eigen::Index n, Eigen::Index m, double mu_norm,
                                                    double h_norm, std::uint64_t seed) {
    if (p <= 0 || n <= 0 || m <= 0) throw InvalidArgument("make_multiview: dimensions must be positive");
    if (!(mu_norm >= 0.0) || !(h_norm >= 0.0)) throw InvalidArgument("make_multiview: norms must be nonnegative");
    MultiViewParams mv;
    mv.p = p;
    mv.n = n;
    mv.m = m;
    mv.seed = seed;
    const Rng root(seed);
    Rng dir = root.split(10);
    mv.mu = mu_norm * dir.unit_vector(p);
    Rng lab = root.split(11);
    mv.labels.resize(static_cast<std::size_t>(n));
    for (int& l : mv.labels) l = lab.sign();
    mv.h = Vec::Constant(m, h_norm / std::sqrt(static_cast<double>(m)));
    return mv;
}

/// Nested-model parameters equivalent to `mv`: beta_M = |mu|, beta_T = |h|,
/// x = mu/|mu|, y = ybar, z = h/|h|, unit variances. A zero mu or h becomes
/// a zero SNR with the first basis vector as placeholder direction.
[[nodiscard]] inline NestedParams to_nested(const MultiViewParams& mv) {
    mv.validate();
    NestedParams p;
    p.n1 = mv.p;
    p.n2 = mv.n;
    p.n3 = mv.m;
    p.seed = mv.seed;
    p.beta_M = mv.mu.norm();
    p.beta_T = mv.h.norm();
    Vec3Signals s;
    s.x = p.beta_M > 0.0 ? Vec(mv.mu / p.beta_M) : Vec(Vec::Unit(mv.p, 0));
    s.y = mv.ybar();
    s.z = p.beta_T > 0.0 ? Vec(mv.h / p.beta_T) : Vec(Vec::Unit(mv.m, 0));
    // Renormalize so the 1e-12 unit-norm invariant survives rounding.
    s.x.normalize();
    s.y.normalize();
    s.z.normalize();
    p.signals = std::move(s);
    return p;
}

[[nodiscard]] inline NestedSample gen_multiview_sample(const MultiViewParams& mv, GenMode mode = GenMode::plain) {
    return gen_nested(to_nested(mv), mode);
}

[[nodiscard]] inline Tensor3 gen_multiview(const MultiViewParams& mv) { return gen_multiview_sample(mv).T; }

// ---------------------------------------------------------------------------
// key = value serialization
//
// Nested: n1 n2 n3 beta_T beta_M sigma_T2 sigma_M2 seed [signal_x signal_y signal_z]
// Multi-view: p n m seed mu h labels      (vectors as comma-separated lists)
// ---------------------------------------------------------------------------

namespace detail {
inline std::string join(const Vec& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        s += format_double(v[i]);
    }
    return s;
}
inline Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }
}  // namespace detail

[[nodiscard]] inline KeyValueConfig to_config(const NestedParams& p) {
    KeyValueConfig c;
    c.set("n1", static_cast<double>(p.n1));
    c.set("n2", static_cast<double>(p.n2));
    c.set("n3", static_cast<double>(p.n3));
    c.set("beta_T", p.beta_T);
    c.set("beta_M", p.beta_M);
    c.set("sigma_T2", p.sigma_T2);
    c.set("sigma_M2", p.sigma_M2);
    c.set("seed", std::to_string(p.seed));
    if (p.signals) {
        c.set("signal_x", detail::join(p.signals->x));
        c.set("signal_y", detail::join(p.signals->y));
        c.set("signal_z", detail::join(p.signals->z));
    }
    return c;
}

[[nodiscard]] inline NestedParams nested_from_config(const KeyValueConfig& c) {
    NestedParams p;
    p.n1 = static_cast<Eigen::Index>(c.get_int("n1"));
    p.n2 = static_cast<Eigen::Index>(c.get_int("n2"));
    p.n3 = static_cast<Eigen::Index>(c.get_int("n3"));
    p.beta_T = c.get_double("beta_T");
    p.beta_M = c.get_double("beta_M");
    p.sigma_T2 = c.get_double("sigma_T2", 1.0);
    p.sigma_M2 = c.get_double("sigma_M2", 1.0);
    p.seed = c.get_u64("seed", 0);
    const int given = int(c.has("signal_x")) + int(c.has("signal_y")) + int(c.has("signal_z"));
    if (given == 3) {
        p.signals = Vec3Signals{detail::to_vec(c.get_list("signal_x")), detail::to_vec(c.get_list("signal_y")),
                                detail::to_vec(c.get_list("signal_z"))};
    } else if (given != 0) {
        throw InvalidArgument("config: signal_x, signal_y, signal_z must be given together");
    }
    p.validate();
    return p;
}

[[nodiscard]] inline KeyValueConfig to_config(const MultiViewParams& mv) {
    KeyValueConfig c;
    c.set("p", static_cast<double>(mv.p));
    c.set("n", static_cast<double>(mv.n));
    c.set("m", static_cast<double>(mv.m));
    c.set("seed", std::to_string(mv.seed));
    c.set("mu", detail::join(mv.mu));
    c.set("h", detail::join(mv.h));
    std::string labels;
    for (std::size_t i = 0; i < mv.labels.size(); ++i) labels += (i ? ", " : "") + std::to_string(mv.labels[i]);
    c.set("labels", labels);
    return c;
}

[[nodiscard]] inline MultiViewParams multiview_from_config(const KeyValueConfig& c) {
    MultiViewParams mv;
    mv.p = static_cast<Eigen::Index>(c.get_int("p"));
    mv.n = static_cast<Eigen::Index>(c.get_int("n"));
    mv.m = static_cast<Eigen::Index>(c.get_int("m"));
    mv.seed = c.get_u64("seed", 0);
    mv.mu = detail::to_vec(c.get_list("mu"));
    mv.h = detail::to_vec(c.get_list("h"));
    for (double l : c.get_list("labels")) mv.labels.push_back(static_cast<int>(l));
    mv.validate();
    return mv;
}

}  // namespace nmt
