#pragma once

// Experiment runners behind the nmtlab command line.
//
// A run is described by a key = value file (see configs/) plus overrides.
// Every CSV starts with one comment line
//   # nmtlab <version> config=<fnv1a64 hex> generator=<name>/<version> kind=<kind>
// followed by a mandatory header row. The config hash covers the canonical
// config text minus `out` and `workers`, so it identifies the computation.
// Keys starting with `tol_` declare tolerances; the run fails (nonzero exit in
// the CLI) iff one of them is violated.
//
// Work is split into (cell, seed) tasks run by a bounded worker pool. Every
// task writes into its own slot and all aggregation walks the slots in cell
// then seed order, so outputs do not depend on the worker count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nmt/config.hpp"
#include "nmt/error.hpp"
#include "nmt/model.hpp"
#include "nmt/mvclust.hpp"
#include "nmt/rank_one.hpp"
#include "nmt/rmt_theory.hpp"
#include "nmt/rng.hpp"
#include "nmt/spectral_lab.hpp"

#ifndef NMT_VERSION
#define NMT_VERSION "0.1.0"
#endif

namespace nmt {

inline constexpr const char* kVersion = NMT_VERSION;

enum class ExperimentKind { spectrum, stats_sweep, cluster_sweep, gaussianity, spike_check };

[[nodiscard]] inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::spectrum: return "spectrum";
        case ExperimentKind::stats_sweep: return "stats-sweep";
        case ExperimentKind::cluster_sweep: return "cluster-sweep";
        case ExperimentKind::gaussianity: return "gaussianity";
        case ExperimentKind::spike_check: return "spike-check";
    }
    return "?";
}

[[nodiscard]] inline ExperimentKind parse_kind(const std::string& s) {
    for (auto k : {ExperimentKind::spectrum, ExperimentKind::stats_sweep, ExperimentKind::cluster_sweep,
                   ExperimentKind::gaussianity, ExperimentKind::spike_check}) {
        if (s == to_string(k)) return k;
    }
    throw InvalidArgument("unknown experiment kind '" + s + "'");
}

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::spectrum;
    KeyValueConfig kv;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;  ///< empty: keep results in memory only
    unsigned workers = 1;

    /// `kind` must be present in `kv` unless given explicitly.
    static ExperimentConfig from(KeyValueConfig kv, std::optional<ExperimentKind> kind = std::nullopt) {
        ExperimentConfig c;
        if (kind) kv.set("kind", to_string(*kind));
        c.kind = parse_kind(kv.get_string("kind"));
        c.out_dir = kv.get_string("out", "");
        const long long w = kv.get_int("workers", 1);
        if (w < 1) throw InvalidArgument("config: workers must be >= 1");
        c.workers = static_cast<unsigned>(w);
        for (double s : kv.get_list("seeds", {0.0})) {
            if (s < 0.0 || s != std::floor(s) || s > 9.007199254740992e15) {
                throw InvalidArgument("config: seeds must be nonnegative integers");
            }
            c.seeds.push_back(static_cast<std::uint64_t>(s));
        }
        if (c.seeds.empty()) throw InvalidArgument("config: seed list is empty");
        if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
            throw InvalidArgument("config: seeds must be distinct");
        }
        c.kv = std::move(kv);
        return c;
    }

    [[nodiscard]] std::uint64_t hash() const {
        KeyValueConfig h;
        for (const auto& [k, v] : kv.entries())
            if (k != "out" && k != "workers") h.set(k, v);
        return fnv1a64(h.canonical());
    }

    [[nodiscard]] std::optional<double> tolerance(const std::string& name) const { return kv.get_optional("tol_" + name); }
};

struct ToleranceCheck {
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    bool below = true;  ///< pass iff value < limit (else value > limit)
    bool passed = false;
    std::string where;
};

struct RunReport {
    ExperimentKind kind = ExperimentKind::spectrum;
    std::vector<std::string> files;
    std::vector<ToleranceCheck> checks;
    std::vector<std::string> errors;  ///< per-cell failures; the run continues
    nlohmann::json summary;

    [[nodiscard]] bool ok() const {
        return std::all_of(checks.begin(), checks.end(), [](const ToleranceCheck& c) { return c.passed; });
    }
};

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string header_line(const ExperimentConfig& cfg) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "# nmtlab %s config=%016llx generator=%s/%d kind=%s\n", kVersion,
                  static_cast<unsigned long long>(cfg.hash()), kGeneratorName, kGeneratorVersion, to_string(cfg.kind));
    return buf;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// rethrown after all tasks finish, lowest index first.
template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& fn) {
    std::vector<std::exception_ptr> errs(n);
    const auto run = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errs[i] = std::current_exception();
        }
    };
    const unsigned w = static_cast<unsigned>(std::min<std::size_t>(std::max(1U, workers), std::max<std::size_t>(n, 1)));
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < w; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < n;) run(i);
            });
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

inline std::string what_of(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const std::exception& ex) {
        return ex.what();
    } catch (...) {
        return "unknown error";
    }
}

/// Runs every task, capturing failures per task instead of aborting.
template <class F>
std::vector<std::optional<std::string>> run_tasks(std::size_t n, unsigned workers, F&& fn) {
    std::vector<std::optional<std::string>> failures(n);
    parallel_for(n, workers, [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            failures[i] = what_of(std::current_exception());
        }
    });
    return failures;
}

class OutputSet {
public:
    OutputSet(const ExperimentConfig& cfg, RunReport& rep) : cfg_(cfg), rep_(rep) {
        if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
    }

    /// CSV with the provenance comment line prepended.
    void csv(const std::string& name, const std::string& header, const std::string& body) {
        write(name, header_line(cfg_) + header + "\n" + body);
    }

    void json(const std::string& name, nlohmann::json j) {
        j["version"] = kVersion;
        char hash[24];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cfg_.hash()));
        j["config_hash"] = hash;
        j["generator"] = std::string(kGeneratorName) + "/" + std::to_string(kGeneratorVersion);
        j["kind"] = to_string(cfg_.kind);
        write(name, j.dump(2) + "\n");
    }

private:
    void write(const std::string& name, const std::string& text) {
        if (cfg_.out_dir.empty()) return;
        const auto path = (std::filesystem::path(cfg_.out_dir) / name).string();
        std::ofstream os(path, std::ios::binary);
        if (!os) throw InvalidArgument("cannot write " + path);
        os << text;
        rep_.files.push_back(path);
    }

    const ExperimentConfig& cfg_;
    RunReport& rep_;
};

inline void check(RunReport& rep, const ExperimentConfig& cfg, const std::string& name, double value, bool below,
                  const std::string& where = {}) {
    const auto lim = cfg.tolerance(name);
    if (!lim) return;
    const bool pass = below ? value < *lim : value > *lim;
    rep.checks.push_back({name, value, *lim, below, pass, where});
}

/// A failed cell cannot be checked, so it fails the run when any tolerance
/// is declared.
inline void flag_failures(RunReport& rep, const ExperimentConfig& cfg) {
    if (rep.errors.empty()) return;
    const auto& e = cfg.kv.entries();
    if (std::any_of(e.begin(), e.end(), [](const auto& kv) { return kv.first.rfind("tol_", 0) == 0; })) {
        rep.checks.push_back({"failed_cells", static_cast<double>(rep.errors.size()), 0.0, true, false, ""});
    }
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

inline std::vector<Eigen::Index> dim_list(const KeyValueConfig& kv, const std::string& key) {
    std::vector<Eigen::Index> out;
    for (double v : kv.get_list(key)) {
        if (v != std::floor(v) || v <= 0.0) throw InvalidArgument("config: " + key + " entries must be positive integers");
        out.push_back(static_cast<Eigen::Index>(v));
    }
    if (out.empty()) throw InvalidArgument("config: " + key + " is empty");
    return out;
}

inline std::vector<double> nonempty_list(const KeyValueConfig& kv, const std::string& key) {
    auto v = kv.get_list(key);
    if (v.empty()) throw InvalidArgument("config: grid '" + key + "' is empty");
    return v;
}

inline PowerOptions power_options(const KeyValueConfig& kv) {
    return {kv.get_double("power_tol", 1e-10), static_cast<int>(kv.get_int("max_iter", 1000))};
}

inline InitStrategy init_strategy(const KeyValueConfig& kv) {
    InitStrategy s;
    const auto name = kv.get_string("init", "hosvd");
    if (name == "random") s.kind = InitStrategy::Kind::random;
    else if (name != "hosvd") throw InvalidArgument("config: init must be hosvd or random");
    s.restarts = static_cast<int>(kv.get_int("restarts", 0));
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// spectrum / spike-check
//
// Keys: n1 n2 n3 (equal-length lists, one entry per setting), beta_T, beta_M,
// sigma_T2, sigma_M2, grid_points, epsilon, outlier_margin.
// Tolerances: tol_kd, tol_kd_H, tol_spike_top, tol_spike_neg,
// tol_spike_residual, tol_decomposition.
// ---------------------------------------------------------------------------

struct SpectrumSeedResult {
    double lambda = 0.0;
    double top = 0.0;
    std::array<double, 2> bottom{};
    std::array<double, 3> residuals{};
    double decomposition = 0.0;  ///< max |Phi - H - L|
    double kd_phi = 0.0, kd_H = 0.0;
    int outliers = 0;           ///< distinct outlier positions
    int outlier_count = 0;      ///< with multiplicity
    bool converged = false;
    int iterations = 0;
    EmpiricalSpectrum phi, H;
};

[[nodiscard]] inline RunReport run_spectrum(const ExperimentConfig& cfg) {
    if (cfg.kind != ExperimentKind::spectrum && cfg.kind != ExperimentKind::spike_check) {
        throw InvalidArgument("run_spectrum: config kind is " + std::string(to_string(cfg.kind)));
    }
    const bool full = cfg.kind == ExperimentKind::spectrum;
    const auto& kv = cfg.kv;
    const auto n1s = detail::dim_list(kv, "n1"), n2s = detail::dim_list(kv, "n2"), n3s = detail::dim_list(kv, "n3");
    if (n1s.size() != n2s.size() || n1s.size() != n3s.size()) throw InvalidArgument("config: n1, n2, n3 lists differ in length");
    NestedParams base;
    base.beta_T = kv.get_double("beta_T");
    base.beta_M = kv.get_double("beta_M");
    base.sigma_T2 = kv.get_double("sigma_T2", 1.0);
    base.sigma_M2 = kv.get_double("sigma_M2", 1.0);
    std::vector<NestedParams> settings;
    for (std::size_t s = 0; s < n1s.size(); ++s) {
        NestedParams p = base;
        p.n1 = n1s[s];
        p.n2 = n2s[s];
        p.n3 = n3s[s];
        p.validate();
        settings.push_back(p);
    }
    const auto grid_points = static_cast<std::size_t>(kv.get_int("grid_points", 2001));
    DensityOptions dopt;
    dopt.epsilon = kv.get_double("epsilon", 1e-5);
    OutlierOptions oopt;
    oopt.margin = kv.get_double("outlier_margin", 0.05);
    const auto init = detail::init_strategy(kv);
    const auto popt = detail::power_options(kv);

    RunReport rep;
    rep.kind = cfg.kind;
    detail::OutputSet out(cfg, rep);

    // Theory per setting.
    struct Theory {
        SummaryStats stats;
        SpectrumCurve curve;
    };
    std::vector<std::optional<Theory>> theory(settings.size());
    const auto tfail = detail::run_tasks(settings.size(), cfg.workers, [&](std::size_t s) {
        const auto& p = settings[s];
        const auto lp = LimitParams::from_dims(static_cast<double>(p.n1), static_cast<double>(p.n2),
                                               static_cast<double>(p.n3), p.beta_T, p.beta_M, p.sigma_T2, p.sigma_M2);
        Theory t;
        t.stats = compute_summary_stats(lp);
        const double half = std::max(default_scan_range(lp).hi, 2.5 * t.stats.lambda_bar);
        t.curve = density(lp, linspace(-half, half, grid_points), t.stats, dopt);
        theory[s] = std::move(t);
    });
    for (std::size_t s = 0; s < settings.size(); ++s)
        if (tfail[s]) rep.errors.push_back("setting " + std::to_string(s) + " theory: " + *tfail[s]);

    const std::size_t ns = cfg.seeds.size();
    std::vector<std::optional<SpectrumSeedResult>> res(settings.size() * ns);
    const auto sfail = detail::run_tasks(res.size(), cfg.workers, [&](std::size_t idx) {
        const std::size_t s = idx / ns;
        if (!theory[s]) throw SolverError("no theory for this setting");
        NestedParams p = settings[s];
        p.seed = cfg.seeds[idx % ns];
        const auto sample = gen_nested(p, GenMode::oracle);
        InitStrategy in = init;
        in.seed = p.seed;
        const auto fit = power_iteration(sample.T, in, popt);
        const auto phi = build_phi(sample.T, fit);
        const auto H = build_H(p, sample, fit);
        const auto L = build_L(p, sample, fit);
        SpectrumSeedResult r;
        r.lambda = fit.lambda;
        r.converged = fit.converged;
        r.iterations = fit.iterations;
        r.decomposition = (phi.S - H.S - L.S).cwiseAbs().maxCoeff();
        r.residuals = spike_residuals(phi, fit);
        r.phi = eig_spectrum(phi, theory[s]->curve.support, oopt);
        r.H = eig_spectrum(H, theory[s]->curve.support, oopt);
        r.top = r.phi.eigenvalues.back();
        r.bottom = {r.phi.eigenvalues[0], r.phi.eigenvalues[1]};
        r.outliers = static_cast<int>(r.phi.outliers.size());
        for (const auto& o : r.phi.outliers) r.outlier_count += o.multiplicity;
        r.kd_phi = kolmogorov_distance(r.phi.bulk, theory[s]->curve);
        r.kd_H = kolmogorov_distance(r.H.bulk, theory[s]->curve);
        res[idx] = std::move(r);
    });
    for (std::size_t i = 0; i < res.size(); ++i)
        if (sfail[i]) {
            rep.errors.push_back("setting " + std::to_string(i / ns) + " seed " + std::to_string(cfg.seeds[i % ns]) +
                                 ": " + *sfail[i]);
        }

    std::ostringstream eigs, dens, spikes;
    nlohmann::json jsettings = nlohmann::json::array();
    nlohmann::json jspikes = nlohmann::json::array();
    double kd_max = 0.0, kdH_max = 0.0, res_max = 0.0, dec_max = 0.0, top_err_max = 0.0, neg_err_max = 0.0;
    for (std::size_t s = 0; s < settings.size(); ++s) {
        const auto& p = settings[s];
        nlohmann::json js = {{"setting", s}, {"n1", p.n1}, {"n2", p.n2}, {"n3", p.n3}};
        if (!theory[s]) {
            js["error"] = *tfail[s];
            jsettings.push_back(js);
            continue;
        }
        const auto& th = *theory[s];
        const double lb = th.stats.lambda_bar;
        js["theory"] = to_json(th.stats);
        nlohmann::json sup = nlohmann::json::array();
        for (const auto& I : th.curve.support) sup.push_back({I.lo, I.hi});
        js["support"] = sup;
        js["density_mass"] = th.curve.mass();
        jspikes.push_back({{"setting", s}, {"lambda_bar", lb}, {"spikes", {{{"value", 2 * lb}, {"multiplicity", 1}},
                                                                            {{"value", -lb}, {"multiplicity", 2}}}}});
        if (full) {
            for (std::size_t i = 0; i < th.curve.grid.size(); ++i) {
                dens << s << ',' << detail::fmt(th.curve.grid[i]) << ',' << detail::fmt(th.curve.density[i]) << ','
                     << (th.curve.valid[i] ? 1 : 0) << '\n';
            }
        }
        std::vector<double> tops, negs;
        nlohmann::json jseeds = nlohmann::json::array();
        for (std::size_t k = 0; k < ns; ++k) {
            const auto& r = res[s * ns + k];
            const auto seed = cfg.seeds[k];
            if (!r) continue;
            if (full) {
                for (const auto* spec : {&r->phi, &r->H}) {
                    const char* name = spec == &r->phi ? "phi" : "H";
                    std::size_t b = 0;
                    for (std::size_t i = 0; i < spec->eigenvalues.size(); ++i) {
                        const double e = spec->eigenvalues[i];
                        const bool bulk = b < spec->bulk.size() && spec->bulk[b] == e;
                        if (bulk) ++b;
                        eigs << s << ',' << seed << ',' << name << ',' << i << ',' << detail::fmt(e) << ','
                             << (bulk ? 0 : 1) << '\n';
                    }
                }
            }
            const double neg = 0.5 * (r->bottom[0] + r->bottom[1]);
            tops.push_back(r->top);
            negs.push_back(neg);
            const double rmax = std::max({r->residuals[0], r->residuals[1], r->residuals[2]});
            spikes << s << ',' << seed << ',' << detail::fmt(r->lambda) << ',' << (r->converged ? 1 : 0) << ','
                   << r->iterations << ',' << detail::fmt(r->top) << ',' << detail::fmt(r->bottom[0]) << ','
                   << detail::fmt(r->bottom[1]) << ',' << detail::fmt(2 * lb) << ',' << detail::fmt(-lb) << ','
                   << detail::fmt(rmax) << ',' << detail::fmt(r->decomposition) << ',' << r->outliers << ','
                   << detail::fmt(r->kd_phi) << ',' << detail::fmt(r->kd_H) << '\n';
            kd_max = std::max(kd_max, r->kd_phi);
            kdH_max = std::max(kdH_max, r->kd_H);
            res_max = std::max(res_max, rmax);
            dec_max = std::max(dec_max, r->decomposition);
            top_err_max = std::max(top_err_max, std::abs(r->top / (2 * lb) - 1.0));
            neg_err_max = std::max(neg_err_max, std::abs(neg / (-lb) - 1.0));
            jseeds.push_back({{"seed", seed}, {"lambda", r->lambda}, {"top", r->top}, {"bottom", r->bottom},
                              {"outliers", r->outliers}, {"outlier_count", r->outlier_count},
                              {"kd_phi", r->kd_phi}, {"kd_H", r->kd_H}, {"spike_residual", rmax},
                              {"decomposition", r->decomposition}, {"converged", r->converged}});
        }
        const double top_rel = std::abs(detail::mean(tops) / (2 * lb) - 1.0);
        const double neg_rel = std::abs(detail::mean(negs) / (-lb) - 1.0);
        js["seeds"] = jseeds;
        js["mean_top"] = detail::mean(tops);
        js["mean_negative"] = detail::mean(negs);
        js["mean_top_rel_error"] = top_rel;
        js["mean_negative_rel_error"] = neg_rel;
        jsettings.push_back(js);
        const std::string where = "setting " + std::to_string(s);
        detail::check(rep, cfg, "spike_top", top_rel, true, where);
        detail::check(rep, cfg, "spike_neg", neg_rel, true, where);
    }
    detail::check(rep, cfg, "kd", kd_max, true);
    detail::check(rep, cfg, "kd_H", kdH_max, true);
    detail::check(rep, cfg, "spike_residual", res_max, true);
    detail::check(rep, cfg, "decomposition", dec_max, true);
    detail::flag_failures(rep, cfg);

    rep.summary = {{"settings", jsettings},  {"max_kd_phi", kd_max},       {"max_kd_H", kdH_max},
                   {"max_spike_residual", res_max}, {"max_decomposition", dec_max},
                   {"max_seed_top_rel_error", top_err_max}, {"max_seed_negative_rel_error", neg_err_max},
                   {"errors", rep.errors}};
    const std::string prefix = full ? "spectrum" : "spike_check";
    out.csv(prefix + "_spikes.csv",
            "setting,seed,lambda,converged,iterations,top,bottom1,bottom2,pred_top,pred_negative,spike_residual,"
            "decomposition,outliers,kd_phi,kd_H",
            spikes.str());
    if (full) {
        out.csv("spectrum_eigenvalues.csv", "setting,seed,matrix,index,eigenvalue,outlier", eigs.str());
        out.csv("spectrum_density.csv", "setting,x,density,valid", dens.str());
        out.json("spectrum_prediction.json", {{"settings", jspikes}});
    }
    out.json(prefix + "_summary.json", rep.summary);
    return rep;
}

// ---------------------------------------------------------------------------
// stats-sweep
//
// Keys: n1 n2 n3, beta_T, beta_M (grid), sigma_T2, sigma_M2, theory_only,
// check_min_beta_M, epsilon_fallback.
// Tolerances: tol_alpha (|mean emp - theory| where beta_M >= check_min_beta_M),
// tol_below_alpha12 (emp alpha1, alpha2 below the transition), tol_below_alpha3,
// tol_jump_max / tol_jump_min (largest adjacent jump of theory alpha2, and of
// alpha1 for tol_jump_min).
// Below the transition means branch = epsilon-regularized or beta_M = 0.
// ---------------------------------------------------------------------------

struct StatsCell {
    double beta_M = 0.0;
    std::optional<SummaryStats> theory;
    std::vector<std::optional<EmpiricalStats>> emp;  ///< one per seed
    std::vector<int> iterations;
    std::vector<bool> converged;
};

[[nodiscard]] inline RunReport run_stats_sweep(const ExperimentConfig& cfg) {
    if (cfg.kind != ExperimentKind::stats_sweep) throw InvalidArgument("run_stats_sweep: wrong config kind");
    const auto& kv = cfg.kv;
    NestedParams base;
    base.n1 = kv.get_int("n1");
    base.n2 = kv.get_int("n2");
    base.n3 = kv.get_int("n3");
    base.beta_T = kv.get_double("beta_T");
    base.sigma_T2 = kv.get_double("sigma_T2", 1.0);
    base.sigma_M2 = kv.get_double("sigma_M2", 1.0);
    base.validate();
    const auto grid = detail::nonempty_list(kv, "beta_M");
    for (double b : grid)
        if (!(b >= 0.0)) throw InvalidArgument("config: beta_M grid must be nonnegative");
    const bool theory_only = kv.get_int("theory_only", 0) != 0;
    const double check_min = kv.get_double("check_min_beta_M", 1.5);
    SummaryOptions sopt;
    sopt.epsilon_fallback = kv.get_double("epsilon_fallback", 1e-3);
    const auto init = detail::init_strategy(kv);
    const auto popt = detail::power_options(kv);

    RunReport rep;
    rep.kind = cfg.kind;
    detail::OutputSet out(cfg, rep);

    const auto lp0 = LimitParams::from_dims(static_cast<double>(base.n1), static_cast<double>(base.n2),
                                            static_cast<double>(base.n3), base.beta_T, 0.0, base.sigma_T2, base.sigma_M2);
    try {
        // The bulk edge does not depend on beta_M; compute it once.
        sopt.right_edge = compute_summary_stats(lp0, sopt).right_edge;
    } catch (const SolverError& e) {
        rep.errors.push_back(std::string("right edge: ") + e.what());
    }

    std::vector<StatsCell> cells(grid.size());
    const std::size_t ns = theory_only ? 0 : cfg.seeds.size();
    for (std::size_t c = 0; c < grid.size(); ++c) {
        cells[c].beta_M = grid[c];
        cells[c].emp.resize(ns);
        cells[c].iterations.assign(ns, 0);
        cells[c].converged.assign(ns, false);
    }
    const auto tfail = detail::run_tasks(grid.size(), cfg.workers, [&](std::size_t c) {
        LimitParams lp = lp0;
        lp.beta_M = grid[c];
        cells[c].theory = compute_summary_stats(lp, sopt);
    });
    const auto efail = detail::run_tasks(grid.size() * ns, cfg.workers, [&](std::size_t idx) {
        const std::size_t c = idx / ns, k = idx % ns;
        NestedParams p = base;
        p.beta_M = grid[c];
        p.seed = cfg.seeds[k];
        const auto sample = gen_nested(p);
        InitStrategy in = init;
        in.seed = p.seed;
        const auto fit = power_iteration(sample.T, in, popt);
        cells[c].emp[k] = empirical_stats(fit, sample.signals);
        cells[c].iterations[k] = fit.iterations;
        cells[c].converged[k] = fit.converged;
    });
    for (std::size_t c = 0; c < grid.size(); ++c)
        if (tfail[c]) rep.errors.push_back("beta_M " + detail::fmt(grid[c]) + " theory: " + *tfail[c]);
    for (std::size_t i = 0; i < efail.size(); ++i)
        if (efail[i]) {
            rep.errors.push_back("beta_M " + detail::fmt(grid[i / ns]) + " seed " + std::to_string(cfg.seeds[i % ns]) +
                                 ": " + *efail[i]);
        }

    std::ostringstream rows, runs;
    nlohmann::json jcells = nlohmann::json::array();
    double dev_max = 0.0, below12_max = 0.0, below3_max = 0.0;
    bool any_dev = false, any_below = false;
    std::vector<double> a1s, a2s;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const auto& cell = cells[c];
        std::array<std::vector<double>, 4> e;  // lambda, a1, a2, a3
        int conv = 0;
        for (std::size_t k = 0; k < ns; ++k) {
            if (!cell.emp[k]) continue;
            const auto& s = *cell.emp[k];
            e[0].push_back(s.lambda);
            e[1].push_back(s.a1);
            e[2].push_back(s.a2);
            e[3].push_back(s.a3);
            conv += cell.converged[k] ? 1 : 0;
            runs << detail::fmt(base.beta_T) << ',' << detail::fmt(cell.beta_M) << ',' << cfg.seeds[k] << ','
                 << detail::fmt(s.lambda) << ',' << detail::fmt(s.a1) << ',' << detail::fmt(s.a2) << ','
                 << detail::fmt(s.a3) << ',' << cell.iterations[k] << ',' << (cell.converged[k] ? 1 : 0) << '\n';
        }
        const double nan = std::nan("");
        const auto& th = cell.theory;
        rows << detail::fmt(base.beta_T) << ',' << detail::fmt(cell.beta_M) << ','
             << (th ? to_string(th->branch) : "failed") << ',' << detail::fmt(th ? th->lambda_bar : nan) << ','
             << detail::fmt(th ? th->alpha1 : nan) << ',' << detail::fmt(th ? th->alpha2 : nan) << ','
             << detail::fmt(th ? th->alpha3 : nan);
        for (const auto& v : e) rows << ',' << detail::fmt(detail::mean(v)) << ',' << detail::fmt(detail::stderr_of(v));
        rows << ',' << e[0].size() << ',' << conv << '\n';

        nlohmann::json jc = {{"beta_M", cell.beta_M}, {"n_seeds", e[0].size()}, {"converged", conv}};
        if (th) {
            jc["theory"] = to_json(*th);
            a1s.push_back(th->alpha1);
            a2s.push_back(th->alpha2);
        }
        if (!e[0].empty()) jc["empirical_mean"] = {detail::mean(e[0]), detail::mean(e[1]), detail::mean(e[2]), detail::mean(e[3])};
        jcells.push_back(jc);

        if (!th || e[0].empty()) continue;
        const std::array<double, 3> ta{th->alpha1, th->alpha2, th->alpha3};
        if (cell.beta_M >= check_min) {
            for (std::size_t i = 0; i < 3; ++i) dev_max = std::max(dev_max, std::abs(detail::mean(e[i + 1]) - ta[i]));
            any_dev = true;
        }
        if (th->branch == Branch::epsilon_regularized || cell.beta_M == 0.0) {
            below12_max = std::max({below12_max, detail::mean(e[1]), detail::mean(e[2])});
            below3_max = std::max(below3_max, std::abs(detail::mean(e[3]) - th->alpha3));
            any_below = true;
        }
    }
    const auto max_jump = [](const std::vector<double>& v) {
        double j = 0.0;
        for (std::size_t i = 1; i < v.size(); ++i) j = std::max(j, std::abs(v[i] - v[i - 1]));
        return j;
    };
    const double jump1 = max_jump(a1s), jump2 = max_jump(a2s);
    if (any_dev) detail::check(rep, cfg, "alpha", dev_max, true, "beta_M >= " + detail::fmt(check_min));
    if (any_below) {
        detail::check(rep, cfg, "below_alpha12", below12_max, true, "below transition");
        detail::check(rep, cfg, "below_alpha3", below3_max, true, "below transition");
    }
    detail::check(rep, cfg, "jump_max", jump2, true, "theory alpha2");
    detail::check(rep, cfg, "jump_min", std::max(jump1, jump2), false, "theory alpha1/alpha2");
    detail::flag_failures(rep, cfg);

    rep.summary = {{"beta_T", base.beta_T}, {"cells", jcells}, {"max_alpha_deviation", dev_max},
                   {"max_below_alpha12", below12_max}, {"max_below_alpha3_deviation", below3_max},
                   {"max_jump_alpha1", jump1}, {"max_jump_alpha2", jump2}, {"errors", rep.errors}};
    out.csv("stats_sweep.csv",
            "beta_T,beta_M,branch,lambda_bar,alpha1,alpha2,alpha3,emp_lambda_mean,emp_lambda_se,emp_a1_mean,emp_a1_se,"
            "emp_a2_mean,emp_a2_se,emp_a3_mean,emp_a3_se,n_seeds,n_converged",
            rows.str());
    if (!theory_only) out.csv("stats_sweep_runs.csv", "beta_T,beta_M,seed,lambda,a1,a2,a3,iterations,converged", runs.str());
    out.json("stats_sweep_summary.json", rep.summary);
    return rep;
}

// ---------------------------------------------------------------------------
// cluster-sweep
//
// Keys: p n m, mu_norm (grid), h_norm (grid), check_min_theory.
// Tolerances: tol_accuracy (|tensor mean - theory| where theory accuracy >
// check_min_theory), tol_unfold_margin (unfolding mean - tensor mean).
// ---------------------------------------------------------------------------

[[nodiscard]] inline RunReport run_cluster_sweep(const ExperimentConfig& cfg) {
    if (cfg.kind != ExperimentKind::cluster_sweep) throw InvalidArgument("run_cluster_sweep: wrong config kind");
    const auto& kv = cfg.kv;
    const Eigen::Index p = kv.get_int("p"), n = kv.get_int("n"), m = kv.get_int("m");
    if (p <= 0 || n <= 0 || m <= 0) throw InvalidArgument("config: p, n, m must be positive");
    const auto mus = detail::nonempty_list(kv, "mu_norm");
    const auto hs = detail::nonempty_list(kv, "h_norm");
    for (double v : mus)
        if (!(v >= 0.0)) throw InvalidArgument("config: mu_norm grid must be nonnegative");
    for (double v : hs)
        if (!(v >= 0.0)) throw InvalidArgument("config: h_norm grid must be nonnegative");
    const double check_min = kv.get_double("check_min_theory", 0.55);
    TensorClusterOptions copt{detail::init_strategy(kv), detail::power_options(kv)};

    RunReport rep;
    rep.kind = cfg.kind;
    detail::OutputSet out(cfg, rep);

    struct Cell {
        double mu = 0.0, h = 0.0;
        std::optional<TheoryAccuracy> theory;
    };
    std::vector<Cell> cells;
    for (double h : hs)
        for (double mu : mus) cells.push_back({mu, h, std::nullopt});

    std::map<double, std::optional<double>> edges;  // by h_norm
    for (double h : hs) {
        try {
            edges[h] = compute_summary_stats(LimitParams::from_dims(static_cast<double>(p), static_cast<double>(n),
                                                                    static_cast<double>(m), h, 0.0))
                           .right_edge;
        } catch (const SolverError&) {
            edges[h] = std::nullopt;
        }
    }
    const auto tfail = detail::run_tasks(cells.size(), cfg.workers, [&](std::size_t c) {
        SummaryOptions so;
        so.right_edge = edges[cells[c].h];
        cells[c].theory = theory_accuracy(static_cast<double>(p), static_cast<double>(n), static_cast<double>(m),
                                          cells[c].mu, cells[c].h, so);
    });
    const std::size_t ns = cfg.seeds.size();
    std::vector<std::array<double, 2>> acc(cells.size() * ns, {std::nan(""), std::nan("")});
    std::vector<std::array<double, 2>> loss(cells.size() * ns, {std::nan(""), std::nan("")});
    const auto efail = detail::run_tasks(acc.size(), cfg.workers, [&](std::size_t idx) {
        const auto& cell = cells[idx / ns];
        const auto seed = cfg.seeds[idx % ns];
        const auto mv = make_multiview(p, n, m, cell.mu, cell.h, seed);
        const Tensor3 X = gen_multiview(mv);
        TensorClusterOptions o = copt;
        o.init.seed = seed;
        const auto rt = cluster_tensor(X, &mv.labels, o);
        const auto ru = cluster_unfold(X, &mv.labels);
        acc[idx] = {*rt.accuracy, *ru.accuracy};
        loss[idx] = {*rt.loss01, *ru.loss01};
    });
    for (std::size_t c = 0; c < cells.size(); ++c)
        if (tfail[c]) rep.errors.push_back("cell " + std::to_string(c) + " theory: " + *tfail[c]);
    for (std::size_t i = 0; i < efail.size(); ++i)
        if (efail[i]) rep.errors.push_back("cell " + std::to_string(i / ns) + " seed " + std::to_string(cfg.seeds[i % ns]) + ": " + *efail[i]);

    std::ostringstream rows, summary;
    nlohmann::json jcells = nlohmann::json::array();
    double dev_max = 0.0, margin_max = -1.0;
    bool any_dev = false;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& cell = cells[c];
        const double ta = cell.theory ? cell.theory->accuracy : std::nan("");
        const Branch br = cell.theory ? cell.theory->branch : Branch::outside_support;
        std::array<std::vector<double>, 2> a;
        for (std::size_t k = 0; k < ns; ++k) {
            const std::size_t idx = c * ns + k;
            if (efail[idx]) continue;
            for (int meth = 0; meth < 2; ++meth) {
                ClusterRow r{cfg.seeds[k], p, n, m, cell.mu, cell.h,
                             meth == 0 ? ClusterMethod::tensor : ClusterMethod::unfolding,
                             loss[idx][static_cast<std::size_t>(meth)], acc[idx][static_cast<std::size_t>(meth)], ta, br};
                write_row(r, rows);
                a[static_cast<std::size_t>(meth)].push_back(acc[idx][static_cast<std::size_t>(meth)]);
            }
        }
        const double mt = detail::mean(a[0]), mu_ = detail::mean(a[1]);
        summary << p << ',' << n << ',' << m << ',' << detail::fmt(cell.mu) << ',' << detail::fmt(cell.h) << ','
                << detail::fmt(ta) << ',' << (cell.theory ? to_string(br) : "failed") << ',' << detail::fmt(mt) << ','
                << detail::fmt(detail::stderr_of(a[0])) << ',' << detail::fmt(mu_) << ','
                << detail::fmt(detail::stderr_of(a[1])) << ',' << a[0].size() << '\n';
        jcells.push_back({{"mu_norm", cell.mu}, {"h_norm", cell.h}, {"theory_accuracy", ta},
                          {"branch", cell.theory ? to_string(br) : "failed"}, {"tensor_mean", mt}, {"unfolding_mean", mu_},
                          {"n_seeds", a[0].size()}});
        if (a[0].empty()) continue;
        if (cell.theory && ta > check_min) {
            dev_max = std::max(dev_max, std::abs(mt - ta));
            any_dev = true;
        }
        margin_max = std::max(margin_max, mu_ - mt);
    }
    if (any_dev) detail::check(rep, cfg, "accuracy", dev_max, true, "theory accuracy > " + detail::fmt(check_min));
    detail::check(rep, cfg, "unfold_margin", margin_max, true, "unfolding mean - tensor mean");
    detail::flag_failures(rep, cfg);

    rep.summary = {{"cells", jcells}, {"max_accuracy_deviation", dev_max}, {"max_unfold_minus_tensor", margin_max},
                   {"errors", rep.errors}};
    out.csv("cluster_sweep.csv", kClusterRowHeader, rows.str());
    out.csv("cluster_summary.csv",
            "p,n,m,mu_norm,h_norm,theory_accuracy,branch,tensor_mean,tensor_se,unfolding_mean,unfolding_se,n_seeds",
            summary.str());
    out.json("cluster_summary.json", rep.summary);
    return rep;
}

// ---------------------------------------------------------------------------
// gaussianity
//
// Keys: p n m, mu_norm, h_norm, bins. One report per seed.
// Tolerances: tol_mean_sigmas, tol_variance, tol_qq (defaults 3, 0.1, 0.08
// are always used for the pass flag; declared tolerances also gate the exit).
// ---------------------------------------------------------------------------

[[nodiscard]] inline RunReport run_gaussianity(const ExperimentConfig& cfg) {
    if (cfg.kind != ExperimentKind::gaussianity) throw InvalidArgument("run_gaussianity: wrong config kind");
    const auto& kv = cfg.kv;
    const Eigen::Index p = kv.get_int("p"), n = kv.get_int("n"), m = kv.get_int("m");
    if (p <= 0 || n <= 0 || m <= 0) throw InvalidArgument("config: p, n, m must be positive");
    const double mu = kv.get_double("mu_norm"), h = kv.get_double("h_norm");
    const auto bins = kv.get_int("bins", 40);
    if (bins < 1) throw InvalidArgument("config: bins must be positive");
    GaussianityThresholds th;
    th.mean_sigmas = cfg.tolerance("mean_sigmas").value_or(th.mean_sigmas);
    th.variance = cfg.tolerance("variance").value_or(th.variance);
    th.qq_distance = cfg.tolerance("qq").value_or(th.qq_distance);
    TensorClusterOptions copt{detail::init_strategy(kv), detail::power_options(kv)};

    RunReport rep;
    rep.kind = cfg.kind;
    detail::OutputSet out(cfg, rep);

    const auto theory = theory_accuracy(static_cast<double>(p), static_cast<double>(n), static_cast<double>(m), mu, h);
    const std::size_t ns = cfg.seeds.size();
    std::vector<std::optional<GaussianityReport>> reports(ns);
    std::vector<std::vector<int>> labels(ns);
    std::vector<double> accs(ns, std::nan(""));
    const auto fail = detail::run_tasks(ns, cfg.workers, [&](std::size_t k) {
        const auto mv = make_multiview(p, n, m, mu, h, cfg.seeds[k]);
        TensorClusterOptions o = copt;
        o.init.seed = cfg.seeds[k];
        const auto r = cluster_tensor(gen_multiview(mv), &mv.labels, o);
        reports[k] = gaussianity_check(r.y_hat, mv.labels, theory.alpha, th);
        labels[k] = mv.labels;
        accs[k] = *r.accuracy;
    });
    for (std::size_t k = 0; k < ns; ++k)
        if (fail[k]) rep.errors.push_back("seed " + std::to_string(cfg.seeds[k]) + ": " + *fail[k]);

    const double lo = -5.0, hi = 5.0, width = (hi - lo) / static_cast<double>(bins);
    std::ostringstream res, hist;
    nlohmann::json jseeds = nlohmann::json::array();
    double mean_max = 0.0, var_max = 0.0, qq_max = 0.0;
    std::vector<long> counts(static_cast<std::size_t>(bins), 0);
    long total = 0;
    for (std::size_t k = 0; k < ns; ++k) {
        if (!reports[k]) continue;
        const auto& r = *reports[k];
        for (std::size_t i = 0; i < r.residuals.size(); ++i) {
            res << cfg.seeds[k] << ',' << i << ',' << labels[k][i] << ',' << detail::fmt(r.residuals[i]) << '\n';
            const double b = std::floor((r.residuals[i] - lo) / width);
            if (b >= 0 && b < static_cast<double>(bins)) ++counts[static_cast<std::size_t>(b)];
            ++total;
        }
        jseeds.push_back({{"seed", cfg.seeds[k]}, {"accuracy", accs[k]}, {"mean", r.mean}, {"variance", r.variance},
                          {"skewness", r.skewness}, {"excess_kurtosis", r.excess_kurtosis},
                          {"qq_distance", r.qq_distance}, {"passed", r.passed()}});
        mean_max = std::max(mean_max, std::abs(r.mean) * std::sqrt(static_cast<double>(n)));
        var_max = std::max(var_max, std::abs(r.variance - 1.0));
        qq_max = std::max(qq_max, r.qq_distance);
    }
    for (long b = 0; b < bins; ++b) {
        const double a = lo + static_cast<double>(b) * width, c = a + width, mid = 0.5 * (a + c);
        const double dens = total > 0 ? static_cast<double>(counts[static_cast<std::size_t>(b)]) / (static_cast<double>(total) * width) : 0.0;
        hist << detail::fmt(a) << ',' << detail::fmt(c) << ',' << counts[static_cast<std::size_t>(b)] << ','
             << detail::fmt(dens) << ',' << detail::fmt(std::exp(-0.5 * mid * mid) / std::sqrt(2.0 * std::numbers::pi))
             << '\n';
    }
    detail::check(rep, cfg, "mean_sigmas", mean_max, true, "|mean| * sqrt(n)");
    detail::check(rep, cfg, "variance", var_max, true, "|variance - 1|");
    detail::check(rep, cfg, "qq", qq_max, true, "normal quantile distance");
    detail::flag_failures(rep, cfg);

    rep.summary = {{"alpha", theory.alpha}, {"theory_accuracy", theory.accuracy}, {"branch", to_string(theory.branch)},
                   {"seeds", jseeds}, {"max_abs_mean_sqrt_n", mean_max}, {"max_variance_deviation", var_max},
                   {"max_qq_distance", qq_max},
                   {"thresholds", {{"mean_sigmas", th.mean_sigmas}, {"variance", th.variance}, {"qq", th.qq_distance}}},
                   {"errors", rep.errors}};
    out.csv("gaussianity_residuals.csv", "seed,index,label,residual", res.str());
    out.csv("gaussianity_histogram.csv", "bin_lo,bin_hi,count,density,normal_density", hist.str());
    out.json("gaussianity.json", rep.summary);
    return rep;
}

[[nodiscard]] inline RunReport run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.kind) {
        case ExperimentKind::spectrum:
        case ExperimentKind::spike_check: return run_spectrum(cfg);
        case ExperimentKind::stats_sweep: return run_stats_sweep(cfg);
        case ExperimentKind::cluster_sweep: return run_cluster_sweep(cfg);
        case ExperimentKind::gaussianity: return run_gaussianity(cfg);
    }
    throw InvalidArgument("run_experiment: unknown kind");
}

}  // namespace nmt
