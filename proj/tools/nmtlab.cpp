// nmtlab: run nested matrix-tensor experiments from a config file.
//
//   nmtlab <kind> --config FILE [--seed-list LIST] [--out DIR] [--workers N]
//                 [--set key=value]... [--tol-NAME VALUE]...
//
// kind is one of spectrum, stats-sweep, cluster-sweep, gaussianity,
// spike-check. Flags override file values. Exit status: 0 when every declared
// tolerance holds, 1 when one is violated, 2 on usage or configuration errors.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nmt/harness.hpp"

namespace {

/// Pulls --tol-NAME VALUE / --tol-NAME=VALUE out of argv as tol_NAME overrides.
std::vector<std::string> extract_tolerances(int& argc, char** argv) {
    std::vector<std::string> out;
    int w = 1;
    for (int r = 1; r < argc; ++r) {
        std::string a = argv[r];
        if (a.rfind("--tol-", 0) != 0) {
            argv[w++] = argv[r];
            continue;
        }
        std::string name = a.substr(6), value;
        if (const auto eq = name.find('='); eq != std::string::npos) {
            value = name.substr(eq + 1);
            name.erase(eq);
        } else if (r + 1 < argc) {
            value = argv[++r];
        } else {
            throw nmt::InvalidArgument(a + " needs a value");
        }
        for (char& c : name)
            if (c == '-') c = '_';
        out.push_back("tol_" + name + "=" + value);
    }
    argc = w;
    return out;
}

void print_report(const nmt::RunReport& rep) {
    for (const auto& f : rep.files) std::cout << "wrote " << f << "\n";
    for (const auto& e : rep.errors) std::cerr << "cell failure: " << e << "\n";
    for (const auto& c : rep.checks) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.value << (c.below ? " < " : " > ") << c.limit;
        if (!c.where.empty()) std::cout << " (" << c.where << ")";
        std::cout << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> tol;
    try {
        tol = extract_tolerances(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "nmtlab: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"Nested matrix-tensor model laboratory"};
    app.require_subcommand(1);
    std::string config, seeds, out;
    unsigned workers = 0;
    std::vector<std::string> sets;
    const std::vector<std::string> kinds = {"spectrum", "stats-sweep", "cluster-sweep", "gaussianity", "spike-check"};
    for (const auto& k : kinds) {
        auto* sub = app.add_subcommand(k, "run a " + k + " experiment");
        sub->add_option("--config", config, "key = value config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed-list", seeds, "seeds: comma list or start:step:stop");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--set", sets, "override key=value (repeatable)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        const auto kind = nmt::parse_kind(app.get_subcommands().front()->get_name());
        auto kv = nmt::KeyValueConfig::load(config);
        for (const auto& s : sets) kv.set_assignment(s, "--set");
        for (const auto& t : tol) kv.set_assignment(t, "--tol");
        if (!seeds.empty()) kv.set("seeds", seeds);
        if (!out.empty()) kv.set("out", out);
        if (workers > 0) kv.set("workers", static_cast<double>(workers));
        if (!kv.has("out")) kv.set("out", ".");
        if (kv.has("kind") && kv.get_string("kind") != nmt::to_string(kind)) {
            std::cerr << "nmtlab: config declares kind '" << kv.get_string("kind") << "', running " << nmt::to_string(kind)
                      << "\n";
        }
        const auto cfg = nmt::ExperimentConfig::from(kv, kind);
        const auto rep = nmt::run_experiment(cfg);
        print_report(rep);
        return rep.ok() ? 0 : 1;
    } catch (const nmt::InvalidArgument& e) {
        std::cerr << "nmtlab: invalid configuration: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "nmtlab: " << e.what() << "\n";
        return 2;
    }
}
