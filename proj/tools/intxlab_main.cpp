// intxlab: config-driven experiment runner. Each subcommand writes its CSV
// tables, optional SVG charts and a manifest.txt into --out; exit status is
// nonzero when a verifier check inside the run fails.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "intxlab/experiments.hpp"

namespace {

intxlab::exp::KvConfig build_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides,
                                    long long seed, int reps) {
    using intxlab::exp::KvConfig;
    KvConfig cfg;
    if (!config_path.empty()) cfg = KvConfig::from_file(config_path);
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw intxlab::exp::ConfigError("--override expects key=value, got: " + ov);
        cfg.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    if (seed >= 0) cfg.set("seed", std::to_string(seed));
    if (reps >= 1) cfg.set("reps", std::to_string(reps));
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"intxlab: dropout interaction-effect laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::vector<std::string> overrides;
    long long seed = -1;
    int reps = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "master seed");
        sub->add_option("--reps", reps, "repetitions per cell");
        sub->add_option("--override", overrides, "extra key=value settings")
            ->take_all();
    };

    std::vector<std::pair<std::string, CLI::App*>> experiment_subs;
    for (const std::string& name : intxlab::exp::experiment_names()) {
        if (name == "verify-theorems") continue;  // dedicated flags below
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
        add_common(sub);
        experiment_subs.emplace_back(name, sub);
    }

    // verify-theorems gets first-class --p/--masks flags.
    double vt_p = -1.0;
    long long vt_masks = 0;
    CLI::App* vt = app.add_subcommand("verify-theorems",
                                      "Monte Carlo dropout-scaling verifiers");
    add_common(vt);
    vt->add_option("--p", vt_p, "dropout rate to verify");
    vt->add_option("--masks", vt_masks, "mask samples for the estimators");

    std::string model_path, grid_spec = "vars=0,1 points=101 lo=-1 hi=1";
    CLI::App* dec = app.add_subcommand("decompose",
                                       "exact ANOVA of a saved model on a grid slice");
    dec->add_option("--model", model_path, "saved model file")->required();
    dec->add_option("--grid", grid_spec, "grid spec, e.g. \"vars=0,1 points=101 lo=-1 hi=1\"");
    dec->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (dec->parsed()) {
            intxlab::exp::run_decompose(model_path, grid_spec, out_dir);
            std::printf("wrote decomposition to %s\n", out_dir.c_str());
            return 0;
        }

        intxlab::exp::KvConfig cfg = build_config(config_path, overrides, seed, reps);
        std::string name;
        if (vt->parsed()) {
            name = "verify-theorems";
            if (vt_p >= 0.0) cfg.set("p", std::to_string(vt_p));
            if (vt_masks > 0) cfg.set("masks", std::to_string(vt_masks));
        } else {
            for (const auto& [n, sub] : experiment_subs)
                if (sub->parsed()) name = n;
        }

        const auto result = intxlab::exp::run_experiment(name, cfg, out_dir);
        for (const std::string& w : result.manifest.warnings)
            std::fprintf(stderr, "warning: %s\n", w.c_str());
        std::printf("%s: %zu artifact(s) in %s (%.1fs)\n", name.c_str(),
                    result.manifest.files.size(), out_dir.c_str(),
                    result.manifest.duration_seconds);
        if (result.failures > 0) {
            std::fprintf(stderr, "%d check(s) failed\n", result.failures);
            return 1;
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
