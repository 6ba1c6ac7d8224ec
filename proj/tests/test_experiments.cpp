#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "intxlab/anova.hpp"
#include "intxlab/csv.hpp"
#include "intxlab/experiments.hpp"
#include "intxlab/mlp.hpp"
#include "intxlab/theory.hpp"

using namespace intxlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Tiny-but-real settings so experiment runs finish in seconds.
exp::KvConfig tiny_sweep_cfg() {
    auto cfg = exp::KvConfig::from_string(
        "rates=0,0.3\n"
        "reps=2\n"
        "epochs=12\n"
        "patience=0\n"
        "n_train=96\n"
        "n_heldout=32\n"
        "d=5\n"
        "width=8\n"
        "rounds=15\n"
        "n_fit=128\n"
        "n_eval=128\n"
        "variants=input\n"
        "svg=0\n");
    return cfg;
}

}  // namespace

TEST_CASE("config parsing: comments, whitespace, types, errors") {
    const auto cfg = exp::KvConfig::from_string(
        "# a comment\n"
        "rates = 0, 0.1 ,0.5  # trailing comment\n"
        "reps=3\n"
        "\n"
        "name = noise-sweep\n");
    CHECK(cfg.get_doubles("rates", {}) == std::vector<double>{0.0, 0.1, 0.5});
    CHECK(cfg.get_int("reps", 0) == 3);
    CHECK(cfg.get_str("name", "") == "noise-sweep");
    CHECK(cfg.get_int("missing", 7) == 7);

    CHECK_THROWS_AS(exp::KvConfig::from_string("not a pair\n"), exp::ConfigError);
    CHECK_THROWS_AS(cfg.get_int("name", 0), exp::ConfigError);
}

TEST_CASE("unknown experiment and invalid grids are config errors") {
    TempDir dir("intxlab_exp_err");
    exp::KvConfig cfg;
    CHECK_THROWS_AS(exp::run_experiment("no-such-thing", cfg, dir.path),
                    exp::ConfigError);

    auto bad = tiny_sweep_cfg();
    bad.set("rates", "0,1.0");  // p = 1 is out of range
    CHECK_THROWS_AS(exp::run_experiment("noise-sweep", bad, dir.path),
                    exp::ConfigError);
    bad.set("rates", "");
    CHECK_THROWS_AS(exp::run_experiment("noise-sweep", bad, dir.path),
                    exp::ConfigError);
}

TEST_CASE("noise sweep writes its declared artifacts and a readable manifest") {
    TempDir dir("intxlab_exp_ns");
    const auto res = exp::run_experiment("noise-sweep", tiny_sweep_cfg(), dir.path);
    CHECK(res.failures == 0);
    for (const std::string& f :
         {"runs_raw.csv", "total_effects.csv", "normalized_effects.csv",
          "shrinkage.csv", "manifest.txt"})
        CHECK(fs::exists(dir.path / f));

    const auto manifest = exp::RunManifest::read(dir.path / "manifest.txt");
    CHECK(manifest.experiment == "noise-sweep");
    CHECK(manifest.seeds.size() == 4);  // 1 variant x 2 rates x 2 reps
    CHECK(manifest.config.at("rates") == "0,0.29999999999999999");
    CHECK(manifest.duration_seconds > 0.0);

    // Every CSV parses under its declared header.
    const auto raw = csv::read(dir.path / "runs_raw.csv");
    CHECK(raw[0][0] == "variant");
    CHECK(raw.size() == 5);  // header + 4 runs
    const auto totals = csv::read(dir.path / "total_effects.csv");
    CHECK(totals[0] == std::vector<std::string>{"variant", "rate", "order",
                                                "mean_variance", "std_variance", "n"});
}

TEST_CASE("rerunning from the manifest reproduces every CSV bit-exactly") {
    TempDir dir_a("intxlab_exp_repro_a");
    TempDir dir_b("intxlab_exp_repro_b");
    exp::run_experiment("noise-sweep", tiny_sweep_cfg(), dir_a.path);

    const auto manifest = exp::RunManifest::read(dir_a.path / "manifest.txt");
    exp::KvConfig cfg;
    for (const auto& [k, v] : manifest.config) cfg.set(k, v);
    exp::run_experiment(manifest.experiment, cfg, dir_b.path);

    for (const std::string& f : manifest.files) {
        INFO("file ", f);
        REQUIRE(fs::exists(dir_b.path / f));
        CHECK(slurp(dir_a.path / f) == slurp(dir_b.path / f));
    }
}

TEST_CASE("aggregates are recomputable from the raw CSV") {
    TempDir dir("intxlab_exp_agg");
    auto cfg = tiny_sweep_cfg();
    cfg.set("reps", "3");
    exp::run_experiment("noise-sweep", cfg, dir.path);

    const auto raw = csv::read(dir.path / "runs_raw.csv");
    const auto header = raw[0];
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::runtime_error("missing column " + name);
    };
    // Recompute mean/std of var_1 per rate from raw rows.
    std::map<std::string, std::vector<double>> samples;
    for (std::size_t i = 1; i < raw.size(); ++i)
        if (raw[i][col("diverged")] == "0")
            samples[raw[i][col("rate")]].push_back(
                csv::to_double(raw[i][col("var_1")]));

    const auto totals = csv::read(dir.path / "total_effects.csv");
    for (std::size_t i = 1; i < totals.size(); ++i) {
        if (totals[i][2] != "1") continue;
        const auto& xs = samples.at(totals[i][1]);
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= xs.size();
        double sd = 0.0;
        for (double x : xs) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / (xs.size() - 1));
        CHECK(csv::to_double(totals[i][3]) == doctest::Approx(mean).epsilon(1e-12));
        CHECK(csv::to_double(totals[i][4]) == doctest::Approx(sd).epsilon(1e-12));
    }
}

TEST_CASE("toy decomposition artifacts and shares") {
    TempDir dir("intxlab_exp_toy");
    auto cfg = exp::KvConfig::from_string("points=31\nsvg=1\n");
    const auto res = exp::run_experiment("toy-decomposition", cfg, dir.path);
    CHECK(res.failures == 0);
    CHECK(fs::exists(dir.path / "toy_shares.csv"));
    CHECK(fs::exists(dir.path / "toy_shares.svg"));
    CHECK(fs::exists(dir.path / "toy_report_rho0_01.csv"));
    const auto rep = anova::read_report_csv(dir.path / "toy_report_rho0_01.csv");
    double total_by_subset = 0.0;
    for (const auto& [u, v] : rep.variance_by_subset) total_by_subset += v;
    CHECK(total_by_subset > 0.0);
}

TEST_CASE("verify-theorems experiment sets failure count and writes CSVs") {
    TempDir dir("intxlab_exp_vt");
    auto cfg = exp::KvConfig::from_string(
        "p=0.2\nmasks=2000\nverify_points=200\nt2_masks=500\nt2_n=128\n");
    const auto res = exp::run_experiment("verify-theorems", cfg, dir.path);
    CHECK(res.failures == 0);
    CHECK(fs::exists(dir.path / "theorem1_p0_2.csv"));
    CHECK(fs::exists(dir.path / "theorem2_p0_2.csv"));
    const auto rows = theory::read_verifier_csv(dir.path / "theorem1_p0_2.csv");
    CHECK(rows.size() == 3);
    for (const auto& e : rows) CHECK(e.pass);
}

TEST_CASE("balance-curve experiment emits both ranges") {
    TempDir dir("intxlab_exp_bal");
    auto cfg = exp::KvConfig::from_string(
        "masks=2000\nverify_points=200\nt2_masks=500\nt2_n=128\np_verify=0.5\nsvg=1\n");
    const auto res = exp::run_experiment("balance-curve", cfg, dir.path);
    CHECK(res.failures == 0);
    const auto full = csv::read(dir.path / "balance_full.csv");
    CHECK(full.size() == 1 + 6 * 26);  // header + default p grid x k=0..25
    const auto first4 = csv::read(dir.path / "balance_first4.csv");
    CHECK(first4.size() == 1 + 6 * 5);
    // Spot value: p=0.5, k=3 -> 2300 * 0.125 = 287.5.
    bool found = false;
    for (std::size_t i = 1; i < full.size(); ++i)
        if (full[i][0] == "0.5" && full[i][1] == "3") {
            CHECK(csv::to_double(full[i][4]) == doctest::Approx(287.5));
            found = true;
        }
    CHECK(found);
    CHECK(fs::exists(dir.path / "balance_full.svg"));
}

TEST_CASE("planted sweep respects its schema at a toy scale") {
    TempDir dir("intxlab_exp_planted");
    auto cfg = exp::KvConfig::from_string(
        "ks=1\nrates=0,0.25\nreps=2\nn_train=300\nn_test=120\nd_base=8\nc_base=4\n"
        "width=8\nepochs=8\nsvg=0\n");
    const auto res = exp::run_experiment("planted-sweep", cfg, dir.path);
    CHECK(res.failures == 0);
    const auto table = csv::read(dir.path / "planted_table.csv");
    CHECK(table.size() == 3);  // header + 2 rate rows
    const auto argmax = csv::read(dir.path / "planted_argmax.csv");
    CHECK(argmax.size() == 2);
    const auto raw = csv::read(dir.path / "planted_raw.csv");
    CHECK(raw.size() == 5);  // header + 2 rates x 2 reps
}

TEST_CASE("epochs trace emits per-epoch rows including the init point") {
    TempDir dir("intxlab_exp_trace");
    auto cfg = exp::KvConfig::from_string(
        "generators=1\nrates=0\nreps=1\nepochs=20\ncheckpoint_every=10\n"
        "n_train=96\nn_heldout=32\nwidth=8\nrounds=10\nn_fit=96\nn_eval=96\nsvg=0\n");
    exp::run_experiment("epochs-trace", cfg, dir.path);
    const auto raw = csv::read(dir.path / "trace_raw.csv");
    REQUIRE(raw.size() == 4);  // header + epochs {0, 10, 20}
    CHECK(raw[1][4] == "0");
    CHECK(raw[2][4] == "10");
    CHECK(raw[3][4] == "20");
}

TEST_CASE("decompose subcommand round-trips a saved model") {
    TempDir dir("intxlab_exp_dec");
    mlp::MlpConfig mc;
    mc.input_dim = 4;
    mc.hidden_widths = {6};
    mc.output_dim = 1;
    const auto model = mlp::MlpModel::init(mc, 3);
    mlp::save_model(model, dir.path / "model.txt");

    const auto res = exp::run_decompose(dir.path / "model.txt",
                                        "vars=0,1 points=21 lo=-1 hi=1",
                                        dir.path / "out");
    CHECK(res.failures == 0);
    CHECK(fs::exists(dir.path / "out" / "decomposition.csv"));
    const auto rep = anova::read_report_csv(dir.path / "out" / "decomposition.csv");
    CHECK(rep.variance_by_order.count(1) == 1);
    CHECK(rep.variance_by_order.count(2) == 1);
}
