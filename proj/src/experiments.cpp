#include "intxlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "intxlab/anova.hpp"
#include "intxlab/csv.hpp"
#include "intxlab/datagen.hpp"
#include "intxlab/distill.hpp"
#include "intxlab/mlp.hpp"
#include "intxlab/rng.hpp"
#include "intxlab/svg.hpp"
#include "intxlab/theory.hpp"

namespace intxlab::exp {

namespace {

namespace fs = std::filesystem;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) out.push_back(trim(tok));
    return out;
}

// Short human-facing rendering (file tags, chart labels).
std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += csv::num(v[i]);
    }
    return s;
}

struct Stats {
    double mean = kNaN;
    double stddev = kNaN;
    int n = 0;
};

Stats mean_std(const std::vector<double>& v) {
    Stats s;
    s.n = static_cast<int>(v.size());
    if (v.empty()) return s;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / s.n;
    if (s.n > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / (s.n - 1));
    } else {
        s.stddev = 0.0;
    }
    return s;
}

// Runs jobs across a small worker pool; each job owns its seeds so the
// results are independent of scheduling.
void run_jobs(std::vector<std::function<void()>>& jobs, int workers) {
    workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
    if (workers == 1) {
        for (auto& j : jobs) j();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs.size());
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= jobs.size()) break;
                try {
                    jobs[i]();
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

int default_workers() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// ---------------------------------------------------------------------------
// Noise-style cell: train one regression network on a synthetic dataset,
// distill it, and report per-order effect sizes.
// ---------------------------------------------------------------------------

struct CellParams {
    // network / training
    int width = 32;
    int n_hidden_layers = 3;
    double input_rate = 0.0;
    double activation_rate = 0.0;
    double lambda = 0.0;
    double lr = 0.01;
    int batch = 32;
    int epochs = 2000;
    int patience = 200;
    int checkpoint_every = 0;
    // data
    datagen::GeneratorKind data_kind = datagen::GeneratorKind::Noise;
    double sigma = 0.1;  // signal generators only
    int n_train = 1500;
    int n_heldout = 375;
    int d = 25;
    // measurement
    int k_order = 4;
    int rounds = 300;
    double shrinkage = 0.1;
    int n_fit = 1500;
    int n_eval = 1500;

    std::uint64_t seed = 0;
};

struct SnapshotMeasure {
    int epoch = 0;
    double train_mse = kNaN;
    double heldout_mse = kNaN;
    double total_variance = kNaN;
    std::vector<double> order_variance;
};

struct CellResult {
    bool diverged = false;
    double total_variance = kNaN;
    std::vector<double> order_variance;
    std::vector<double> order_share;
    double final_train_loss = kNaN;
    double best_heldout = kNaN;
    int best_heldout_epoch = 0;
    int final_epoch = 0;
    std::vector<SnapshotMeasure> trace;  // only when checkpoint_every > 0
};

datagen::Dataset make_cell_dataset(const CellParams& p, int n, std::uint64_t seed) {
    using datagen::GeneratorKind;
    if (p.data_kind == GeneratorKind::Noise) return datagen::gen_noise(n, p.d, seed);
    return datagen::gen_signal(p.data_kind, n, p.sigma, seed);
}

std::vector<double> measure_orders(const mlp::MlpModel& model, const CellParams& p,
                                   const Eigen::MatrixXd& X_fit,
                                   const Eigen::MatrixXd& X_eval,
                                   double* total_variance) {
    auto teacher = [&model](const Eigen::RowVectorXd& x) {
        return model.predict(x.transpose())[0];
    };
    const auto dist = distill::distill(teacher, X_fit, p.k_order, p.rounds, p.shrinkage);
    const auto rep = distill::effect_sizes(dist, X_eval);
    if (total_variance) {
        Eigen::VectorXd preds(X_eval.rows());
        for (Eigen::Index i = 0; i < X_eval.rows(); ++i)
            preds[i] = model.predict(X_eval.row(i).transpose())[0];
        const double m = preds.mean();
        *total_variance = (preds.array() - m).square().sum() / preds.size();
    }
    return rep.variance;
}

CellResult run_cell(const CellParams& p) {
    const auto data = make_cell_dataset(p, p.n_train, derive_seed(p.seed, 1));
    const auto held = make_cell_dataset(p, p.n_heldout, derive_seed(p.seed, 2));

    mlp::MlpConfig mc;
    mc.input_dim = p.d;
    mc.hidden_widths.assign(p.n_hidden_layers, p.width);
    mc.output_dim = 1;
    mc.task = mlp::Task::Regression;
    mlp::MlpModel model = mlp::MlpModel::init(mc, derive_seed(p.seed, 3));
    const mlp::MlpModel initial = model;

    mlp::TrainConfig tc;
    tc.learning_rate = p.lr;
    tc.epochs = p.epochs;
    tc.batch_size = p.batch;
    tc.weight_decay = p.lambda;
    tc.dropout.input_rate = p.input_rate;
    tc.dropout.activation_rate = p.activation_rate;
    tc.seed = derive_seed(p.seed, 4);
    tc.checkpoint_every = p.checkpoint_every;
    tc.patience = p.patience;

    const auto trace = mlp::train(model, data, tc, &held);

    CellResult res;
    res.diverged = trace.diverged;
    res.final_epoch = trace.final_epoch;
    if (trace.diverged) return res;

    res.final_train_loss = trace.train_loss.back();
    res.best_heldout_epoch = trace.best_heldout_epoch();
    res.best_heldout = trace.heldout_loss[res.best_heldout_epoch - 1];

    const Eigen::MatrixXd X_fit =
        datagen::sample_features(data.density, p.n_fit, p.d, derive_seed(p.seed, 5));
    const Eigen::MatrixXd X_eval =
        datagen::sample_features(data.density, p.n_eval, p.d, derive_seed(p.seed, 6));

    res.order_variance = measure_orders(model, p, X_fit, X_eval, &res.total_variance);
    double total = 0.0;
    for (double v : res.order_variance) total += v;
    for (double v : res.order_variance)
        res.order_share.push_back(total > 0.0 ? v / total : kNaN);

    if (p.checkpoint_every > 0) {
        // Epoch 0: the freshly initialized network.
        std::vector<std::pair<int, const mlp::MlpModel*>> points;
        points.emplace_back(0, &initial);
        for (const auto& [epoch, snap] : trace.snapshots)
            points.emplace_back(epoch, &snap);
        for (const auto& [epoch, snap] : points) {
            SnapshotMeasure sm;
            sm.epoch = epoch;
            sm.train_mse = epoch == 0 ? mlp::evaluate_loss(*snap, data)
                                      : trace.train_loss[epoch - 1];
            sm.heldout_mse = epoch == 0 ? mlp::evaluate_loss(*snap, held)
                                        : trace.heldout_loss[epoch - 1];
            sm.order_variance =
                measure_orders(*snap, p, X_fit, X_eval, &sm.total_variance);
            res.trace.push_back(std::move(sm));
        }
    }
    return res;
}

std::string order_label(int index, int k_order) {
    if (index + 1 < k_order) return std::to_string(index + 1);
    return ">=" + std::to_string(k_order);
}

// ---------------------------------------------------------------------------
// Shared sweep machinery for the noise-style experiments.
// ---------------------------------------------------------------------------

struct SweepCellKey {
    std::string variant;  // input / activation / both / weight-decay
    double param = 0.0;   // dropout rate or lambda
    int width = 32;
    int rep = 0;
};

void assign_dropout(CellParams& p, const std::string& variant, double rate) {
    p.input_rate = 0.0;
    p.activation_rate = 0.0;
    if (variant == "input") {
        p.input_rate = rate;
    } else if (variant == "activation") {
        p.activation_rate = rate;
    } else if (variant == "both") {
        p.input_rate = rate;
        p.activation_rate = rate;
    } else {
        throw ConfigError("unknown dropout variant: " + variant);
    }
}

CellParams cell_params_from(const KvConfig& cfg) {
    CellParams p;
    p.width = cfg.get_int("width", 32);
    p.n_hidden_layers = cfg.get_int("hidden_layers", 3);
    p.lr = cfg.get_double("lr", 0.01);
    p.batch = cfg.get_int("batch", 32);
    p.epochs = cfg.get_int("epochs", 2000);
    p.patience = cfg.get_int("patience", 200);
    p.n_train = cfg.get_int("n_train", 1500);
    p.n_heldout = cfg.get_int("n_heldout", 375);
    p.d = cfg.get_int("d", 25);
    p.k_order = cfg.get_int("k_order", 4);
    p.rounds = cfg.get_int("rounds", 300);
    p.shrinkage = cfg.get_double("shrinkage", 0.1);
    p.n_fit = cfg.get_int("n_fit", 1500);
    p.n_eval = cfg.get_int("n_eval", 1500);
    p.sigma = cfg.get_double("sigma", 0.1);
    return p;
}

void record_defaults(KvConfig& snap, const CellParams& p) {
    snap.set("width", std::to_string(p.width));
    snap.set("hidden_layers", std::to_string(p.n_hidden_layers));
    snap.set("lr", csv::num(p.lr));
    snap.set("batch", std::to_string(p.batch));
    snap.set("epochs", std::to_string(p.epochs));
    snap.set("patience", std::to_string(p.patience));
    snap.set("n_train", std::to_string(p.n_train));
    snap.set("n_heldout", std::to_string(p.n_heldout));
    snap.set("d", std::to_string(p.d));
    snap.set("k_order", std::to_string(p.k_order));
    snap.set("rounds", std::to_string(p.rounds));
    snap.set("shrinkage", csv::num(p.shrinkage));
    snap.set("n_fit", std::to_string(p.n_fit));
    snap.set("n_eval", std::to_string(p.n_eval));
    snap.set("sigma", csv::num(p.sigma));
}

struct SweepOutput {
    std::vector<SweepCellKey> keys;
    std::vector<CellResult> results;
    int k_order = 4;
};

void write_raw_csv(const SweepOutput& sweep, const std::string& param_name,
                   const std::vector<std::uint64_t>& seeds, const fs::path& path) {
    csv::Writer w(path);
    std::vector<std::string> header = {"variant", param_name, "width",
                                       "rep",     "seed",     "diverged",
                                       "total_variance"};
    for (int k = 0; k < sweep.k_order; ++k)
        header.push_back("var_" + order_label(k, sweep.k_order));
    for (int k = 0; k < sweep.k_order; ++k)
        header.push_back("share_" + order_label(k, sweep.k_order));
    header.push_back("final_train_loss");
    header.push_back("best_heldout");
    w.row(header);
    for (std::size_t i = 0; i < sweep.keys.size(); ++i) {
        const auto& key = sweep.keys[i];
        const auto& r = sweep.results[i];
        std::vector<std::string> row = {key.variant,
                                        csv::num(key.param),
                                        std::to_string(key.width),
                                        std::to_string(key.rep),
                                        std::to_string(seeds[i]),
                                        r.diverged ? "1" : "0",
                                        csv::num(r.total_variance)};
        for (int k = 0; k < sweep.k_order; ++k)
            row.push_back(csv::num(r.diverged ? kNaN : r.order_variance[k]));
        for (int k = 0; k < sweep.k_order; ++k)
            row.push_back(csv::num(r.diverged ? kNaN : r.order_share[k]));
        row.push_back(csv::num(r.final_train_loss));
        row.push_back(csv::num(r.best_heldout));
        w.row(row);
    }
}

// Collects non-diverged per-order samples for one (variant, param, width).
struct CellAggregate {
    std::vector<std::vector<double>> order_variance;  // [order][rep]
    std::vector<std::vector<double>> order_share;
    std::vector<double> total_variance;
};

std::map<std::pair<std::string, double>, CellAggregate> aggregate_cells(
    const SweepOutput& sweep, int width_filter) {
    std::map<std::pair<std::string, double>, CellAggregate> agg;
    for (std::size_t i = 0; i < sweep.keys.size(); ++i) {
        const auto& key = sweep.keys[i];
        const auto& r = sweep.results[i];
        if (key.width != width_filter || r.diverged) continue;
        auto& a = agg[{key.variant, key.param}];
        if (a.order_variance.empty()) {
            a.order_variance.resize(sweep.k_order);
            a.order_share.resize(sweep.k_order);
        }
        for (int k = 0; k < sweep.k_order; ++k) {
            a.order_variance[k].push_back(r.order_variance[k]);
            a.order_share[k].push_back(r.order_share[k]);
        }
        a.total_variance.push_back(r.total_variance);
    }
    return agg;
}

void write_sweep_tables(const SweepOutput& sweep, int width,
                        const std::string& param_name, double baseline_param,
                        const fs::path& dir, const std::string& prefix,
                        std::vector<std::string>& files) {
    const auto agg = aggregate_cells(sweep, width);

    {
        csv::Writer w(dir / (prefix + "total_effects.csv"));
        w.row({"variant", param_name, "order", "mean_variance", "std_variance", "n"});
        for (const auto& [key, a] : agg) {
            for (int k = 0; k < sweep.k_order; ++k) {
                const Stats s = mean_std(a.order_variance[k]);
                w.row({key.first, csv::num(key.second), order_label(k, sweep.k_order),
                       csv::num(s.mean), csv::num(s.stddev), std::to_string(s.n)});
            }
            const Stats st = mean_std(a.total_variance);
            w.row({key.first, csv::num(key.second), "prediction",
                   csv::num(st.mean), csv::num(st.stddev), std::to_string(st.n)});
        }
        files.push_back(prefix + "total_effects.csv");
    }
    {
        csv::Writer w(dir / (prefix + "normalized_effects.csv"));
        w.row({"variant", param_name, "order", "mean_share", "std_share", "n"});
        for (const auto& [key, a] : agg)
            for (int k = 0; k < sweep.k_order; ++k) {
                const Stats s = mean_std(a.order_share[k]);
                w.row({key.first, csv::num(key.second), order_label(k, sweep.k_order),
                       csv::num(s.mean), csv::num(s.stddev), std::to_string(s.n)});
            }
        files.push_back(prefix + "normalized_effects.csv");
    }
    {
        csv::Writer w(dir / (prefix + "shrinkage.csv"));
        w.row({"variant", param_name, "order", "ratio"});
        for (const auto& [key, a] : agg) {
            const auto base_it = agg.find({key.first, baseline_param});
            if (base_it == agg.end()) continue;
            for (int k = 0; k < sweep.k_order; ++k) {
                const double base = mean_std(base_it->second.order_variance[k]).mean;
                const double cur = mean_std(a.order_variance[k]).mean;
                const double ratio =
                    base == 0.0 ? (cur == 0.0 ? 1.0 : kNaN) : cur / base;
                w.row({key.first, csv::num(key.second), order_label(k, sweep.k_order),
                       csv::num(ratio)});
            }
        }
        files.push_back(prefix + "shrinkage.csv");
    }
}

void write_sweep_svgs(const SweepOutput& sweep, int width,
                      const std::vector<std::string>& variants,
                      const std::string& param_name, const fs::path& dir,
                      const std::string& prefix, std::vector<std::string>& files) {
    const auto agg = aggregate_cells(sweep, width);
    for (const std::string& variant : variants) {
        std::vector<svg::Series> total(sweep.k_order), normed(sweep.k_order);
        for (int k = 0; k < sweep.k_order; ++k) {
            total[k].name = "order " + order_label(k, sweep.k_order);
            normed[k].name = total[k].name;
        }
        for (const auto& [key, a] : agg) {
            if (key.first != variant) continue;
            for (int k = 0; k < sweep.k_order; ++k) {
                const Stats sv = mean_std(a.order_variance[k]);
                total[k].x.push_back(key.second);
                total[k].y.push_back(sv.mean);
                total[k].yerr.push_back(sv.stddev);
                const Stats ss = mean_std(a.order_share[k]);
                normed[k].x.push_back(key.second);
                normed[k].y.push_back(ss.mean);
                normed[k].yerr.push_back(ss.stddev);
            }
        }
        const std::string t = prefix + "total_" + variant + ".svg";
        const std::string n = prefix + "normalized_" + variant + ".svg";
        svg::write_line_chart(dir / t, "Effect sizes, " + variant + " dropout",
                              param_name, "variance", total);
        svg::write_line_chart(dir / n, "Variance shares, " + variant + " dropout",
                              param_name, "share", normed);
        files.push_back(t);
        files.push_back(n);
    }
}

RunManifest start_manifest(const std::string& experiment, const KvConfig& resolved) {
    RunManifest m;
    m.experiment = experiment;
    m.config = resolved.items();
    return m;
}

// Runs the (variant x param x rep) grid of cells in parallel worker slots.
SweepOutput run_sweep_grid(const std::vector<std::string>& variants,
                           const std::vector<double>& params,
                           const std::vector<int>& widths, int reps,
                           const CellParams& base, bool param_is_lambda,
                           std::uint64_t master_seed, const std::string& stream,
                           int workers, std::vector<std::uint64_t>& seeds_out) {
    SweepOutput sweep;
    sweep.k_order = base.k_order;
    for (int width : widths)
        for (const std::string& variant : variants)
            for (double param : params)
                for (int rep = 0; rep < reps; ++rep)
                    sweep.keys.push_back({variant, param, width, rep});
    sweep.results.resize(sweep.keys.size());

    std::vector<std::function<void()>> jobs;
    for (std::size_t i = 0; i < sweep.keys.size(); ++i) {
        const auto& key = sweep.keys[i];
        CellParams p = base;
        p.width = key.width;
        if (param_is_lambda) {
            p.lambda = key.param;
        } else {
            assign_dropout(p, key.variant, key.param);
        }
        p.seed = derive_seed(master_seed, fnv1a(stream), i);
        seeds_out.push_back(p.seed);
        jobs.emplace_back([&sweep, i, p] { sweep.results[i] = run_cell(p); });
    }
    run_jobs(jobs, workers);
    return sweep;
}

void note_divergences(const SweepOutput& sweep, const std::string& param_name,
                      RunManifest& manifest) {
    for (std::size_t i = 0; i < sweep.keys.size(); ++i)
        if (sweep.results[i].diverged) {
            const auto& k = sweep.keys[i];
            manifest.warnings.push_back(
                "diverged run excluded: variant=" + k.variant + " " + param_name +
                "=" + csv::num(k.param) + " width=" + std::to_string(k.width) +
                " rep=" + std::to_string(k.rep));
        }
}

}  // namespace

// ---------------------------------------------------------------------------
// KvConfig
// ---------------------------------------------------------------------------

KvConfig KvConfig::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
}

KvConfig KvConfig::from_string(const std::string& text) {
    KvConfig cfg;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line is not key=value: " + line);
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("empty config key");
    items_[key] = value;
}

bool KvConfig::has(const std::string& key) const { return items_.count(key) > 0; }

void KvConfig::merge(const KvConfig& overrides) {
    for (const auto& [k, v] : overrides.items_) items_[k] = v;
}

std::string KvConfig::get_str(const std::string& key, const std::string& def) const {
    const auto it = items_.find(key);
    return it == items_.end() ? def : it->second;
}

double KvConfig::get_double(const std::string& key, double def) const {
    const auto it = items_.find(key);
    if (it == items_.end()) return def;
    try {
        return csv::to_double(it->second);
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + key + ": " + it->second);
    }
}

int KvConfig::get_int(const std::string& key, int def) const {
    const double v = get_double(key, static_cast<double>(def));
    const int i = static_cast<int>(std::llround(v));
    if (static_cast<double>(i) != v)
        throw ConfigError("expected integer for " + key);
    return i;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t def) const {
    const auto it = items_.find(key);
    if (it == items_.end()) return def;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw ConfigError("bad unsigned value for " + key + ": " + it->second);
    }
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
    const auto it = items_.find(key);
    if (it == items_.end()) return def;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("bad boolean value for " + key + ": " + it->second);
}

std::vector<double> KvConfig::get_doubles(const std::string& key,
                                          const std::vector<double>& def) const {
    const auto it = items_.find(key);
    if (it == items_.end()) return def;
    std::vector<double> out;
    for (const std::string& tok : split(it->second, ','))
        if (!tok.empty()) out.push_back(csv::to_double(tok));
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

std::vector<int> KvConfig::get_ints(const std::string& key,
                                    const std::vector<int>& def) const {
    const auto it = items_.find(key);
    if (it == items_.end()) return def;
    std::vector<int> out;
    for (double v : get_doubles(key, {})) out.push_back(static_cast<int>(v));
    return out;
}

// ---------------------------------------------------------------------------
// RunManifest
// ---------------------------------------------------------------------------

void RunManifest::write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "# intxlab manifest v1\n";
    out << "experiment=" << experiment << "\n";
    for (const auto& [k, v] : config) out << k << "=" << v << "\n";
    out << "# seeds:";
    for (std::size_t i = 0; i < seeds.size(); ++i)
        out << (i ? "," : " ") << seeds[i];
    out << "\n";
    for (const std::string& f : files) out << "# file: " << f << "\n";
    for (const std::string& wmsg : warnings) out << "# warning: " << wmsg << "\n";
    out << "# duration_seconds: " << csv::num(duration_seconds) << "\n";
}

RunManifest RunManifest::read(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest: " + path.string());
    RunManifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# seeds:", 0) == 0) {
            for (const std::string& tok : split(line.substr(8), ','))
                if (!tok.empty()) m.seeds.push_back(std::stoull(tok));
            continue;
        }
        if (line.rfind("# file: ", 0) == 0) {
            m.files.push_back(line.substr(8));
            continue;
        }
        if (line.rfind("# warning: ", 0) == 0) {
            m.warnings.push_back(line.substr(11));
            continue;
        }
        if (line.rfind("# duration_seconds: ", 0) == 0) {
            m.duration_seconds = csv::to_double(line.substr(20));
            continue;
        }
        if (!line.empty() && line[0] == '#') continue;
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "experiment") m.experiment = value;
        else m.config[key] = value;
    }
    if (m.experiment.empty())
        throw ConfigError("manifest has no experiment key: " + path.string());
    return m;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = {
        "noise-sweep",        "width-contrast",    "epochs-trace",
        "weight-decay-sweep", "toy-decomposition", "planted-sweep",
        "balance-curve",      "verify-theorems"};
    return names;
}

RunResult run_noise_sweep(const KvConfig& cfg, const fs::path& out) {
    const std::vector<double> rates =
        cfg.get_doubles("rates", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5});
    if (rates.empty()) throw ConfigError("rates must be nonempty");
    for (double r : rates)
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout rates must be in [0,1)");
    const int reps = cfg.get_int("reps", 10);
    if (reps < 1) throw ConfigError("reps must be >= 1");
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const int workers = cfg.get_int("workers", default_workers());
    const bool want_svg = cfg.get_bool("svg", true);
    std::vector<std::string> variants;
    for (const std::string& v : split(cfg.get_str("variants", "input,activation,both"), ','))
        variants.push_back(v);

    CellParams base = cell_params_from(cfg);

    KvConfig resolved;
    record_defaults(resolved, base);
    resolved.set("rates", join_doubles(rates));
    resolved.set("reps", std::to_string(reps));
    resolved.set("seed", std::to_string(seed));
    resolved.set("variants", cfg.get_str("variants", "input,activation,both"));
    resolved.set("svg", want_svg ? "1" : "0");
    RunResult res;
    res.manifest = start_manifest("noise-sweep", resolved);

    const SweepOutput sweep =
        run_sweep_grid(variants, rates, {base.width}, reps, base, false, seed,
                       "noise-sweep", workers, res.manifest.seeds);
    note_divergences(sweep, "rate", res.manifest);

    write_raw_csv(sweep, "rate", res.manifest.seeds, out / "runs_raw.csv");
    res.manifest.files.push_back("runs_raw.csv");
    write_sweep_tables(sweep, base.width, "rate", rates.front(), out, "",
                       res.manifest.files);
    if (want_svg)
        write_sweep_svgs(sweep, base.width, variants, "rate", out, "",
                         res.manifest.files);
    return res;
}

RunResult run_width_contrast(const KvConfig& cfg, const fs::path& out) {
    const std::vector<double> rates =
        cfg.get_doubles("rates", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5});
    if (rates.empty()) throw ConfigError("rates must be nonempty");
    for (double r : rates)
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout rates must be in [0,1)");
    const std::vector<int> widths = cfg.get_ints("widths", {32, 128});
    const int reps = cfg.get_int("reps", 5);
    if (reps < 1) throw ConfigError("reps must be >= 1");
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const int workers = cfg.get_int("workers", default_workers());
    const bool want_svg = cfg.get_bool("svg", true);
    std::vector<std::string> variants;
    for (const std::string& v : split(cfg.get_str("variants", "input,activation,both"), ','))
        variants.push_back(v);

    CellParams base = cell_params_from(cfg);

    KvConfig resolved;
    record_defaults(resolved, base);
    resolved.set("rates", join_doubles(rates));
    resolved.set("reps", std::to_string(reps));
    resolved.set("seed", std::to_string(seed));
    resolved.set("variants", cfg.get_str("variants", "input,activation,both"));
    std::string wlist;
    for (std::size_t i = 0; i < widths.size(); ++i)
        wlist += (i ? "," : "") + std::to_string(widths[i]);
    resolved.set("widths", wlist);
    resolved.set("svg", want_svg ? "1" : "0");
    RunResult res;
    res.manifest = start_manifest("width-contrast", resolved);

    const SweepOutput sweep =
        run_sweep_grid(variants, rates, widths, reps, base, false, seed,
                       "width-contrast", workers, res.manifest.seeds);
    note_divergences(sweep, "rate", res.manifest);

    write_raw_csv(sweep, "rate", res.manifest.seeds, out / "runs_raw.csv");
    res.manifest.files.push_back("runs_raw.csv");
    for (int width : widths) {
        const std::string prefix = "width" + std::to_string(width) + "_";
        write_sweep_tables(sweep, width, "rate", rates.front(), out, prefix,
                           res.manifest.files);
        if (want_svg)
            write_sweep_svgs(sweep, width, variants, "rate", out, prefix,
                             res.manifest.files);
    }

    // Order-1 share delta per (width, variant, rate) against that width's
    // zero-dropout baseline.
    {
        csv::Writer w(out / "width_contrast.csv");
        w.row({"width", "variant", "rate", "mean_share_1", "delta_vs_p0"});
        for (int width : widths) {
            const auto agg = aggregate_cells(sweep, width);
            std::map<std::string, double> base_share;
            for (const auto& [key, a] : agg)
                if (key.second == rates.front())
                    base_share[key.first] = mean_std(a.order_share[0]).mean;
            for (const auto& [key, a] : agg) {
                const double share1 = mean_std(a.order_share[0]).mean;
                w.row({std::to_string(width), key.first, csv::num(key.second),
                       csv::num(share1),
                       csv::num(share1 - base_share[key.first])});
            }
        }
        res.manifest.files.push_back("width_contrast.csv");
    }
    return res;
}

RunResult run_epochs_trace(const KvConfig& cfg, const fs::path& out) {
    const std::vector<double> rates = cfg.get_doubles("rates", {0.0, 0.4});
    for (double r : rates)
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout rates must be in [0,1)");
    const std::vector<int> generators = cfg.get_ints("generators", {1, 2, 3});
    const int reps = cfg.get_int("reps", 10);
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const int workers = cfg.get_int("workers", default_workers());
    const bool want_svg = cfg.get_bool("svg", true);
    const std::string variant = cfg.get_str("variant", "input");

    CellParams base = cell_params_from(cfg);
    base.epochs = cfg.get_int("epochs", 1000);
    base.patience = cfg.get_int("patience", 0);
    base.checkpoint_every = cfg.get_int("checkpoint_every", 50);
    // Width-32 nets need a hotter optimizer and more label noise than the
    // converged sweeps before the over-epochs overfitting dynamics show.
    base.lr = cfg.get_double("lr", 0.05);
    base.sigma = cfg.get_double("sigma", 0.3);

    KvConfig resolved;
    record_defaults(resolved, base);
    resolved.set("epochs", std::to_string(base.epochs));
    resolved.set("patience", std::to_string(base.patience));
    resolved.set("checkpoint_every", std::to_string(base.checkpoint_every));
    resolved.set("rates", join_doubles(rates));
    std::string glist;
    for (std::size_t i = 0; i < generators.size(); ++i)
        glist += (i ? "," : "") + std::to_string(generators[i]);
    resolved.set("generators", glist);
    resolved.set("reps", std::to_string(reps));
    resolved.set("seed", std::to_string(seed));
    resolved.set("variant", variant);
    resolved.set("svg", want_svg ? "1" : "0");
    RunResult res;
    res.manifest = start_manifest("epochs-trace", resolved);

    struct TraceKey {
        int generator;
        double rate;
        int rep;
    };
    std::vector<TraceKey> keys;
    for (int g : generators)
        for (double rate : rates)
            for (int rep = 0; rep < reps; ++rep) keys.push_back({g, rate, rep});
    std::vector<CellResult> results(keys.size());

    auto kind_of = [](int g) {
        switch (g) {
            case 1: return datagen::GeneratorKind::MainEffects;
            case 2: return datagen::GeneratorKind::PairEffects;
            case 3: return datagen::GeneratorKind::ThreeWayEffects;
        }
        throw ConfigError("generator index must be 1, 2 or 3");
    };

    std::vector<std::function<void()>> jobs;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        CellParams p = base;
        p.data_kind = kind_of(keys[i].generator);
        assign_dropout(p, variant, keys[i].rate);
        p.seed = derive_seed(seed, fnv1a("epochs-trace"), i);
        res.manifest.seeds.push_back(p.seed);
        jobs.emplace_back([&results, i, p] { results[i] = run_cell(p); });
    }
    run_jobs(jobs, workers);

    {
        csv::Writer w(out / "trace_raw.csv");
        std::vector<std::string> header = {"generator", "rate",        "rep",
                                           "seed",      "epoch",       "train_mse",
                                           "heldout_mse", "total_variance"};
        for (int k = 0; k < base.k_order; ++k)
            header.push_back("var_" + order_label(k, base.k_order));
        w.row(header);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (results[i].diverged) {
                res.manifest.warnings.push_back(
                    "diverged run excluded: generator=" +
                    std::to_string(keys[i].generator) +
                    " rate=" + csv::num(keys[i].rate) +
                    " rep=" + std::to_string(keys[i].rep));
                continue;
            }
            for (const auto& sm : results[i].trace) {
                std::vector<std::string> row = {
                    std::to_string(keys[i].generator), csv::num(keys[i].rate),
                    std::to_string(keys[i].rep),
                    std::to_string(res.manifest.seeds[i]),
                    std::to_string(sm.epoch), csv::num(sm.train_mse),
                    csv::num(sm.heldout_mse), csv::num(sm.total_variance)};
                for (double v : sm.order_variance) row.push_back(csv::num(v));
                w.row(row);
            }
        }
        res.manifest.files.push_back("trace_raw.csv");
    }

    // Mean-over-reps summary per (generator, rate, epoch).
    {
        csv::Writer w(out / "trace_summary.csv");
        std::vector<std::string> header = {"generator", "rate", "epoch",
                                           "mean_train_mse", "mean_heldout_mse",
                                           "mean_total_variance"};
        for (int k = 0; k < base.k_order; ++k)
            header.push_back("mean_var_" + order_label(k, base.k_order));
        w.row(header);
        for (int g : generators)
            for (double rate : rates) {
                std::map<int, std::vector<const SnapshotMeasure*>> by_epoch;
                for (std::size_t i = 0; i < keys.size(); ++i) {
                    if (keys[i].generator != g || keys[i].rate != rate ||
                        results[i].diverged)
                        continue;
                    for (const auto& sm : results[i].trace)
                        by_epoch[sm.epoch].push_back(&sm);
                }
                for (const auto& [epoch, sms] : by_epoch) {
                    auto mean_of = [&](auto getter) {
                        double s = 0.0;
                        for (const auto* sm : sms) s += getter(*sm);
                        return s / sms.size();
                    };
                    std::vector<std::string> row = {
                        std::to_string(g), csv::num(rate), std::to_string(epoch),
                        csv::num(mean_of([](const SnapshotMeasure& s) { return s.train_mse; })),
                        csv::num(mean_of([](const SnapshotMeasure& s) { return s.heldout_mse; })),
                        csv::num(mean_of([](const SnapshotMeasure& s) { return s.total_variance; }))};
                    for (int k = 0; k < base.k_order; ++k)
                        row.push_back(csv::num(mean_of(
                            [k](const SnapshotMeasure& s) { return s.order_variance[k]; })));
                    w.row(row);
                }
            }
        res.manifest.files.push_back("trace_summary.csv");
    }

    if (want_svg) {
        for (int g : generators) {
            std::vector<svg::Series> effect_series, mse_series;
            for (double rate : rates) {
                std::map<int, double> mse_sum;
                std::vector<std::map<int, double>> var_sums(base.k_order);
                std::map<int, int> counts;
                for (std::size_t i = 0; i < keys.size(); ++i) {
                    if (keys[i].generator != g || keys[i].rate != rate ||
                        results[i].diverged)
                        continue;
                    for (const auto& sm : results[i].trace) {
                        counts[sm.epoch]++;
                        mse_sum[sm.epoch] += sm.heldout_mse;
                        for (int k = 0; k < base.k_order; ++k)
                            var_sums[k][sm.epoch] += sm.order_variance[k];
                    }
                }
                for (int k = 0; k < base.k_order; ++k) {
                    svg::Series s;
                    s.name = "p=" + short_num(rate) + " order " +
                             order_label(k, base.k_order);
                    for (const auto& [epoch, cnt] : counts) {
                        s.x.push_back(epoch);
                        s.y.push_back(var_sums[k][epoch] / cnt);
                    }
                    effect_series.push_back(std::move(s));
                }
                svg::Series ms;
                ms.name = "p=" + short_num(rate) + " held-out MSE";
                for (const auto& [epoch, cnt] : counts) {
                    ms.x.push_back(epoch);
                    ms.y.push_back(mse_sum[epoch] / cnt);
                }
                mse_series.push_back(std::move(ms));
            }
            const std::string e = "gen" + std::to_string(g) + "_effects.svg";
            const std::string m = "gen" + std::to_string(g) + "_mse.svg";
            svg::write_line_chart(out / e,
                                  "Effect sizes over epochs, generator " +
                                      std::to_string(g),
                                  "epoch", "variance", effect_series);
            svg::write_line_chart(out / m,
                                  "Held-out MSE over epochs, generator " +
                                      std::to_string(g),
                                  "epoch", "MSE", mse_series);
            res.manifest.files.push_back(e);
            res.manifest.files.push_back(m);
        }
    }
    return res;
}

RunResult run_weight_decay_sweep(const KvConfig& cfg, const fs::path& out) {
    const std::vector<double> lambdas =
        cfg.get_doubles("lambdas", {0.0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.5});
    const int reps = cfg.get_int("reps", 10);
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const int workers = cfg.get_int("workers", default_workers());
    const bool want_svg = cfg.get_bool("svg", true);

    CellParams base = cell_params_from(cfg);

    KvConfig resolved;
    record_defaults(resolved, base);
    resolved.set("lambdas", join_doubles(lambdas));
    resolved.set("reps", std::to_string(reps));
    resolved.set("seed", std::to_string(seed));
    resolved.set("svg", want_svg ? "1" : "0");
    RunResult res;
    res.manifest = start_manifest("weight-decay-sweep", resolved);

    const SweepOutput sweep =
        run_sweep_grid({"weight-decay"}, lambdas, {base.width}, reps, base,
                       /*param_is_lambda=*/true, seed, "weight-decay-sweep",
                       workers, res.manifest.seeds);
    note_divergences(sweep, "lambda", res.manifest);

    write_raw_csv(sweep, "lambda", res.manifest.seeds, out / "runs_raw.csv");
    res.manifest.files.push_back("runs_raw.csv");
    write_sweep_tables(sweep, base.width, "lambda", lambdas.front(), out, "",
                       res.manifest.files);
    if (want_svg)
        write_sweep_svgs(sweep, base.width, {"weight-decay"}, "lambda", out, "",
                         res.manifest.files);
    return res;
}

RunResult run_toy_decomposition(const KvConfig& cfg, const fs::path& out) {
    const std::vector<double> rhos = cfg.get_doubles("rhos", {0.01, 0.99});
    const int points = cfg.get_int("points", 61);
    const double extent = cfg.get_double("extent", 3.0);
    const bool want_svg = cfg.get_bool("svg", true);

    KvConfig resolved;
    resolved.set("rhos", join_doubles(rhos));
    resolved.set("points", std::to_string(points));
    resolved.set("extent", csv::num(extent));
    resolved.set("svg", want_svg ? "1" : "0");
    RunResult res;
    res.manifest = start_manifest("toy-decomposition", resolved);

    csv::Writer shares_csv(out / "toy_shares.csv");
    shares_csv.row({"rho", "order", "variance", "share"});

    std::vector<svg::Series> share_series(2);
    share_series[0].name = "order 1 share";
    share_series[1].name = "order 2 share";

    for (double rho : rhos) {
        auto grid = std::make_shared<anova::WeightedGrid>(
            anova::WeightedGrid::bivariate_gaussian(rho, points, extent));
        const auto f = anova::tabulate(
            [](const std::vector<double>& x) { return x[0] * x[1]; }, grid);
        const auto table = anova::decompose_weighted(f, 2);
        const auto rep = anova::report(table);
        const auto shares = rep.shares_by_order();

        std::string tag = short_num(rho);
        std::replace(tag.begin(), tag.end(), '.', '_');
        anova::write_report_csv(rep, out / ("toy_report_rho" + tag + ".csv"));
        anova::write_effect_grids(table, out, "toy_rho" + tag);
        res.manifest.files.push_back("toy_report_rho" + tag + ".csv");
        for (const auto& [u, eff] : table.effects) {
            std::string name = "toy_rho" + tag + "_effect_";
            name += u.empty() ? "const" : anova::subset_to_string(u);
            std::replace(name.begin(), name.end(), ',', '_');
            res.manifest.files.push_back(name + ".csv");
        }

        for (const auto& [k, v] : rep.variance_by_order)
            shares_csv.row({csv::num(rho), std::to_string(k), csv::num(v),
                            csv::num(shares.count(k) ? shares.at(k) : 0.0)});
        share_series[0].x.push_back(rho);
        share_series[0].y.push_back(shares.count(1) ? shares.at(1) : 0.0);
        share_series[1].x.push_back(rho);
        share_series[1].y.push_back(shares.count(2) ? shares.at(2) : 0.0);
    }
    res.manifest.files.push_back("toy_shares.csv");
    if (want_svg) {
        svg::write_line_chart(out / "toy_shares.svg",
                              "Variance shares of Y = X1 X2 vs correlation",
                              "rho", "share", share_series);
        res.manifest.files.push_back("toy_shares.svg");
    }
    return res;
}

RunResult run_planted_sweep(const KvConfig& cfg, const fs::path& out) {
    const std::vector<int> ks = cfg.get_ints("ks", {1, 2, 3});
    const std::vector<double> rates =
        cfg.get_doubles("rates", {0.0, 0.125, 0.25, 0.375, 0.5, 0.625});
    for (double r : rates)
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout rates must be in [0,1)");
    const int reps = cfg.get_int("reps", 5);
    const int n_train = cfg.get_int("n_train", 4000);
    const int n_test = cfg.get_int("n_test", 2000);
    const int d_base = cfg.get_int("d_base", 50);
    const int c_base = cfg.get_int("c_base", 20);
    const int width = cfg.get_int("width", 64);
    const int hidden_layers = cfg.get_int("hidden_layers", 2);
    const double lr = cfg.get_double("lr", 0.05);
    const int epochs = cfg.get_int("epochs", 100);
    const int batch = cfg.get_int("batch", 64);
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const int workers = cfg.get_int("workers", default_workers());
    const bool want_svg = cfg.get_bool("svg", true);

    KvConfig resolved;
    resolved.set("ks", [&] {
        std::string s;
        for (std::size_t i = 0; i < ks.size(); ++i)
            s += (i ? "," : "") + std::to_string(ks[i]);
        return s;
    }());
    resolved.set("rates", join_doubles(rates));
    resolved.set("reps", std::to_string(reps));
    resolved.set("n_train", std::to_string(n_train));
    resolved.set("n_test", std::to_string(n_test));
    resolved.set("d_base", std::to_string(d_base));
    resolved.set("c_base", std::to_string(c_base));
    resolved.set("width", std::to_string(width));
    resolved.set("hidden_layers", std::to_string(hidden_layers));
    resolved.set("lr", csv::num(lr));
    resolved.set("epochs", std::to_string(epochs));
    resolved.set("batch", std::to_string(batch));
    resolved.set("seed", std::to_string(seed));
    resolved.set("svg", want_svg ? "1" : "0");
    RunResult res;
    res.manifest = start_manifest("planted-sweep", resolved);

    struct Key {
        int k;
        double rate;
        int rep;
    };
    std::vector<Key> keys;
    for (int k : ks)
        for (double rate : rates)
            for (int rep = 0; rep < reps; ++rep) keys.push_back({k, rate, rep});
    struct Acc {
        double train = kNaN, test = kNaN;
        bool diverged = false;
    };
    std::vector<Acc> results(keys.size());

    std::vector<std::function<void()>> jobs;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const Key key = keys[i];
        const std::uint64_t cell_seed = derive_seed(seed, fnv1a("planted-sweep"), i);
        res.manifest.seeds.push_back(cell_seed);
        jobs.emplace_back([&results, i, key, cell_seed, n_train, n_test, d_base,
                           c_base, width, hidden_layers, lr, epochs, batch] {
            const auto train_data = datagen::gen_planted_interaction(
                n_train, d_base, c_base, key.k, derive_seed(cell_seed, 1));
            const auto test_data = datagen::gen_planted_interaction(
                n_test, d_base, c_base, key.k, derive_seed(cell_seed, 2));

            mlp::MlpConfig mc;
            mc.input_dim = d_base + key.k;
            mc.hidden_widths.assign(hidden_layers, width);
            mc.output_dim = c_base + 1;
            mc.task = mlp::Task::Classification;
            mlp::MlpModel model = mlp::MlpModel::init(mc, derive_seed(cell_seed, 3));

            mlp::TrainConfig tc;
            tc.learning_rate = lr;
            tc.epochs = epochs;
            tc.batch_size = batch;
            tc.dropout.input_rate = key.rate;
            tc.seed = derive_seed(cell_seed, 4);
            const auto trace = mlp::train(model, train_data, tc);
            if (trace.diverged) {
                results[i].diverged = true;
                return;
            }
            results[i].train = mlp::evaluate_accuracy(model, train_data);
            results[i].test = mlp::evaluate_accuracy(model, test_data);
        });
    }
    run_jobs(jobs, workers);

    {
        csv::Writer w(out / "planted_raw.csv");
        w.row({"k", "rate", "rep", "seed", "diverged", "train_accuracy",
               "test_accuracy"});
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (results[i].diverged)
                res.manifest.warnings.push_back(
                    "diverged run excluded: k=" + std::to_string(keys[i].k) +
                    " rate=" + csv::num(keys[i].rate) +
                    " rep=" + std::to_string(keys[i].rep));
            w.row({std::to_string(keys[i].k), csv::num(keys[i].rate),
                   std::to_string(keys[i].rep),
                   std::to_string(res.manifest.seeds[i]),
                   results[i].diverged ? "1" : "0", csv::num(results[i].train),
                   csv::num(results[i].test)});
        }
        res.manifest.files.push_back("planted_raw.csv");
    }

    {
        csv::Writer w(out / "planted_table.csv");
        w.row({"k", "rate", "mean_accuracy", "std_accuracy", "n"});
        std::vector<svg::Series> series;
        csv::Writer argmax_csv(out / "planted_argmax.csv");
        argmax_csv.row({"k", "best_rate", "best_accuracy"});
        for (int k : ks) {
            svg::Series s;
            s.name = "k=" + std::to_string(k);
            double best_acc = -1.0, best_rate = kNaN;
            for (double rate : rates) {
                std::vector<double> accs;
                for (std::size_t i = 0; i < keys.size(); ++i)
                    if (keys[i].k == k && keys[i].rate == rate &&
                        !results[i].diverged)
                        accs.push_back(results[i].test);
                const Stats st = mean_std(accs);
                w.row({std::to_string(k), csv::num(rate), csv::num(st.mean),
                       csv::num(st.stddev), std::to_string(st.n)});
                s.x.push_back(rate);
                s.y.push_back(st.mean);
                s.yerr.push_back(st.stddev);
                if (st.n > 0 && st.mean > best_acc) {
                    best_acc = st.mean;
                    best_rate = rate;
                }
            }
            argmax_csv.row({std::to_string(k), csv::num(best_rate),
                            csv::num(best_acc)});
            series.push_back(std::move(s));
        }
        res.manifest.files.push_back("planted_table.csv");
        res.manifest.files.push_back("planted_argmax.csv");
        if (want_svg) {
            svg::write_line_chart(out / "planted_accuracy.svg",
                                  "Test accuracy vs dropout rate",
                                  "input dropout rate", "accuracy", series);
            res.manifest.files.push_back("planted_accuracy.svg");
        }
    }
    return res;
}

namespace {

// Shared by balance-curve and verify-theorems.
int run_theorem_verifiers(const std::vector<double>& p_values, int n_points,
                          int n_masks, int t2_masks, int t2_n, std::uint64_t seed,
                          const fs::path& out, std::vector<std::string>& files) {
    int failures = 0;
    theory::BasisModel model;
    model.terms = {{{0}, 1.0}, {{0, 1}, 1.0}, {{0, 1, 2}, 1.0}};
    for (double p : p_values) {
        std::string tag = short_num(p);
        std::replace(tag.begin(), tag.end(), '.', '_');
        const auto t1 = theory::verify_theorem1(model, p, n_points, n_masks,
                                                derive_seed(seed, fnv1a("t1")));
        for (const auto& e : t1)
            if (e.defined && !e.pass) ++failures;
        theory::write_verifier_csv(t1, out / ("theorem1_p" + tag + ".csv"));
        files.push_back("theorem1_p" + tag + ".csv");

        // Theorem 2 per order, single-term models (the concordance is exact
        // per mask for those; see the examples).
        std::vector<theory::ScalingEstimate> t2_rows;
        for (int order = 1; order <= 3; ++order) {
            theory::BasisModel single;
            std::vector<int> vars;
            for (int v = 0; v < order; ++v) vars.push_back(v);
            single.terms = {{vars, 1.0}};
            const auto data =
                datagen::gen_noise(t2_n, 3, derive_seed(seed, fnv1a("t2data"), order));
            const auto rows = theory::verify_theorem2(
                single, data, p, t2_masks, derive_seed(seed, fnv1a("t2"), order));
            for (const auto& e : rows) {
                if (e.defined && !e.pass) ++failures;
                t2_rows.push_back(e);
            }
        }
        theory::write_verifier_csv(t2_rows, out / ("theorem2_p" + tag + ".csv"));
        files.push_back("theorem2_p" + tag + ".csv");
    }
    return failures;
}

}  // namespace

RunResult run_balance_and_theorems(const KvConfig& cfg, const fs::path& out) {
    const int N = cfg.get_int("n_features", 25);
    const std::vector<double> p_grid =
        cfg.get_doubles("p_grid", {0.0, 0.1, 0.25, 0.5, 0.75, 0.9});
    for (double p : p_grid)
        if (!(p >= 0.0 && p < 1.0)) throw ConfigError("p grid must be within [0,1)");
    const std::vector<double> p_verify = cfg.get_doubles("p_verify", {0.2, 0.5});
    const int n_points = cfg.get_int("verify_points", 400);
    const int n_masks = cfg.get_int("masks", 100000);
    const int t2_masks = cfg.get_int("t2_masks", 20000);
    const int t2_n = cfg.get_int("t2_n", 256);
    const std::uint64_t seed = cfg.get_u64("seed", 1);
    const bool want_svg = cfg.get_bool("svg", true);

    KvConfig resolved;
    resolved.set("n_features", std::to_string(N));
    resolved.set("p_grid", join_doubles(p_grid));
    resolved.set("p_verify", join_doubles(p_verify));
    resolved.set("verify_points", std::to_string(n_points));
    resolved.set("masks", std::to_string(n_masks));
    resolved.set("t2_masks", std::to_string(t2_masks));
    resolved.set("t2_n", std::to_string(t2_n));
    resolved.set("seed", std::to_string(seed));
    resolved.set("svg", want_svg ? "1" : "0");
    RunResult res;
    res.manifest = start_manifest("balance-curve", resolved);

    {
        csv::Writer full(out / "balance_full.csv");
        csv::Writer first4(out / "balance_first4.csv");
        full.row({"p", "k", "count", "rate", "product"});
        first4.row({"p", "k", "count", "rate", "product"});
        std::vector<svg::Series> full_series, first_series;
        for (double p : p_grid) {
            const auto curve = theory::balance_curve(N, p, N);
            svg::Series sf, s4;
            sf.name = "p=" + short_num(p);
            s4.name = sf.name;
            for (const auto& pt : curve) {
                full.row({csv::num(p), std::to_string(pt.k),
                          std::to_string(pt.count), csv::num(pt.rate),
                          csv::num(pt.product)});
                sf.x.push_back(pt.k);
                sf.y.push_back(pt.product);
                if (pt.k <= 4) {
                    first4.row({csv::num(p), std::to_string(pt.k),
                                std::to_string(pt.count), csv::num(pt.rate),
                                csv::num(pt.product)});
                    s4.x.push_back(pt.k);
                    s4.y.push_back(pt.product);
                }
            }
            full_series.push_back(std::move(sf));
            first_series.push_back(std::move(s4));
        }
        res.manifest.files.push_back("balance_full.csv");
        res.manifest.files.push_back("balance_first4.csv");
        if (want_svg) {
            svg::write_line_chart(out / "balance_full.svg",
                                  "Effective learning rate x hypothesis count",
                                  "interaction order k", "r_p(k) * C(N,k)",
                                  full_series, /*log_y=*/true);
            svg::write_line_chart(out / "balance_first4.svg",
                                  "Balance over the first four orders",
                                  "interaction order k", "r_p(k) * C(N,k)",
                                  first_series);
            res.manifest.files.push_back("balance_full.svg");
            res.manifest.files.push_back("balance_first4.svg");
        }
    }

    res.failures = run_theorem_verifiers(p_verify, n_points, n_masks, t2_masks,
                                         t2_n, seed, out, res.manifest.files);
    if (res.failures > 0)
        res.manifest.warnings.push_back(std::to_string(res.failures) +
                                        " theorem verifier rows failed");
    return res;
}

RunResult run_verify_theorems(const KvConfig& cfg, const fs::path& out) {
    const std::vector<double> p_values = cfg.get_doubles("p", {0.2, 0.5});
    for (double p : p_values)
        if (!(p >= 0.0 && p < 1.0)) throw ConfigError("p must be within [0,1)");
    const int n_points = cfg.get_int("verify_points", 400);
    const int n_masks = cfg.get_int("masks", 100000);
    const int t2_masks = cfg.get_int("t2_masks", 20000);
    const int t2_n = cfg.get_int("t2_n", 256);
    const std::uint64_t seed = cfg.get_u64("seed", 1);

    KvConfig resolved;
    resolved.set("p", join_doubles(p_values));
    resolved.set("verify_points", std::to_string(n_points));
    resolved.set("masks", std::to_string(n_masks));
    resolved.set("t2_masks", std::to_string(t2_masks));
    resolved.set("t2_n", std::to_string(t2_n));
    resolved.set("seed", std::to_string(seed));
    RunResult res;
    res.manifest = start_manifest("verify-theorems", resolved);

    res.failures = run_theorem_verifiers(p_values, n_points, n_masks, t2_masks,
                                         t2_n, seed, out, res.manifest.files);
    if (res.failures > 0)
        res.manifest.warnings.push_back(std::to_string(res.failures) +
                                        " theorem verifier rows failed");
    return res;
}

RunResult run_decompose(const fs::path& model_path, const std::string& grid_spec,
                        const fs::path& out) {
    fs::create_directories(out);
    const mlp::MlpModel model = mlp::load_model(model_path);

    // Parse "key=value" pairs separated by spaces or semicolons.
    std::string normalized = grid_spec;
    std::replace(normalized.begin(), normalized.end(), ';', ' ');
    KvConfig spec;
    for (const std::string& tok : split(normalized, ' '))
        if (!tok.empty()) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos)
                throw ConfigError("grid spec token is not key=value: " + tok);
            spec.set(tok.substr(0, eq), tok.substr(eq + 1));
        }

    std::vector<int> vars = spec.get_ints("vars", {0, 1});
    std::sort(vars.begin(), vars.end());
    const int d = static_cast<int>(vars.size());
    const int points = spec.get_int("points", anova::WeightedGrid::default_resolution(d));
    const double fill = spec.get_double("fill", 0.0);
    for (int v : vars)
        if (v < 0 || v >= model.config().input_dim)
            throw ConfigError("grid variable out of range: " + std::to_string(v));

    std::shared_ptr<const anova::WeightedGrid> grid;
    const bool gaussian = spec.has("rho");
    if (gaussian) {
        if (d != 2) throw ConfigError("rho grids are two-dimensional");
        grid = std::make_shared<anova::WeightedGrid>(
            anova::WeightedGrid::bivariate_gaussian(
                spec.get_double("rho", 0.0), points, spec.get_double("extent", 3.0)));
    } else {
        grid = std::make_shared<anova::WeightedGrid>(anova::WeightedGrid::uniform(
            d, points, spec.get_double("lo", -1.0), spec.get_double("hi", 1.0)));
    }

    Eigen::VectorXd x = Eigen::VectorXd::Constant(model.config().input_dim, fill);
    const auto f = anova::tabulate(
        [&](const std::vector<double>& pt) {
            Eigen::VectorXd xx = x;
            for (int a = 0; a < d; ++a) xx[vars[a]] = pt[a];
            return model.predict(xx)[0];
        },
        grid);

    const auto table = gaussian ? anova::decompose_weighted(f, d)
                                : anova::decompose_product(f);
    const auto rep = anova::report(table);
    anova::write_report_csv(rep, out / "decomposition.csv");
    anova::write_effect_grids(table, out, "model");

    RunResult res;
    KvConfig resolved;
    resolved.set("model", model_path.string());
    resolved.set("grid", grid_spec);
    res.manifest = start_manifest("decompose", resolved);
    res.manifest.files.push_back("decomposition.csv");
    res.manifest.write(out / "manifest.txt");
    return res;
}

RunResult run_experiment(const std::string& name, const KvConfig& cfg,
                         const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    RunResult res;
    if (name == "noise-sweep") res = run_noise_sweep(cfg, out_dir);
    else if (name == "width-contrast") res = run_width_contrast(cfg, out_dir);
    else if (name == "epochs-trace") res = run_epochs_trace(cfg, out_dir);
    else if (name == "weight-decay-sweep") res = run_weight_decay_sweep(cfg, out_dir);
    else if (name == "toy-decomposition") res = run_toy_decomposition(cfg, out_dir);
    else if (name == "planted-sweep") res = run_planted_sweep(cfg, out_dir);
    else if (name == "balance-curve") res = run_balance_and_theorems(cfg, out_dir);
    else if (name == "verify-theorems") res = run_verify_theorems(cfg, out_dir);
    else throw ConfigError("unknown experiment: " + name);
    const auto t1 = std::chrono::steady_clock::now();
    res.manifest.duration_seconds =
        std::chrono::duration<double>(t1 - t0).count();
    res.manifest.write(out_dir / "manifest.txt");
    return res;
}

}  // namespace intxlab::exp
