#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace intxlab::exp {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value configuration: UTF-8 text, one pair per line, '#' comments.
// Values stay strings until read through a typed getter.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig from_file(const std::filesystem::path& path);
    static KvConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    void merge(const KvConfig& overrides);  // overrides win

    std::string get_str(const std::string& key, const std::string& def) const;
    double get_double(const std::string& key, double def) const;
    int get_int(const std::string& key, int def) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
    bool get_bool(const std::string& key, bool def) const;
    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& def) const;
    std::vector<int> get_ints(const std::string& key,
                              const std::vector<int>& def) const;

    const std::map<std::string, std::string>& items() const { return items_; }

private:
    std::map<std::string, std::string> items_;
};

// Record of one experiment run: the fully-resolved config snapshot (enough to
// rerun bit-exactly), the per-repetition seeds, the files written, and timing.
struct RunManifest {
    std::string experiment;
    std::map<std::string, std::string> config;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> files;
    std::vector<std::string> warnings;
    double duration_seconds = 0.0;

    void write(const std::filesystem::path& path) const;
    // Reads back the config section; the snapshot doubles as a config file.
    static RunManifest read(const std::filesystem::path& path);
};

struct RunResult {
    int failures = 0;  // nonzero when a verifier check inside the run failed
    RunManifest manifest;
};

const std::vector<std::string>& experiment_names();

// Dispatch by experiment name; writes all artifacts plus manifest.txt into
// out_dir. Throws ConfigError for unknown names or invalid parameters.
RunResult run_experiment(const std::string& name, const KvConfig& cfg,
                         const std::filesystem::path& out_dir);

RunResult run_noise_sweep(const KvConfig& cfg, const std::filesystem::path& out);
RunResult run_width_contrast(const KvConfig& cfg, const std::filesystem::path& out);
RunResult run_epochs_trace(const KvConfig& cfg, const std::filesystem::path& out);
RunResult run_weight_decay_sweep(const KvConfig& cfg, const std::filesystem::path& out);
RunResult run_toy_decomposition(const KvConfig& cfg, const std::filesystem::path& out);
RunResult run_planted_sweep(const KvConfig& cfg, const std::filesystem::path& out);
RunResult run_balance_and_theorems(const KvConfig& cfg, const std::filesystem::path& out);
RunResult run_verify_theorems(const KvConfig& cfg, const std::filesystem::path& out);

// `intxlab decompose`: tabulate a saved model on a grid slice and decompose.
// grid spec: "vars=0,1 points=101 lo=-1 hi=1 [rho=R extent=E fill=V]"
// (space- or semicolon-separated key=value pairs).
RunResult run_decompose(const std::filesystem::path& model_path,
                        const std::string& grid_spec,
                        const std::filesystem::path& out);

}  // namespace intxlab::exp
