#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace intxlab::datagen {

struct InvalidSpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Generating distribution of a dataset's inputs. Carried along with the data
// so downstream consumers (grid construction, fresh-sample evaluation) know
// the density w(X) the data came from.
struct DensitySpec {
    enum class Kind { ProductUniform, BivariateGaussian, Empirical };
    Kind kind = Kind::Empirical;
    double lo = -1.0, hi = 1.0;  // ProductUniform
    int dim = 0;                 // ProductUniform
    double rho = 0.0;            // BivariateGaussian

    static DensitySpec product_uniform(double lo, double hi, int dim);
    static DensitySpec bivariate_gaussian(double rho);
    static DensitySpec empirical() { return DensitySpec{}; }
};

enum class GeneratorKind {
    Noise,
    MainEffects,
    PairEffects,
    ThreeWayEffects,
    CorrelatedProduct,
    PlantedInteraction,
};

GeneratorKind generator_kind_from_string(const std::string& s);
std::string to_string(GeneratorKind kind);

// Full description of a synthetic dataset. Fields that do not apply to the
// chosen kind must be left at their unset defaults; validate() rejects them
// otherwise.
struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::Noise;
    int n = 0;
    int d = -1;          // Noise only (default 25 when < 0)
    double sigma = -1;   // signal kinds only (default 0.1 when < 0)
    double rho = -2;     // CorrelatedProduct only
    int k = -1;          // PlantedInteraction only
    int d_base = -1;     // PlantedInteraction only (default 50)
    int c_base = -1;     // PlantedInteraction only (default 20)
    std::uint64_t seed = 0;

    void validate() const;
};

struct Dataset {
    Eigen::MatrixXd features;   // n x d
    Eigen::VectorXd targets;    // regression; size 0 for classification
    std::vector<int> labels;    // classification; empty for regression
    DensitySpec density;

    int n() const { return static_cast<int>(features.rows()); }
    int d() const { return static_cast<int>(features.cols()); }
    bool is_regression() const { return labels.empty(); }
};

Dataset generate(const GeneratorSpec& spec);

// X_i ~ Unif(-1,1), Y ~ N(0,1), independent of X.
Dataset gen_noise(int n, int d, std::uint64_t seed);

// 25 uniform features; mean function sin(x0)+cos(x1), sin(x0)cos(x1) or
// sin(x0)cos(x1)x2 depending on kind; Gaussian noise of std sigma.
Dataset gen_signal(GeneratorKind kind, int n, double sigma, std::uint64_t seed);

// (X1,X2) standardized bivariate Gaussian with correlation rho; Y = X1*X2.
Dataset gen_correlated_product(int n, double rho, std::uint64_t seed);

// Gaussian-blob classification base task plus k extra Unif(0,1) features;
// label forced to the extra class c_base when all extras exceed 0.5. Blob
// centers depend only on (d_base, c_base) so draws with different seeds
// share the same underlying task.
Dataset gen_planted_interaction(int n, int d_base, int c_base, int k,
                                std::uint64_t seed);

// Fresh feature draws from a density (no targets). Used for distillation
// fitting and effect-size evaluation.
Eigen::MatrixXd sample_features(const DensitySpec& density, int n, int d,
                                std::uint64_t seed);

void write_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_csv(const std::filesystem::path& path);

}  // namespace intxlab::datagen
