#include "intxlab/datagen.hpp"

#include <cmath>

#include "intxlab/csv.hpp"
#include "intxlab/rng.hpp"

namespace intxlab::datagen {

namespace {

constexpr int kSignalDim = 25;
constexpr double kDefaultSigma = 0.1;
constexpr double kBlobCenterScale = 0.22;
constexpr double kBlobSigma = 0.5;

// Salt for the planted-interaction task definition, independent of the
// per-call sample seed.
constexpr std::uint64_t kPlantedTaskSalt = 0x706c616e746564ULL;

void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidSpecError(msg);
}

}  // namespace

DensitySpec DensitySpec::product_uniform(double lo, double hi, int dim) {
    if (!(lo < hi)) throw InvalidSpecError("product-uniform requires lo < hi");
    DensitySpec s;
    s.kind = Kind::ProductUniform;
    s.lo = lo;
    s.hi = hi;
    s.dim = dim;
    return s;
}

DensitySpec DensitySpec::bivariate_gaussian(double rho) {
    if (!(std::abs(rho) < 1.0))
        throw InvalidSpecError("bivariate-gaussian requires |rho| < 1");
    DensitySpec s;
    s.kind = Kind::BivariateGaussian;
    s.rho = rho;
    s.dim = 2;
    return s;
}

GeneratorKind generator_kind_from_string(const std::string& s) {
    if (s == "noise") return GeneratorKind::Noise;
    if (s == "main-effects") return GeneratorKind::MainEffects;
    if (s == "pair-effects") return GeneratorKind::PairEffects;
    if (s == "three-way-effects") return GeneratorKind::ThreeWayEffects;
    if (s == "correlated-product") return GeneratorKind::CorrelatedProduct;
    if (s == "planted-interaction") return GeneratorKind::PlantedInteraction;
    throw InvalidSpecError("unknown generator kind: " + s);
}

std::string to_string(GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::Noise: return "noise";
        case GeneratorKind::MainEffects: return "main-effects";
        case GeneratorKind::PairEffects: return "pair-effects";
        case GeneratorKind::ThreeWayEffects: return "three-way-effects";
        case GeneratorKind::CorrelatedProduct: return "correlated-product";
        case GeneratorKind::PlantedInteraction: return "planted-interaction";
    }
    throw InvalidSpecError("bad generator kind");
}

void GeneratorSpec::validate() const {
    require(n >= 1, "n must be >= 1");
    const bool is_signal = kind == GeneratorKind::MainEffects ||
                           kind == GeneratorKind::PairEffects ||
                           kind == GeneratorKind::ThreeWayEffects;
    if (kind != GeneratorKind::Noise)
        require(d < 0, "d applies only to the noise generator");
    if (is_signal) require(sigma == -1 || sigma >= 0.0, "sigma must be >= 0");
    else require(sigma == -1, "sigma applies only to signal generators");
    if (kind == GeneratorKind::CorrelatedProduct)
        require(std::abs(rho) < 1.0, "correlated-product requires |rho| < 1");
    else
        require(rho == -2, "rho applies only to correlated-product");
    if (kind == GeneratorKind::PlantedInteraction) {
        require(k >= 1, "planted interaction order k must be >= 1");
        require(c_base < 0 || c_base >= 2, "c_base must be >= 2");
        require(d_base < 0 || d_base >= 1, "d_base must be >= 1");
    } else {
        require(k < 0 && d_base < 0 && c_base < 0,
                "k/d_base/c_base apply only to planted-interaction");
    }
}

Dataset generate(const GeneratorSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case GeneratorKind::Noise:
            return gen_noise(spec.n, spec.d < 0 ? kSignalDim : spec.d, spec.seed);
        case GeneratorKind::MainEffects:
        case GeneratorKind::PairEffects:
        case GeneratorKind::ThreeWayEffects:
            return gen_signal(spec.kind, spec.n,
                              spec.sigma < 0 ? kDefaultSigma : spec.sigma, spec.seed);
        case GeneratorKind::CorrelatedProduct:
            return gen_correlated_product(spec.n, spec.rho, spec.seed);
        case GeneratorKind::PlantedInteraction:
            return gen_planted_interaction(spec.n, spec.d_base < 0 ? 50 : spec.d_base,
                                           spec.c_base < 0 ? 20 : spec.c_base, spec.k,
                                           spec.seed);
    }
    throw InvalidSpecError("bad generator kind");
}

Dataset gen_noise(int n, int d, std::uint64_t seed) {
    require(n >= 1, "n must be >= 1");
    require(d >= 1, "d must be >= 1");
    Rng rng(seed);
    Dataset ds;
    ds.features.resize(n, d);
    ds.targets.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) ds.features(i, j) = rng.uniform(-1.0, 1.0);
        ds.targets[i] = rng.normal();
    }
    ds.density = DensitySpec::product_uniform(-1.0, 1.0, d);
    return ds;
}

Dataset gen_signal(GeneratorKind kind, int n, double sigma, std::uint64_t seed) {
    require(n >= 1, "n must be >= 1");
    require(sigma >= 0.0, "sigma must be >= 0");
    double (*mean_fn)(const Eigen::RowVectorXd&) = nullptr;
    switch (kind) {
        case GeneratorKind::MainEffects:
            mean_fn = [](const Eigen::RowVectorXd& x) {
                return std::sin(x[0]) + std::cos(x[1]);
            };
            break;
        case GeneratorKind::PairEffects:
            mean_fn = [](const Eigen::RowVectorXd& x) {
                return std::sin(x[0]) * std::cos(x[1]);
            };
            break;
        case GeneratorKind::ThreeWayEffects:
            mean_fn = [](const Eigen::RowVectorXd& x) {
                return std::sin(x[0]) * std::cos(x[1]) * x[2];
            };
            break;
        default:
            throw InvalidSpecError("gen_signal kind must be main-effects, "
                                   "pair-effects or three-way-effects");
    }
    Rng rng(seed);
    Dataset ds;
    ds.features.resize(n, kSignalDim);
    ds.targets.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < kSignalDim; ++j)
            ds.features(i, j) = rng.uniform(-1.0, 1.0);
        ds.targets[i] = mean_fn(ds.features.row(i)) + sigma * rng.normal();
    }
    ds.density = DensitySpec::product_uniform(-1.0, 1.0, kSignalDim);
    return ds;
}

Dataset gen_correlated_product(int n, double rho, std::uint64_t seed) {
    require(n >= 1, "n must be >= 1");
    require(std::abs(rho) < 1.0, "|rho| must be < 1");
    Rng rng(seed);
    Dataset ds;
    ds.features.resize(n, 2);
    ds.targets.resize(n);
    const double ortho = std::sqrt(1.0 - rho * rho);
    for (int i = 0; i < n; ++i) {
        const double z1 = rng.normal();
        const double z2 = rng.normal();
        const double x1 = z1;
        const double x2 = rho * z1 + ortho * z2;
        ds.features(i, 0) = x1;
        ds.features(i, 1) = x2;
        ds.targets[i] = x1 * x2;
    }
    ds.density = DensitySpec::bivariate_gaussian(rho);
    return ds;
}

Dataset gen_planted_interaction(int n, int d_base, int c_base, int k,
                                std::uint64_t seed) {
    require(n >= 1, "n must be >= 1");
    require(d_base >= 1, "d_base must be >= 1");
    require(c_base >= 2, "c_base must be >= 2");
    require(k >= 1, "k must be >= 1");

    // Task definition (blob centers) is a function of the task shape only,
    // so train and test splits drawn with different seeds agree on it.
    Rng task_rng(mix64(kPlantedTaskSalt ^ mix64(static_cast<std::uint64_t>(d_base)) ^
                       mix64(static_cast<std::uint64_t>(c_base) << 20)));
    Eigen::MatrixXd centers(c_base, d_base);
    for (int c = 0; c < c_base; ++c)
        for (int j = 0; j < d_base; ++j)
            centers(c, j) = kBlobCenterScale * task_rng.normal();

    Rng rng(seed);
    Dataset ds;
    const int d = d_base + k;
    ds.features.resize(n, d);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const int base_label = rng.uniform_int(c_base);
        for (int j = 0; j < d_base; ++j)
            ds.features(i, j) = centers(base_label, j) + kBlobSigma * rng.normal();
        bool all_high = true;
        for (int j = 0; j < k; ++j) {
            const double v = rng.uniform01();
            ds.features(i, d_base + j) = v;
            all_high = all_high && v > 0.5;
        }
        ds.labels[i] = all_high ? c_base : base_label;
    }
    ds.density = DensitySpec::empirical();
    return ds;
}

Eigen::MatrixXd sample_features(const DensitySpec& density, int n, int d,
                                std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd X(n, d);
    switch (density.kind) {
        case DensitySpec::Kind::ProductUniform:
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    X(i, j) = rng.uniform(density.lo, density.hi);
            return X;
        case DensitySpec::Kind::BivariateGaussian: {
            require(d == 2, "bivariate-gaussian density is two-dimensional");
            const double ortho = std::sqrt(1.0 - density.rho * density.rho);
            for (int i = 0; i < n; ++i) {
                const double z1 = rng.normal();
                const double z2 = rng.normal();
                X(i, 0) = z1;
                X(i, 1) = density.rho * z1 + ortho * z2;
            }
            return X;
        }
        case DensitySpec::Kind::Empirical:
            throw InvalidSpecError("cannot sample fresh features from an empirical density");
    }
    throw InvalidSpecError("bad density kind");
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
    csv::Writer w(path);
    std::vector<std::string> header;
    header.reserve(ds.d() + 1);
    for (int j = 0; j < ds.d(); ++j) header.push_back("x" + std::to_string(j));
    header.push_back(ds.is_regression() ? "y" : "label");
    w.row(header);
    for (int i = 0; i < ds.n(); ++i) {
        std::vector<std::string> row;
        row.reserve(ds.d() + 1);
        for (int j = 0; j < ds.d(); ++j) row.push_back(csv::num(ds.features(i, j)));
        if (ds.is_regression()) row.push_back(csv::num(ds.targets[i]));
        else row.push_back(std::to_string(ds.labels[i]));
        w.row(row);
    }
}

Dataset read_csv(const std::filesystem::path& path) {
    const auto rows = csv::read(path);
    if (rows.size() < 2) throw InvalidSpecError("dataset CSV has no data rows");
    const auto& header = rows.front();
    const int d = static_cast<int>(header.size()) - 1;
    if (d < 1) throw InvalidSpecError("dataset CSV has no feature columns");
    const bool regression = header.back() == "y";
    if (!regression && header.back() != "label")
        throw InvalidSpecError("dataset CSV last column must be y or label");
    const int n = static_cast<int>(rows.size()) - 1;
    Dataset ds;
    ds.features.resize(n, d);
    if (regression) ds.targets.resize(n);
    else ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const auto& r = rows[i + 1];
        if (static_cast<int>(r.size()) != d + 1)
            throw InvalidSpecError("dataset CSV row width mismatch");
        for (int j = 0; j < d; ++j) ds.features(i, j) = csv::to_double(r[j]);
        if (regression) ds.targets[i] = csv::to_double(r[d]);
        else ds.labels[i] = static_cast<int>(csv::to_double(r[d]));
    }
    ds.density = DensitySpec::empirical();
    return ds;
}

}  // namespace intxlab::datagen
