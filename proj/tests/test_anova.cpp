#include <cmath>
#include <filesystem>
#include <memory>

#include "doctest.h"
#include "intxlab/anova.hpp"
#include "intxlab/rng.hpp"
#include "oracles.hpp"

using namespace intxlab;
using anova::EffectTable;
using anova::GridFunction;
using anova::WeightedGrid;

namespace {

std::shared_ptr<const WeightedGrid> uniform_grid(int d, int points) {
    return std::make_shared<WeightedGrid>(WeightedGrid::uniform(d, points, -1.0, 1.0));
}

GridFunction tab(double (*fn)(const std::vector<double>&),
                 std::shared_ptr<const WeightedGrid> g) {
    return anova::tabulate([fn](const std::vector<double>& x) { return fn(x); }, g);
}

double product_xy(const std::vector<double>& x) { return x[0] * x[1]; }
double additive(const std::vector<double>& x) {
    return std::sin(x[0]) + std::cos(x[1]);
}
double mixed(const std::vector<double>& x) {
    return std::sin(x[0]) + std::cos(x[1]) + 0.5 * x[0] * x[1];
}
double constant3(const std::vector<double>&) { return 3.0; }

}  // namespace

TEST_CASE("tabulate: constant, direct evaluation, error path") {
    auto g = uniform_grid(2, 11);
    const GridFunction c = tab(constant3, g);
    CHECK(c.values.minCoeff() == 3.0);
    CHECK(c.values.maxCoeff() == 3.0);

    auto g41 = uniform_grid(2, 41);
    const GridFunction f = tab(product_xy, g41);
    // First grid point is the lowest cell midpoint in both axes.
    const auto p = g41->point(0);
    CHECK(f.values[0] == doctest::Approx(p[0] * p[1]));
    CHECK(p[0] < -0.9);

    CHECK_THROWS_AS(
        anova::tabulate([](const std::vector<double>&) { return std::nan(""); }, g),
        anova::TabulationError);
}

TEST_CASE("decompose_product: x0*x1 on the uniform grid") {
    auto g = uniform_grid(2, 101);
    const GridFunction f = tab(product_xy, g);
    const EffectTable t = anova::decompose_product(f);
    const auto rep = anova::report(t);

    CHECK(rep.variance_by_subset.at({0}) < 1e-12);
    CHECK(rep.variance_by_subset.at({1}) < 1e-12);
    CHECK(rep.variance_by_subset.at({0, 1}) ==
          doctest::Approx(1.0 / 9.0).epsilon(0.005));
    CHECK(t.residual_tolerance < 1e-10);
    CHECK(rep.variance_by_order.at(1) < 1e-12);
    CHECK(rep.variance_by_order.at(2) == doctest::Approx(1.0 / 9.0).epsilon(0.005));
}

TEST_CASE("decompose_product: additive function has no pure interaction") {
    auto g = uniform_grid(2, 101);
    const EffectTable t = anova::decompose_product(tab(additive, g));
    const auto rep = anova::report(t);
    CHECK(rep.variance_by_subset.at({0, 1}) < 1e-12);
}

TEST_CASE("decompose_product: constant function") {
    auto g = uniform_grid(2, 31);
    const EffectTable t = anova::decompose_product(tab(constant3, g));
    const auto rep = anova::report(t);
    for (const auto& [u, v] : rep.variance_by_subset) CHECK(v < 1e-20);
    CHECK(t.effects.at({}).values[0] == doctest::Approx(3.0));
}

TEST_CASE("decompose_product rejects non-product weights") {
    auto g = std::make_shared<WeightedGrid>(WeightedGrid::bivariate_gaussian(0.5, 21));
    const GridFunction f = tab(product_xy, g);
    CHECK_THROWS_AS(anova::decompose_product(f), anova::WrongWeightsError);
}

TEST_CASE("report: mixed function matches quadrature oracle") {
    // Oracle: 1-d quadrature. Order 1 = Var(sin X0) + Var(cos X1); order 2 =
    // 0.25 * Var(X0 X1) = 0.25 * (1/3)^2.
    const double var_sin = oracles::uniform_var([](double x) { return std::sin(x); },
                                                -1.0, 1.0);
    const double var_cos = oracles::uniform_var([](double x) { return std::cos(x); },
                                                -1.0, 1.0);
    const double order1 = var_sin + var_cos;   // = 0.291927...
    const double order2 = 0.25 / 9.0;          // = 0.027778

    auto g = uniform_grid(2, 101);
    const auto rep = anova::report(anova::decompose_product(tab(mixed, g)));
    CHECK(rep.variance_by_order.at(1) == doctest::Approx(order1).epsilon(0.01));
    CHECK(rep.variance_by_order.at(2) == doctest::Approx(order2).epsilon(0.01));

    // Variance additivity under product weights.
    double sum = 0.0;
    for (const auto& [u, v] : rep.variance_by_subset) sum += v;
    CHECK(sum == doctest::Approx(rep.total_variance).epsilon(1e-10));
}

TEST_CASE("decompose_weighted matches the dense constrained-LS oracle") {
    // Small grid so the dense solve stays cheap; correlated weights.
    const int m = 15;
    auto g = std::make_shared<WeightedGrid>(WeightedGrid::bivariate_gaussian(0.6, m));
    const GridFunction f = tab(product_xy, g);
    const EffectTable t = anova::decompose_weighted(f, 2);
    CHECK(t.residual_tolerance < 1e-8);

    Eigen::MatrixXd F(m, m), W(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const std::size_t flat = static_cast<std::size_t>(i) * m + j;
            F(i, j) = f.values[flat];
            W(i, j) = g->weight(flat);
        }
    const auto oracle = oracles::dense_anova_2d(F, W);

    const auto& f0 = t.effects.at({0}).values;
    const auto& f1 = t.effects.at({1}).values;
    const auto& f01 = t.effects.at({0, 1}).values;
    for (int i = 0; i < m; ++i) CHECK(f0[i] == doctest::Approx(oracle.f0[i]).epsilon(1e-6).scale(1.0));
    for (int j = 0; j < m; ++j) CHECK(f1[j] == doctest::Approx(oracle.f1[j]).epsilon(1e-6).scale(1.0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            CHECK(f01[static_cast<std::size_t>(i) * m + j] ==
                  doctest::Approx(oracle.f01(i, j)).epsilon(1e-6).scale(1.0));
}

TEST_CASE("decompose_weighted: interaction dominates at rho = 0.01") {
    auto g = std::make_shared<WeightedGrid>(WeightedGrid::bivariate_gaussian(0.01, 61));
    const auto rep = anova::report(anova::decompose_weighted(tab(product_xy, g), 2));
    const auto shares = rep.shares_by_order();
    CHECK(shares.at(2) >= 0.95);
}

TEST_CASE("decompose_weighted: main effects absorb variance at rho = 0.99") {
    auto g = std::make_shared<WeightedGrid>(WeightedGrid::bivariate_gaussian(0.99, 61));
    const auto rep = anova::report(anova::decompose_weighted(tab(product_xy, g), 2));
    const auto shares = rep.shares_by_order();
    CHECK(shares.at(1) >= 0.80);
}

TEST_CASE("solver agreement: product weights") {
    auto g = uniform_grid(2, 41);
    const GridFunction f = tab(mixed, g);
    const EffectTable a = anova::decompose_product(f);
    const EffectTable b = anova::decompose_weighted(f, 2);
    for (const auto& [u, eff] : a.effects) {
        const auto& other = b.effects.at(u).values;
        for (Eigen::Index i = 0; i < eff.values.size(); ++i)
            CHECK(eff.values[i] == doctest::Approx(other[i]).epsilon(1e-8).scale(1.0));
    }
}

TEST_CASE("reconstruction and orthogonality invariants") {
    // d = 3 with a function touching several subsets.
    auto g = uniform_grid(3, 21);
    const GridFunction f = anova::tabulate(
        [](const std::vector<double>& x) {
            return 0.3 + x[0] + 0.5 * x[1] * x[2] + x[0] * x[1] * x[2] +
                   std::sin(x[2]);
        },
        g);
    const EffectTable t = anova::decompose_product(f);

    const Eigen::VectorXd recon = t.reconstruction();
    double wrms = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i) {
        const double d = recon[i] - f.values[i];
        wrms += g->weight(i) * d * d;
    }
    CHECK(std::sqrt(wrms) < 1e-8);

    // Orthogonality against 20 random functions of strict-subset axes.
    Rng rng(99);
    for (const auto& [u, eff] : t.effects) {
        if (u.empty()) continue;
        for (unsigned vm = 0; vm + 1 < (1u << u.size()); ++vm) {
            std::vector<int> v;
            for (std::size_t tU = 0; tU < u.size(); ++tU)
                if (vm & (1u << tU)) v.push_back(u[tU]);
            for (int trial = 0; trial < 20 / static_cast<int>(u.size()); ++trial) {
                // Random coefficients of a separable polynomial in the v axes.
                std::vector<std::array<double, 3>> coef(v.size());
                for (auto& c : coef)
                    c = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
                double inner = 0.0;
                for (std::size_t flat = 0; flat < g->size(); ++flat) {
                    const auto pt = g->point(flat);
                    double gv = 1.0;
                    for (std::size_t a = 0; a < v.size(); ++a) {
                        const double x = pt[v[a]];
                        gv *= coef[a][0] + coef[a][1] * x + coef[a][2] * x * x;
                    }
                    // Lift the effect to the full grid.
                    std::vector<int> idx;
                    g->unflatten(flat, idx);
                    std::size_t sub = 0;
                    for (int var : u) sub = sub * g->axis_size(var) + idx[var];
                    inner += g->weight(flat) * eff.values[sub] * gv;
                }
                CHECK(std::abs(inner) < 1e-8);
            }
        }
    }
}

TEST_CASE("idempotence: a pure effect comes back unchanged") {
    auto g = uniform_grid(2, 41);
    // x0*x1 is already a pure pair effect under the symmetric uniform grid.
    const GridFunction f = tab(product_xy, g);
    const EffectTable t = anova::decompose_product(f);
    CHECK(t.effects.at({0}).values.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(t.effects.at({1}).values.cwiseAbs().maxCoeff() < 1e-12);
    std::size_t flat = 0;
    double max_dev = 0.0;
    for (int i = 0; i < 41; ++i)
        for (int j = 0; j < 41; ++j, ++flat)
            max_dev = std::max(max_dev,
                               std::abs(t.effects.at({0, 1}).values[flat] -
                                        f.values[flat]));
    CHECK(max_dev < 1e-12);
}

TEST_CASE("degenerate density is rejected") {
    // A slice with zero marginal mass.
    Eigen::VectorXd axis(3);
    axis << -1.0, 0.0, 1.0;
    Eigen::VectorXd w(9);
    w << 0.0, 0.0, 0.0, 0.1, 0.2, 0.1, 0.2, 0.2, 0.2;  // first x0-slice empty
    auto g = std::make_shared<WeightedGrid>(
        std::vector<Eigen::VectorXd>{axis, axis}, w);
    GridFunction f;
    f.grid = g;
    f.values = Eigen::VectorXd::LinSpaced(9, 0.0, 1.0);
    CHECK_THROWS_AS(anova::decompose_weighted(f, 2), anova::DegenerateDensityError);
}

TEST_CASE("bivariate gaussian grid with rho = 0 is product form") {
    const WeightedGrid g = WeightedGrid::bivariate_gaussian(0.0, 31);
    CHECK(g.product_form());
    const WeightedGrid g2 = WeightedGrid::bivariate_gaussian(0.5, 31);
    CHECK_FALSE(g2.product_form());
}

TEST_CASE("report CSV round-trips") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "intxlab_test_anova";
    fs::create_directories(dir);
    auto g = uniform_grid(2, 41);
    const auto rep = anova::report(anova::decompose_product(tab(mixed, g)));
    anova::write_report_csv(rep, dir / "rep.csv");
    const auto back = anova::read_report_csv(dir / "rep.csv");
    CHECK(back.total_variance == rep.total_variance);
    CHECK(back.variance_by_subset == rep.variance_by_subset);
    CHECK(back.variance_by_order == rep.variance_by_order);
    fs::remove_all(dir);
}
