#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "intxlab/anova.hpp"
#include "intxlab/datagen.hpp"
#include "intxlab/distill.hpp"
#include "intxlab/rng.hpp"
#include "oracles.hpp"

using namespace intxlab;
using distill::StagedDistillation;
using distill::Tree;

namespace {

Eigen::MatrixXd uniform_samples(int n, int d, std::uint64_t seed) {
    return datagen::sample_features(
        datagen::DensitySpec::product_uniform(-1.0, 1.0, d), n, d, seed);
}

double batch_mse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).squaredNorm() / a.size();
}

}  // namespace

TEST_CASE("fit_tree recovers a clean threshold split") {
    const Eigen::MatrixXd X = uniform_samples(400, 3, 1);
    Eigen::VectorXd r(400);
    for (int i = 0; i < 400; ++i) r[i] = X(i, 0) > 0.0 ? 1.0 : -1.0;

    const Tree t = distill::fit_tree(X, r, 1);
    REQUIRE(t.nodes().size() == 3);
    CHECK(t.nodes()[0].feature == 0);
    CHECK(std::abs(t.nodes()[0].threshold) < 0.05);

    Eigen::VectorXd pred(400);
    for (int i = 0; i < 400; ++i) pred[i] = t.predict(X.row(i));
    CHECK(batch_mse(pred, r) < 0.01);

    // Exhaustive-search oracle agrees this split is achievable.
    CHECK(oracles::best_stump_mse(X, r, 5) < 0.01);
}

TEST_CASE("fit_tree on a constant residual returns a single leaf") {
    const Eigen::MatrixXd X = uniform_samples(50, 2, 2);
    const Eigen::VectorXd r = Eigen::VectorXd::Constant(50, 5.0);
    const Tree t = distill::fit_tree(X, r, 3);
    REQUIRE(t.nodes().size() == 1);
    CHECK(t.nodes()[0].value == doctest::Approx(5.0));
}

TEST_CASE("depth 2 captures an XOR-like pair that depth 1 cannot") {
    // A pure sign product has zero population gain for every single split,
    // so one greedy tree cannot localize it; the boosted depth-2 stage can,
    // while exhaustive search confirms no depth-1 tree comes close.
    const Eigen::MatrixXd X = uniform_samples(2000, 2, 3);
    Eigen::VectorXd r(2000);
    for (int i = 0; i < 2000; ++i)
        r[i] = (X(i, 0) > 0.0 ? 1.0 : -1.0) * (X(i, 1) > 0.0 ? 1.0 : -1.0);

    CHECK(oracles::best_stump_mse(X, r) >= 0.9);

    const auto stage = distill::fit_stage(X, r, 2, 300, 0.1);
    Eigen::VectorXd pred(2000);
    for (int i = 0; i < 2000; ++i) pred[i] = stage.predict(X.row(i));
    CHECK(batch_mse(pred, r) < 0.1);
}

TEST_CASE("single-round unit-shrinkage stage equals a single tree") {
    const Eigen::MatrixXd X = uniform_samples(300, 3, 4);
    Eigen::VectorXd r(300);
    for (int i = 0; i < 300; ++i) r[i] = std::sin(3.0 * X(i, 1));
    const Tree t = distill::fit_tree(X, r, 2);
    const auto stage = distill::fit_stage(X, r, 2, 1, 1.0);
    for (int i = 0; i < 300; ++i)
        CHECK(stage.predict(X.row(i)) == doctest::Approx(t.predict(X.row(i))));
}

TEST_CASE("boosted stumps fit an additive teacher well out of sample") {
    const Eigen::MatrixXd X = uniform_samples(1500, 5, 5);
    Eigen::VectorXd target(1500);
    for (int i = 0; i < 1500; ++i)
        target[i] = std::sin(X(i, 0)) + std::cos(X(i, 1));
    const double mean = target.mean();
    const auto stage =
        distill::fit_stage(X, (target.array() - mean).matrix(), 1, 300, 0.1);

    const Eigen::MatrixXd Xh = uniform_samples(1500, 5, 55);
    Eigen::VectorXd truth(1500), pred(1500);
    for (int i = 0; i < 1500; ++i) {
        truth[i] = std::sin(Xh(i, 0)) + std::cos(Xh(i, 1));
        pred[i] = mean + stage.predict(Xh.row(i));
    }
    const double var =
        (truth.array() - truth.mean()).square().sum() / truth.size();
    const double mse = batch_mse(pred, truth);
    CHECK(1.0 - mse / var >= 0.95);  // R^2
}

TEST_CASE("stumps cannot absorb a pure pair interaction") {
    const Eigen::MatrixXd X = uniform_samples(1500, 4, 6);
    Eigen::VectorXd r(1500);
    for (int i = 0; i < 1500; ++i) r[i] = X(i, 0) * X(i, 1);
    const double rvar = (r.array() - r.mean()).square().sum() / r.size();

    const auto stage = distill::fit_stage(X, r, 1, 300, 0.1);
    Eigen::VectorXd pred(1500);
    for (int i = 0; i < 1500; ++i) pred[i] = stage.predict(X.row(i));
    const double pvar = (pred.array() - pred.mean()).square().sum() / pred.size();
    CHECK(pvar < 0.05 * rvar);
}

TEST_CASE("boosting training residual is non-increasing over rounds") {
    const Eigen::MatrixXd X = uniform_samples(600, 3, 7);
    Eigen::VectorXd r(600);
    for (int i = 0; i < 600; ++i)
        r[i] = std::sin(2.0 * X(i, 0)) + 0.5 * X(i, 1) * X(i, 2);
    Eigen::VectorXd current = r;
    double prev = current.squaredNorm();
    for (int round = 0; round < 40; ++round) {
        const Tree t = distill::fit_tree(X, current, 2);
        for (int i = 0; i < 600; ++i) current[i] -= 0.1 * t.predict(X.row(i));
        const double now = current.squaredNorm();
        CHECK(now <= prev + 1e-9);
        prev = now;
    }
}

TEST_CASE("distill splits an additive-plus-pair teacher as the oracle says") {
    // Oracle: exact ANOVA of the teacher on a d=2 grid gives the true order
    // shares; the distilled shares must land within 10 points.
    auto teacher = [](const Eigen::RowVectorXd& x) {
        return std::sin(x[0]) + std::cos(x[1]);
    };
    const Eigen::MatrixXd X = uniform_samples(1500, 25, 8);
    const StagedDistillation d = distill::distill(
        [&](const Eigen::RowVectorXd& x) { return teacher(x); }, X, 3);
    const auto rep =
        distill::effect_sizes(d, uniform_samples(1500, 25, 88));
    REQUIRE(rep.variance.size() == 3);  // orders 1, 2, >=3
    CHECK(rep.shares_valid);
    CHECK(rep.share[0] >= 0.9);
    CHECK(rep.share[1] <= 0.05);
}

TEST_CASE("distill attributes a pure product to order 2") {
    // d = 3, inside the exact-oracle scope: the exact decomposition of
    // x0*x1 is 100% order 2.
    const Eigen::MatrixXd X = uniform_samples(1500, 3, 9);
    const StagedDistillation d = distill::distill(
        [](const Eigen::RowVectorXd& x) { return x[0] * x[1]; }, X, 3);
    const auto rep = distill::effect_sizes(d, uniform_samples(1500, 3, 99));
    CHECK(rep.share[1] >= 0.8);
}

TEST_CASE("distill of a constant teacher yields all-zero stages") {
    const Eigen::MatrixXd X = uniform_samples(200, 5, 10);
    const StagedDistillation d = distill::distill(
        [](const Eigen::RowVectorXd&) { return 2.5; }, X, 3);
    const auto rep = distill::effect_sizes(d, X);
    for (double v : rep.variance) CHECK(v == doctest::Approx(0.0).scale(1.0));
    CHECK_FALSE(rep.shares_valid);
}

TEST_CASE("distill rejects a non-finite teacher") {
    const Eigen::MatrixXd X = uniform_samples(50, 2, 11);
    CHECK_THROWS_AS(
        distill::distill([](const Eigen::RowVectorXd& x) { return std::log(x[0] - 2.0); },
                         X, 3),
        distill::DistillationError);
}

TEST_CASE("shrinkage ratios against a baseline") {
    const Eigen::MatrixXd X = uniform_samples(800, 5, 12);
    auto t1 = [](const Eigen::RowVectorXd& x) { return std::sin(x[0]) + x[1] * x[2]; };
    auto t2 = [&](const Eigen::RowVectorXd& x) { return 0.5 * t1(x); };
    const auto base = distill::effect_sizes(distill::distill(t1, X, 3, 120), X);
    auto rep = distill::effect_sizes(distill::distill(t2, X, 3, 120), X);
    distill::apply_baseline(rep, base);
    REQUIRE(rep.shrinkage_ratio.size() == rep.variance.size());
    // Scaling the teacher by 0.5 scales every variance by 0.25.
    for (std::size_t k = 0; k < rep.shrinkage_ratio.size(); ++k)
        if (base.variance[k] > 1e-6)
            CHECK(rep.shrinkage_ratio[k] == doctest::Approx(0.25).epsilon(0.2));

    auto same = distill::effect_sizes(distill::distill(t1, X, 3, 120), X);
    distill::apply_baseline(same, base);
    for (std::size_t k = 0; k < same.shrinkage_ratio.size(); ++k)
        CHECK(same.shrinkage_ratio[k] == doctest::Approx(1.0));
}

TEST_CASE("depth bound implies order bound under exact ANOVA") {
    // Distill a d=3 teacher, tabulate each stage's prediction on a grid and
    // decompose exactly: a depth-k stage must hold < 2% of its variance in
    // orders above k.
    auto teacher = [](const Eigen::RowVectorXd& x) {
        return std::sin(x[0]) + x[1] * x[2] + 0.5 * x[0] * x[1] * x[2];
    };
    const Eigen::MatrixXd X = uniform_samples(2000, 3, 13);
    const StagedDistillation d = distill::distill(teacher, X, 4, 200);

    auto grid = std::make_shared<anova::WeightedGrid>(
        anova::WeightedGrid::uniform(3, 41, -1.0, 1.0));
    for (const auto& stage : d.stages) {
        const auto f = anova::tabulate(
            [&](const std::vector<double>& p) {
                Eigen::RowVectorXd x(3);
                x << p[0], p[1], p[2];
                return stage.predict(x);
            },
            grid);
        const auto rep = anova::report(anova::decompose_product(f));
        double total = 0.0, above = 0.0;
        for (const auto& [k, v] : rep.variance_by_order) {
            total += v;
            if (k > stage.depth) above += v;
        }
        if (total > 1e-12) CHECK(above / total < 0.02);
    }
}

TEST_CASE("stage predictions are nearly uncorrelated across stages") {
    auto teacher = [](const Eigen::RowVectorXd& x) {
        return std::sin(x[0]) + std::cos(x[1]) + x[0] * x[1] + 0.4 * x[0] * x[1] * x[2];
    };
    const Eigen::MatrixXd X = uniform_samples(1500, 3, 14);
    // Enough rounds for each stage to saturate its order; an unsaturated
    // stage leaks structure into the next one and correlates with it.
    const StagedDistillation d = distill::distill(teacher, X, 4, 600);
    const Eigen::MatrixXd Xe = uniform_samples(1500, 3, 15);
    std::vector<Eigen::VectorXd> preds;
    for (const auto& s : d.stages) preds.push_back(s.predict_batch(Xe));
    for (std::size_t a = 0; a < preds.size(); ++a)
        for (std::size_t b = a + 1; b < preds.size(); ++b) {
            const auto& pa = preds[a];
            const auto& pb = preds[b];
            const double ca = (pa.array() - pa.mean()).matrix().norm();
            const double cb = (pb.array() - pb.mean()).matrix().norm();
            if (ca < 1e-9 || cb < 1e-9) continue;
            const double corr = ((pa.array() - pa.mean()) *
                                 (pb.array() - pb.mean())).sum() / (ca * cb);
            CHECK(std::abs(corr) < 0.1);
        }
}

TEST_CASE("fit is deterministic given inputs and parameters") {
    const Eigen::MatrixXd X = uniform_samples(500, 4, 16);
    auto teacher = [](const Eigen::RowVectorXd& x) { return x[0] * x[1] + x[2]; };
    const StagedDistillation a = distill::distill(teacher, X, 3, 50);
    const StagedDistillation b = distill::distill(teacher, X, 3, 50);
    const Eigen::MatrixXd Xe = uniform_samples(200, 4, 17);
    for (int i = 0; i < 200; ++i) CHECK(a.predict(Xe.row(i)) == b.predict(Xe.row(i)));
}

TEST_CASE("tree-list serialization round-trips predictions") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "intxlab_test_distill";
    fs::create_directories(dir);
    const Eigen::MatrixXd X = uniform_samples(400, 3, 18);
    auto teacher = [](const Eigen::RowVectorXd& x) {
        return std::sin(x[0]) * std::cos(x[1]) + x[2];
    };
    const StagedDistillation d = distill::distill(teacher, X, 3, 40);
    distill::write_tree_list(d, dir / "trees.txt");
    const StagedDistillation back = distill::read_tree_list(dir / "trees.txt");
    CHECK(back.max_order == d.max_order);
    const Eigen::MatrixXd Xe = uniform_samples(100, 3, 19);
    for (int i = 0; i < 100; ++i)
        CHECK(back.predict(Xe.row(i)) == d.predict(Xe.row(i)));
    fs::remove_all(dir);
}

TEST_CASE("effect-size CSV round-trips") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "intxlab_test_distill2";
    fs::create_directories(dir);
    const Eigen::MatrixXd X = uniform_samples(500, 4, 20);
    auto rep = distill::effect_sizes(
        distill::distill([](const Eigen::RowVectorXd& x) { return x[0] + x[1] * x[2]; },
                         X, 3, 80),
        X);
    distill::write_effect_csv(rep, dir / "effects.csv");
    const auto back = distill::read_effect_csv(dir / "effects.csv");
    REQUIRE(back.variance.size() == rep.variance.size());
    for (std::size_t i = 0; i < rep.variance.size(); ++i) {
        CHECK(back.variance[i] == rep.variance[i]);
        CHECK(back.share[i] == rep.share[i]);
    }
    fs::remove_all(dir);
}
