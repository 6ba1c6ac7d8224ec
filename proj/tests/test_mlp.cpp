#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "intxlab/csv.hpp"
#include "intxlab/mlp.hpp"
#include "intxlab/rng.hpp"

using namespace intxlab;
using mlp::DropoutMode;
using mlp::MaskSet;
using mlp::MlpConfig;
using mlp::MlpModel;
using mlp::Task;
using mlp::TrainConfig;

namespace {

MlpConfig cfg(int in, std::vector<int> hidden, int out,
              Task task = Task::Regression) {
    MlpConfig c;
    c.input_dim = in;
    c.hidden_widths = std::move(hidden);
    c.output_dim = out;
    c.task = task;
    return c;
}

// Central finite differences through the masked batch loss.
double fd_max_rel_error(MlpModel& model, const Eigen::MatrixXd& X,
                        const Eigen::VectorXd& y, const std::vector<int>& labels,
                        const std::vector<MaskSet>& masks, DropoutMode mode,
                        double decay) {
    const auto g = mlp::loss_and_grad(model, X, y, labels, masks, mode, decay);
    const double h = 1e-5;
    double worst = 0.0;
    for (int l = 0; l < model.layer_count(); ++l) {
        for (Eigen::Index i = 0; i < model.weights(l).rows(); ++i)
            for (Eigen::Index j = 0; j < model.weights(l).cols(); ++j) {
                const double orig = model.weights(l)(i, j);
                model.weights(l)(i, j) = orig + h;
                const double lp =
                    mlp::loss_and_grad(model, X, y, labels, masks, mode, decay).loss;
                model.weights(l)(i, j) = orig - h;
                const double lm =
                    mlp::loss_and_grad(model, X, y, labels, masks, mode, decay).loss;
                model.weights(l)(i, j) = orig;
                const double fd = (lp - lm) / (2.0 * h);
                const double an = g.dW[l](i, j);
                const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
                worst = std::max(worst, std::abs(fd - an) / denom);
            }
        for (Eigen::Index i = 0; i < model.biases(l).size(); ++i) {
            const double orig = model.biases(l)[i];
            model.biases(l)[i] = orig + h;
            const double lp =
                mlp::loss_and_grad(model, X, y, labels, masks, mode, decay).loss;
            model.biases(l)[i] = orig - h;
            const double lm =
                mlp::loss_and_grad(model, X, y, labels, masks, mode, decay).loss;
            model.biases(l)[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = g.db[l][i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("init: parameter counts and determinism") {
    const MlpModel m = MlpModel::init(cfg(25, {32, 32, 32}, 1), 0);
    CHECK(m.parameter_count() == 2977);

    const MlpModel tiny = MlpModel::init(cfg(1, {1}, 1), 0);
    CHECK(tiny.parameter_count() == 4);

    const MlpModel a = MlpModel::init(cfg(5, {7, 3}, 2), 99);
    const MlpModel b = MlpModel::init(cfg(5, {7, 3}, 2), 99);
    for (int l = 0; l < a.layer_count(); ++l) CHECK(a.weights(l) == b.weights(l));
}

TEST_CASE("sample_mask: rates and domain") {
    Rng rng(1);
    const Eigen::VectorXd ones = mlp::sample_mask(0.0, 50, rng);
    CHECK(ones.sum() == 50.0);

    const Eigen::VectorXd half = mlp::sample_mask(0.5, 10000, rng);
    CHECK(std::abs(half.sum() / 10000.0 - 0.5) < 0.02);

    const Eigen::VectorXd heavy = mlp::sample_mask(0.9, 10, rng);
    for (int i = 0; i < 10; ++i) CHECK((heavy[i] == 0.0 || heavy[i] == 1.0));
}

TEST_CASE("predict: identity masks equal mask-free prediction bit-exactly") {
    const MlpModel m = MlpModel::init(cfg(4, {8, 8}, 1), 3);
    Eigen::VectorXd x(4);
    x << 0.3, -0.2, 0.9, -0.7;
    MaskSet masks;
    masks.input = Eigen::VectorXd::Ones(4);
    masks.activations = {Eigen::VectorXd::Ones(8), Eigen::VectorXd::Ones(8)};
    CHECK(m.predict(x, masks, DropoutMode::Plain) == m.predict(x));
}

TEST_CASE("predict: all-zero input mask gives the origin value") {
    const MlpModel m = MlpModel::init(cfg(4, {8}, 1), 5);
    Eigen::VectorXd x(4);
    x << 1.0, 2.0, 3.0, 4.0;
    MaskSet masks;
    masks.input = Eigen::VectorXd::Zero(4);
    const auto at_origin = m.predict(Eigen::VectorXd::Zero(4));
    CHECK(m.predict(x, masks, DropoutMode::Plain) == at_origin);
}

TEST_CASE("predict: hand-computed ReLU chain") {
    // 1 -> [1] -> 1 with w0 = 2, b0 = -1, w1 = 3, b1 = 0.5.
    MlpModel m = MlpModel::init(cfg(1, {1}, 1), 0);
    m.weights(0)(0, 0) = 2.0;
    m.biases(0)[0] = -1.0;
    m.weights(1)(0, 0) = 3.0;
    m.biases(1)[0] = 0.5;
    Eigen::VectorXd x(1);
    x << 1.0;
    // relu(2*1 - 1) = 1; 3*1 + 0.5 = 3.5
    CHECK(m.predict(x)[0] == doctest::Approx(3.5));
    x << -1.0;
    // relu(-3) = 0; 0.5
    CHECK(m.predict(x)[0] == doctest::Approx(0.5));
}

TEST_CASE("predict rejects shape mismatches") {
    const MlpModel m = MlpModel::init(cfg(4, {8}, 1), 5);
    CHECK_THROWS_AS(m.predict(Eigen::VectorXd::Zero(3)), mlp::DimensionError);
    MaskSet bad;
    bad.input = Eigen::VectorXd::Ones(2);
    CHECK_THROWS_AS(m.predict(Eigen::VectorXd::Zero(4), bad, DropoutMode::Plain),
                    mlp::DimensionError);
}

TEST_CASE("loss_and_grad: zero gradient at the minimum, decay-only gradient") {
    MlpModel m = MlpModel::init(cfg(2, {3}, 1), 7);
    Eigen::MatrixXd X(4, 2);
    X << 0.1, 0.2, -0.3, 0.4, 0.5, -0.6, -0.7, -0.8;
    Eigen::VectorXd y(4);
    for (int i = 0; i < 4; ++i) y[i] = m.predict(X.row(i).transpose())[0];

    const auto g = mlp::loss_and_grad(m, X, y, {}, {}, DropoutMode::Plain, 0.0);
    CHECK(g.loss == doctest::Approx(0.0).scale(1.0));
    for (int l = 0; l < m.layer_count(); ++l) {
        CHECK(g.dW[l].cwiseAbs().maxCoeff() < 1e-12);
        CHECK(g.db[l].cwiseAbs().maxCoeff() < 1e-12);
    }

    const auto gd = mlp::loss_and_grad(m, X, y, {}, {}, DropoutMode::Plain, 1.0);
    for (int l = 0; l < m.layer_count(); ++l) {
        CHECK((gd.dW[l] - m.weights(l)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(gd.db[l].cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("gradients match finite differences with masks and decay") {
    // Cases sitting on a ReLU kink (any hidden pre-activation within 1e-3 of
    // zero under the sampled masks) are redrawn: the subgradient convention
    // and central differences legitimately disagree there.
    Rng rng(11);
    int valid = 0;
    for (int trial = 0; valid < 8 && trial < 200; ++trial) {
        const bool classification = trial % 2 == 1;
        const int in = 2 + trial % 3;
        const int out = classification ? 3 : 1;
        MlpModel m = MlpModel::init(
            cfg(in, {3, 2}, out,
                classification ? Task::Classification : Task::Regression),
            trial * 13 + 1);
        for (int l = 0; l < m.layer_count(); ++l)
            for (Eigen::Index i = 0; i < m.biases(l).size(); ++i)
                m.biases(l)[i] = rng.uniform(-0.4, 0.4);
        const int B = 5;
        Eigen::MatrixXd X(B, in);
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < in; ++j) X(i, j) = rng.uniform(-1, 1);
        Eigen::VectorXd y(B);
        std::vector<int> labels;
        if (classification) {
            y.resize(0);
            for (int i = 0; i < B; ++i) labels.push_back(rng.uniform_int(out));
        } else {
            for (int i = 0; i < B; ++i) y[i] = rng.normal();
        }

        std::vector<MaskSet> masks;
        const bool with_masks = trial % 3 != 0;
        if (with_masks) {
            for (int i = 0; i < B; ++i) {
                MaskSet ms;
                ms.input_rate = 0.3;
                ms.activation_rate = 0.25;
                ms.input = mlp::sample_mask(0.3, in, rng);
                ms.activations = {mlp::sample_mask(0.25, 3, rng),
                                  mlp::sample_mask(0.25, 2, rng)};
                masks.push_back(std::move(ms));
            }
        }
        const DropoutMode mode =
            trial % 4 == 2 ? DropoutMode::Inverted : DropoutMode::Plain;

        // Kink guard via an independent forward pass.
        double min_pre = 1e9;
        for (int i = 0; i < B; ++i) {
            Eigen::VectorXd a = X.row(i).transpose();
            if (with_masks) a = a.cwiseProduct(masks[i].input);
            if (with_masks && mode == DropoutMode::Inverted) a /= 1.0 - 0.3;
            for (int l = 0; l + 1 < m.layer_count(); ++l) {
                Eigen::VectorXd z = m.weights(l) * a + m.biases(l);
                min_pre = std::min(min_pre, z.cwiseAbs().minCoeff());
                a = z.cwiseMax(0.0);
                if (with_masks) a = a.cwiseProduct(masks[i].activations[l]);
                if (with_masks && mode == DropoutMode::Inverted) a /= 1.0 - 0.25;
            }
        }
        if (min_pre < 1e-3) continue;

        ++valid;
        const double decay = trial % 2 ? 0.1 : 0.0;
        CHECK(fd_max_rel_error(m, X, y, labels, masks, mode, decay) < 1e-5);
    }
    CHECK(valid == 8);
}

TEST_CASE("inverted-mode mask average matches the mask-free prediction") {
    // Affine regime: hidden pre-activations kept strictly positive so the
    // ReLU net is linear over the sampled inputs.
    MlpModel m = MlpModel::init(cfg(4, {4}, 1), 2);
    m.weights(0) = Eigen::MatrixXd::Identity(4, 4);
    m.biases(0) = Eigen::VectorXd::Constant(4, 10.0);
    Eigen::VectorXd x(4);
    x << 0.5, -0.25, 0.75, -0.5;

    const double clean = m.predict(x)[0];
    const double p = 0.4;
    Rng rng(31);
    double acc = 0.0;
    const int n = 10000;
    std::vector<double> samples;
    samples.reserve(n);
    for (int s = 0; s < n; ++s) {
        MaskSet ms;
        ms.input_rate = p;
        ms.input = mlp::sample_mask(p, 4, rng);
        const double v = m.predict(x, ms, DropoutMode::Inverted)[0];
        samples.push_back(v);
        acc += v;
    }
    const double mean = acc / n;
    double var = 0.0;
    for (double v : samples) var += (v - mean) * (v - mean);
    var /= (n - 1);
    CHECK(std::abs(mean - clean) <= 3.0 * std::sqrt(var / n));
}

TEST_CASE("train: snapshot cadence, determinism and isolation") {
    const auto data = datagen::gen_noise(120, 4, 5);
    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 30;
    tc.checkpoint_every = 10;
    tc.seed = 8;

    MlpModel m = MlpModel::init(cfg(4, {6}, 1), 1);
    const auto trace = mlp::train(m, data, tc);
    REQUIRE(trace.snapshots.size() == 5);
    for (int s = 0; s < 5; ++s) CHECK(trace.snapshots[s].first == (s + 1) * 10);

    // Determinism: rerun from the same init.
    MlpModel m2 = MlpModel::init(cfg(4, {6}, 1), 1);
    const auto trace2 = mlp::train(m2, data, tc);
    CHECK(trace.train_loss == trace2.train_loss);
    for (int l = 0; l < m.layer_count(); ++l) CHECK(m.weights(l) == m2.weights(l));

    // Snapshot isolation: the live model has moved past epoch-10 state.
    const MlpModel& snap = trace.snapshots.front().second;
    CHECK(snap.weights(0) != m.weights(0));
}

TEST_CASE("train: overfits pure noise without regularization") {
    const auto data = datagen::gen_noise(300, 10, 21);
    const double target_var =
        (data.targets.array() - data.targets.mean()).square().sum() / data.n();
    TrainConfig tc;
    tc.epochs = 500;
    tc.batch_size = 32;
    tc.seed = 3;
    MlpModel m = MlpModel::init(cfg(10, {32, 32, 32}, 1), 4);
    const auto trace = mlp::train(m, data, tc);
    CHECK_FALSE(trace.diverged);
    CHECK(trace.train_loss.back() < target_var);
}

TEST_CASE("train: extreme input dropout suppresses learning of X-dependence") {
    const auto data = datagen::gen_noise(300, 10, 22);
    TrainConfig tc;
    tc.epochs = 300;
    tc.batch_size = 32;
    tc.seed = 3;
    tc.dropout.input_rate = 0.99;
    MlpModel m = MlpModel::init(cfg(10, {32, 32, 32}, 1), 4);
    mlp::train(m, data, tc);
    const Eigen::MatrixXd fresh = datagen::sample_features(data.density, 2000, 10, 77);
    const Eigen::MatrixXd preds = m.predict_batch(fresh);
    const double mean = preds.col(0).mean();
    const double var = (preds.col(0).array() - mean).square().sum() / preds.rows();
    CHECK(var < 0.01);
}

TEST_CASE("train: divergence is flagged, not thrown") {
    const auto data = datagen::gen_noise(64, 4, 1);
    TrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 64;
    tc.learning_rate = 1e6;  // guaranteed blow-up
    MlpModel m = MlpModel::init(cfg(4, {8}, 1), 1);
    const auto trace = mlp::train(m, data, tc);
    CHECK(trace.diverged);
    CHECK(trace.final_epoch < 200);
}

TEST_CASE("train: early stopping on held-out plateau") {
    const auto data = datagen::gen_signal(datagen::GeneratorKind::MainEffects,
                                          400, 0.1, 6);
    const auto held = datagen::gen_signal(datagen::GeneratorKind::MainEffects,
                                          200, 0.1, 7);
    TrainConfig tc;
    tc.epochs = 2000;
    tc.batch_size = 32;
    tc.seed = 9;
    tc.patience = 25;
    MlpModel m = MlpModel::init(cfg(25, {16, 16, 16}, 1), 2);
    const auto trace = mlp::train(m, data, tc, &held);
    CHECK(trace.final_epoch < 2000);
    CHECK(trace.best_heldout_epoch() <= trace.final_epoch - 25);
}

TEST_CASE("model serialization round-trips bit-exactly") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "intxlab_test_mlp";
    fs::create_directories(dir);
    const MlpModel m = MlpModel::init(cfg(6, {5, 4}, 2, Task::Classification), 17);
    mlp::save_model(m, dir / "model.txt");
    const MlpModel back = mlp::load_model(dir / "model.txt");
    CHECK(back.config().task == Task::Classification);
    for (int l = 0; l < m.layer_count(); ++l) {
        CHECK(back.weights(l) == m.weights(l));
        CHECK(back.biases(l) == m.biases(l));
    }
    fs::remove_all(dir);
}

TEST_CASE("trace CSV has the declared schema") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "intxlab_test_mlp2";
    fs::create_directories(dir);
    const auto data = datagen::gen_noise(64, 3, 2);
    TrainConfig tc;
    tc.epochs = 12;
    tc.batch_size = 16;
    tc.checkpoint_every = 5;
    MlpModel m = MlpModel::init(cfg(3, {4}, 1), 1);
    const auto trace = mlp::train(m, data, tc);
    mlp::write_trace_csv(trace, dir / "trace.csv");
    const auto rows = intxlab::csv::read(dir / "trace.csv");
    REQUIRE(rows.size() == 13);
    CHECK(rows[0] == std::vector<std::string>{"epoch", "train_loss",
                                              "heldout_loss", "snapshot"});
    CHECK(rows[5][3] == "1");   // epoch 5
    CHECK(rows[1][3] == "0");
    fs::remove_all(dir);
}
