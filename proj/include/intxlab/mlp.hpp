#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "intxlab/datagen.hpp"
#include "intxlab/rng.hpp"

namespace intxlab::mlp {

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    int epoch = -1;
    explicit DivergenceError(const std::string& msg, int epoch_)
        : std::runtime_error(msg), epoch(epoch_) {}
};

enum class Task { Regression, Classification };

struct MlpConfig {
    int input_dim = 1;
    std::vector<int> hidden_widths;
    int output_dim = 1;
    Task task = Task::Regression;

    void validate() const;
};

enum class DropoutMode { Plain, Inverted };

struct DropoutSpec {
    double input_rate = 0.0;
    double activation_rate = 0.0;
    DropoutMode mode = DropoutMode::Plain;

    void validate() const;
    bool any() const { return input_rate > 0.0 || activation_rate > 0.0; }
};

struct TrainConfig {
    double learning_rate = 0.01;
    int epochs = 100;
    int batch_size = 32;
    double weight_decay = 0.0;
    DropoutSpec dropout;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0: no snapshots
    int patience = 0;          // epochs without held-out improvement; 0: off

    void validate(int n_train) const;
};

// Per-sample dropout masks for one forward pass: input mask plus one mask per
// hidden layer. Empty vectors mean "no mask on that stage". The rates are the
// ones the masks were drawn with; inverted mode divides kept units by 1-rate.
struct MaskSet {
    Eigen::VectorXd input;
    std::vector<Eigen::VectorXd> activations;
    double input_rate = 0.0;
    double activation_rate = 0.0;
};

Eigen::VectorXd sample_mask(double p, int dim, Rng& rng);

class MlpModel {
public:
    static MlpModel init(const MlpConfig& config, std::uint64_t seed);

    const MlpConfig& config() const { return config_; }
    int layer_count() const { return static_cast<int>(weights_.size()); }
    Eigen::MatrixXd& weights(int l) { return weights_[l]; }
    const Eigen::MatrixXd& weights(int l) const { return weights_[l]; }
    Eigen::VectorXd& biases(int l) { return biases_[l]; }
    const Eigen::VectorXd& biases(int l) const { return biases_[l]; }
    std::size_t parameter_count() const;

    Eigen::VectorXd predict(const Eigen::VectorXd& x) const;
    Eigen::VectorXd predict(const Eigen::VectorXd& x, const MaskSet& masks,
                            DropoutMode mode) const;
    // Row-per-sample batch prediction, mask free.
    Eigen::MatrixXd predict_batch(const Eigen::MatrixXd& X) const;

private:
    friend MlpModel load_model(const std::filesystem::path&);
    MlpConfig config_;
    std::vector<Eigen::MatrixXd> weights_;  // out x in
    std::vector<Eigen::VectorXd> biases_;
};

struct Gradients {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
};

// Mean data loss over the batch plus (lambda/2) * sum of squared weights,
// with reverse-mode gradients through the masked forward pass. Masks are
// per-sample (one MaskSet per row of X) and constants w.r.t. differentiation.
// X is row-per-sample; targets is a column for regression, labels for
// classification.
Gradients loss_and_grad(const MlpModel& model, const Eigen::MatrixXd& X,
                        const Eigen::VectorXd& targets,
                        const std::vector<int>& labels,
                        const std::vector<MaskSet>& masks, DropoutMode mode,
                        double weight_decay);

struct TrainTrace {
    std::vector<double> train_loss;    // clean (mask-free) per-epoch loss
    std::vector<double> heldout_loss;  // NaN when no held-out set supplied
    std::vector<std::pair<int, MlpModel>> snapshots;
    bool diverged = false;
    int final_epoch = 0;

    int best_heldout_epoch() const;  // 1-based; 0 when unavailable
};

// Minibatch SGD with fresh per-sample dropout masks each step. Mutates
// `model` to the final state and reports the trace. Non-finite loss aborts
// training and marks the trace diverged.
TrainTrace train(MlpModel& model, const datagen::Dataset& data, const TrainConfig& cfg,
                 const datagen::Dataset* heldout = nullptr);

// Clean evaluation loss (MSE or mean cross-entropy) on a dataset.
double evaluate_loss(const MlpModel& model, const datagen::Dataset& data);
// Classification accuracy (argmax).
double evaluate_accuracy(const MlpModel& model, const datagen::Dataset& data);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path);

}  // namespace intxlab::mlp
