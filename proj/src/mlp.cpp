#include "intxlab/mlp.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "intxlab/csv.hpp"

namespace intxlab::mlp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Batch-matrix masks; empty matrices mean "stage unmasked".
struct BatchMasks {
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> activations;
    double input_rate = 0.0;
    double activation_rate = 0.0;
};

double mask_scale(double rate, DropoutMode mode) {
    return mode == DropoutMode::Inverted ? 1.0 / (1.0 - rate) : 1.0;
}

// Forward pass over a batch keeping intermediates for backprop.
struct ForwardState {
    Eigen::MatrixXd input;                // masked input actually fed in
    std::vector<Eigen::MatrixXd> pre;     // pre-activations per layer
    std::vector<Eigen::MatrixXd> post;    // masked post-activations per hidden layer
    Eigen::MatrixXd output;               // identity or softmax probabilities
};

ForwardState forward_batch(const MlpModel& model, const Eigen::MatrixXd& X,
                           const BatchMasks* masks, DropoutMode mode) {
    const int layers = model.layer_count();
    ForwardState st;
    st.input = X;
    if (masks && masks->input.size() > 0)
        st.input = (st.input.array() * masks->input.array() *
                    mask_scale(masks->input_rate, mode))
                       .matrix();
    Eigen::MatrixXd a = st.input;
    st.pre.resize(layers);
    st.post.resize(layers - 1);
    for (int l = 0; l < layers; ++l) {
        st.pre[l] = (a * model.weights(l).transpose()).rowwise() +
                    model.biases(l).transpose();
        if (l + 1 < layers) {
            Eigen::MatrixXd h = st.pre[l].cwiseMax(0.0);
            if (masks && !masks->activations.empty() &&
                masks->activations[l].size() > 0)
                h = (h.array() * masks->activations[l].array() *
                     mask_scale(masks->activation_rate, mode))
                        .matrix();
            st.post[l] = std::move(h);
            a = st.post[l];
        }
    }
    st.output = st.pre.back();
    return st;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd p = z;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double m = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

}  // namespace

void MlpConfig::validate() const {
    require(input_dim >= 1, "input_dim must be >= 1");
    require(output_dim >= 1, "output_dim must be >= 1");
    require(!hidden_widths.empty(), "hidden_widths must be nonempty");
    for (int w : hidden_widths) require(w >= 1, "hidden widths must be >= 1");
}

void DropoutSpec::validate() const {
    require(input_rate >= 0.0 && input_rate < 1.0, "input dropout rate must be in [0,1)");
    require(activation_rate >= 0.0 && activation_rate < 1.0,
            "activation dropout rate must be in [0,1)");
}

void TrainConfig::validate(int n_train) const {
    require(learning_rate > 0.0, "learning rate must be positive");
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1 && batch_size <= n_train,
            "batch_size must be in [1, n_train]");
    require(weight_decay >= 0.0, "weight decay must be >= 0");
    require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
    require(patience >= 0, "patience must be >= 0");
    dropout.validate();
}

Eigen::VectorXd sample_mask(double p, int dim, Rng& rng) {
    require(p >= 0.0 && p < 1.0, "dropout rate must be in [0,1)");
    Eigen::VectorXd m(dim);
    for (int i = 0; i < dim; ++i) m[i] = rng.bernoulli(p) ? 0.0 : 1.0;
    return m;
}

MlpModel MlpModel::init(const MlpConfig& config, std::uint64_t seed) {
    config.validate();
    MlpModel model;
    model.config_ = config;
    std::vector<int> dims;
    dims.push_back(config.input_dim);
    for (int w : config.hidden_widths) dims.push_back(w);
    dims.push_back(config.output_dim);

    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fan_in = dims[l];
        const int fan_out = dims[l + 1];
        Eigen::MatrixXd W(fan_out, fan_in);
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) W(i, j) = scale * rng.normal();
        model.weights_.push_back(std::move(W));
        model.biases_.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return model;
}

std::size_t MlpModel::parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l)
        n += static_cast<std::size_t>(weights_[l].size()) +
             static_cast<std::size_t>(biases_[l].size());
    return n;
}

Eigen::VectorXd MlpModel::predict(const Eigen::VectorXd& x) const {
    return predict(x, MaskSet{}, DropoutMode::Plain);
}

Eigen::VectorXd MlpModel::predict(const Eigen::VectorXd& x, const MaskSet& masks,
                                  DropoutMode mode) const {
    if (x.size() != config_.input_dim)
        throw DimensionError("input length " + std::to_string(x.size()) +
                             " does not match input_dim " +
                             std::to_string(config_.input_dim));
    BatchMasks bm;
    bm.input_rate = masks.input_rate;
    bm.activation_rate = masks.activation_rate;
    if (masks.input.size() > 0) {
        if (masks.input.size() != x.size())
            throw DimensionError("input mask length mismatch");
        bm.input = masks.input.transpose();
    }
    if (!masks.activations.empty()) {
        if (static_cast<int>(masks.activations.size()) != layer_count() - 1)
            throw DimensionError("one activation mask per hidden layer required");
        for (int l = 0; l + 1 < layer_count(); ++l) {
            if (masks.activations[l].size() != config_.hidden_widths[l])
                throw DimensionError("activation mask width mismatch at layer " +
                                     std::to_string(l));
            bm.activations.push_back(masks.activations[l].transpose());
        }
    }
    const ForwardState st = forward_batch(*this, x.transpose(), &bm, mode);
    if (config_.task == Task::Classification)
        return softmax_rows(st.output).row(0).transpose();
    return st.output.row(0).transpose();
}

Eigen::MatrixXd MlpModel::predict_batch(const Eigen::MatrixXd& X) const {
    if (X.cols() != config_.input_dim)
        throw DimensionError("batch width does not match input_dim");
    const ForwardState st = forward_batch(*this, X, nullptr, DropoutMode::Plain);
    if (config_.task == Task::Classification) return softmax_rows(st.output);
    return st.output;
}

namespace {

Gradients batched_loss_grad(const MlpModel& model, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& targets,
                            const std::vector<int>& labels,
                            const BatchMasks* masks, DropoutMode mode,
                            double weight_decay) {
    const int layers = model.layer_count();
    const auto B = X.rows();
    const ForwardState st = forward_batch(model, X, masks, mode);

    Gradients g;
    g.dW.resize(layers);
    g.db.resize(layers);

    Eigen::MatrixXd dZ;  // gradient w.r.t. the output pre-activation
    if (model.config().task == Task::Regression) {
        Eigen::MatrixXd diff = st.output;
        diff.col(0) -= targets;  // output_dim 1 for regression in practice
        if (st.output.cols() > 1)
            throw DimensionError("regression loss expects output_dim == 1");
        g.loss = diff.squaredNorm() / static_cast<double>(B);
        dZ = 2.0 / static_cast<double>(B) * diff;
    } else {
        const Eigen::MatrixXd P = softmax_rows(st.output);
        double ce = 0.0;
        dZ = P;
        for (Eigen::Index i = 0; i < B; ++i) {
            const int y = labels[static_cast<std::size_t>(i)];
            ce -= std::log(std::max(P(i, y), 1e-300));
            dZ(i, y) -= 1.0;
        }
        g.loss = ce / static_cast<double>(B);
        dZ /= static_cast<double>(B);
    }

    for (int l = layers - 1; l >= 0; --l) {
        const Eigen::MatrixXd& a_prev = (l == 0) ? st.input : st.post[l - 1];
        g.dW[l] = dZ.transpose() * a_prev;
        g.db[l] = dZ.colwise().sum().transpose();
        if (weight_decay > 0.0) g.dW[l] += weight_decay * model.weights(l);
        if (l > 0) {
            Eigen::MatrixXd dH = dZ * model.weights(l);
            if (masks && !masks->activations.empty() &&
                masks->activations[l - 1].size() > 0)
                dH = (dH.array() * masks->activations[l - 1].array() *
                      mask_scale(masks->activation_rate, mode))
                         .matrix();
            dZ = (dH.array() * (st.pre[l - 1].array() > 0.0).cast<double>()).matrix();
        }
    }

    if (weight_decay > 0.0) {
        double penalty = 0.0;
        for (int l = 0; l < layers; ++l) penalty += model.weights(l).squaredNorm();
        g.loss += 0.5 * weight_decay * penalty;
    }
    return g;
}

}  // namespace

Gradients loss_and_grad(const MlpModel& model, const Eigen::MatrixXd& X,
                        const Eigen::VectorXd& targets,
                        const std::vector<int>& labels,
                        const std::vector<MaskSet>& masks, DropoutMode mode,
                        double weight_decay) {
    require(X.rows() >= 1, "batch must be nonempty");
    BatchMasks bm;
    const BatchMasks* bmp = nullptr;
    if (!masks.empty()) {
        if (static_cast<Eigen::Index>(masks.size()) != X.rows())
            throw DimensionError("one MaskSet per batch row required");
        bm.input_rate = masks.front().input_rate;
        bm.activation_rate = masks.front().activation_rate;
        if (masks.front().input.size() > 0) {
            bm.input.resize(X.rows(), X.cols());
            for (Eigen::Index i = 0; i < X.rows(); ++i) {
                if (masks[i].input.size() != X.cols())
                    throw DimensionError("input mask width mismatch");
                bm.input.row(i) = masks[i].input.transpose();
            }
        }
        if (!masks.front().activations.empty()) {
            const int hidden = model.layer_count() - 1;
            if (static_cast<int>(masks.front().activations.size()) != hidden)
                throw DimensionError("one activation mask per hidden layer required");
            bm.activations.resize(hidden);
            for (int l = 0; l < hidden; ++l) {
                bm.activations[l].resize(X.rows(), model.config().hidden_widths[l]);
                for (Eigen::Index i = 0; i < X.rows(); ++i)
                    bm.activations[l].row(i) = masks[i].activations[l].transpose();
            }
        }
        bmp = &bm;
    }
    Gradients g = batched_loss_grad(model, X, targets, labels, bmp, mode, weight_decay);
    if (!std::isfinite(g.loss)) throw DivergenceError("non-finite loss", -1);
    return g;
}

int TrainTrace::best_heldout_epoch() const {
    int best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < heldout_loss.size(); ++e) {
        if (std::isfinite(heldout_loss[e]) && heldout_loss[e] < best_loss) {
            best_loss = heldout_loss[e];
            best = static_cast<int>(e) + 1;
        }
    }
    return best;
}

double evaluate_loss(const MlpModel& model, const datagen::Dataset& data) {
    const Eigen::MatrixXd out = model.predict_batch(data.features);
    if (model.config().task == Task::Regression) {
        return (out.col(0) - data.targets).squaredNorm() /
               static_cast<double>(data.n());
    }
    double ce = 0.0;
    for (int i = 0; i < data.n(); ++i)
        ce -= std::log(std::max(out(i, data.labels[i]), 1e-300));
    return ce / data.n();
}

double evaluate_accuracy(const MlpModel& model, const datagen::Dataset& data) {
    require(!data.is_regression(), "accuracy requires a classification dataset");
    const Eigen::MatrixXd out = model.predict_batch(data.features);
    int hits = 0;
    for (int i = 0; i < data.n(); ++i) {
        Eigen::Index arg = 0;
        out.row(i).maxCoeff(&arg);
        if (static_cast<int>(arg) == data.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / data.n();
}

TrainTrace train(MlpModel& model, const datagen::Dataset& data, const TrainConfig& cfg,
                 const datagen::Dataset* heldout) {
    cfg.validate(data.n());
    const bool classification = model.config().task == Task::Classification;
    require(classification != data.is_regression(),
            "dataset task does not match model task");
    if (heldout)
        require(heldout->is_regression() == data.is_regression(),
                "held-out task does not match training task");

    const int n = data.n();
    const int d = data.d();
    require(d == model.config().input_dim, "dataset width does not match input_dim");
    const int hidden = model.layer_count() - 1;
    Rng rng(cfg.seed);

    TrainTrace trace;
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;

    int best_epoch = 0;
    double best_heldout = std::numeric_limits<double>::infinity();

    const bool use_input_mask = cfg.dropout.input_rate > 0.0;
    const bool use_act_mask = cfg.dropout.activation_rate > 0.0;

    int epoch = 0;
    for (epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Fisher-Yates shuffle, seeded.
        for (int i = n - 1; i > 0; --i)
            std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

        bool blew_up = false;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n - start);
            Eigen::MatrixXd X(bsz, d);
            Eigen::VectorXd y;
            std::vector<int> lab;
            if (classification) lab.resize(bsz);
            else y.resize(bsz);
            for (int i = 0; i < bsz; ++i) {
                X.row(i) = data.features.row(perm[start + i]);
                if (classification) lab[i] = data.labels[perm[start + i]];
                else y[i] = data.targets[perm[start + i]];
            }

            BatchMasks bm;
            bm.input_rate = cfg.dropout.input_rate;
            bm.activation_rate = cfg.dropout.activation_rate;
            if (use_input_mask) bm.input.resize(bsz, d);
            if (use_act_mask) {
                bm.activations.resize(hidden);
                for (int l = 0; l < hidden; ++l)
                    bm.activations[l].resize(bsz, model.config().hidden_widths[l]);
            }
            // Fresh masks per sample per step, drawn sample-major.
            for (int i = 0; i < bsz; ++i) {
                if (use_input_mask)
                    for (int j = 0; j < d; ++j)
                        bm.input(i, j) = rng.bernoulli(cfg.dropout.input_rate) ? 0.0 : 1.0;
                if (use_act_mask)
                    for (int l = 0; l < hidden; ++l)
                        for (int j = 0; j < model.config().hidden_widths[l]; ++j)
                            bm.activations[l](i, j) =
                                rng.bernoulli(cfg.dropout.activation_rate) ? 0.0 : 1.0;
            }

            const BatchMasks* bmp =
                (use_input_mask || use_act_mask) ? &bm : nullptr;
            Gradients g = batched_loss_grad(model, X, y, lab, bmp,
                                            cfg.dropout.mode, cfg.weight_decay);
            if (!std::isfinite(g.loss)) {
                blew_up = true;
                break;
            }
            for (int l = 0; l < model.layer_count(); ++l) {
                model.weights(l) -= cfg.learning_rate * g.dW[l];
                model.biases(l) -= cfg.learning_rate * g.db[l];
            }
        }

        const double train_loss = blew_up ? kNaN : evaluate_loss(model, data);
        const double held = (!blew_up && heldout) ? evaluate_loss(model, *heldout) : kNaN;
        if (blew_up || !std::isfinite(train_loss)) {
            trace.diverged = true;
            trace.final_epoch = epoch;
            return trace;
        }
        trace.train_loss.push_back(train_loss);
        trace.heldout_loss.push_back(held);

        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
            trace.snapshots.emplace_back(epoch, model);

        if (heldout && std::isfinite(held) && held < best_heldout) {
            best_heldout = held;
            best_epoch = epoch;
        }
        if (cfg.patience > 0 && heldout && epoch - best_epoch >= cfg.patience) break;
    }
    trace.final_epoch = std::min(epoch, cfg.epochs);
    if (cfg.checkpoint_every > 0 &&
        (trace.snapshots.empty() || trace.snapshots.back().first != trace.final_epoch))
        trace.snapshots.emplace_back(trace.final_epoch, model);
    return trace;
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "intxlab-mlp 1\n";
    out << "task "
        << (model.config().task == Task::Regression ? "regression" : "classification")
        << "\n";
    out << "layers " << model.config().input_dim;
    for (int w : model.config().hidden_widths) out << ' ' << w;
    out << ' ' << model.config().output_dim << "\n";
    for (int l = 0; l < model.layer_count(); ++l) {
        out << "W" << l << "\n";
        const auto& W = model.weights(l);
        for (Eigen::Index i = 0; i < W.rows(); ++i) {
            for (Eigen::Index j = 0; j < W.cols(); ++j)
                out << (j ? " " : "") << csv::num(W(i, j));
            out << "\n";
        }
        out << "b" << l << "\n";
        const auto& b = model.biases(l);
        for (Eigen::Index i = 0; i < b.size(); ++i)
            out << (i ? " " : "") << csv::num(b[i]);
        out << "\n";
    }
}

MlpModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "intxlab-mlp" || version != 1)
        throw std::runtime_error("not an intxlab model file: " + path.string());
    std::string key, task;
    in >> key >> task;
    if (key != "task") throw std::runtime_error("malformed model file");
    MlpConfig cfg;
    cfg.task = task == "classification" ? Task::Classification : Task::Regression;
    in >> key;
    if (key != "layers") throw std::runtime_error("malformed model file");
    std::string rest;
    std::getline(in, rest);
    std::istringstream dims_in(rest);
    std::vector<int> dims;
    int v;
    while (dims_in >> v) dims.push_back(v);
    if (dims.size() < 3) throw std::runtime_error("model needs at least one hidden layer");
    cfg.input_dim = dims.front();
    cfg.output_dim = dims.back();
    cfg.hidden_widths.assign(dims.begin() + 1, dims.end() - 1);

    MlpModel model;
    model.config_ = cfg;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        in >> key;
        if (key != "W" + std::to_string(l)) throw std::runtime_error("expected W block");
        Eigen::MatrixXd W(dims[l + 1], dims[l]);
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            for (Eigen::Index j = 0; j < W.cols(); ++j) in >> W(i, j);
        in >> key;
        if (key != "b" + std::to_string(l)) throw std::runtime_error("expected b block");
        Eigen::VectorXd b(dims[l + 1]);
        for (Eigen::Index i = 0; i < b.size(); ++i) in >> b[i];
        model.weights_.push_back(std::move(W));
        model.biases_.push_back(std::move(b));
    }
    if (!in) throw std::runtime_error("truncated model file: " + path.string());
    return model;
}

void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.row({"epoch", "train_loss", "heldout_loss", "snapshot"});
    std::size_t snap = 0;
    for (std::size_t e = 0; e < trace.train_loss.size(); ++e) {
        const int epoch = static_cast<int>(e) + 1;
        bool is_snap = false;
        if (snap < trace.snapshots.size() && trace.snapshots[snap].first == epoch) {
            is_snap = true;
            ++snap;
        }
        w.row({std::to_string(epoch), csv::num(trace.train_loss[e]),
               csv::num(trace.heldout_loss[e]), is_snap ? "1" : "0"});
    }
}

}  // namespace intxlab::mlp
