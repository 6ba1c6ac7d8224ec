#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "intxlab/anova.hpp"
#include "intxlab/datagen.hpp"
#include "intxlab/distill.hpp"
#include "intxlab/experiments.hpp"
#include "intxlab/mlp.hpp"
#include "intxlab/theory.hpp"

namespace py = pybind11;
using namespace intxlab;

namespace {

anova::GridFunction tabulate_py(const py::function& fn,
                                std::shared_ptr<const anova::WeightedGrid> grid) {
    return anova::tabulate(
        [&fn](const std::vector<double>& x) { return fn(x).cast<double>(); },
        std::move(grid));
}

py::dict report_to_dict(const anova::DecompositionReport& rep) {
    py::dict by_subset, by_order;
    for (const auto& [u, v] : rep.variance_by_subset) by_subset[py::tuple(py::cast(u))] = v;
    for (const auto& [k, v] : rep.variance_by_order) by_order[py::int_(k)] = v;
    py::dict out;
    out["variance_by_subset"] = by_subset;
    out["variance_by_order"] = by_order;
    out["total_variance"] = rep.total_variance;
    return out;
}

py::dict estimate_to_dict(const theory::ScalingEstimate& e) {
    py::dict d;
    d["subset"] = e.subset;
    d["order"] = e.order;
    d["theoretical"] = e.theoretical;
    d["estimate"] = e.estimate;
    d["stderr"] = e.stderr_;
    d["defined"] = e.defined;
    d["pass"] = e.pass;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Dropout interaction-effect laboratory (C++ core)";

    // ---- datagen
    py::class_<datagen::DensitySpec>(m, "DensitySpec")
        .def_static("product_uniform", &datagen::DensitySpec::product_uniform,
                    py::arg("lo"), py::arg("hi"), py::arg("dim"))
        .def_static("bivariate_gaussian", &datagen::DensitySpec::bivariate_gaussian,
                    py::arg("rho"));

    py::class_<datagen::Dataset>(m, "Dataset")
        .def_readonly("features", &datagen::Dataset::features)
        .def_readonly("targets", &datagen::Dataset::targets)
        .def_readonly("labels", &datagen::Dataset::labels)
        .def_property_readonly("n", &datagen::Dataset::n)
        .def_property_readonly("d", &datagen::Dataset::d)
        .def("is_regression", &datagen::Dataset::is_regression);

    m.def("gen_noise", &datagen::gen_noise, py::arg("n"), py::arg("d"), py::arg("seed"));
    m.def("gen_signal",
          [](const std::string& kind, int n, double sigma, std::uint64_t seed) {
              return datagen::gen_signal(datagen::generator_kind_from_string(kind), n,
                                         sigma, seed);
          },
          py::arg("kind"), py::arg("n"), py::arg("sigma"), py::arg("seed"));
    m.def("gen_correlated_product", &datagen::gen_correlated_product, py::arg("n"),
          py::arg("rho"), py::arg("seed"));
    m.def("gen_planted_interaction", &datagen::gen_planted_interaction, py::arg("n"),
          py::arg("d_base"), py::arg("c_base"), py::arg("k"), py::arg("seed"));
    m.def("sample_features", &datagen::sample_features, py::arg("density"),
          py::arg("n"), py::arg("d"), py::arg("seed"));
    m.def("write_dataset_csv", &datagen::write_csv, py::arg("dataset"), py::arg("path"));
    m.def("read_dataset_csv", &datagen::read_csv, py::arg("path"));

    // ---- exact ANOVA
    py::class_<anova::WeightedGrid, std::shared_ptr<anova::WeightedGrid>>(m, "WeightedGrid")
        .def_static(
            "uniform",
            [](int d, int points, double lo, double hi) {
                return std::make_shared<anova::WeightedGrid>(
                    anova::WeightedGrid::uniform(d, points, lo, hi));
            },
            py::arg("d"), py::arg("points"), py::arg("lo") = -1.0, py::arg("hi") = 1.0)
        .def_static(
            "bivariate_gaussian",
            [](double rho, int points, double extent) {
                return std::make_shared<anova::WeightedGrid>(
                    anova::WeightedGrid::bivariate_gaussian(rho, points, extent));
            },
            py::arg("rho"), py::arg("points") = 61, py::arg("extent") = 3.0)
        .def_property_readonly("dim", &anova::WeightedGrid::dim)
        .def_property_readonly("size", &anova::WeightedGrid::size)
        .def("product_form", &anova::WeightedGrid::product_form);

    py::class_<anova::GridFunction>(m, "GridFunction")
        .def_readonly("values", &anova::GridFunction::values)
        .def("weighted_mean", &anova::GridFunction::weighted_mean)
        .def("variance", &anova::GridFunction::variance);

    py::class_<anova::EffectTable>(m, "EffectTable")
        .def_readonly("residual_tolerance", &anova::EffectTable::residual_tolerance)
        .def("subsets",
             [](const anova::EffectTable& t) {
                 std::vector<std::vector<int>> keys;
                 for (const auto& [u, eff] : t.effects) keys.push_back(u);
                 return keys;
             })
        .def("effect_values",
             [](const anova::EffectTable& t, const std::vector<int>& subset) {
                 return t.effects.at(subset).values;
             });

    m.def("tabulate", &tabulate_py, py::arg("fn"), py::arg("grid"));
    m.def("decompose_product", &anova::decompose_product, py::arg("f"));
    m.def("decompose_weighted", &anova::decompose_weighted, py::arg("f"),
          py::arg("max_order"));
    m.def("report",
          [](const anova::EffectTable& t) { return report_to_dict(anova::report(t)); },
          py::arg("effects"));

    // ---- MLP
    py::enum_<mlp::Task>(m, "Task")
        .value("regression", mlp::Task::Regression)
        .value("classification", mlp::Task::Classification);
    py::enum_<mlp::DropoutMode>(m, "DropoutMode")
        .value("plain", mlp::DropoutMode::Plain)
        .value("inverted", mlp::DropoutMode::Inverted);

    py::class_<mlp::MlpConfig>(m, "MlpConfig")
        .def(py::init([](int input_dim, std::vector<int> hidden, int output_dim,
                         mlp::Task task) {
                 mlp::MlpConfig c;
                 c.input_dim = input_dim;
                 c.hidden_widths = std::move(hidden);
                 c.output_dim = output_dim;
                 c.task = task;
                 return c;
             }),
             py::arg("input_dim"), py::arg("hidden_widths"), py::arg("output_dim") = 1,
             py::arg("task") = mlp::Task::Regression);

    py::class_<mlp::TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &mlp::TrainConfig::learning_rate)
        .def_readwrite("epochs", &mlp::TrainConfig::epochs)
        .def_readwrite("batch_size", &mlp::TrainConfig::batch_size)
        .def_readwrite("weight_decay", &mlp::TrainConfig::weight_decay)
        .def_readwrite("seed", &mlp::TrainConfig::seed)
        .def_readwrite("checkpoint_every", &mlp::TrainConfig::checkpoint_every)
        .def_readwrite("patience", &mlp::TrainConfig::patience)
        .def_property(
            "input_dropout",
            [](const mlp::TrainConfig& c) { return c.dropout.input_rate; },
            [](mlp::TrainConfig& c, double v) { c.dropout.input_rate = v; })
        .def_property(
            "activation_dropout",
            [](const mlp::TrainConfig& c) { return c.dropout.activation_rate; },
            [](mlp::TrainConfig& c, double v) { c.dropout.activation_rate = v; })
        .def_property(
            "dropout_mode",
            [](const mlp::TrainConfig& c) { return c.dropout.mode; },
            [](mlp::TrainConfig& c, mlp::DropoutMode m2) { c.dropout.mode = m2; });

    py::class_<mlp::TrainTrace>(m, "TrainTrace")
        .def_readonly("train_loss", &mlp::TrainTrace::train_loss)
        .def_readonly("heldout_loss", &mlp::TrainTrace::heldout_loss)
        .def_readonly("diverged", &mlp::TrainTrace::diverged)
        .def_readonly("final_epoch", &mlp::TrainTrace::final_epoch)
        .def("best_heldout_epoch", &mlp::TrainTrace::best_heldout_epoch)
        .def("snapshot_epochs", [](const mlp::TrainTrace& t) {
            std::vector<int> eps;
            for (const auto& [e, m2] : t.snapshots) eps.push_back(e);
            return eps;
        });

    py::class_<mlp::MlpModel>(m, "MlpModel")
        .def_static("init", &mlp::MlpModel::init, py::arg("config"), py::arg("seed"))
        .def("parameter_count", &mlp::MlpModel::parameter_count)
        .def("predict",
             [](const mlp::MlpModel& m2, const Eigen::VectorXd& x) {
                 return m2.predict(x);
             },
             py::arg("x"))
        .def("predict_batch", &mlp::MlpModel::predict_batch, py::arg("X"));

    m.def("train",
          [](mlp::MlpModel& model, const datagen::Dataset& data,
             const mlp::TrainConfig& cfg, const datagen::Dataset* heldout) {
              return mlp::train(model, data, cfg, heldout);
          },
          py::arg("model"), py::arg("data"), py::arg("config"),
          py::arg("heldout") = nullptr);
    m.def("evaluate_loss", &mlp::evaluate_loss, py::arg("model"), py::arg("data"));
    m.def("evaluate_accuracy", &mlp::evaluate_accuracy, py::arg("model"), py::arg("data"));
    m.def("save_model", &mlp::save_model, py::arg("model"), py::arg("path"));
    m.def("load_model", &mlp::load_model, py::arg("path"));

    // ---- distillation
    py::class_<distill::EffectSizeReport>(m, "EffectSizeReport")
        .def_readonly("max_order", &distill::EffectSizeReport::max_order)
        .def_readonly("variance", &distill::EffectSizeReport::variance)
        .def_readonly("share", &distill::EffectSizeReport::share)
        .def_readonly("shrinkage_ratio", &distill::EffectSizeReport::shrinkage_ratio)
        .def_readonly("total_variance", &distill::EffectSizeReport::total_variance)
        .def_readonly("shares_valid", &distill::EffectSizeReport::shares_valid);

    py::class_<distill::StagedDistillation>(m, "StagedDistillation")
        .def_readonly("teacher_mean", &distill::StagedDistillation::teacher_mean)
        .def_readonly("max_order", &distill::StagedDistillation::max_order)
        .def("predict", [](const distill::StagedDistillation& d,
                           const Eigen::RowVectorXd& x) { return d.predict(x); });

    m.def("distill",
          [](const py::function& teacher, const Eigen::MatrixXd& X, int max_order,
             int rounds, double shrinkage) {
              return distill::distill(
                  [&teacher](const Eigen::RowVectorXd& x) {
                      return teacher(Eigen::VectorXd(x.transpose())).cast<double>();
                  },
                  X, max_order, rounds, shrinkage);
          },
          py::arg("teacher"), py::arg("X"), py::arg("max_order") = 4,
          py::arg("rounds") = 300, py::arg("shrinkage") = 0.1);
    m.def("distill_model",
          [](const mlp::MlpModel& model, const Eigen::MatrixXd& X, int max_order,
             int rounds, double shrinkage) {
              return distill::distill(
                  [&model](const Eigen::RowVectorXd& x) {
                      return model.predict(x.transpose())[0];
                  },
                  X, max_order, rounds, shrinkage);
          },
          py::arg("model"), py::arg("X"), py::arg("max_order") = 4,
          py::arg("rounds") = 300, py::arg("shrinkage") = 0.1);
    m.def("effect_sizes", &distill::effect_sizes, py::arg("distillation"),
          py::arg("X_eval"));
    m.def("apply_baseline", &distill::apply_baseline, py::arg("report"),
          py::arg("baseline"));

    // ---- theory
    m.def("effective_rate", &theory::effective_rate, py::arg("p"), py::arg("k"));
    m.def("hypothesis_count", &theory::hypothesis_count, py::arg("n"), py::arg("k"));
    m.def("balance_curve",
          [](int N, double p, int k_max) {
              py::list out;
              for (const auto& pt : theory::balance_curve(N, p, k_max))
                  out.append(py::make_tuple(pt.k, pt.count, pt.rate, pt.product));
              return out;
          },
          py::arg("n"), py::arg("p"), py::arg("k_max"));

    py::class_<theory::BasisModel>(m, "BasisModel")
        .def(py::init([](const std::vector<std::pair<std::vector<int>, double>>& terms) {
                 theory::BasisModel model;
                 for (const auto& [vars, coeff] : terms)
                     model.terms.push_back({vars, coeff});
                 model.validate();
                 return model;
             }),
             py::arg("terms"))
        .def("eval", &theory::BasisModel::eval, py::arg("x"));

    m.def("verify_theorem1",
          [](const theory::BasisModel& model, double p, int n_points, int n_masks,
             std::uint64_t seed) {
              py::list out;
              for (const auto& e :
                   theory::verify_theorem1(model, p, n_points, n_masks, seed))
                  out.append(estimate_to_dict(e));
              return out;
          },
          py::arg("model"), py::arg("p"), py::arg("n_points") = 400,
          py::arg("n_masks") = 10000, py::arg("seed") = 1);
    m.def("verify_theorem2",
          [](const theory::BasisModel& model, const datagen::Dataset& data, double p,
             int n_masks, std::uint64_t seed) {
              py::list out;
              for (const auto& e : theory::verify_theorem2(model, data, p, n_masks, seed))
                  out.append(estimate_to_dict(e));
              return out;
          },
          py::arg("model"), py::arg("data"), py::arg("p"), py::arg("n_masks") = 5000,
          py::arg("seed") = 1);

    // ---- experiments
    m.def("run_experiment",
          [](const std::string& name, const std::map<std::string, std::string>& config,
             const std::string& out_dir) {
              exp::KvConfig cfg;
              for (const auto& [k, v] : config) cfg.set(k, v);
              const auto res = exp::run_experiment(name, cfg, out_dir);
              py::dict out;
              out["failures"] = res.failures;
              out["files"] = res.manifest.files;
              out["duration_seconds"] = res.manifest.duration_seconds;
              return out;
          },
          py::arg("name"), py::arg("config"), py::arg("out_dir"));
    m.def("experiment_names", [] { return exp::experiment_names(); });
}
