#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace intxlab::anova {

struct TabulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct WrongWeightsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateDensityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A discretized input domain: per-variable sorted coordinate axes plus a
// probability mass per grid point (normalized to sum 1). Weights are either
// product-form (one weight vector per axis, mass = product) or a full tensor
// in row-major order over the axes. The product-form flag is set exactly when
// the mass factors across axes.
class WeightedGrid {
public:
    WeightedGrid(std::vector<Eigen::VectorXd> axes,
                 std::vector<Eigen::VectorXd> axis_weights);
    WeightedGrid(std::vector<Eigen::VectorXd> axes, Eigen::VectorXd weights);

    int dim() const { return static_cast<int>(axes_.size()); }
    std::size_t size() const { return total_; }
    const Eigen::VectorXd& axis(int i) const { return axes_[i]; }
    int axis_size(int i) const { return static_cast<int>(axes_[i].size()); }
    bool product_form() const { return product_form_; }

    double weight(std::size_t flat) const;
    const Eigen::VectorXd& axis_weights(int i) const;

    // Row-major flat indexing: the last axis varies fastest.
    std::size_t stride(int i) const { return strides_[i]; }
    void unflatten(std::size_t flat, std::vector<int>& idx) const;
    std::vector<double> point(std::size_t flat) const;

    // Equal-mass midpoint cells of [lo,hi]^d.
    static WeightedGrid uniform(int d, int points_per_axis, double lo, double hi);
    // Standardized bivariate Gaussian truncated at +-extent, renormalized.
    static WeightedGrid bivariate_gaussian(double rho, int points_per_axis = 61,
                                           double extent = 3.0);
    // Default resolution per the dimension (101 for d<=2, 41 for d=3, 21 for d=4).
    static int default_resolution(int d);

private:
    void finish_init();

    std::vector<Eigen::VectorXd> axes_;
    std::vector<Eigen::VectorXd> axis_weights_;  // product form only
    Eigen::VectorXd weights_;                    // full tensor only
    std::vector<std::size_t> strides_;
    std::size_t total_ = 1;
    bool product_form_ = false;
};

// A function tabulated on a grid, values in row-major axis order.
struct GridFunction {
    std::shared_ptr<const WeightedGrid> grid;
    Eigen::VectorXd values;

    double weighted_mean() const;
    double variance() const;
};

GridFunction tabulate(const std::function<double(const std::vector<double>&)>& predictor,
                      std::shared_ptr<const WeightedGrid> grid);

// The functional-ANOVA decomposition of a grid function: one zero-mean effect
// per variable subset, each effect orthogonal (under the grid mass) to every
// function of a strict subset of its variables. Effects live on sub-grids
// whose weights are the corresponding marginals.
struct EffectTable {
    std::shared_ptr<const WeightedGrid> grid;
    std::map<std::vector<int>, GridFunction> effects;
    double residual_tolerance = 0.0;

    // Sum of all effects lifted back to the full grid.
    Eigen::VectorXd reconstruction() const;
};

struct DecompositionReport {
    std::map<std::vector<int>, double> variance_by_subset;
    std::map<int, double> variance_by_order;
    double total_variance = 0.0;

    // Per-subset variances normalized by their sum (empty when the sum is 0).
    std::map<std::vector<int>, double> shares_by_subset() const;
    std::map<int, double> shares_by_order() const;
};

// Closed-form decomposition for product-form weights: each effect is the
// inclusion-exclusion of conditional means,
//   f_u(x_u) = sum_{v subset of u} (-1)^{|u|-|v|} E[F | X_v = x_v].
// Requires d <= 4.
EffectTable decompose_product(const GridFunction& f);

// General-weights solver (d <= 3, strictly positive marginals): computes the
// weighted least-squares decomposition under hierarchical orthogonality by
// iterated conditional-mean purification. max_order < d first projects onto
// the span of low-order effect spaces by backfitting.
EffectTable decompose_weighted(const GridFunction& f, int max_order);

DecompositionReport report(const EffectTable& effects);

std::string subset_to_string(const std::vector<int>& subset);
std::vector<int> subset_from_string(const std::string& s);

void write_report_csv(const DecompositionReport& rep, const std::filesystem::path& path);
DecompositionReport read_report_csv(const std::filesystem::path& path);

// One CSV per effect: coordinate columns then the effect value.
void write_effect_grids(const EffectTable& table, const std::filesystem::path& dir,
                        const std::string& prefix);

}  // namespace intxlab::anova
