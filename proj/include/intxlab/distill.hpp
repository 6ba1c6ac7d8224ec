#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace intxlab::distill {

struct DistillationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using TeacherFn = std::function<double(const Eigen::RowVectorXd&)>;

struct FitParams {
    int min_samples_leaf = 5;
};

// Depth-limited regression tree with axis-aligned splits. A depth-k tree
// reads at most k features on any root-to-leaf path, so a depth-k ensemble
// can only represent interactions of order <= k.
class Tree {
public:
    struct Node {
        int feature = -1;  // -1: leaf
        double threshold = 0.0;
        double value = 0.0;  // leaf prediction
        int left = -1, right = -1;
        bool is_leaf() const { return feature < 0; }
    };

    double predict(const Eigen::RowVectorXd& x) const;
    int max_depth() const { return max_depth_; }
    const std::vector<Node>& nodes() const { return nodes_; }

    static Tree from_nodes(std::vector<Node> nodes, int max_depth);

private:
    friend Tree fit_tree(const Eigen::MatrixXd&, const Eigen::VectorXd&, int,
                         const FitParams&);
    std::vector<Node> nodes_;
    int max_depth_ = 0;
};

// Greedy variance-reduction CART on a residual vector. Splitting stops at the
// depth bound, the minimum leaf size, or zero gain; thresholds are midpoints
// of consecutive distinct sample values, ties broken toward the smaller
// feature index then the smaller threshold.
Tree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& residual, int depth,
              const FitParams& params = {});

struct StageEnsemble {
    int depth = 0;
    double shrinkage = 1.0;
    std::vector<Tree> trees;

    double predict(const Eigen::RowVectorXd& x) const;
    Eigen::VectorXd predict_batch(const Eigen::MatrixXd& X) const;
};

// Standard boosting against a fixed residual: each round fits a tree to what
// is left and adds shrinkage * tree.
StageEnsemble fit_stage(const Eigen::MatrixXd& X, const Eigen::VectorXd& residual,
                        int depth, int rounds, double shrinkage,
                        const FitParams& params = {});

// Depth-staged distillation of a teacher: stage j (depth j) is fit to the
// residual left by the mean and stages 1..j-1. Stages cover depths 1..K-1;
// what remains is the ">=K" bucket.
struct StagedDistillation {
    std::vector<StageEnsemble> stages;
    Eigen::MatrixXd inputs;  // fitting sample matrix
    double teacher_mean = 0.0;
    int max_order = 0;       // K
    TeacherFn teacher;       // kept for evaluating the residual on fresh samples

    // mean + sum of stage predictions
    double predict(const Eigen::RowVectorXd& x) const;
};

StagedDistillation distill(const TeacherFn& teacher, const Eigen::MatrixXd& X,
                           int max_order, int rounds = 300, double shrinkage = 0.1,
                           const FitParams& params = {});

// Variance attributed to each interaction order: entry k (1-based) is the
// sample variance of stage-k predictions over X_eval; the last entry is the
// ">=K" residual bucket. Shares normalize by the total; shrinkage ratios are
// filled against a baseline report.
struct EffectSizeReport {
    int max_order = 0;  // K
    std::vector<double> variance;   // size K: orders 1..K-1 then >=K bucket
    std::vector<double> share;      // empty when total variance is 0
    std::vector<double> shrinkage_ratio;  // empty until a baseline is applied
    double total_variance = 0.0;
    bool shares_valid = false;

    std::string order_label(int i) const;
};

EffectSizeReport effect_sizes(const StagedDistillation& d, const Eigen::MatrixXd& X_eval);

// ratio[k] = this.variance[k] / baseline.variance[k] (1 when both are 0).
void apply_baseline(EffectSizeReport& rep, const EffectSizeReport& baseline);

void write_effect_csv(const EffectSizeReport& rep, const std::filesystem::path& path);
EffectSizeReport read_effect_csv(const std::filesystem::path& path);

// Text tree-list format: one line per node (depth-first), stage and tree
// headers in between. Round-trips predictions exactly.
void write_tree_list(const StagedDistillation& d, const std::filesystem::path& path);
StagedDistillation read_tree_list(const std::filesystem::path& path);

}  // namespace intxlab::distill
