#include "intxlab/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "intxlab/csv.hpp"

namespace intxlab::distill {

namespace {

// Exact greedy split search over presorted feature columns. Columns are
// sorted once per sample matrix; each tree level is found with one linear
// scan per feature that serves every open node simultaneously. Splits are
// identical to a per-node sort-and-scan: candidate thresholds are midpoints
// of consecutive distinct member values, ties break toward the smaller
// feature index then the smaller threshold (features and thresholds are
// visited in ascending order and only a strictly larger gain displaces the
// incumbent).
class TreeFitter {
public:
    TreeFitter(const Eigen::MatrixXd& X, FitParams params)
        : X_(X), params_(params) {
        order_.resize(X.cols());
        for (int j = 0; j < X.cols(); ++j) {
            auto& ord = order_[j];
            ord.resize(X.rows());
            std::iota(ord.begin(), ord.end(), 0);
            std::stable_sort(ord.begin(), ord.end(),
                             [&](int a, int b) { return X(a, j) < X(b, j); });
        }
    }

    Tree fit(const Eigen::VectorXd& r, int depth) const {
        const int n = static_cast<int>(X_.rows());
        std::vector<Tree::Node> nodes;
        nodes.emplace_back();

        // node_of[i]: open node owning sample i, or -1 once it reaches a leaf.
        std::vector<int> node_of(n, 0);
        std::vector<int> open = {0};

        struct NodeStats {
            double sum = 0.0;
            int count = 0;
            // split search state
            double best_gain = 0.0;
            int best_feature = -1;
            double best_threshold = 0.0;
            // per-feature running scan state
            double left_sum = 0.0;
            int left_count = 0;
            double prev_value = 0.0;
            bool has_prev = false;
        };

        for (int level = 0; level <= depth && !open.empty(); ++level) {
            std::vector<NodeStats> stats(nodes.size());
            for (int i = 0; i < n; ++i)
                if (node_of[i] >= 0) {
                    stats[node_of[i]].sum += r[i];
                    stats[node_of[i]].count += 1;
                }

            if (level < depth) {
                for (int j = 0; j < X_.cols(); ++j) {
                    for (int id : open) {
                        stats[id].left_sum = 0.0;
                        stats[id].left_count = 0;
                        stats[id].has_prev = false;
                    }
                    for (int i : order_[j]) {
                        const int id = node_of[i];
                        if (id < 0) continue;
                        NodeStats& s = stats[id];
                        const double value = X_(i, j);
                        if (s.has_prev && value > s.prev_value &&
                            s.left_count >= params_.min_samples_leaf &&
                            s.count - s.left_count >= params_.min_samples_leaf) {
                            const double right_sum = s.sum - s.left_sum;
                            const int nl = s.left_count, nr = s.count - nl;
                            const double gain =
                                s.left_sum * s.left_sum / nl +
                                right_sum * right_sum / nr - s.sum * s.sum / s.count;
                            if (gain > s.best_gain + 1e-15 * std::abs(s.best_gain) &&
                                gain > 1e-12 * (1.0 + s.sum * s.sum / s.count)) {
                                s.best_gain = gain;
                                s.best_feature = j;
                                s.best_threshold = 0.5 * (s.prev_value + value);
                            }
                        }
                        s.left_sum += r[i];
                        s.left_count += 1;
                        s.prev_value = value;
                        s.has_prev = true;
                    }
                }
            }

            std::vector<int> next_open;
            for (int id : open) {
                NodeStats& s = stats[id];
                if (s.best_feature < 0) {
                    nodes[id].value = s.sum / std::max(1, s.count);
                    continue;
                }
                nodes[id].feature = s.best_feature;
                nodes[id].threshold = s.best_threshold;
                nodes[id].left = static_cast<int>(nodes.size());
                nodes.emplace_back();
                nodes[id].right = static_cast<int>(nodes.size());
                nodes.emplace_back();
                next_open.push_back(nodes[id].left);
                next_open.push_back(nodes[id].right);
            }
            for (int i = 0; i < n; ++i) {
                const int id = node_of[i];
                if (id < 0) continue;
                if (nodes[id].is_leaf()) {
                    node_of[i] = -1;
                } else {
                    node_of[i] = X_(i, nodes[id].feature) <= nodes[id].threshold
                                     ? nodes[id].left
                                     : nodes[id].right;
                }
            }
            open = std::move(next_open);
        }
        return Tree::from_nodes(std::move(nodes), depth);
    }

private:
    const Eigen::MatrixXd& X_;
    FitParams params_;
    std::vector<std::vector<int>> order_;
};

}  // namespace

double Tree::predict(const Eigen::RowVectorXd& x) const {
    int id = 0;
    while (!nodes_[id].is_leaf()) {
        const Node& n = nodes_[id];
        id = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes_[id].value;
}

Tree Tree::from_nodes(std::vector<Node> nodes, int max_depth) {
    Tree t;
    t.nodes_ = std::move(nodes);
    t.max_depth_ = max_depth;
    return t;
}

Tree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& residual, int depth,
              const FitParams& params) {
    if (X.rows() < 2) throw std::invalid_argument("fit_tree needs at least 2 samples");
    if (depth < 1) throw std::invalid_argument("tree depth must be >= 1");
    if (X.rows() != residual.size())
        throw std::invalid_argument("residual length does not match sample count");
    return TreeFitter(X, params).fit(residual, depth);
}

double StageEnsemble::predict(const Eigen::RowVectorXd& x) const {
    double s = 0.0;
    for (const Tree& t : trees) s += shrinkage * t.predict(x);
    return s;
}

Eigen::VectorXd StageEnsemble::predict_batch(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i));
    return out;
}

namespace {

StageEnsemble boost_stage(const TreeFitter& fitter, const Eigen::MatrixXd& X,
                          const Eigen::VectorXd& residual, int depth, int rounds,
                          double shrinkage) {
    if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
    if (!(shrinkage > 0.0 && shrinkage <= 1.0))
        throw std::invalid_argument("shrinkage must be in (0,1]");
    StageEnsemble stage;
    stage.depth = depth;
    stage.shrinkage = shrinkage;
    stage.trees.reserve(rounds);
    Eigen::VectorXd r = residual;
    for (int round = 0; round < rounds; ++round) {
        Tree t = fitter.fit(r, depth);
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            r[i] -= shrinkage * t.predict(X.row(i));
        stage.trees.push_back(std::move(t));
    }
    return stage;
}

}  // namespace

StageEnsemble fit_stage(const Eigen::MatrixXd& X, const Eigen::VectorXd& residual,
                        int depth, int rounds, double shrinkage,
                        const FitParams& params) {
    return boost_stage(TreeFitter(X, params), X, residual, depth, rounds, shrinkage);
}

double StagedDistillation::predict(const Eigen::RowVectorXd& x) const {
    double s = teacher_mean;
    for (const StageEnsemble& st : stages) s += st.predict(x);
    return s;
}

StagedDistillation distill(const TeacherFn& teacher, const Eigen::MatrixXd& X,
                           int max_order, int rounds, double shrinkage,
                           const FitParams& params) {
    if (max_order < 2) throw std::invalid_argument("max_order must be >= 2");
    StagedDistillation d;
    d.inputs = X;
    d.max_order = max_order;
    d.teacher = teacher;

    Eigen::VectorXd t(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        t[i] = teacher(X.row(i));
        if (!std::isfinite(t[i])) {
            std::ostringstream msg;
            msg << "teacher returned non-finite value on sample " << i;
            throw DistillationError(msg.str());
        }
    }
    d.teacher_mean = t.mean();
    Eigen::VectorXd r = t.array() - d.teacher_mean;
    const TreeFitter fitter(X, params);
    for (int depth = 1; depth <= max_order - 1; ++depth) {
        StageEnsemble stage = boost_stage(fitter, X, r, depth, rounds, shrinkage);
        r -= stage.predict_batch(X);
        d.stages.push_back(std::move(stage));
    }
    return d;
}

std::string EffectSizeReport::order_label(int i) const {
    if (i + 1 < max_order) return std::to_string(i + 1);
    return ">=" + std::to_string(max_order);
}

EffectSizeReport effect_sizes(const StagedDistillation& d, const Eigen::MatrixXd& X_eval) {
    if (X_eval.rows() < 1) throw std::invalid_argument("X_eval must be nonempty");
    EffectSizeReport rep;
    rep.max_order = d.max_order;

    auto variance = [](const Eigen::VectorXd& v) {
        const double m = v.mean();
        return (v.array() - m).square().sum() / static_cast<double>(v.size());
    };

    Eigen::VectorXd teacher_vals(X_eval.rows());
    for (Eigen::Index i = 0; i < X_eval.rows(); ++i)
        teacher_vals[i] = d.teacher ? d.teacher(X_eval.row(i)) : 0.0;
    Eigen::VectorXd resid = teacher_vals.array() - d.teacher_mean;

    for (const StageEnsemble& st : d.stages) {
        const Eigen::VectorXd pred = st.predict_batch(X_eval);
        rep.variance.push_back(variance(pred));
        resid -= pred;
    }
    rep.variance.push_back(d.teacher ? variance(resid) : 0.0);

    rep.total_variance = 0.0;
    for (double v : rep.variance) rep.total_variance += v;
    if (rep.total_variance > 0.0) {
        rep.shares_valid = true;
        for (double v : rep.variance) rep.share.push_back(v / rep.total_variance);
    }
    return rep;
}

void apply_baseline(EffectSizeReport& rep, const EffectSizeReport& baseline) {
    if (baseline.variance.size() != rep.variance.size())
        throw std::invalid_argument("baseline report shape mismatch");
    rep.shrinkage_ratio.clear();
    for (std::size_t k = 0; k < rep.variance.size(); ++k) {
        const double base = baseline.variance[k];
        if (base == 0.0)
            rep.shrinkage_ratio.push_back(rep.variance[k] == 0.0 ? 1.0 : std::nan(""));
        else
            rep.shrinkage_ratio.push_back(rep.variance[k] / base);
    }
}

void write_effect_csv(const EffectSizeReport& rep, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.row({"order", "variance", "share", "shrinkage_ratio"});
    for (std::size_t i = 0; i < rep.variance.size(); ++i) {
        w.row({rep.order_label(static_cast<int>(i)), csv::num(rep.variance[i]),
               rep.shares_valid ? csv::num(rep.share[i]) : "undefined",
               i < rep.shrinkage_ratio.size() ? csv::num(rep.shrinkage_ratio[i]) : ""});
    }
}

EffectSizeReport read_effect_csv(const std::filesystem::path& path) {
    const auto rows = csv::read(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"order", "variance",
                                                            "share", "shrinkage_ratio"})
        throw std::runtime_error("bad effect-size CSV header in " + path.string());
    EffectSizeReport rep;
    rep.max_order = static_cast<int>(rows.size()) - 1;
    bool any_share = false;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        rep.variance.push_back(csv::to_double(r[1]));
        if (r[2] != "undefined") {
            rep.share.push_back(csv::to_double(r[2]));
            any_share = true;
        }
        if (!r[3].empty()) rep.shrinkage_ratio.push_back(csv::to_double(r[3]));
    }
    rep.shares_valid = any_share;
    for (double v : rep.variance) rep.total_variance += v;
    return rep;
}

namespace {

void write_tree(std::ofstream& out, const Tree& tree) {
    // Depth-first from the root; child links are implicit in the order
    // (left subtree then right subtree).
    std::function<void(int, int)> rec = [&](int id, int depth) {
        const Tree::Node& n = tree.nodes()[id];
        if (n.is_leaf()) {
            out << "leaf " << depth << ' ' << csv::num(n.value) << '\n';
        } else {
            out << "split " << depth << ' ' << n.feature << ' '
                << csv::num(n.threshold) << '\n';
            rec(n.left, depth + 1);
            rec(n.right, depth + 1);
        }
    };
    rec(0, 0);
}

int read_tree_nodes(std::ifstream& in, std::vector<Tree::Node>& nodes) {
    std::string kind;
    if (!(in >> kind)) throw std::runtime_error("truncated tree list");
    int depth;
    in >> depth;
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    if (kind == "leaf") {
        in >> nodes[id].value;
    } else if (kind == "split") {
        in >> nodes[id].feature >> nodes[id].threshold;
        const int l = read_tree_nodes(in, nodes);
        const int r = read_tree_nodes(in, nodes);
        nodes[id].left = l;
        nodes[id].right = r;
    } else {
        throw std::runtime_error("bad tree-list node kind: " + kind);
    }
    return id;
}

}  // namespace

void write_tree_list(const StagedDistillation& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "intxlab-treelist 1\n";
    out << "max_order " << d.max_order << '\n';
    out << "teacher_mean " << csv::num(d.teacher_mean) << '\n';
    for (const StageEnsemble& st : d.stages) {
        out << "stage " << st.depth << ' ' << csv::num(st.shrinkage) << ' '
            << st.trees.size() << '\n';
        for (const Tree& t : st.trees) {
            out << "tree\n";
            write_tree(out, t);
        }
    }
}

StagedDistillation read_tree_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    int version;
    in >> magic >> version;
    if (magic != "intxlab-treelist" || version != 1)
        throw std::runtime_error("not a tree-list file: " + path.string());
    StagedDistillation d;
    std::string key;
    in >> key >> d.max_order;
    in >> key >> d.teacher_mean;
    while (in >> key) {
        if (key != "stage") throw std::runtime_error("expected stage header");
        StageEnsemble st;
        std::size_t n_trees;
        in >> st.depth >> st.shrinkage >> n_trees;
        for (std::size_t t = 0; t < n_trees; ++t) {
            in >> key;
            if (key != "tree") throw std::runtime_error("expected tree header");
            std::vector<Tree::Node> nodes;
            read_tree_nodes(in, nodes);
            st.trees.push_back(Tree::from_nodes(std::move(nodes), st.depth));
        }
        d.stages.push_back(std::move(st));
    }
    return d;
}

}  // namespace intxlab::distill
