#include "intxlab/anova.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "intxlab/csv.hpp"

namespace intxlab::anova {

namespace {

using Subset = std::vector<int>;

// Row-major odometer over a multi-index; fn(flat, idx) is called for every
// point with flat advancing by one and idx kept in sync.
template <class Fn>
void for_each_index(const std::vector<int>& sizes, Fn&& fn) {
    std::size_t total = 1;
    for (int s : sizes) total *= static_cast<std::size_t>(s);
    std::vector<int> idx(sizes.size(), 0);
    for (std::size_t f = 0; f < total; ++f) {
        fn(f, idx);
        for (int a = static_cast<int>(sizes.size()) - 1; a >= 0; --a) {
            if (++idx[a] < sizes[a]) break;
            idx[a] = 0;
        }
    }
}

std::size_t count_points(const std::vector<int>& sizes) {
    std::size_t total = 1;
    for (int s : sizes) total *= static_cast<std::size_t>(s);
    return total;
}

std::vector<std::size_t> row_major_strides(const std::vector<int>& sizes) {
    std::vector<std::size_t> strides(sizes.size(), 1);
    for (int a = static_cast<int>(sizes.size()) - 2; a >= 0; --a)
        strides[a] = strides[a + 1] * static_cast<std::size_t>(sizes[a + 1]);
    return strides;
}

std::vector<Subset> enumerate_subsets(int d, int max_order) {
    std::vector<Subset> out;
    for (unsigned mask = 0; mask < (1u << d); ++mask) {
        Subset s;
        for (int i = 0; i < d; ++i)
            if (mask & (1u << i)) s.push_back(i);
        if (static_cast<int>(s.size()) <= max_order) out.push_back(s);
    }
    std::sort(out.begin(), out.end(), [](const Subset& a, const Subset& b) {
        if (a.size() != b.size()) return a.size() < b.size();
        return a < b;
    });
    return out;
}

// Working view of the decomposition: per-subset value arrays on sub-grids
// plus the marginal mass of every sub-grid.
struct Workspace {
    const WeightedGrid* grid = nullptr;
    std::vector<int> full_sizes;
    Eigen::VectorXd full_weights;
    std::vector<Subset> family;
    std::map<Subset, Eigen::VectorXd> marginals;
    std::map<Subset, Eigen::VectorXd> components;
    std::map<Subset, std::vector<int>> sub_sizes;
    std::map<Subset, std::vector<std::size_t>> sub_strides;
};

std::size_t project_flat(const std::vector<int>& idx, const Subset& u,
                         const std::vector<std::size_t>& sub_strides) {
    std::size_t f = 0;
    for (std::size_t t = 0; t < u.size(); ++t)
        f += static_cast<std::size_t>(idx[u[t]]) * sub_strides[t];
    return f;
}

Workspace make_workspace(const WeightedGrid& grid, int max_order) {
    Workspace ws;
    ws.grid = &grid;
    const int d = grid.dim();
    ws.full_sizes.resize(d);
    for (int i = 0; i < d; ++i) ws.full_sizes[i] = grid.axis_size(i);
    ws.full_weights.resize(grid.size());
    for (std::size_t f = 0; f < grid.size(); ++f) ws.full_weights[f] = grid.weight(f);

    ws.family = enumerate_subsets(d, max_order);
    for (const Subset& u : ws.family) {
        std::vector<int> sizes;
        for (int a : u) sizes.push_back(ws.full_sizes[a]);
        ws.sub_sizes[u] = sizes;
        ws.sub_strides[u] = row_major_strides(sizes);
        ws.components[u] = Eigen::VectorXd::Zero(count_points(sizes));
    }
    // Marginal mass per subset, summed over the complement axes.
    for (const Subset& u : ws.family) {
        Eigen::VectorXd marg = Eigen::VectorXd::Zero(count_points(ws.sub_sizes[u]));
        const auto& sst = ws.sub_strides[u];
        for_each_index(ws.full_sizes, [&](std::size_t f, const std::vector<int>& idx) {
            marg[project_flat(idx, u, sst)] += ws.full_weights[f];
        });
        ws.marginals[u] = std::move(marg);
    }
    return ws;
}

// E[values | X_u] under the full grid mass.
Eigen::VectorXd conditional_mean(const Workspace& ws, const Eigen::VectorXd& values,
                                 const Subset& u) {
    Eigen::VectorXd num = Eigen::VectorXd::Zero(ws.marginals.at(u).size());
    const auto& sst = ws.sub_strides.at(u);
    for_each_index(ws.full_sizes, [&](std::size_t f, const std::vector<int>& idx) {
        num[project_flat(idx, u, sst)] += ws.full_weights[f] * values[f];
    });
    const Eigen::VectorXd& den = ws.marginals.at(u);
    Eigen::VectorXd out(num.size());
    for (Eigen::Index i = 0; i < num.size(); ++i) {
        if (den[i] <= 0.0)
            throw DegenerateDensityError("zero marginal mass on subset " +
                                         subset_to_string(u));
        out[i] = num[i] / den[i];
    }
    return out;
}

// Conditional mean of a component living on the u-grid, dropping the axis at
// position pos of u, under the u-marginal mass. Returns values on the
// (u minus that axis)-grid.
Eigen::VectorXd drop_axis_mean(const Workspace& ws, const Subset& u, int pos,
                               const Eigen::VectorXd& values, const Subset& v) {
    const auto& sizes = ws.sub_sizes.at(u);
    const auto& wu = ws.marginals.at(u);
    const auto& wv = ws.marginals.at(v);
    Eigen::VectorXd num = Eigen::VectorXd::Zero(wv.size());
    // Strides of the reduced grid expressed per position of u.
    const auto rstrides = row_major_strides(ws.sub_sizes.at(v));
    for_each_index(sizes, [&](std::size_t f, const std::vector<int>& idx) {
        std::size_t rf = 0;
        int t = 0;
        for (int a = 0; a < static_cast<int>(sizes.size()); ++a) {
            if (a == pos) continue;
            rf += static_cast<std::size_t>(idx[a]) * rstrides[t++];
        }
        num[rf] += wu[f] * values[f];
    });
    Eigen::VectorXd out(num.size());
    for (Eigen::Index i = 0; i < num.size(); ++i) {
        if (wv[i] <= 0.0)
            throw DegenerateDensityError("zero marginal mass on subset " +
                                         subset_to_string(v));
        out[i] = num[i] / wv[i];
    }
    return out;
}

// Subtract m (on the reduced grid) from values (on the u-grid).
void subtract_lifted(const Workspace& ws, const Subset& u, int pos,
                     const Eigen::VectorXd& m, const Subset& v,
                     Eigen::VectorXd& values) {
    const auto& sizes = ws.sub_sizes.at(u);
    const auto rstrides = row_major_strides(ws.sub_sizes.at(v));
    for_each_index(sizes, [&](std::size_t f, const std::vector<int>& idx) {
        std::size_t rf = 0;
        int t = 0;
        for (int a = 0; a < static_cast<int>(sizes.size()); ++a) {
            if (a == pos) continue;
            rf += static_cast<std::size_t>(idx[a]) * rstrides[t++];
        }
        values[f] -= m[rf];
    });
}

Subset erase_position(const Subset& u, int pos) {
    Subset v = u;
    v.erase(v.begin() + pos);
    return v;
}

// Iterated conditional-mean purification: moves mass from each component to
// its immediate sub-components until every component has vanishing
// conditional means, which is the hierarchical orthogonality condition.
void purify(Workspace& ws, double scale) {
    const double tol = 1e-13 * std::max(scale, 1.0);
    const int max_sweeps = 200000;
    // Largest subsets first so moved mass settles downward within a sweep.
    std::vector<Subset> order(ws.family.rbegin(), ws.family.rend());
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_move = 0.0;
        for (const Subset& u : order) {
            if (u.empty()) continue;
            Eigen::VectorXd& hu = ws.components.at(u);
            for (int pos = 0; pos < static_cast<int>(u.size()); ++pos) {
                const Subset v = erase_position(u, pos);
                Eigen::VectorXd m = drop_axis_mean(ws, u, pos, hu, v);
                const double mv = m.cwiseAbs().maxCoeff();
                if (mv == 0.0) continue;
                max_move = std::max(max_move, mv);
                subtract_lifted(ws, u, pos, m, v, hu);
                ws.components.at(v) += m;
            }
        }
        if (max_move <= tol) return;
    }
    throw DegenerateDensityError("purification did not converge; density too degenerate");
}

Eigen::VectorXd lift_sum(const Workspace& ws) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(ws.grid->size());
    for (const Subset& u : ws.family) {
        const auto& sst = ws.sub_strides.at(u);
        const auto& comp = ws.components.at(u);
        for_each_index(ws.full_sizes, [&](std::size_t f, const std::vector<int>& idx) {
            out[f] += comp[project_flat(idx, u, sst)];
        });
    }
    return out;
}

// Max residual conditional-mean magnitude across all components: an upper
// bound (against unit-sup-norm test functions) on the achieved orthogonality
// violation.
double orthogonality_residual(const Workspace& ws) {
    double worst = 0.0;
    for (const Subset& u : ws.family) {
        if (u.empty()) continue;
        const Eigen::VectorXd& hu = ws.components.at(u);
        for (int pos = 0; pos < static_cast<int>(u.size()); ++pos) {
            const Subset v = erase_position(u, pos);
            const Eigen::VectorXd m = drop_axis_mean(ws, u, pos, hu, v);
            worst = std::max(worst, m.cwiseAbs().maxCoeff());
        }
    }
    return worst;
}

EffectTable finish_table(const Workspace& ws, const GridFunction& f) {
    EffectTable table;
    table.grid = f.grid;

    const Eigen::VectorXd recon = lift_sum(ws);
    double rms = 0.0;
    for (std::size_t i = 0; i < ws.grid->size(); ++i) {
        const double dlt = recon[i] - f.values[i];
        rms += ws.full_weights[i] * dlt * dlt;
    }
    table.residual_tolerance =
        std::max(std::sqrt(rms), orthogonality_residual(ws));

    for (const Subset& u : ws.family) {
        std::vector<Eigen::VectorXd> axes;
        for (int a : u) axes.push_back(ws.grid->axis(a));
        std::shared_ptr<const WeightedGrid> sub;
        if (ws.grid->product_form()) {
            std::vector<Eigen::VectorXd> axw;
            for (int a : u) axw.push_back(ws.grid->axis_weights(a));
            sub = std::make_shared<WeightedGrid>(std::move(axes), std::move(axw));
        } else {
            sub = std::make_shared<WeightedGrid>(std::move(axes), ws.marginals.at(u));
        }
        table.effects.emplace(u, GridFunction{sub, ws.components.at(u)});
    }
    return table;
}

}  // namespace

WeightedGrid::WeightedGrid(std::vector<Eigen::VectorXd> axes,
                           std::vector<Eigen::VectorXd> axis_weights)
    : axes_(std::move(axes)), axis_weights_(std::move(axis_weights)) {
    if (axes_.size() != axis_weights_.size())
        throw std::invalid_argument("axis/weight count mismatch");
    for (std::size_t a = 0; a < axes_.size(); ++a) {
        if (axes_[a].size() != axis_weights_[a].size() || axes_[a].size() == 0)
            throw std::invalid_argument("axis/weight length mismatch");
        const double sum = axis_weights_[a].sum();
        if (!(sum > 0.0) || (axis_weights_[a].array() < 0.0).any())
            throw std::invalid_argument("axis weights must be nonnegative with positive sum");
        axis_weights_[a] /= sum;
    }
    product_form_ = true;
    finish_init();
}

WeightedGrid::WeightedGrid(std::vector<Eigen::VectorXd> axes, Eigen::VectorXd weights)
    : axes_(std::move(axes)), weights_(std::move(weights)) {
    finish_init();
    if (static_cast<std::size_t>(weights_.size()) != total_)
        throw std::invalid_argument("weight tensor size mismatch");
    const double sum = weights_.sum();
    if (!(sum > 0.0) || (weights_.array() < 0.0).any())
        throw std::invalid_argument("weights must be nonnegative with positive sum");
    weights_ /= sum;

    // Detect an exactly factoring tensor; if it factors, store the per-axis
    // form so downstream code sees a product grid.
    const int d = dim();
    std::vector<Eigen::VectorXd> margs(d);
    for (int a = 0; a < d; ++a) margs[a] = Eigen::VectorXd::Zero(axes_[a].size());
    std::vector<int> sizes(d);
    for (int a = 0; a < d; ++a) sizes[a] = static_cast<int>(axes_[a].size());
    for_each_index(sizes, [&](std::size_t f, const std::vector<int>& idx) {
        for (int a = 0; a < d; ++a) margs[a][idx[a]] += weights_[f];
    });
    bool factors = true;
    for_each_index(sizes, [&](std::size_t f, const std::vector<int>& idx) {
        double prod = 1.0;
        for (int a = 0; a < d; ++a) prod *= margs[a][idx[a]];
        if (std::abs(prod - weights_[f]) > 1e-14) factors = false;
    });
    if (factors && d > 0) {
        axis_weights_ = std::move(margs);
        product_form_ = true;
    }
}

void WeightedGrid::finish_init() {
    total_ = 1;
    strides_.assign(axes_.size(), 1);
    for (int a = static_cast<int>(axes_.size()) - 1; a >= 0; --a) {
        total_ *= static_cast<std::size_t>(axes_[a].size());
        if (a + 1 < static_cast<int>(axes_.size()))
            strides_[a] = strides_[a + 1] * static_cast<std::size_t>(axes_[a + 1].size());
    }
    for (const auto& ax : axes_)
        for (Eigen::Index i = 1; i < ax.size(); ++i)
            if (!(ax[i] > ax[i - 1]))
                throw std::invalid_argument("grid axes must be strictly increasing");
}

double WeightedGrid::weight(std::size_t flat) const {
    if (!product_form_) return weights_[static_cast<Eigen::Index>(flat)];
    double w = 1.0;
    for (int a = static_cast<int>(axes_.size()) - 1; a >= 0; --a) {
        const std::size_t n = static_cast<std::size_t>(axes_[a].size());
        w *= axis_weights_[a][static_cast<Eigen::Index>(flat % n)];
        flat /= n;
    }
    return w;
}

const Eigen::VectorXd& WeightedGrid::axis_weights(int i) const {
    if (!product_form_)
        throw WrongWeightsError("grid weights are not product-form");
    return axis_weights_[i];
}

void WeightedGrid::unflatten(std::size_t flat, std::vector<int>& idx) const {
    idx.resize(axes_.size());
    for (int a = static_cast<int>(axes_.size()) - 1; a >= 0; --a) {
        const std::size_t n = static_cast<std::size_t>(axes_[a].size());
        idx[a] = static_cast<int>(flat % n);
        flat /= n;
    }
}

std::vector<double> WeightedGrid::point(std::size_t flat) const {
    std::vector<int> idx;
    unflatten(flat, idx);
    std::vector<double> p(axes_.size());
    for (std::size_t a = 0; a < axes_.size(); ++a) p[a] = axes_[a][idx[a]];
    return p;
}

WeightedGrid WeightedGrid::uniform(int d, int points_per_axis, double lo, double hi) {
    if (d < 0 || points_per_axis < 1 || !(lo < hi))
        throw std::invalid_argument("bad uniform grid spec");
    const double h = (hi - lo) / points_per_axis;
    Eigen::VectorXd axis(points_per_axis);
    for (int i = 0; i < points_per_axis; ++i) axis[i] = lo + (i + 0.5) * h;
    Eigen::VectorXd w = Eigen::VectorXd::Constant(points_per_axis, 1.0 / points_per_axis);
    std::vector<Eigen::VectorXd> axes(d, axis), axw(d, w);
    return WeightedGrid(std::move(axes), std::move(axw));
}

WeightedGrid WeightedGrid::bivariate_gaussian(double rho, int points_per_axis,
                                              double extent) {
    if (!(std::abs(rho) < 1.0))
        throw DegenerateDensityError("bivariate-gaussian grid requires |rho| < 1");
    const double h = 2.0 * extent / points_per_axis;
    Eigen::VectorXd axis(points_per_axis);
    for (int i = 0; i < points_per_axis; ++i) axis[i] = -extent + (i + 0.5) * h;
    Eigen::VectorXd w(points_per_axis * points_per_axis);
    const double inv = 1.0 / (2.0 * (1.0 - rho * rho));
    std::size_t f = 0;
    for (int i = 0; i < points_per_axis; ++i) {
        for (int j = 0; j < points_per_axis; ++j, ++f) {
            const double x = axis[i], y = axis[j];
            w[f] = std::exp(-(x * x - 2.0 * rho * x * y + y * y) * inv);
        }
    }
    std::vector<Eigen::VectorXd> axes{axis, axis};
    return WeightedGrid(std::move(axes), std::move(w));
}

int WeightedGrid::default_resolution(int d) {
    if (d <= 2) return 101;
    if (d == 3) return 41;
    return 21;
}

double GridFunction::weighted_mean() const {
    double m = 0.0;
    for (std::size_t f = 0; f < grid->size(); ++f) m += grid->weight(f) * values[f];
    return m;
}

double GridFunction::variance() const {
    const double m = weighted_mean();
    double v = 0.0;
    for (std::size_t f = 0; f < grid->size(); ++f) {
        const double dlt = values[f] - m;
        v += grid->weight(f) * dlt * dlt;
    }
    return v;
}

GridFunction tabulate(const std::function<double(const std::vector<double>&)>& predictor,
                      std::shared_ptr<const WeightedGrid> grid) {
    GridFunction f;
    f.grid = grid;
    f.values.resize(grid->size());
    for (std::size_t i = 0; i < grid->size(); ++i) {
        const auto p = grid->point(i);
        const double v = predictor(p);
        if (!std::isfinite(v)) {
            std::ostringstream msg;
            msg << "predictor returned non-finite value at (";
            for (std::size_t a = 0; a < p.size(); ++a)
                msg << (a ? ", " : "") << p[a];
            msg << ")";
            throw TabulationError(msg.str());
        }
        f.values[i] = v;
    }
    return f;
}

Eigen::VectorXd EffectTable::reconstruction() const {
    std::vector<int> sizes(grid->dim());
    for (int a = 0; a < grid->dim(); ++a) sizes[a] = grid->axis_size(a);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(grid->size());
    for (const auto& [u, eff] : effects) {
        std::vector<int> ssizes;
        for (int a : u) ssizes.push_back(sizes[a]);
        const auto sst = row_major_strides(ssizes);
        for_each_index(sizes, [&](std::size_t f, const std::vector<int>& idx) {
            out[f] += eff.values[project_flat(idx, u, sst)];
        });
    }
    return out;
}

EffectTable decompose_product(const GridFunction& f) {
    const WeightedGrid& grid = *f.grid;
    if (!grid.product_form())
        throw WrongWeightsError(
            "decompose_product requires product-form weights; use decompose_weighted");
    if (grid.dim() > 4)
        throw std::invalid_argument("decompose_product supports d <= 4");

    Workspace ws = make_workspace(grid, grid.dim());

    // Conditional means per subset, then inclusion-exclusion.
    std::map<Subset, Eigen::VectorXd> cond;
    for (const Subset& v : ws.family) cond[v] = conditional_mean(ws, f.values, v);

    for (const Subset& u : ws.family) {
        Eigen::VectorXd fu = Eigen::VectorXd::Zero(count_points(ws.sub_sizes[u]));
        // Every subset v of u, with sign (-1)^{|u|-|v|}.
        const int m = static_cast<int>(u.size());
        for (unsigned vm = 0; vm < (1u << m); ++vm) {
            Subset v;
            for (int t = 0; t < m; ++t)
                if (vm & (1u << t)) v.push_back(u[t]);
            const double sign = ((m - static_cast<int>(v.size())) % 2 == 0) ? 1.0 : -1.0;
            const Eigen::VectorXd& mv = cond.at(v);
            const auto vst = row_major_strides(ws.sub_sizes.at(v));
            // Positions of v inside u.
            std::vector<int> vpos;
            for (int t = 0; t < m; ++t)
                if (vm & (1u << t)) vpos.push_back(t);
            for_each_index(ws.sub_sizes[u], [&](std::size_t f2, const std::vector<int>& idx) {
                std::size_t vf = 0;
                for (std::size_t t = 0; t < vpos.size(); ++t)
                    vf += static_cast<std::size_t>(idx[vpos[t]]) * vst[t];
                fu[f2] += sign * mv[vf];
            });
        }
        ws.components[u] = std::move(fu);
    }
    return finish_table(ws, f);
}

EffectTable decompose_weighted(const GridFunction& f, int max_order) {
    const WeightedGrid& grid = *f.grid;
    if (grid.dim() > 3)
        throw std::invalid_argument("decompose_weighted supports d <= 3");
    if (max_order < 0) throw std::invalid_argument("max_order must be >= 0");
    max_order = std::min(max_order, grid.dim());

    Workspace ws = make_workspace(grid, max_order);

    if (max_order == grid.dim()) {
        // The top component can absorb the function exactly; purification
        // then distributes it.
        ws.components[ws.family.back()] = f.values;
    } else {
        // Backfit: Gauss-Seidel projection onto the span of the included
        // effect spaces.
        const double scale = f.values.cwiseAbs().maxCoeff();
        const double tol = 1e-12 * std::max(scale, 1.0);
        Eigen::VectorXd fitted = Eigen::VectorXd::Zero(grid.size());
        const int max_iter = 20000;
        bool converged = false;
        for (int it = 0; it < max_iter && !converged; ++it) {
            double max_update = 0.0;
            for (const Subset& u : ws.family) {
                const auto& sst = ws.sub_strides.at(u);
                Eigen::VectorXd resid = f.values - fitted;
                // Remove this component's own lift before refitting it.
                const auto& comp = ws.components.at(u);
                for_each_index(ws.full_sizes, [&](std::size_t f2, const std::vector<int>& idx) {
                    resid[f2] += comp[project_flat(idx, u, sst)];
                });
                Eigen::VectorXd updated = conditional_mean(ws, resid, u);
                max_update = std::max(max_update,
                                      (updated - comp).cwiseAbs().maxCoeff());
                // Refresh the fitted sum with the new component.
                for_each_index(ws.full_sizes, [&](std::size_t f2, const std::vector<int>& idx) {
                    fitted[f2] += updated[project_flat(idx, u, sst)] -
                                  comp[project_flat(idx, u, sst)];
                });
                ws.components.at(u) = std::move(updated);
            }
            converged = max_update <= tol;
        }
        if (!converged)
            throw DegenerateDensityError("backfitting did not converge");
    }

    purify(ws, f.values.cwiseAbs().maxCoeff());
    return finish_table(ws, f);
}

DecompositionReport report(const EffectTable& table) {
    DecompositionReport rep;
    for (const auto& [u, eff] : table.effects) {
        const double var = eff.variance();
        rep.variance_by_subset[u] = var;
        if (!u.empty()) rep.variance_by_order[static_cast<int>(u.size())] += var;
    }
    for (int k = 1; k <= table.grid->dim(); ++k)
        rep.variance_by_order.try_emplace(k, 0.0);
    GridFunction recon{table.grid, table.reconstruction()};
    rep.total_variance = recon.variance();
    return rep;
}

std::map<std::vector<int>, double> DecompositionReport::shares_by_subset() const {
    double sum = 0.0;
    for (const auto& [u, v] : variance_by_subset) sum += v;
    std::map<std::vector<int>, double> shares;
    if (sum <= 0.0) return shares;
    for (const auto& [u, v] : variance_by_subset) shares[u] = v / sum;
    return shares;
}

std::map<int, double> DecompositionReport::shares_by_order() const {
    double sum = 0.0;
    for (const auto& [k, v] : variance_by_order) sum += v;
    std::map<int, double> shares;
    if (sum <= 0.0) return shares;
    for (const auto& [k, v] : variance_by_order) shares[k] = v / sum;
    return shares;
}

std::string subset_to_string(const std::vector<int>& subset) {
    std::string s;
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(subset[i]);
    }
    return s;
}

std::vector<int> subset_from_string(const std::string& s) {
    std::vector<int> subset;
    if (s.empty()) return subset;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) subset.push_back(std::stoi(tok));
    return subset;
}

void write_report_csv(const DecompositionReport& rep, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "subset;variance\n";
    for (const auto& [u, v] : rep.variance_by_subset)
        out << subset_to_string(u) << ';' << csv::num(v) << '\n';
    out << "order;variance\n";
    for (const auto& [k, v] : rep.variance_by_order)
        out << k << ';' << csv::num(v) << '\n';
    out << "total;" << csv::num(rep.total_variance) << '\n';
}

DecompositionReport read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    DecompositionReport rep;
    std::string line;
    int section = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line == "subset;variance") { section = 1; continue; }
        if (line == "order;variance") { section = 2; continue; }
        const auto sep = line.find(';');
        if (sep == std::string::npos) throw std::runtime_error("bad report line: " + line);
        const std::string key = line.substr(0, sep);
        const double val = csv::to_double(line.substr(sep + 1));
        if (key == "total") rep.total_variance = val;
        else if (section == 1) rep.variance_by_subset[subset_from_string(key)] = val;
        else if (section == 2) rep.variance_by_order[std::stoi(key)] = val;
        else throw std::runtime_error("report line outside any section: " + line);
    }
    return rep;
}

void write_effect_grids(const EffectTable& table, const std::filesystem::path& dir,
                        const std::string& prefix) {
    for (const auto& [u, eff] : table.effects) {
        std::string name = prefix + "_effect_";
        name += u.empty() ? "const" : subset_to_string(u);
        std::replace(name.begin(), name.end(), ',', '_');
        csv::Writer w(dir / (name + ".csv"));
        std::vector<std::string> header;
        for (int a : u) header.push_back("x" + std::to_string(a));
        header.push_back("value");
        w.row(header);
        for (std::size_t f = 0; f < eff.grid->size(); ++f) {
            std::vector<std::string> row;
            for (double c : eff.grid->point(f)) row.push_back(csv::num(c));
            row.push_back(csv::num(eff.values[f]));
            w.row(row);
        }
    }
}

}  // namespace intxlab::anova
