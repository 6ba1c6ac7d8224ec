#include "intxlab/theory.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "intxlab/csv.hpp"
#include "intxlab/rng.hpp"

namespace intxlab::theory {

double effective_rate(double p, int k) {
    if (!(p >= 0.0 && p < 1.0)) throw std::domain_error("rate must be in [0,1)");
    if (k < 0) throw std::domain_error("order must be >= 0");
    return std::pow(1.0 - p, static_cast<double>(k));
}

RateCurve make_rate_curve(double p, int k_max) {
    RateCurve c;
    c.p = p;
    c.values.reserve(k_max + 1);
    for (int k = 0; k <= k_max; ++k) c.values.push_back(effective_rate(p, k));
    return c;
}

unsigned long long hypothesis_count(int N, int k) {
    if (N < 0 || k < 0 || k > N)
        throw std::domain_error("hypothesis_count needs 0 <= k <= N");
    k = std::min(k, N - k);
    unsigned long long r = 1;
    for (int i = 1; i <= k; ++i) {
        unsigned long long next;
        if (__builtin_mul_overflow(r, static_cast<unsigned long long>(N - k + i), &next))
            throw std::overflow_error("binomial coefficient overflows 64 bits");
        r = next / static_cast<unsigned long long>(i);
    }
    return r;
}

std::vector<BalancePoint> balance_curve(int N, double p, int k_max) {
    if (k_max > N) throw std::domain_error("k_max must be <= N");
    std::vector<BalancePoint> out;
    out.reserve(k_max + 1);
    for (int k = 0; k <= k_max; ++k) {
        BalancePoint pt;
        pt.k = k;
        pt.count = hypothesis_count(N, k);
        pt.rate = effective_rate(p, k);
        pt.product = pt.rate * static_cast<double>(pt.count);
        // C(N,k) <= N^k, checked in log space to dodge overflow.
        if (k > 0 && std::log(static_cast<double>(pt.count)) >
                         k * std::log(static_cast<double>(N)) + 1e-9)
            throw std::logic_error("binomial bound violated");
        out.push_back(pt);
    }
    return out;
}

int BasisModel::dim() const {
    int d = 0;
    for (const BasisTerm& t : terms)
        for (int v : t.vars) d = std::max(d, v + 1);
    return d;
}

double BasisModel::eval(const std::vector<double>& x) const {
    double s = 0.0;
    for (const BasisTerm& t : terms) {
        double m = t.coeff;
        for (int v : t.vars) m *= x[v];
        s += m;
    }
    return s;
}

void BasisModel::validate() const {
    std::vector<std::vector<int>> seen;
    for (const BasisTerm& t : terms) {
        std::vector<int> s = t.vars;
        if (!std::is_sorted(s.begin(), s.end()) ||
            std::adjacent_find(s.begin(), s.end()) != s.end())
            throw std::invalid_argument("term variables must be sorted and distinct");
        if (std::find(seen.begin(), seen.end(), s) != seen.end())
            throw std::invalid_argument("duplicate term subset");
        seen.push_back(std::move(s));
    }
}

namespace {

// Absolute slack under the 3-sigma bracket so exact cases (p = 0) are not
// failed on floating-point rounding of a zero standard error.
constexpr double kFloor = 1e-12;

double monomial(const BasisTerm& t, const std::vector<double>& x) {
    double m = 1.0;
    for (int v : t.vars) m *= x[v];
    return m;
}

bool all_coeffs_zero(const BasisModel& model) {
    for (const BasisTerm& t : model.terms)
        if (t.coeff != 0.0) return false;
    return true;
}

}  // namespace

std::vector<ScalingEstimate> verify_theorem1(const BasisModel& model, double p,
                                             int n_points, int n_masks,
                                             std::uint64_t seed) {
    model.validate();
    if (model.terms.empty() || all_coeffs_zero(model))
        throw NothingToVerifyError("basis model has no nonzero terms");
    if (!(p >= 0.0 && p < 1.0)) throw std::domain_error("rate must be in [0,1)");
    if (n_points < 2 || n_masks < 1)
        throw std::invalid_argument("need n_points >= 2 and n_masks >= 1");

    const int d = model.dim();
    const int T = static_cast<int>(model.terms.size());
    Rng rng(seed);

    Eigen::MatrixXd design(n_points, T);
    Eigen::VectorXd mask_avg(n_points);
    std::vector<double> x(d);
    std::vector<double> xm(d);
    std::vector<char> keep(d);

    for (int t = 0; t < n_points; ++t) {
        for (int j = 0; j < d; ++j) x[j] = rng.uniform(-1.0, 1.0);
        for (int u = 0; u < T; ++u) design(t, u) = monomial(model.terms[u], x);

        double acc = 0.0;
        for (int s = 0; s < n_masks; ++s) {
            for (int j = 0; j < d; ++j) keep[j] = rng.bernoulli(p) ? 0 : 1;
            // model(x .* mask): a monomial survives only if every coordinate
            // it reads is kept.
            double val = 0.0;
            for (int u = 0; u < T; ++u) {
                bool alive = true;
                for (int v : model.terms[u].vars)
                    if (!keep[v]) { alive = false; break; }
                if (alive) val += design(t, u) * model.terms[u].coeff;
            }
            acc += val;
        }
        mask_avg[t] = acc / n_masks;
    }

    // OLS with heteroscedasticity-robust (HC1) standard errors.
    const Eigen::MatrixXd gram = design.transpose() * design;
    const Eigen::MatrixXd gram_inv = gram.ldlt().solve(
        Eigen::MatrixXd::Identity(T, T));
    const Eigen::VectorXd coef = gram_inv * (design.transpose() * mask_avg);
    const Eigen::VectorXd resid = mask_avg - design * coef;
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(T, T);
    for (int t = 0; t < n_points; ++t)
        meat += resid[t] * resid[t] * design.row(t).transpose() * design.row(t);
    const double dof_scale =
        static_cast<double>(n_points) / std::max(1, n_points - T);
    const Eigen::MatrixXd cov = dof_scale * gram_inv * meat * gram_inv;

    std::vector<ScalingEstimate> out;
    for (int u = 0; u < T; ++u) {
        const BasisTerm& term = model.terms[u];
        ScalingEstimate e;
        e.subset = term.vars;
        e.order = static_cast<int>(term.vars.size());
        e.theoretical = effective_rate(p, e.order);
        if (term.coeff == 0.0) {
            e.defined = false;
            e.estimate = std::nan("");
            e.stderr_ = std::nan("");
            out.push_back(e);
            continue;
        }
        e.estimate = coef[u] / term.coeff;
        e.stderr_ = std::sqrt(std::max(0.0, cov(u, u))) / std::abs(term.coeff);
        e.pass = std::abs(e.estimate - e.theoretical) <= 3.0 * e.stderr_ + kFloor;
        out.push_back(e);
    }
    return out;
}

std::vector<ScalingEstimate> verify_theorem2(const BasisModel& model,
                                             const datagen::Dataset& data, double p,
                                             int n_masks, std::uint64_t seed) {
    model.validate();
    if (model.terms.empty() || all_coeffs_zero(model))
        throw NothingToVerifyError("basis model has no nonzero terms");
    if (!data.is_regression())
        throw std::invalid_argument("theorem 2 verification uses squared loss");
    if (!(p >= 0.0 && p < 1.0)) throw std::domain_error("rate must be in [0,1)");
    if (n_masks < 2) throw std::invalid_argument("need n_masks >= 2");

    const int d = model.dim();
    if (data.d() < d)
        throw std::invalid_argument("dataset narrower than the model");
    const int n = data.n();
    const int T = static_cast<int>(model.terms.size());
    Rng rng(seed);

    // Clean gradient per term: mean_t (model(x_t) - y_t) * m_u(x_t).
    std::vector<double> x(d);
    Eigen::VectorXd clean = Eigen::VectorXd::Zero(T);
    for (int t = 0; t < n; ++t) {
        for (int j = 0; j < d; ++j) x[j] = data.features(t, j);
        const double err = model.eval(x) - data.targets[t];
        for (int u = 0; u < T; ++u) clean[u] += err * monomial(model.terms[u], x);
    }
    clean /= static_cast<double>(n);

    const double y_scale = 1.0 + data.targets.cwiseAbs().mean();
    std::vector<bool> defined(T);
    for (int u = 0; u < T; ++u) defined[u] = std::abs(clean[u]) > 1e-14 * y_scale;

    // Mask replicates: per-sample fresh masks, gradient through masked
    // inputs, projection ratio onto the clean gradient.
    Eigen::MatrixXd ratios(n_masks, T);
    std::vector<double> xm(d);
    std::vector<char> keep(d);
    for (int s = 0; s < n_masks; ++s) {
        Eigen::VectorXd masked = Eigen::VectorXd::Zero(T);
        for (int t = 0; t < n; ++t) {
            for (int j = 0; j < d; ++j) keep[j] = rng.bernoulli(p) ? 0 : 1;
            for (int j = 0; j < d; ++j)
                xm[j] = keep[j] ? data.features(t, j) : 0.0;
            const double err = model.eval(xm) - data.targets[t];
            for (int u = 0; u < T; ++u)
                masked[u] += err * monomial(model.terms[u], xm);
        }
        masked /= static_cast<double>(n);
        for (int u = 0; u < T; ++u)
            ratios(s, u) = defined[u] ? masked[u] / clean[u] : std::nan("");
    }

    std::vector<ScalingEstimate> out;
    for (int u = 0; u < T; ++u) {
        const BasisTerm& term = model.terms[u];
        ScalingEstimate e;
        e.subset = term.vars;
        e.order = static_cast<int>(term.vars.size());
        e.theoretical = effective_rate(p, e.order);
        e.defined = defined[u];
        if (!e.defined) {
            e.estimate = std::nan("");
            e.stderr_ = std::nan("");
            out.push_back(e);
            continue;
        }
        const double mean = ratios.col(u).mean();
        const double var =
            (ratios.col(u).array() - mean).square().sum() / (n_masks - 1);
        e.estimate = mean;
        e.stderr_ = std::sqrt(var / n_masks);
        e.pass = std::abs(e.estimate - e.theoretical) <= 3.0 * e.stderr_ + kFloor;
        out.push_back(e);
    }
    return out;
}

void write_verifier_csv(const std::vector<ScalingEstimate>& rows,
                        const std::filesystem::path& path) {
    csv::Writer w(path);
    w.row({"subset", "order", "theoretical", "estimate", "stderr", "pass"});
    for (const ScalingEstimate& e : rows) {
        std::string subset;
        for (std::size_t i = 0; i < e.subset.size(); ++i) {
            if (i) subset += ',';
            subset += std::to_string(e.subset[i]);
        }
        w.row({subset, std::to_string(e.order), csv::num(e.theoretical),
               csv::num(e.estimate), csv::num(e.stderr_), e.pass ? "1" : "0"});
    }
}

std::vector<ScalingEstimate> read_verifier_csv(const std::filesystem::path& path) {
    const auto rows = csv::read(path);
    if (rows.empty())
        throw std::runtime_error("empty verifier CSV: " + path.string());
    std::vector<ScalingEstimate> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != 6) throw std::runtime_error("bad verifier CSV row");
        ScalingEstimate e;
        if (!r[0].empty()) {
            std::stringstream ss(r[0]);
            std::string tok;
            while (std::getline(ss, tok, ',')) e.subset.push_back(std::stoi(tok));
        }
        e.order = static_cast<int>(csv::to_double(r[1]));
        e.theoretical = csv::to_double(r[2]);
        e.estimate = csv::to_double(r[3]);
        e.stderr_ = csv::to_double(r[4]);
        e.defined = std::isfinite(e.estimate);
        e.pass = r[5] == "1";
        out.push_back(e);
    }
    return out;
}

}  // namespace intxlab::theory
