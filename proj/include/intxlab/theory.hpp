#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "intxlab/datagen.hpp"

namespace intxlab::theory {

struct NothingToVerifyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// r_p(k) = (1-p)^k, the factor by which input dropout at rate p scales the
// learning of order-k effects.
double effective_rate(double p, int k);

struct RateCurve {
    double p = 0.0;
    std::vector<double> values;  // index k, 0..k_max
};

RateCurve make_rate_curve(double p, int k_max);

// C(N, k) in exact integer arithmetic.
unsigned long long hypothesis_count(int N, int k);

struct BalancePoint {
    int k = 0;
    unsigned long long count = 0;  // C(N, k)
    double rate = 0.0;             // r_p(k)
    double product = 0.0;          // count * rate
};

// The balance between the shrinking effective learning rate and the growing
// hypothesis space: entries (k, r_p(k) * C(N,k)) for k = 0..k_max.
std::vector<BalancePoint> balance_curve(int N, double p, int k_max);

// Multilinear model sum_u theta_u * prod_{i in u} x_i. Under zero-mean
// independent inputs each monomial is a pure effect, and zeroing any of its
// coordinates kills the term exactly, which makes the dropout-scaling
// theorems pointwise-exact on this family.
struct BasisTerm {
    std::vector<int> vars;  // sorted, distinct
    double coeff = 0.0;
};

struct BasisModel {
    std::vector<BasisTerm> terms;

    int dim() const;  // 1 + max variable index
    double eval(const std::vector<double>& x) const;
    void validate() const;
};

struct ScalingEstimate {
    std::vector<int> subset;
    int order = 0;
    double theoretical = 0.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
    bool defined = true;   // false when the clean gradient vanishes
    bool pass = false;     // |estimate - theoretical| <= 3 * stderr
};

// Monte Carlo check of the conditional-expectation scaling: draws n_points
// inputs uniform on [-1,1]^d, averages model(x .* mask) over n_masks masks
// per point, then regresses the averages on the model's monomials. The
// fitted coefficient for term u, divided by theta_u, estimates (1-p)^|u|.
// Standard errors are heteroscedasticity-robust.
std::vector<ScalingEstimate> verify_theorem1(const BasisModel& model, double p,
                                             int n_points, int n_masks,
                                             std::uint64_t seed);

// Monte Carlo check of the masked-gradient concordance under squared loss:
// for each mask replicate, computes the gradient of the loss w.r.t. each
// theta_u through masked inputs and projects it onto the clean gradient. The
// mean projection ratio estimates (1-p)^|u|.
std::vector<ScalingEstimate> verify_theorem2(const BasisModel& model,
                                             const datagen::Dataset& data, double p,
                                             int n_masks, std::uint64_t seed);

void write_verifier_csv(const std::vector<ScalingEstimate>& rows,
                        const std::filesystem::path& path);
std::vector<ScalingEstimate> read_verifier_csv(const std::filesystem::path& path);

}  // namespace intxlab::theory
