#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsa/chain.hpp"
#include "qsa/mdp.hpp"

namespace qsa {

struct NonFiniteIterate : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RankDeficientFeatures : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StepsizeSchedule {
    enum class Kind { Constant, RescaledLinear, Polynomial };
    Kind kind = Kind::Constant;
    double alpha = 0.1;      // Constant
    double one_minus_gamma = 0.1;  // RescaledLinear: 1/(1+(1-gamma)k)
    double exponent = 0.75;  // Polynomial: 1/k^c, with alpha_0 = 1

    double at(std::int64_t k) const {
        switch (kind) {
            case Kind::Constant: return alpha;
            case Kind::RescaledLinear: return 1.0 / (1.0 + one_minus_gamma * static_cast<double>(k));
            case Kind::Polynomial: return k == 0 ? 1.0 : 1.0 / std::pow(static_cast<double>(k), exponent);
        }
        return alpha;
    }
    std::string id() const;

    static StepsizeSchedule constant(double a) { return {Kind::Constant, a, 0.0, 0.0}; }
    static StepsizeSchedule rescaled_linear(double gamma) { return {Kind::RescaledLinear, 0.0, 1.0 - gamma, 0.0}; }
    static StepsizeSchedule polynomial(double c = 0.75) { return {Kind::Polynomial, 0.0, 0.0, c}; }
};

struct RunOptions {
    std::int64_t record_stride = 0;  // 0 = auto: 1 for n <= 1e5, else ceil(n/1e5)
    std::int64_t record_from = 0;    // skip recording before this step
    bool keep_iterates = true;
    bool keep_cumsum = true;
    bool keep_trajectory = false;
    std::int64_t tail_from = -1;  // >= 0: accumulate exact tail sum from this step
};

// One Q-learning run. Iterates q_0..q_n recorded at record_stride (k = j*stride,
// final always included); cumsum[:,j] = sum_{t < ks[j]} q_t for exact tail averages.
struct RunTrace {
    Matrix iterates;              // d x n_records
    Matrix cumsum;                // d x n_records (same ks)
    std::vector<std::int64_t> ks;
    Vector final;
    Vector q0;
    StepsizeSchedule schedule;
    std::uint64_t seed = 0;
    std::int64_t n = 0;
    std::int64_t record_stride = 1;
    bool linear_fa = false;
    std::vector<int> trajectory;  // x-indices, present when keep_trajectory
    Vector tail_sum;              // present when tail_from >= 0
    std::int64_t tail_from = -1;

    int record_index(std::int64_t k) const;  // exact match or throws
};

struct CoupledTrace {
    std::vector<double> w_norm;        // ||w_k||_inf per recorded step
    std::vector<double> w_lower_norm;  // ||w_lower_k||_inf
    std::vector<double> w_upper_norm;  // ||w_upper_k||_inf
    std::int64_t sandwich_violations = 0;
    Vector w_final, w_lower_final, w_upper_final;
};

// Single-transition update direction: zero except entry (s,a) of x.
struct BellmanSample {
    int sa = 0;
    double value = 0.0;
};
BellmanSample empirical_bellman(const Triple& x, const Vector& q, const Mdp& mdp);
Vector empirical_bellman_dense(const Triple& x, const Vector& q, const Mdp& mdp);

RunTrace run(const Mdp& mdp, const JointChain& chain, const StepsizeSchedule& schedule,
             const Vector& q0, std::uint64_t seed, std::int64_t n,
             const RunOptions& opts = {}, const Start& start = Start::stationary());

Vector tail_average(const RunTrace& trace, std::int64_t k0, std::int64_t k);

Vector rr_extrapolate(const Vector& qbar_alpha, const Vector& qbar_2alpha);

CoupledTrace coupled_run(const Mdp& mdp, const JointChain& chain, double alpha,
                         const Vector& q0_a, const Vector& q0_b, std::uint64_t seed,
                         std::int64_t n, const Start& start = Start::stationary());

// Linear function approximation; features is |S||A| x d_feat with row norms <= 1.
RunTrace lfa_run(const Mdp& mdp, const JointChain& chain, const Matrix& features,
                 const StepsizeSchedule& schedule, const Vector& theta0, std::uint64_t seed,
                 std::int64_t n, const RunOptions& opts = {},
                 const Start& start = Start::stationary());

// theta <- argmin ||Phi theta' - T(Phi theta)|| iterated to a fixed point.
Vector projected_value_iteration(const Mdp& mdp, const Matrix& features, double tol = 1e-10,
                                 int max_iters = 200000);

}  // namespace qsa
