#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qsa/chain.hpp"
#include "qsa/engine.hpp"
#include "qsa/mdp.hpp"

namespace qsa {

struct AssumptionViolated : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularLinearization : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularFundamentalMatrix : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Local linearization at q*. G(x) differs from the identity only in the row
// (s0,a0) of x, which holds a single gamma at column (s1, a*_{s1}); matrices
// are materialized on demand from that structure.
struct Linearization {
    int d = 0;
    int n_actions = 0;
    double gamma = 0.0;
    Vector q_star;
    std::vector<int> a_star;   // optimal action per state, lowest-index ties
    std::vector<int> row_sa;   // per x: (s0,a0) index
    std::vector<int> col_sa;   // per x: (s1, a*_{s1}) index
    Matrix h;                  // |X| x d; h.row(x) = F(x, q*)
    Matrix g_bar;              // sum_x mu_x(x) G(x)
    Matrix a_bar;              // g_bar - I
    double eig_gap = 0.0;      // min |lambda_i(g_bar) - 1|

    Matrix g_matrix(int x) const;
    Matrix a_matrix(int x) const;  // G(x) - I
    Vector b_vector(int x) const;  // F(x,q*) - A(x) q*
};

Linearization linearize(const Mdp& mdp, const JointChain& chain, const OptimalSolution& solution);

// R(x,q) = F(x,q) - F(x,q*) - (G(x) - I)(q - q*); zero except possibly at (s0,a0).
Vector remainder(const Triple& x, const Vector& q, const OptimalSolution& solution,
                 const Mdp& mdp);

Vector analytic_bias(const Linearization& lin, const JointChain& chain,
                     const OptimalSolution& solution);

struct BiasPoint {
    double alpha = 0.0;
    Vector bias;  // mean tail-average minus q*, across replications
    Vector se;
};

struct BiasReport {
    Vector analytic_b;
    std::vector<BiasPoint> empirical_points;  // sorted by alpha
    std::vector<BiasPoint> rr_points;         // alpha field holds the smaller stepsize
    Vector fitted_slope;            // per-coordinate OLS through the origin
    Vector slope_se;                // se of fitted_slope from per-replication slopes
    Vector fitted_slope_free;       // free-intercept slope
    Vector fitted_intercept;
    double fitted_order = 0.0;      // log-log slope of ||bias||_1 on alpha
    double rr_order = 0.0;
    Matrix b_prime;                 // B B^T
    double cosine = 0.0;            // cos(fitted_slope, analytic_b)
};

struct BiasBudget {
    std::int64_t n = 1000000;
    std::int64_t k0 = -1;  // < 0: n/2
    int replications = 10;
    std::uint64_t master_seed = 1;
    bool parallel = true;
};

BiasReport empirical_bias(const Mdp& mdp, const JointChain& chain, const OptimalSolution& solution,
                          std::vector<double> alphas, const BiasBudget& budget);

// Regression post-processing, exposed for synthetic-input tests: points are
// (alpha, bias vector, se) rows, already aggregated.
void fit_bias_regressions(BiasReport& report);

// Mean of ||q_k - q*||_inf^4 over recorded iterates with k >= k0.
double fourth_moment_tail(const RunTrace& trace, const Vector& q_star, std::int64_t k0);

}  // namespace qsa
