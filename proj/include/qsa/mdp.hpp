#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Finite discounted MDP. Q-vectors are indexed by sa = s * n_actions + a.
// kernel row sa holds T(.|s,a); rewards(sa) = r(s,a).
struct Mdp {
    int n_states = 0;
    int n_actions = 0;
    Matrix kernel;   // (n_states*n_actions) x n_states, row-stochastic
    Vector rewards;  // n_states*n_actions, values in [-r_max, r_max]
    double gamma = 0.0;
    double r_max = 0.0;

    int dim() const { return n_states * n_actions; }
    int sa_index(int s, int a) const { return s * n_actions + a; }
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

struct OptimalSolution {
    Vector q_star;             // dim = |S||A|
    std::vector<int> pi_star;  // greedy action per state, lowest-index ties
    double gap_delta = 0.0;    // Delta; +inf when |A| = 1 (vacuous)
    double residual = 0.0;     // ||Tq* - q*||_inf at termination
    double q_max = 0.0;        // max(||q0||_inf, r_max/(1-gamma))
    bool gap_is_zero = false;  // optimal policy not unique (warn, don't fail)
};

ValidationReport validate_mdp(const Mdp& mdp);

// Bellman optimality operator: q'(s,a) = r(s,a) + gamma * sum_s' T(s'|s,a) max_a' q(s',a').
Vector bellman_optimality(const Vector& q, const Mdp& mdp);

// Value iteration from q=0 to sup-norm accuracy tol (contraction-certified).
OptimalSolution solve_qstar(const Mdp& mdp, double tol = 1e-10);

// Greedy argmax per state with lowest-index tie-breaking.
std::vector<int> greedy_policy(const Vector& q, const Mdp& mdp);

}  // namespace qsa
