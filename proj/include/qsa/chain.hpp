#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qsa/mdp.hpp"

namespace qsa {

struct BehaviorPolicy {
    Matrix probs;  // n_states x n_actions, row-stochastic
};

BehaviorPolicy uniform_policy(const Mdp& mdp);

struct ChainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ReducibleChain : ChainError {
    using ChainError::ChainError;
};
struct PeriodicChain : ChainError {
    using ChainError::ChainError;
};

struct Triple {
    int s, a, s_next;
};

struct MixingProfile {
    std::vector<std::pair<double, int>> t_delta_table;  // (delta, t_delta)
    double geo_c = 0.0;
    double geo_rho = 0.0;  // envelope c*rho^k dominating the TV curve
};

// The data chain x_k = (s_k, a_k, s_{k+1}) on reachable triples.
struct JointChain {
    std::vector<Triple> states_x;
    std::vector<int> triple_index;  // (s*nA + a)*nS + s' -> index into states_x, -1 if unreachable
    int n_states = 0, n_actions = 0;
    Matrix kernel_p;       // |X| x |X|
    Vector mu_x;           // stationary distribution over X
    Vector mu_sa;          // marginal over (s,a), length |S||A|
    Matrix reversed_p_hat; // mu_x(j) phat_ji = mu_x(i) p_ij
    double beta = 0.0;     // 1 - (1-gamma) * min mu_sa
    std::optional<MixingProfile> mixing;

    int size() const { return static_cast<int>(states_x.size()); }
    int index_of(int s, int a, int s_next) const {
        return triple_index[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s_next];
    }
};

JointChain build_joint_chain(const Mdp& mdp, const BehaviorPolicy& policy);

// Wraps a bare row-stochastic kernel as a JointChain (mixing/reversal analysis
// on synthetic chains; the triples carry no MDP meaning).
JointChain chain_from_kernel(const Matrix& p);

// Replaces every kernel row by mu_x (i.i.d. data with the same marginal);
// the reversed kernel then equals Pi and the analytic bias vanishes.
JointChain make_iid_chain(const JointChain& chain);

struct CapExceeded : ChainError {
    using ChainError::ChainError;
};

// min{k >= 0 : max_x ||p^k(x,.) - mu_x||_TV <= delta}, exact matrix powering.
int mixing_time(const JointChain& chain, double delta, int cap = 1000000);

// Fit TV_k <= c * rho^k; regression on log TV then c inflated to a true envelope.
std::pair<double, double> fit_geometric_mixing(const JointChain& chain, int k_max);

// Computes max_x ||p^k(x,.) - mu_x||_TV for k = 0..k_max.
std::vector<double> tv_profile(const JointChain& chain, int k_max);

// t_delta table over a delta grid plus the fitted geometric envelope.
MixingProfile mixing_profile(const JointChain& chain, const std::vector<double>& deltas,
                             int k_max);

enum class StartKind { Stationary, Fixed };
struct Start {
    StartKind kind = StartKind::Stationary;
    int fixed_x = 0;
    static Start stationary() { return {StartKind::Stationary, 0}; }
    static Start fixed(int x) { return {StartKind::Fixed, x}; }
};

// Deterministic given (seed, n, start); inverse-CDF transitions.
std::vector<int> sample_trajectory(const JointChain& chain, std::uint64_t seed, std::int64_t n,
                                   const Start& start = Start::stationary());

struct StepsizeAdvisory {
    bool ok = false;
    double lhs = 0.0;  // alpha * t_alpha
    double rhs = 0.0;  // c0 (1-beta)^2 / log(|S||A|)
    int t_alpha = 0;
};

// alpha * t_alpha <= c0 (1-beta)^2 / log(|S||A|); advisory only, never blocks.
StepsizeAdvisory check_stepsize(const JointChain& chain, double alpha, double c0 = 1.0);

}  // namespace qsa
