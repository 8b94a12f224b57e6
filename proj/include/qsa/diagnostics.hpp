#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qsa/chain.hpp"
#include "qsa/engine.hpp"
#include "qsa/mdp.hpp"

namespace qsa {

struct TooFewBatches : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientDecay : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NormalityReport {
    Vector skew_z;         // per coordinate, null se sqrt(6/m)
    Vector kurt_z;         // excess kurtosis, null se sqrt(24/m)
    std::vector<char> variance_zero;  // degenerate coordinates, vacuous pass
    double threshold = 4.0;
    bool pass = false;
};

NormalityReport normality_check(const Matrix& batch_means, double threshold = 4.0);

struct CltEstimate {
    Matrix sigma_hat;  // batch_len * covariance of batch means
    int batch_count = 0;
    std::int64_t batch_len = 0;
    Vector mean_hat;
    NormalityReport normality;
};

// Batch-means long-run covariance over recorded iterates with k >= k0;
// requires stride-1 recording over the tail.
CltEstimate clt_covariance(const RunTrace& trace, std::int64_t k0, int batches);

struct DecayFit {
    double rate_eta = 0.0;   // exp of the log-linear slope of mean ||w_k||^2
    double log_linear_r2 = 0.0;
    double intercept = 0.0;
};

DecayFit fit_decay(const std::vector<CoupledTrace>& coupled, std::int64_t k_min);

struct BarReport {
    std::vector<double> residual;  // per x, sup norm of the two-average gap
    std::vector<double> se;        // batch-means se at the extremal coordinate
    double max_residual = 0.0;
};

// Empirical adjoint-relation check E[q 1{x=i}] = E[(q + alpha F) 1{x'=i}];
// replays the run from trace.q0 along the stored trajectory.
BarReport bar_residual(const RunTrace& trace, const JointChain& chain, const Mdp& mdp,
                       std::int64_t k0);

struct MseDecomposition {
    double optimization_sq = 0.0;  // ||window mean - mean_hat||^2
    double bias_sq = 0.0;          // ||mean_hat - q*||^2
    double variance = 0.0;         // trace of across-seed covariance of tail averages
};

// mean_hat empty: use the across-seed mean of the window (optimization_sq = 0).
MseDecomposition mse_decomposition(const std::vector<RunTrace>& traces,
                                   const OptimalSolution& solution, std::int64_t k0,
                                   std::int64_t k, const Vector& mean_hat = Vector());

}  // namespace qsa
