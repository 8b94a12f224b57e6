#include <doctest.h>

#include <qsa/diagnostics.hpp>
#include <qsa/presets.hpp>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "helpers.hpp"

using namespace qsa;

namespace {

double gaussian(Rng& rng) {
    const double u = rng.next_double();
    const double v = rng.next_double();
    return std::sqrt(-2.0 * std::log(1.0 - u)) * std::cos(2.0 * M_PI * v);
}

// stride-1 trace wrapper around a precomputed sample path
RunTrace make_trace(const Matrix& samples) {
    RunTrace t;
    t.iterates = samples;
    t.n = samples.cols();
    t.record_stride = 1;
    t.ks.resize(samples.cols());
    for (std::size_t j = 0; j < t.ks.size(); ++j) t.ks[j] = static_cast<std::int64_t>(j);
    t.final = samples.col(samples.cols() - 1);
    t.q0 = samples.col(0);
    return t;
}

struct DiagLab {
    Mdp mdp;
    JointChain chain;
    OptimalSolution sol;
    DiagLab() {
        const Preset p = build_preset("grid1x3");
        mdp = p.mdp;
        chain = build_joint_chain(mdp, p.policy);
        sol = solve_qstar(mdp);
    }
};

const DiagLab& lab() {
    static DiagLab l;
    return l;
}

}  // namespace

TEST_CASE("normality accepts gaussian batch means") {
    Rng rng(11);
    Matrix means(2, 200);
    for (int c = 0; c < 2; ++c)
        for (int j = 0; j < 200; ++j) means(c, j) = gaussian(rng);
    const NormalityReport rep = normality_check(means);
    CHECK(rep.pass);
    CHECK(rep.skew_z.lpNorm<Eigen::Infinity>() < 4.0);
    CHECK(rep.kurt_z.lpNorm<Eigen::Infinity>() < 4.0);
}

TEST_CASE("normality is vacuous on degenerate coordinates") {
    const NormalityReport rep = normality_check(Matrix::Constant(3, 50, 2.5));
    CHECK(rep.pass);
    for (char z : rep.variance_zero) CHECK(z == 1);
}

TEST_CASE("normality rejects heavy tails") {
    Rng rng(13);
    Matrix means(1, 200);
    for (int j = 0; j < 200; ++j)
        means(0, j) = gaussian(rng) / std::sqrt(-std::log(1.0 - rng.next_double()));
    CHECK_FALSE(normality_check(means).pass);
}

TEST_CASE("normality needs enough batches") {
    CHECK_THROWS_AS(normality_check(Matrix::Zero(1, 19)), TooFewBatches);
}

TEST_CASE("clt covariance of a constant path is zero") {
    const CltEstimate est = clt_covariance(make_trace(Matrix::Constant(2, 10000, 3.0)), 0, 20);
    CHECK(est.sigma_hat.cwiseAbs().maxCoeff() == 0.0);
    CHECK(est.normality.pass);
    CHECK((est.mean_hat - Vector::Constant(2, 3.0)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("clt covariance recovers the iid variance") {
    Rng rng(17);
    Matrix samples(1, 400000);
    for (int j = 0; j < samples.cols(); ++j) samples(0, j) = gaussian(rng);
    const CltEstimate est = clt_covariance(make_trace(samples), 0, 200);
    CHECK(est.batch_len == 2000);
    CHECK(est.sigma_hat(0, 0) == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("clt covariance recovers the AR(1) long-run variance") {
    Rng rng(19);
    Matrix samples(1, 400000);
    double x = 0.0;
    for (int j = 0; j < samples.cols(); ++j) {
        x = 0.5 * x + gaussian(rng);
        samples(0, j) = x;
    }
    const CltEstimate est = clt_covariance(make_trace(samples), 0, 200);
    // long-run variance 1/(1-rho)^2 = 4
    CHECK(est.sigma_hat(0, 0) == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("clt covariance input validation") {
    const RunTrace t = make_trace(Matrix::Zero(1, 1000));
    CHECK_THROWS_AS(clt_covariance(t, 0, 19), TooFewBatches);
    CHECK_THROWS_AS(clt_covariance(t, 7, 20), std::invalid_argument);  // 993 not divisible
    RunTrace strided = t;
    strided.record_stride = 2;
    CHECK_THROWS_AS(clt_covariance(strided, 0, 20), std::invalid_argument);
}

TEST_CASE("clt estimate on a real run is symmetric psd") {
    const auto& l = lab();
    RunOptions opts;
    opts.record_stride = 1;
    opts.record_from = 50000;
    const RunTrace t = run(l.mdp, l.chain, StepsizeSchedule::constant(0.1), l.sol.q_star, 23,
                           100000, opts);
    const CltEstimate est = clt_covariance(t, 50000, 25);
    CHECK((est.sigma_hat - est.sigma_hat.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(est.sigma_hat);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * est.sigma_hat.trace());
    CHECK(est.sigma_hat.trace() > 0.0);
}

TEST_CASE("decay fit recovers an exact geometric rate") {
    CoupledTrace ct;
    const double eta = 0.9;
    for (int k = 0; k <= 200; ++k) ct.w_norm.push_back(std::pow(eta, k));
    const DecayFit fit = fit_decay({ct}, 0);
    CHECK(fit.rate_eta == doctest::Approx(eta).epsilon(1e-10));
    CHECK(fit.log_linear_r2 == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("decay fit tolerates small noise") {
    CoupledTrace ct;
    Rng rng(29);
    for (int k = 0; k <= 200; ++k)
        ct.w_norm.push_back(std::pow(0.95, k) * (1.0 + 1e-3 * (2.0 * rng.next_double() - 1.0)));
    const DecayFit fit = fit_decay({ct}, 5);
    CHECK(fit.rate_eta == doctest::Approx(0.95).epsilon(1e-3));
    CHECK(fit.log_linear_r2 > 0.999);
}

TEST_CASE("decay fit refuses flat traces") {
    CoupledTrace ct;
    ct.w_norm.assign(100, 1.0);
    CHECK_THROWS_AS(fit_decay({ct}, 0), InsufficientDecay);
    CHECK_THROWS_AS(fit_decay({}, 0), std::invalid_argument);
}

TEST_CASE("larger stepsizes contract the coupled gap faster") {
    const auto& l = lab();
    const Vector q0a = l.sol.q_star.array() + 5.0;
    auto rate = [&](double alpha) {
        std::vector<CoupledTrace> traces;
        for (std::uint64_t seed = 1; seed <= 5; ++seed)
            traces.push_back(coupled_run(l.mdp, l.chain, alpha, q0a, l.sol.q_star, seed, 20000));
        return fit_decay(traces, 10).rate_eta;
    };
    const double slow = rate(0.1);
    const double fast = rate(0.2);
    CHECK(slow < 1.0);
    CHECK(fast < slow);
}

TEST_CASE("adjoint residual is exactly zero on a stationary fixed point") {
    // single state with q0 = q*: every update direction vanishes
    const Mdp mdp = test::single_state(0.5, 0.5);
    const JointChain chain = build_joint_chain(mdp, uniform_policy(mdp));
    RunOptions opts;
    opts.keep_trajectory = true;
    const RunTrace t = run(mdp, chain, StepsizeSchedule::constant(0.2), Vector::Ones(1), 3,
                           2000, opts);
    const BarReport rep = bar_residual(t, chain, mdp, 100);
    CHECK(rep.max_residual == 0.0);
}

TEST_CASE("adjoint residual is small at stationarity and shrinks with data") {
    const auto& l = lab();
    auto residual = [&](std::int64_t n) {
        RunOptions opts;
        opts.keep_trajectory = true;
        opts.keep_iterates = false;
        opts.keep_cumsum = false;
        const RunTrace t =
            run(l.mdp, l.chain, StepsizeSchedule::constant(0.05), l.sol.q_star, 41, n, opts);
        return bar_residual(t, l.chain, l.mdp, n / 2);
    };
    const BarReport small = residual(20000);
    const BarReport big = residual(320000);
    CHECK(small.max_residual < 0.05);
    CHECK(big.max_residual < small.max_residual);
    for (double se : big.se) CHECK(se >= 0.0);
}

TEST_CASE("adjoint residual input validation") {
    const auto& l = lab();
    const RunTrace plain =
        run(l.mdp, l.chain, StepsizeSchedule::constant(0.1), l.sol.q_star, 1, 1000);
    CHECK_THROWS_AS(bar_residual(plain, l.chain, l.mdp, 10), std::invalid_argument);
}

TEST_CASE("mse decomposition on frozen runs") {
    const auto& l = lab();
    auto frozen_run = [&](const Vector& q0, std::uint64_t seed) {
        return run(l.mdp, l.chain, StepsizeSchedule::constant(0.0), q0, seed, 1000,
                   {.record_stride = 1});
    };
    // parked at the fixed point: everything is zero
    const std::vector<RunTrace> at_star = {frozen_run(l.sol.q_star, 1),
                                           frozen_run(l.sol.q_star, 2)};
    const MseDecomposition zero = mse_decomposition(at_star, l.sol, 500, 1000);
    CHECK(zero.optimization_sq == 0.0);
    CHECK(zero.bias_sq < 1e-20);
    CHECK(zero.variance < 1e-20);

    // parked at q* + v: pure squared bias ||v||^2
    Vector v(l.mdp.dim());
    v << 0.3, -0.1, 0.2, 0.0, 0.4, -0.5;
    const std::vector<RunTrace> offset = {frozen_run(l.sol.q_star + v, 1),
                                          frozen_run(l.sol.q_star + v, 2)};
    const MseDecomposition biased = mse_decomposition(offset, l.sol, 500, 1000);
    CHECK(biased.bias_sq == doctest::Approx(v.squaredNorm()).epsilon(1e-10));
    CHECK(biased.variance < 1e-20);
}

TEST_CASE("mse decomposition components add up to the direct estimate") {
    const auto& l = lab();
    std::vector<RunTrace> traces;
    RunOptions opts;
    opts.keep_iterates = false;
    opts.tail_from = 20000;
    for (std::uint64_t seed = 100; seed < 140; ++seed)
        traces.push_back(
            run(l.mdp, l.chain, StepsizeSchedule::constant(0.1), l.sol.q_star, seed, 40000, opts));
    const MseDecomposition dec = mse_decomposition(traces, l.sol, 20000, 40000);

    double mse = 0.0;
    for (const auto& t : traces) mse += (tail_average(t, 20000, 40000) - l.sol.q_star).squaredNorm();
    mse /= static_cast<double>(traces.size());

    CHECK(dec.optimization_sq == 0.0);
    CHECK(dec.variance > 0.0);
    CHECK(dec.bias_sq > 0.0);
    CHECK(std::abs(dec.bias_sq + dec.variance - mse) <= 0.25 * mse);
}
