#include <doctest.h>

#include <qsa/bias.hpp>
#include <qsa/presets.hpp>

#include "helpers.hpp"

using namespace qsa;

namespace {

// independent oracle for the corridor's first-order bias vector
const double kGrid1x3Bias[6] = {0.089898063494, 0.273052107034,  0.225925685046,
                                0.032840114771, 0.045889166997, -0.100412456885};

struct BiasLab {
    Mdp mdp;
    JointChain chain;
    OptimalSolution sol;
    Linearization lin;
    BiasLab() {
        const Preset p = build_preset("grid1x3");
        mdp = p.mdp;
        chain = build_joint_chain(mdp, p.policy);
        sol = solve_qstar(mdp);
        lin = linearize(mdp, chain, sol);
    }
};

const BiasLab& lab() {
    static BiasLab l;
    return l;
}

}  // namespace

TEST_CASE("linearization matrices have the one-row structure") {
    const auto& l = lab();
    const int d = l.mdp.dim();
    for (int x = 0; x < l.chain.size(); ++x) {
        const Matrix g = l.lin.g_matrix(x);
        for (int i = 0; i < d; ++i) {
            if (i == l.lin.row_sa[x]) {
                CHECK(g.row(i).sum() == doctest::Approx(l.mdp.gamma));
                CHECK(g(i, l.lin.col_sa[x]) == doctest::Approx(l.mdp.gamma));
                CHECK(g.row(i).cwiseAbs().sum() == doctest::Approx(l.mdp.gamma));
            } else {
                CHECK(g(i, i) == 1.0);
                CHECK(g.row(i).sum() == doctest::Approx(1.0));
            }
        }
    }
}

TEST_CASE("a specific linearization entry on the corridor") {
    const auto& l = lab();
    const int x = l.chain.index_of(0, 1, 1);  // right from state 0, arriving at 1
    REQUIRE(x >= 0);
    CHECK(l.lin.row_sa[x] == l.mdp.sa_index(0, 1));
    CHECK(l.lin.col_sa[x] == l.mdp.sa_index(1, l.sol.pi_star[1]));
    CHECK(l.lin.g_matrix(x)(l.mdp.sa_index(0, 1), l.mdp.sa_index(1, 1)) ==
          doctest::Approx(0.9));
}

TEST_CASE("h rows reproduce the update direction at the fixed point") {
    const auto& l = lab();
    for (int x = 0; x < l.chain.size(); ++x) {
        const Vector f = empirical_bellman_dense(l.chain.states_x[x], l.sol.q_star, l.mdp);
        CHECK((l.lin.h.row(x).transpose() - f).lpNorm<Eigen::Infinity>() <= 1e-12);
        // affine decomposition at q*: A(x) q* + b(x) = F(x, q*)
        CHECK((l.lin.a_matrix(x) * l.sol.q_star + l.lin.b_vector(x) - f)
                  .lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("mean linearization aggregates the per-triple matrices") {
    const auto& l = lab();
    Matrix g = Matrix::Zero(l.mdp.dim(), l.mdp.dim());
    Vector drift = Vector::Zero(l.mdp.dim());
    for (int x = 0; x < l.chain.size(); ++x) {
        g += l.chain.mu_x(x) * l.lin.g_matrix(x);
        drift += l.chain.mu_x(x) * l.lin.h.row(x).transpose();
    }
    CHECK((g - l.lin.g_bar).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(drift.lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("eigenvalue gap matches the frozen oracle") {
    CHECK(lab().lin.eig_gap == doctest::Approx(0.0166666667).epsilon(1e-4));
    CHECK(lab().lin.eig_gap > 1e-8);
}

TEST_CASE("duplicate actions break the gap assumption") {
    Mdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 2;
    mdp.gamma = 0.5;
    mdp.r_max = 1.0;
    mdp.kernel = Matrix::Ones(2, 1);
    mdp.rewards = Vector::Ones(2);
    const JointChain chain = build_joint_chain(mdp, uniform_policy(mdp));
    const OptimalSolution sol = solve_qstar(mdp);
    CHECK(sol.gap_is_zero);
    CHECK_THROWS_AS(linearize(mdp, chain, sol), AssumptionViolated);
}

TEST_CASE("remainder vanishes at and near the fixed point") {
    const auto& l = lab();
    const double delta = l.sol.gap_delta;
    REQUIRE(delta > 0.0);
    Rng rng(31);
    for (int x = 0; x < l.chain.size(); ++x) {
        CHECK(remainder(l.chain.states_x[x], l.sol.q_star, l.sol, l.mdp)
                  .lpNorm<Eigen::Infinity>() == 0.0);
        const Vector q = l.sol.q_star +
                         (delta / 4.0) * test::random_vector(rng, l.mdp.dim(), 1.0);
        CHECK(remainder(l.chain.states_x[x], q, l.sol, l.mdp).lpNorm<Eigen::Infinity>() == 0.0);
    }
}

TEST_CASE("remainder obeys the quartic bound away from the fixed point") {
    const auto& l = lab();
    const double delta = l.sol.gap_delta;
    const double c = 2.0 * l.mdp.gamma / (delta * delta * delta);
    Rng rng(77);
    int checked = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const Vector q = l.sol.q_star + test::random_vector(rng, l.mdp.dim(), 3.0);
        const double dist = (q - l.sol.q_star).lpNorm<Eigen::Infinity>();
        if (dist < delta) continue;
        ++checked;
        const int x = static_cast<int>(rng.next_u64() % l.chain.size());
        const Vector r = remainder(l.chain.states_x[x], q, l.sol, l.mdp);
        CHECK(r.lpNorm<Eigen::Infinity>() <= c * dist * dist * dist * dist + 1e-12);
        // one-sparse support at the updated coordinate
        CHECK(r.cwiseAbs().sum() == r.cwiseAbs().maxCoeff());
    }
    CHECK(checked > 5000);
}

TEST_CASE("analytic bias vanishes for independent data") {
    const auto& l = lab();
    const JointChain iid = make_iid_chain(l.chain);
    const Linearization lin = linearize(l.mdp, iid, l.sol);
    CHECK(analytic_bias(lin, iid, l.sol).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("analytic bias vanishes when the drift is identically zero") {
    Mdp mdp = test::two_state_chain(0.5);
    mdp.kernel << 0.5, 0.5, 0.5, 0.5;
    mdp.rewards.setZero();
    const JointChain chain = build_joint_chain(mdp, uniform_policy(mdp));
    const OptimalSolution sol = solve_qstar(mdp);
    const Linearization lin = linearize(mdp, chain, sol);
    CHECK(lin.h.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(analytic_bias(lin, chain, sol).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("analytic bias on the corridor matches the frozen oracle") {
    const auto& l = lab();
    const Vector b = analytic_bias(l.lin, l.chain, l.sol);
    for (int i = 0; i < 6; ++i) CHECK(b(i) == doctest::Approx(kGrid1x3Bias[i]).epsilon(1e-9));
}

TEST_CASE("regressions recover an exactly linear synthetic family") {
    Vector b(2);
    b << 0.4, -0.2;
    BiasReport report;
    report.analytic_b = b;
    for (double a : {0.02, 0.04, 0.08}) {
        BiasPoint pt;
        pt.alpha = a;
        pt.bias = a * b;
        pt.se = Vector::Constant(2, 1e-6);
        report.empirical_points.push_back(pt);
        BiasPoint rr;
        rr.alpha = a;
        rr.bias = (a * a) * Vector::Ones(2);
        rr.se = pt.se;
        report.rr_points.push_back(rr);
    }
    fit_bias_regressions(report);
    CHECK((report.fitted_slope - b).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((report.fitted_slope_free - b).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(report.fitted_intercept.lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(report.fitted_order == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(report.rr_order == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(report.cosine == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((report.b_prime - b * b.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("empirical bias report structure on a small budget") {
    const auto& l = lab();
    BiasBudget budget;
    budget.n = 40000;
    budget.replications = 3;
    budget.master_seed = 5;
    const BiasReport report = empirical_bias(l.mdp, l.chain, l.sol, {0.1, 0.05}, budget);

    REQUIRE(report.empirical_points.size() == 2);
    CHECK(report.empirical_points[0].alpha == 0.05);
    CHECK(report.empirical_points[1].alpha == 0.1);
    REQUIRE(report.rr_points.size() == 1);
    CHECK(report.rr_points[0].alpha == 0.05);
    for (const auto& pt : report.empirical_points) {
        CHECK(pt.bias.allFinite());
        CHECK(pt.se.minCoeff() >= 0.0);
        CHECK(pt.bias.lpNorm<Eigen::Infinity>() < 5.0);
    }
    CHECK(report.slope_se.minCoeff() > 0.0);
    for (int i = 0; i < 6; ++i)
        CHECK(report.analytic_b(i) == doctest::Approx(kGrid1x3Bias[i]).epsilon(1e-9));

    // thread scheduling must not leak into the numbers
    const BiasReport again = empirical_bias(l.mdp, l.chain, l.sol, {0.1, 0.05}, budget);
    CHECK((report.fitted_slope.array() == again.fitted_slope.array()).all());
    for (std::size_t i = 0; i < report.empirical_points.size(); ++i)
        CHECK((report.empirical_points[i].bias.array() ==
               again.empirical_points[i].bias.array())
                  .all());
}

TEST_CASE("fourth moment tail shrinks with the stepsize") {
    const auto& l = lab();
    auto fm = [&](double alpha) {
        const RunTrace t = run(l.mdp, l.chain, StepsizeSchedule::constant(alpha), l.sol.q_star,
                               13, 200000);
        return fourth_moment_tail(t, l.sol.q_star, 100000);
    };
    CHECK(fm(0.05) < fm(0.1));
}
