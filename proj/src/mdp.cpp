#include "qsa/mdp.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace qsa {

namespace {
constexpr double kRowSumTol = 1e-12;
}

ValidationReport validate_mdp(const Mdp& mdp) {
    ValidationReport rep;
    auto add = [&rep](const std::string& msg) { rep.violations.push_back(msg); };

    if (mdp.n_states <= 0) add("n_states must be positive");
    if (mdp.n_actions <= 0) add("n_actions must be positive");
    if (!(mdp.gamma > 0.0 && mdp.gamma < 1.0)) {
        std::ostringstream os;
        os << "discount not in (0,1): gamma = " << mdp.gamma;
        add(os.str());
    }
    if (mdp.r_max < 0.0) add("r_max must be >= 0");
    if (mdp.n_states <= 0 || mdp.n_actions <= 0) return rep;

    const int d = mdp.dim();
    if (mdp.kernel.rows() != d || mdp.kernel.cols() != mdp.n_states)
        add("kernel has wrong shape");
    if (mdp.rewards.size() != d) add("rewards has wrong length");
    if (!rep.ok()) return rep;

    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            const int sa = mdp.sa_index(s, a);
            const auto row = mdp.kernel.row(sa);
            double sum = row.sum();
            if (std::abs(sum - 1.0) > kRowSumTol) {
                std::ostringstream os;
                os << "row (s=" << s << ",a=" << a << ") sums to " << sum;
                add(os.str());
            }
            if ((row.array() < 0.0).any()) {
                std::ostringstream os;
                os << "row (s=" << s << ",a=" << a << ") has a negative entry";
                add(os.str());
            }
            const double r = mdp.rewards(sa);
            if (!std::isfinite(r) || std::abs(r) > mdp.r_max) {
                std::ostringstream os;
                os << "reward (s=" << s << ",a=" << a << ") = " << r
                   << " outside [-" << mdp.r_max << ", " << mdp.r_max << "]";
                add(os.str());
            }
        }
    }
    return rep;
}

Vector bellman_optimality(const Vector& q, const Mdp& mdp) {
    if (q.size() != mdp.dim()) throw std::invalid_argument("bellman_optimality: dimension mismatch");
    Vector state_max(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s)
        state_max(s) = q.segment(s * mdp.n_actions, mdp.n_actions).maxCoeff();
    return mdp.rewards + mdp.gamma * (mdp.kernel * state_max);
}

std::vector<int> greedy_policy(const Vector& q, const Mdp& mdp) {
    std::vector<int> pi(mdp.n_states, 0);
    for (int s = 0; s < mdp.n_states; ++s) {
        int best = 0;
        for (int a = 1; a < mdp.n_actions; ++a)
            if (q(mdp.sa_index(s, a)) > q(mdp.sa_index(s, best))) best = a;
        pi[s] = best;
    }
    return pi;
}

OptimalSolution solve_qstar(const Mdp& mdp, double tol) {
    if (tol <= 0.0) throw std::invalid_argument("solve_qstar: tol must be > 0");
    const double g = mdp.gamma;
    // ||q_{k+1} - q_k|| <= tol*(1-g)/g guarantees ||q_k - q*|| <= tol.
    const double stop = tol * (1.0 - g) / g;

    Vector q = Vector::Zero(mdp.dim());
    double diff = std::numeric_limits<double>::infinity();
    while (diff > stop) {
        Vector qn = bellman_optimality(q, mdp);
        if (!qn.allFinite()) throw std::runtime_error("solve_qstar: non-finite values encountered");
        diff = (qn - q).lpNorm<Eigen::Infinity>();
        q = std::move(qn);
    }

    OptimalSolution sol;
    sol.q_star = q;
    sol.residual = (bellman_optimality(q, mdp) - q).lpNorm<Eigen::Infinity>();
    sol.pi_star = greedy_policy(q, mdp);
    sol.q_max = std::max(0.0, mdp.r_max / (1.0 - g));

    if (mdp.n_actions == 1) {
        sol.gap_delta = std::numeric_limits<double>::infinity();
    } else {
        double min_margin = std::numeric_limits<double>::infinity();
        for (int s = 0; s < mdp.n_states; ++s) {
            const double best = q(mdp.sa_index(s, sol.pi_star[s]));
            for (int a = 0; a < mdp.n_actions; ++a) {
                if (a == sol.pi_star[s]) continue;
                min_margin = std::min(min_margin, best - q(mdp.sa_index(s, a)));
            }
        }
        sol.gap_delta = 0.5 * min_margin;
        sol.gap_is_zero = !(sol.gap_delta > 0.0);
        if (sol.gap_delta < 0.0) sol.gap_delta = 0.0;
    }
    return sol;
}

}  // namespace qsa
