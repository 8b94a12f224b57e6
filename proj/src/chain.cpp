#include "qsa/chain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "qsa/rng.hpp"

namespace qsa {

namespace {

// Strong connectivity via forward + backward BFS from node 0.
bool strongly_connected(const std::vector<std::vector<int>>& adj,
                        const std::vector<std::vector<int>>& radj) {
    const int n = static_cast<int>(adj.size());
    for (const auto* g : {&adj, &radj}) {
        std::vector<char> seen(n, 0);
        std::queue<int> bfs;
        bfs.push(0);
        seen[0] = 1;
        int count = 1;
        while (!bfs.empty()) {
            int u = bfs.front();
            bfs.pop();
            for (int v : (*g)[u])
                if (!seen[v]) {
                    seen[v] = 1;
                    ++count;
                    bfs.push(v);
                }
        }
        if (count != n) return false;
    }
    return true;
}

// For a strongly connected graph, the period is gcd over edges (u,v) of
// level(u) + 1 - level(v) with BFS levels from any root.
int graph_period(const std::vector<std::vector<int>>& adj) {
    const int n = static_cast<int>(adj.size());
    std::vector<int> level(n, -1);
    std::queue<int> bfs;
    bfs.push(0);
    level[0] = 0;
    while (!bfs.empty()) {
        int u = bfs.front();
        bfs.pop();
        for (int v : adj[u])
            if (level[v] < 0) {
                level[v] = level[u] + 1;
                bfs.push(v);
            }
    }
    int g = 0;
    for (int u = 0; u < n; ++u)
        for (int v : adj[u]) g = std::gcd(g, std::abs(level[u] + 1 - level[v]));
    return g == 0 ? 1 : g;
}

Vector stationary_distribution(const Matrix& p) {
    const int n = static_cast<int>(p.rows());
    Matrix a = p.transpose() - Matrix::Identity(n, n);
    a.row(n - 1).setOnes();
    Vector rhs = Vector::Zero(n);
    rhs(n - 1) = 1.0;
    Vector mu = a.fullPivLu().solve(rhs);
    return mu;
}

Matrix reversed_kernel(const Matrix& p, const Vector& mu) {
    const int n = static_cast<int>(p.rows());
    Matrix phat(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) phat(j, i) = mu(i) * p(i, j) / mu(j);
    return phat;
}

void finish_chain(JointChain& chain, const Mdp* mdp) {
    chain.mu_x = stationary_distribution(chain.kernel_p);
    chain.reversed_p_hat = reversed_kernel(chain.kernel_p, chain.mu_x);
    if (mdp) {
        chain.mu_sa = Vector::Zero(mdp->dim());
        for (int i = 0; i < chain.size(); ++i) {
            const Triple& t = chain.states_x[i];
            chain.mu_sa(mdp->sa_index(t.s, t.a)) += chain.mu_x(i);
        }
        chain.beta = 1.0 - (1.0 - mdp->gamma) * chain.mu_sa.minCoeff();
    }
}

}  // namespace

BehaviorPolicy uniform_policy(const Mdp& mdp) {
    BehaviorPolicy pol;
    pol.probs = Matrix::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
    return pol;
}

JointChain build_joint_chain(const Mdp& mdp, const BehaviorPolicy& policy) {
    if (!validate_mdp(mdp).ok()) throw ChainError("build_joint_chain: invalid MDP");
    if (policy.probs.rows() != mdp.n_states || policy.probs.cols() != mdp.n_actions)
        throw ChainError("build_joint_chain: policy has wrong shape");
    for (int s = 0; s < mdp.n_states; ++s) {
        if (std::abs(policy.probs.row(s).sum() - 1.0) > 1e-12 ||
            (policy.probs.row(s).array() < 0.0).any())
            throw ChainError("build_joint_chain: policy row not a distribution");
    }

    JointChain chain;
    chain.n_states = mdp.n_states;
    chain.n_actions = mdp.n_actions;
    chain.triple_index.assign(static_cast<std::size_t>(mdp.dim()) * mdp.n_states, -1);

    // Only reachable triples: positive policy and kernel mass.
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                if (policy.probs(s, a) > 0.0 && mdp.kernel(mdp.sa_index(s, a), s2) > 0.0) {
                    chain.triple_index[(static_cast<std::size_t>(s) * mdp.n_actions + a) *
                                           mdp.n_states + s2] =
                        static_cast<int>(chain.states_x.size());
                    chain.states_x.push_back({s, a, s2});
                }
            }

    const int nx = chain.size();
    chain.kernel_p = Matrix::Zero(nx, nx);
    for (int i = 0; i < nx; ++i) {
        const int s1 = chain.states_x[i].s_next;
        for (int j = 0; j < nx; ++j) {
            const Triple& t = chain.states_x[j];
            if (t.s != s1) continue;
            chain.kernel_p(i, j) = policy.probs(t.s, t.a) * mdp.kernel(mdp.sa_index(t.s, t.a), t.s_next);
        }
    }

    std::vector<std::vector<int>> adj(nx), radj(nx);
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nx; ++j)
            if (chain.kernel_p(i, j) > 0.0) {
                adj[i].push_back(j);
                radj[j].push_back(i);
            }
    if (!strongly_connected(adj, radj))
        throw ReducibleChain("joint chain is reducible under this behavior policy");
    if (graph_period(adj) != 1)
        throw PeriodicChain("joint chain is periodic under this behavior policy");

    finish_chain(chain, &mdp);
    return chain;
}

JointChain chain_from_kernel(const Matrix& p) {
    if (p.rows() != p.cols()) throw ChainError("chain_from_kernel: kernel must be square");
    JointChain chain;
    const int n = static_cast<int>(p.rows());
    chain.n_states = n;
    chain.n_actions = 1;
    chain.triple_index.assign(static_cast<std::size_t>(n) * n, -1);
    for (int i = 0; i < n; ++i) {
        chain.triple_index[static_cast<std::size_t>(i) * n] = i;
        chain.states_x.push_back({i, 0, 0});
    }
    chain.kernel_p = p;
    finish_chain(chain, nullptr);
    return chain;
}

JointChain make_iid_chain(const JointChain& chain) {
    JointChain iid = chain;
    for (int i = 0; i < iid.size(); ++i) iid.kernel_p.row(i) = chain.mu_x.transpose();
    iid.mu_x = chain.mu_x;
    iid.reversed_p_hat = reversed_kernel(iid.kernel_p, iid.mu_x);
    iid.mixing.reset();
    return iid;
}

std::vector<double> tv_profile(const JointChain& chain, int k_max) {
    const int nx = chain.size();
    std::vector<double> tv;
    tv.reserve(k_max + 1);
    Matrix pk = Matrix::Identity(nx, nx);
    for (int k = 0; k <= k_max; ++k) {
        double worst = 0.0;
        for (int i = 0; i < nx; ++i)
            worst = std::max(worst, 0.5 * (pk.row(i).transpose() - chain.mu_x).lpNorm<1>());
        tv.push_back(worst);
        if (k < k_max) pk = pk * chain.kernel_p;
    }
    return tv;
}

int mixing_time(const JointChain& chain, double delta, int cap) {
    if (!(delta > 0.0)) throw ChainError("mixing_time: delta must be > 0");
    const int nx = chain.size();
    Matrix pk = Matrix::Identity(nx, nx);
    for (int k = 0; k <= cap; ++k) {
        double worst = 0.0;
        for (int i = 0; i < nx; ++i)
            worst = std::max(worst, 0.5 * (pk.row(i).transpose() - chain.mu_x).lpNorm<1>());
        if (worst <= delta) return k;
        if (k < cap) pk = pk * chain.kernel_p;
    }
    throw CapExceeded("mixing_time: cap exceeded");
}

std::pair<double, double> fit_geometric_mixing(const JointChain& chain, int k_max) {
    if (k_max < 2) throw ChainError("fit_geometric_mixing: k_max must be >= 2");
    const std::vector<double> tv = tv_profile(chain, k_max);

    // Regression on k >= 1 where TV is above numerical floor.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (int k = 1; k <= k_max; ++k) {
        if (tv[k] <= 1e-14) continue;
        const double y = std::log(tv[k]);
        sx += k;
        sy += y;
        sxx += static_cast<double>(k) * k;
        sxy += k * y;
        ++m;
    }
    double rho = 0.0, c = tv[0];
    if (m >= 2) {
        const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        rho = std::exp(slope);
        rho = std::min(std::max(rho, 0.0), 1.0 - 1e-15);
        // Inflate c so the fit is a valid envelope, not just a regression.
        c = 0.0;
        for (int k = 0; k <= k_max; ++k)
            if (tv[k] > 0.0) c = std::max(c, tv[k] / std::pow(rho, k));
    }
    return {c, rho};
}

MixingProfile mixing_profile(const JointChain& chain, const std::vector<double>& deltas,
                             int k_max) {
    MixingProfile prof;
    for (double d : deltas) prof.t_delta_table.emplace_back(d, mixing_time(chain, d));
    const auto [c, rho] = fit_geometric_mixing(chain, k_max);
    prof.geo_c = c;
    prof.geo_rho = rho;
    return prof;
}

std::vector<int> sample_trajectory(const JointChain& chain, std::uint64_t seed, std::int64_t n,
                                   const Start& start) {
    if (n < 1) throw ChainError("sample_trajectory: n must be >= 1");
    const int nx = chain.size();
    Rng rng(seed);

    auto draw = [nx](const double* cdf, double u) {
        // inverse CDF, lowest index whose cumulative mass exceeds u
        int lo = 0, hi = nx - 1;
        while (lo < hi) {
            int mid = (lo + hi) / 2;
            if (u < cdf[mid])
                hi = mid;
            else
                lo = mid + 1;
        }
        return lo;
    };

    std::vector<double> start_cdf(nx), row_cdf(static_cast<std::size_t>(nx) * nx);
    double acc = 0.0;
    for (int i = 0; i < nx; ++i) {
        acc += chain.mu_x(i);
        start_cdf[i] = acc;
    }
    for (int i = 0; i < nx; ++i) {
        acc = 0.0;
        for (int j = 0; j < nx; ++j) {
            acc += chain.kernel_p(i, j);
            row_cdf[static_cast<std::size_t>(i) * nx + j] = acc;
        }
    }

    std::vector<int> traj(n);
    int x = (start.kind == StartKind::Stationary) ? draw(start_cdf.data(), rng.next_double())
                                                  : start.fixed_x;
    traj[0] = x;
    for (std::int64_t k = 1; k < n; ++k) {
        x = draw(&row_cdf[static_cast<std::size_t>(x) * nx], rng.next_double());
        traj[k] = x;
    }
    return traj;
}

StepsizeAdvisory check_stepsize(const JointChain& chain, double alpha, double c0) {
    StepsizeAdvisory adv;
    adv.t_alpha = mixing_time(chain, alpha);
    adv.lhs = alpha * adv.t_alpha;
    const double d = static_cast<double>(chain.n_states) * chain.n_actions;
    adv.rhs = c0 * (1.0 - chain.beta) * (1.0 - chain.beta) / std::log(std::max(d, 2.0));
    adv.ok = adv.lhs <= adv.rhs;
    return adv;
}

}  // namespace qsa
