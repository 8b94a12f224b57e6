#include "qsa/bias.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "qsa/rng.hpp"

namespace qsa {

Matrix Linearization::g_matrix(int x) const {
    Matrix g = Matrix::Identity(d, d);
    g.row(row_sa[x]).setZero();
    g(row_sa[x], col_sa[x]) = gamma;
    return g;
}

Matrix Linearization::a_matrix(int x) const { return g_matrix(x) - Matrix::Identity(d, d); }

Vector Linearization::b_vector(int x) const {
    return h.row(x).transpose() - a_matrix(x) * q_star;
}

Linearization linearize(const Mdp& mdp, const JointChain& chain,
                        const OptimalSolution& solution) {
    if (!(solution.gap_delta > 0.0))
        throw AssumptionViolated("linearize: optimality gap is zero");

    Linearization lin;
    lin.d = mdp.dim();
    lin.n_actions = mdp.n_actions;
    lin.gamma = mdp.gamma;
    lin.q_star = solution.q_star;
    lin.a_star = solution.pi_star;

    const int nx = chain.size();
    lin.row_sa.resize(nx);
    lin.col_sa.resize(nx);
    lin.h.resize(nx, lin.d);
    lin.h.setZero();
    lin.g_bar = Matrix::Identity(lin.d, lin.d);
    for (int x = 0; x < nx; ++x) {
        const Triple& t = chain.states_x[x];
        const int sa0 = mdp.sa_index(t.s, t.a);
        const int col = mdp.sa_index(t.s_next, lin.a_star[t.s_next]);
        lin.row_sa[x] = sa0;
        lin.col_sa[x] = col;
        lin.h(x, sa0) = mdp.rewards(sa0) + mdp.gamma * solution.q_star(col) - solution.q_star(sa0);
        const double nu = chain.mu_x(x);
        lin.g_bar(sa0, sa0) -= nu;
        lin.g_bar(sa0, col) += nu * mdp.gamma;
    }
    lin.a_bar = lin.g_bar - Matrix::Identity(lin.d, lin.d);

    Eigen::EigenSolver<Matrix> eig(lin.g_bar);
    double gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < lin.d; ++i)
        gap = std::min(gap, std::abs(eig.eigenvalues()(i) - std::complex<double>(1.0, 0.0)));
    lin.eig_gap = gap;
    if (!(lin.eig_gap > 1e-8))
        throw SingularLinearization("linearize: mean linearization has an eigenvalue at 1");
    return lin;
}

Vector remainder(const Triple& x, const Vector& q, const OptimalSolution& solution,
                 const Mdp& mdp) {
    Vector r = Vector::Zero(mdp.dim());
    const int sa0 = mdp.sa_index(x.s, x.a);
    const int nA = mdp.n_actions;
    const double m = q.segment(x.s_next * nA, nA).maxCoeff();
    r(sa0) = mdp.gamma * (m - q(mdp.sa_index(x.s_next, solution.pi_star[x.s_next])));
    return r;
}

Vector analytic_bias(const Linearization& lin, const JointChain& chain,
                     const OptimalSolution& solution) {
    (void)solution;
    const int nx = chain.size();
    const Matrix pi = Vector::Ones(nx) * chain.mu_x.transpose();
    const Matrix dev = chain.reversed_p_hat - pi;  // P_hat - Pi
    const Matrix m = Matrix::Identity(nx, nx) - dev;
    const Matrix w = dev * lin.h;

    Eigen::FullPivLU<Matrix> lu(m);
    const Matrix v = lu.solve(w);
    if ((m * v - w).cwiseAbs().maxCoeff() > 1e-10)
        throw SingularFundamentalMatrix("analytic_bias: fundamental linear solve residual too large");

    Vector accum = Vector::Zero(lin.d);
    for (int x = 0; x < nx; ++x)
        accum(lin.row_sa[x]) +=
            chain.mu_x(x) * (lin.gamma * v(x, lin.col_sa[x]) - v(x, lin.row_sa[x]));
    return -lin.a_bar.fullPivLu().solve(accum);
}

namespace {

// OLS of y on x; returns (slope, intercept).
std::pair<double, double> ols(const std::vector<double>& x, const std::vector<double>& y) {
    const int m = static_cast<int>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < m; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    return {slope, (sy - slope * sx) / m};
}

double loglog_order(const std::vector<BiasPoint>& points) {
    std::vector<double> lx, ly;
    for (const auto& p : points) {
        const double norm = p.bias.lpNorm<1>();
        if (norm > 0.0) {
            lx.push_back(std::log(p.alpha));
            ly.push_back(std::log(norm));
        }
    }
    if (lx.size() < 2) return 0.0;
    return ols(lx, ly).first;
}

}  // namespace

void fit_bias_regressions(BiasReport& report) {
    const auto& pts = report.empirical_points;
    if (pts.empty()) return;
    const int d = static_cast<int>(pts.front().bias.size());
    report.fitted_slope = Vector::Zero(d);
    report.fitted_slope_free = Vector::Zero(d);
    report.fitted_intercept = Vector::Zero(d);

    for (int c = 0; c < d; ++c) {
        double saa = 0, sab = 0;
        std::vector<double> xs, ys;
        for (const auto& p : pts) {
            saa += p.alpha * p.alpha;
            sab += p.alpha * p.bias(c);
            xs.push_back(p.alpha);
            ys.push_back(p.bias(c));
        }
        report.fitted_slope(c) = sab / saa;
        if (pts.size() >= 2) {
            auto [slope, intercept] = ols(xs, ys);
            report.fitted_slope_free(c) = slope;
            report.fitted_intercept(c) = intercept;
        }
    }
    report.fitted_order = loglog_order(pts);
    report.rr_order = loglog_order(report.rr_points);

    if (report.analytic_b.size() == d) {
        report.b_prime = report.analytic_b * report.analytic_b.transpose();
        const double nn = report.fitted_slope.norm() * report.analytic_b.norm();
        report.cosine = nn > 0.0 ? report.fitted_slope.dot(report.analytic_b) / nn : 0.0;
    }
}

BiasReport empirical_bias(const Mdp& mdp, const JointChain& chain,
                          const OptimalSolution& solution, std::vector<double> alphas,
                          const BiasBudget& budget) {
    std::sort(alphas.begin(), alphas.end());
    const std::int64_t n = budget.n;
    const std::int64_t k0 = budget.k0 < 0 ? n / 2 : budget.k0;
    const int reps = budget.replications;
    const int na = static_cast<int>(alphas.size());
    const int d = mdp.dim();

    // tails[ai * reps + rep] = tail average of the (alpha, replication) cell.
    std::vector<Vector> tails(static_cast<std::size_t>(na) * reps);
    std::atomic<int> cursor{0};
    auto worker = [&] {
        for (;;) {
            const int cell = cursor.fetch_add(1);
            if (cell >= na * reps) return;
            const int ai = cell / reps, rep = cell % reps;
            RunOptions opts;
            opts.keep_iterates = false;
            opts.keep_cumsum = false;
            opts.tail_from = k0;
            // One data stream per replication, shared by all stepsizes so RR
            // extrapolation pairs runs on the same stream.
            const std::uint64_t seed = derive_seed(budget.master_seed, 0, rep);
            RunTrace trace = run(mdp, chain, StepsizeSchedule::constant(alphas[ai]),
                                 solution.q_star, seed, n, opts);
            tails[cell] = tail_average(trace, k0, n);
        }
    };
    if (budget.parallel && na * reps > 1) {
        const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < std::min<unsigned>(hw, na * reps); ++t)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    } else {
        worker();
    }

    auto aggregate = [&](double alpha, const std::vector<Vector>& cells) {
        BiasPoint pt;
        pt.alpha = alpha;
        Vector mean = Vector::Zero(d);
        for (const auto& v : cells) mean += v;
        mean /= static_cast<double>(cells.size());
        pt.bias = mean - solution.q_star;
        pt.se = Vector::Zero(d);
        if (cells.size() >= 2) {
            Vector ss = Vector::Zero(d);
            for (const auto& v : cells) ss += (v - mean).cwiseAbs2();
            pt.se = (ss / static_cast<double>(cells.size() - 1)).cwiseSqrt() /
                    std::sqrt(static_cast<double>(cells.size()));
        }
        return pt;
    };

    BiasReport report;
    for (int ai = 0; ai < na; ++ai) {
        std::vector<Vector> cells(tails.begin() + static_cast<std::size_t>(ai) * reps,
                                  tails.begin() + static_cast<std::size_t>(ai + 1) * reps);
        report.empirical_points.push_back(aggregate(alphas[ai], cells));
    }
    for (int ai = 0; ai < na; ++ai) {
        int twin = -1;
        for (int j = 0; j < na; ++j)
            if (std::abs(alphas[j] - 2.0 * alphas[ai]) < 1e-12 * std::max(1.0, alphas[j])) twin = j;
        if (twin < 0) continue;
        std::vector<Vector> cells(reps);
        for (int rep = 0; rep < reps; ++rep)
            cells[rep] = rr_extrapolate(tails[static_cast<std::size_t>(ai) * reps + rep],
                                        tails[static_cast<std::size_t>(twin) * reps + rep]);
        report.rr_points.push_back(aggregate(alphas[ai], cells));
    }

    // Slope uncertainty from per-replication through-origin slopes; valid even
    // with the data stream shared across stepsizes.
    double saa = 0.0;
    for (double a : alphas) saa += a * a;
    Matrix rep_slopes(d, reps);
    for (int rep = 0; rep < reps; ++rep) {
        Vector s = Vector::Zero(d);
        for (int ai = 0; ai < na; ++ai)
            s += alphas[ai] *
                 (tails[static_cast<std::size_t>(ai) * reps + rep] - solution.q_star);
        rep_slopes.col(rep) = s / saa;
    }
    report.slope_se = Vector::Zero(d);
    if (reps >= 2) {
        const Vector mean = rep_slopes.rowwise().mean();
        Vector ss = Vector::Zero(d);
        for (int rep = 0; rep < reps; ++rep) ss += (rep_slopes.col(rep) - mean).cwiseAbs2();
        report.slope_se = (ss / (reps - 1)).cwiseSqrt() / std::sqrt(static_cast<double>(reps));
    }

    report.analytic_b = analytic_bias(linearize(mdp, chain, solution), chain, solution);
    fit_bias_regressions(report);
    return report;
}

double fourth_moment_tail(const RunTrace& trace, const Vector& q_star, std::int64_t k0) {
    if (trace.iterates.size() == 0) throw std::invalid_argument("fourth_moment_tail: no iterates");
    double sum = 0.0;
    int count = 0;
    for (std::size_t j = 0; j < trace.ks.size(); ++j) {
        if (trace.ks[j] < k0) continue;
        const double e = (trace.iterates.col(j) - q_star).lpNorm<Eigen::Infinity>();
        sum += e * e * e * e;
        ++count;
    }
    if (count == 0) throw std::invalid_argument("fourth_moment_tail: empty tail");
    return sum / count;
}

}  // namespace qsa
