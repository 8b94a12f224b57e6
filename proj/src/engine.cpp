#include "qsa/engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qsa {

namespace {

std::int64_t auto_stride(std::int64_t n, std::int64_t requested) {
    if (requested > 0) return requested;
    if (n <= 100000) return 1;
    return (n + 99999) / 100000;
}

// Records q_k at k = j*stride plus the final k = n.
struct Recorder {
    const RunOptions& opts;
    std::int64_t n, stride;
    RunTrace trace;
    Vector running_sum;
    std::int64_t next_col = 0;

    Recorder(const RunOptions& o, std::int64_t n_, std::int64_t d, const Vector& q0,
             const StepsizeSchedule& sched, std::uint64_t seed)
        : opts(o), n(n_), stride(auto_stride(n_, o.record_stride)) {
        std::int64_t n_records = n / stride + 1 + (n % stride != 0 ? 1 : 0);
        if (opts.keep_iterates) trace.iterates.resize(d, n_records);
        if (opts.keep_cumsum) trace.cumsum.resize(d, n_records);
        trace.ks.reserve(n_records);
        trace.q0 = q0;
        trace.schedule = sched;
        trace.seed = seed;
        trace.n = n;
        trace.record_stride = stride;
        trace.tail_from = opts.tail_from;
        running_sum = Vector::Zero(d);
        if (opts.tail_from >= 0) trace.tail_sum = Vector::Zero(d);
    }

    void visit(std::int64_t k, const Vector& q) {
        if (k >= opts.record_from && (k % stride == 0 || k == n)) {
            trace.ks.push_back(k);
            if (opts.keep_iterates) trace.iterates.col(next_col) = q;
            if (opts.keep_cumsum) trace.cumsum.col(next_col) = running_sum;
            ++next_col;
        }
        if (k < n) {
            if (opts.keep_cumsum) running_sum += q;
            if (opts.tail_from >= 0 && k >= opts.tail_from) trace.tail_sum += q;
        }
    }

    RunTrace finish(const Vector& q) {
        if (opts.keep_iterates) trace.iterates.conservativeResize(Eigen::NoChange, next_col);
        if (opts.keep_cumsum) trace.cumsum.conservativeResize(Eigen::NoChange, next_col);
        trace.final = q;
        return std::move(trace);
    }
};

}  // namespace

std::string StepsizeSchedule::id() const {
    switch (kind) {
        case Kind::Constant: return "constant";
        case Kind::RescaledLinear: return "rescaled_linear";
        case Kind::Polynomial: return "polynomial";
    }
    return "constant";
}

int RunTrace::record_index(std::int64_t k) const {
    const auto it = std::lower_bound(ks.begin(), ks.end(), k);
    if (it != ks.end() && *it == k) return static_cast<int>(it - ks.begin());
    std::ostringstream os;
    os << "record_index: step " << k << " not recorded (stride " << record_stride << ")";
    throw std::invalid_argument(os.str());
}

BellmanSample empirical_bellman(const Triple& x, const Vector& q, const Mdp& mdp) {
    const int sa = mdp.sa_index(x.s, x.a);
    const double m = q.segment(x.s_next * mdp.n_actions, mdp.n_actions).maxCoeff();
    return {sa, mdp.rewards(sa) + mdp.gamma * m - q(sa)};
}

Vector empirical_bellman_dense(const Triple& x, const Vector& q, const Mdp& mdp) {
    Vector f = Vector::Zero(mdp.dim());
    const BellmanSample s = empirical_bellman(x, q, mdp);
    f(s.sa) = s.value;
    return f;
}

RunTrace run(const Mdp& mdp, const JointChain& chain, const StepsizeSchedule& schedule,
             const Vector& q0, std::uint64_t seed, std::int64_t n, const RunOptions& opts,
             const Start& start) {
    if (q0.size() != mdp.dim()) throw std::invalid_argument("run: q0 dimension mismatch");
    if (n < 1) throw std::invalid_argument("run: n must be >= 1");

    const std::vector<int> traj = sample_trajectory(chain, seed, n, start);
    const double bound = 10.0 * std::max(q0.lpNorm<Eigen::Infinity>(), mdp.r_max / (1.0 - mdp.gamma));

    Recorder rec(opts, n, mdp.dim(), q0, schedule, seed);
    Vector q = q0;
    for (std::int64_t k = 0; k < n; ++k) {
        rec.visit(k, q);
        const Triple& x = chain.states_x[traj[k]];
        const int sa = mdp.sa_index(x.s, x.a);
        const double m = q.segment(x.s_next * mdp.n_actions, mdp.n_actions).maxCoeff();
        const double td = mdp.rewards(sa) + mdp.gamma * m - q(sa);
        q(sa) = q(sa) + schedule.at(k) * td;
        if (!std::isfinite(q(sa)) || std::abs(q(sa)) > bound) {
            std::ostringstream os;
            os << "run: iterate diverged at step " << k;
            throw NonFiniteIterate(os.str());
        }
    }
    rec.visit(n, q);
    RunTrace trace = rec.finish(q);
    if (opts.keep_trajectory) trace.trajectory = traj;
    return trace;
}

Vector tail_average(const RunTrace& trace, std::int64_t k0, std::int64_t k) {
    if (!(0 <= k0 && k0 < k && k <= trace.n))
        throw std::invalid_argument("tail_average: need 0 <= k0 < k <= n");
    if (trace.tail_from == k0 && k == trace.n && trace.tail_sum.size() > 0)
        return trace.tail_sum / static_cast<double>(k - k0);
    if (trace.cumsum.size() == 0) throw std::invalid_argument("tail_average: no cumulative sums");
    const int j0 = trace.record_index(k0);
    const int j1 = trace.record_index(k);
    return (trace.cumsum.col(j1) - trace.cumsum.col(j0)) / static_cast<double>(k - k0);
}

Vector rr_extrapolate(const Vector& qbar_alpha, const Vector& qbar_2alpha) {
    return 2.0 * qbar_alpha - qbar_2alpha;
}

CoupledTrace coupled_run(const Mdp& mdp, const JointChain& chain, double alpha,
                         const Vector& q0_a, const Vector& q0_b, std::uint64_t seed,
                         std::int64_t n, const Start& start) {
    if (q0_a.size() != mdp.dim() || q0_b.size() != mdp.dim())
        throw std::invalid_argument("coupled_run: dimension mismatch");
    const std::vector<int> traj = sample_trajectory(chain, seed, n, start);
    const int nA = mdp.n_actions;

    Vector q1 = q0_a, q2 = q0_b;
    Vector w = q1 - q2, wl = w, wu = w;
    const double tol = 1e-9 * std::max(1.0, w.lpNorm<Eigen::Infinity>());

    CoupledTrace out;
    out.w_norm.reserve(n + 1);
    out.w_lower_norm.reserve(n + 1);
    out.w_upper_norm.reserve(n + 1);

    auto record = [&] {
        out.w_norm.push_back(w.lpNorm<Eigen::Infinity>());
        out.w_lower_norm.push_back(wl.lpNorm<Eigen::Infinity>());
        out.w_upper_norm.push_back(wu.lpNorm<Eigen::Infinity>());
        if (((q1 - q2 - wl).array() < -tol).any() || ((wu - q1 + q2).array() < -tol).any())
            ++out.sandwich_violations;
    };

    record();
    for (std::int64_t k = 0; k < n; ++k) {
        const Triple& x = chain.states_x[traj[k]];
        const int sa = mdp.sa_index(x.s, x.a);
        const auto next = [&](const Vector& v) { return v.segment(x.s_next * nA, nA); };
        const double m1 = next(q1).maxCoeff();
        const double m2 = next(q2).maxCoeff();
        const double r = mdp.rewards(sa);
        const double g = mdp.gamma;
        const double wl_new = (1.0 - alpha) * wl(sa) + alpha * g * next(wl).minCoeff();
        const double wu_new = (1.0 - alpha) * wu(sa) + alpha * g * next(wu).maxCoeff();
        q1(sa) += alpha * (r + g * m1 - q1(sa));
        q2(sa) += alpha * (r + g * m2 - q2(sa));
        wl(sa) = wl_new;
        wu(sa) = wu_new;
        w = q1 - q2;
        record();
    }
    out.w_final = w;
    out.w_lower_final = wl;
    out.w_upper_final = wu;
    return out;
}

RunTrace lfa_run(const Mdp& mdp, const JointChain& chain, const Matrix& features,
                 const StepsizeSchedule& schedule, const Vector& theta0, std::uint64_t seed,
                 std::int64_t n, const RunOptions& opts, const Start& start) {
    const int d_feat = static_cast<int>(features.cols());
    if (features.rows() != mdp.dim()) throw std::invalid_argument("lfa_run: features wrong shape");
    if (theta0.size() != d_feat) throw std::invalid_argument("lfa_run: theta0 dimension mismatch");
    if (n < 1) throw std::invalid_argument("lfa_run: n must be >= 1");
    if (Eigen::ColPivHouseholderQR<Matrix>(features).rank() < d_feat)
        throw RankDeficientFeatures("lfa_run: feature matrix is rank deficient");
    for (int i = 0; i < features.rows(); ++i)
        if (features.row(i).norm() > 1.0 + 1e-9)
            throw std::invalid_argument("lfa_run: feature row norm exceeds 1");

    const std::vector<int> traj = sample_trajectory(chain, seed, n, start);
    const int nA = mdp.n_actions;

    Recorder rec(opts, n, d_feat, theta0, schedule, seed);
    rec.trace.linear_fa = true;
    Vector theta = theta0;
    for (std::int64_t k = 0; k < n; ++k) {
        rec.visit(k, theta);
        const Triple& x = chain.states_x[traj[k]];
        const int sa = mdp.sa_index(x.s, x.a);
        double m = features.row(x.s_next * nA).dot(theta);
        for (int a = 1; a < nA; ++a) m = std::max(m, features.row(x.s_next * nA + a).dot(theta));
        const double td = mdp.rewards(sa) + mdp.gamma * m - features.row(sa).dot(theta);
        theta += (schedule.at(k) * td) * features.row(sa).transpose();
        if (!std::isfinite(td) || (k % 1024 == 0 && !theta.allFinite())) {
            std::ostringstream os;
            os << "lfa_run: iterate diverged at step " << k;
            throw NonFiniteIterate(os.str());
        }
    }
    rec.visit(n, theta);
    if (!theta.allFinite()) throw NonFiniteIterate("lfa_run: non-finite final iterate");
    RunTrace trace = rec.finish(theta);
    if (opts.keep_trajectory) trace.trajectory = traj;
    return trace;
}

Vector projected_value_iteration(const Mdp& mdp, const Matrix& features, double tol,
                                 int max_iters) {
    const int d_feat = static_cast<int>(features.cols());
    Eigen::ColPivHouseholderQR<Matrix> qr(features);
    if (qr.rank() < d_feat)
        throw RankDeficientFeatures("projected_value_iteration: rank deficient features");

    Vector theta = Vector::Zero(d_feat);
    for (int it = 0; it < max_iters; ++it) {
        const Vector target = bellman_optimality(features * theta, mdp);
        Vector theta_next = qr.solve(target);
        const double diff = (theta_next - theta).lpNorm<Eigen::Infinity>();
        theta = std::move(theta_next);
        if (!theta.allFinite())
            throw NonFiniteIterate("projected_value_iteration: non-finite iterate");
        if (diff <= tol) return theta;
    }
    throw NoConvergence("projected_value_iteration: no fixed point within iteration cap");
}

}  // namespace qsa
