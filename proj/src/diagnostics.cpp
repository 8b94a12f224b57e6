#include "qsa/diagnostics.hpp"

#include <algorithm>
#include <cmath>

namespace qsa {

NormalityReport normality_check(const Matrix& batch_means, double threshold) {
    const int d = static_cast<int>(batch_means.rows());
    const int m = static_cast<int>(batch_means.cols());
    if (m < 20) throw TooFewBatches("normality_check: need at least 20 batch means");

    NormalityReport rep;
    rep.threshold = threshold;
    rep.skew_z = Vector::Zero(d);
    rep.kurt_z = Vector::Zero(d);
    rep.variance_zero.assign(d, 0);
    rep.pass = true;
    const double se_skew = std::sqrt(6.0 / m);
    const double se_kurt = std::sqrt(24.0 / m);

    for (int c = 0; c < d; ++c) {
        const double mean = batch_means.row(c).mean();
        double m2 = 0, m3 = 0, m4 = 0;
        for (int j = 0; j < m; ++j) {
            const double e = batch_means(c, j) - mean;
            m2 += e * e;
            m3 += e * e * e;
            m4 += e * e * e * e;
        }
        m2 /= m;
        m3 /= m;
        m4 /= m;
        if (m2 < 1e-30) {
            rep.variance_zero[c] = 1;
            continue;
        }
        rep.skew_z(c) = (m3 / std::pow(m2, 1.5)) / se_skew;
        rep.kurt_z(c) = (m4 / (m2 * m2) - 3.0) / se_kurt;
        if (std::abs(rep.skew_z(c)) > threshold || std::abs(rep.kurt_z(c)) > threshold)
            rep.pass = false;
    }
    return rep;
}

CltEstimate clt_covariance(const RunTrace& trace, std::int64_t k0, int batches) {
    if (batches < 20) throw TooFewBatches("clt_covariance: need at least 20 batches");
    if (trace.record_stride != 1)
        throw std::invalid_argument("clt_covariance: stride-1 recording required");
    if (trace.iterates.size() == 0) throw std::invalid_argument("clt_covariance: no iterates");
    const std::int64_t len = trace.n - k0;  // samples q_{k0} .. q_{n-1}
    if (len < batches || len % batches != 0)
        throw std::invalid_argument("clt_covariance: tail not divisible into equal batches");
    const std::int64_t batch_len = len / batches;
    const int d = static_cast<int>(trace.iterates.rows());
    const int j0 = trace.record_index(k0);

    Matrix means(d, batches);
    for (int b = 0; b < batches; ++b)
        means.col(b) =
            trace.iterates.middleCols(j0 + b * batch_len, batch_len).rowwise().mean();

    CltEstimate est;
    est.batch_count = batches;
    est.batch_len = batch_len;
    est.mean_hat = means.rowwise().mean();
    Matrix centered = means.colwise() - est.mean_hat;
    est.sigma_hat = static_cast<double>(batch_len) / (batches - 1) * (centered * centered.transpose());
    est.sigma_hat = 0.5 * (est.sigma_hat + est.sigma_hat.transpose()).eval();
    est.normality = normality_check(means);
    return est;
}

DecayFit fit_decay(const std::vector<CoupledTrace>& coupled, std::int64_t k_min) {
    if (coupled.empty()) throw std::invalid_argument("fit_decay: no traces");
    const std::size_t len = coupled.front().w_norm.size();
    for (const auto& c : coupled)
        if (c.w_norm.size() != len) throw std::invalid_argument("fit_decay: trace length mismatch");

    // Fit log mean ||w_k||^2 on k; ||w_k|| then decays as exp(slope/2)^k.
    std::vector<double> xs, ys;
    for (std::size_t k = static_cast<std::size_t>(std::max<std::int64_t>(k_min, 0)); k < len; ++k) {
        double mean_sq = 0.0;
        for (const auto& c : coupled) mean_sq += c.w_norm[k] * c.w_norm[k];
        mean_sq /= coupled.size();
        if (mean_sq < 1e-12) break;
        xs.push_back(static_cast<double>(k));
        ys.push_back(std::log(mean_sq));
    }
    if (xs.size() < 3) throw InsufficientDecay("fit_decay: too few usable points");

    const int m = static_cast<int>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (int i = 0; i < m; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
        syy += ys[i] * ys[i];
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    if (!(slope < 0.0)) throw InsufficientDecay("fit_decay: no decay detected");
    const double intercept = (sy - slope * sx) / m;
    double ss_res = 0.0;
    const double ss_tot = syy - sy * sy / m;
    for (int i = 0; i < m; ++i) {
        const double e = ys[i] - (intercept + slope * xs[i]);
        ss_res += e * e;
    }

    DecayFit fit;
    fit.rate_eta = std::exp(0.5 * slope);
    fit.intercept = intercept;
    fit.log_linear_r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

BarReport bar_residual(const RunTrace& trace, const JointChain& chain, const Mdp& mdp,
                       std::int64_t k0) {
    if (static_cast<std::int64_t>(trace.trajectory.size()) != trace.n)
        throw std::invalid_argument("bar_residual: trajectory indices not retained");
    if (trace.schedule.kind != StepsizeSchedule::Kind::Constant)
        throw std::invalid_argument("bar_residual: constant stepsize required");
    const std::int64_t n = trace.n;
    if (!(0 <= k0 && k0 < n - 1)) throw std::invalid_argument("bar_residual: bad burn-in");
    const double alpha = trace.schedule.alpha;
    const int nx = chain.size();
    const int d = mdp.dim();
    const std::int64_t m = (n - 1) - k0;

    constexpr int kBlocks = 20;
    const std::int64_t block_len = std::max<std::int64_t>(1, m / kBlocks);
    // diff block sums: q_k at x_k minus q_{k+1} at x_{k+1}, per x.
    std::vector<Matrix> blocks(kBlocks, Matrix::Zero(d, nx));
    std::vector<std::int64_t> block_counts(kBlocks, 0);

    Vector q = trace.q0;
    for (std::int64_t k = 0; k + 1 < n; ++k) {
        const Triple& x = chain.states_x[trace.trajectory[k]];
        const int sa = mdp.sa_index(x.s, x.a);
        const double mv = q.segment(x.s_next * mdp.n_actions, mdp.n_actions).maxCoeff();
        const double td = mdp.rewards(sa) + mdp.gamma * mv - q(sa);
        if (k >= k0) {
            const int b = std::min<std::int64_t>((k - k0) / block_len, kBlocks - 1);
            blocks[b].col(trace.trajectory[k]) += q;
            q(sa) = q(sa) + alpha * td;
            blocks[b].col(trace.trajectory[k + 1]) -= q;
            ++block_counts[b];
        } else {
            q(sa) = q(sa) + alpha * td;
        }
    }

    Matrix total = Matrix::Zero(d, nx);
    for (const auto& b : blocks) total += b;

    BarReport rep;
    rep.residual.resize(nx);
    rep.se.resize(nx);
    for (int i = 0; i < nx; ++i) {
        const Vector avg = total.col(i) / static_cast<double>(m);
        int c = 0;
        rep.residual[i] = avg.cwiseAbs().maxCoeff(&c);
        double bm = 0, bs = 0;
        int used = 0;
        for (int b = 0; b < kBlocks; ++b) {
            if (block_counts[b] == 0) continue;
            const double v = blocks[b](c, i) / static_cast<double>(block_counts[b]);
            bm += v;
            bs += v * v;
            ++used;
        }
        if (used >= 2) {
            bm /= used;
            const double var = std::max(0.0, bs / used - bm * bm) * used / (used - 1);
            rep.se[i] = std::sqrt(var / used);
        }
        rep.max_residual = std::max(rep.max_residual, rep.residual[i]);
    }
    return rep;
}

MseDecomposition mse_decomposition(const std::vector<RunTrace>& traces,
                                   const OptimalSolution& solution, std::int64_t k0,
                                   std::int64_t k, const Vector& mean_hat) {
    if (traces.size() < 2) throw std::invalid_argument("mse_decomposition: need >= 2 seeds");
    const int d = static_cast<int>(solution.q_star.size());
    std::vector<Vector> tails;
    tails.reserve(traces.size());
    for (const auto& t : traces) tails.push_back(tail_average(t, k0, k));

    Vector window_mean = Vector::Zero(d);
    for (const auto& v : tails) window_mean += v;
    window_mean /= static_cast<double>(tails.size());

    double var = 0.0;
    for (const auto& v : tails) var += (v - window_mean).squaredNorm();
    var /= static_cast<double>(tails.size() - 1);

    const Vector mh = mean_hat.size() == d ? mean_hat : window_mean;
    MseDecomposition out;
    out.bias_sq = (mh - solution.q_star).squaredNorm();
    out.optimization_sq = (window_mean - mh).squaredNorm();
    out.variance = var;
    return out;
}

}  // namespace qsa
