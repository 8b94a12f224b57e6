#include "qsa/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "qsa/bias.hpp"
#include "qsa/diagnostics.hpp"
#include "qsa/engine.hpp"
#include "qsa/presets.hpp"
#include "qsa/rng.hpp"

namespace qsa {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

using Row = std::vector<std::string>;

void parallel_for(int total, const std::function<void(int)>& fn) {
    if (total <= 1) {
        for (int i = 0; i < total; ++i) fn(i);
        return;
    }
    std::atomic<int> cursor{0};
    auto worker = [&] {
        for (;;) {
            const int i = cursor.fetch_add(1);
            if (i >= total) return;
            fn(i);
        }
    };
    const unsigned threads =
        std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()), total);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

struct Lab {
    Mdp mdp;
    BehaviorPolicy policy;
    Matrix features;
    JointChain chain;
    OptimalSolution sol;
};

Lab materialize(const ExperimentSpec& spec) {
    Lab lab;
    if (spec.inline_mdp) {
        lab.mdp = *spec.inline_mdp;
        lab.policy = spec.inline_policy ? *spec.inline_policy : uniform_policy(lab.mdp);
    } else {
        Preset p = build_preset(spec.preset, spec.preset_seed);
        lab.mdp = p.mdp;
        lab.policy = spec.inline_policy ? *spec.inline_policy : p.policy;
        lab.features = p.features;
    }
    const ValidationReport rep = validate_mdp(lab.mdp);
    if (!rep.ok()) throw ConfigError("invalid MDP: " + rep.violations.front());
    lab.chain = build_joint_chain(lab.mdp, lab.policy);
    lab.sol = solve_qstar(lab.mdp);
    return lab;
}

// Checkpoints j*n/100 plus 1e4; the recording stride divides k and k/2 for
// every checkpoint k.
struct Checkpoints {
    std::vector<std::int64_t> ks;
    std::int64_t stride = 1;
};

Checkpoints make_checkpoints(std::int64_t n) {
    if (n % 200 != 0) throw ConfigError("curve pipelines need n divisible by 200");
    Checkpoints cp;
    std::set<std::int64_t> ks;
    for (int j = 1; j <= 100; ++j) ks.insert(j * (n / 100));
    if (n > 10000) ks.insert(10000);
    cp.ks.assign(ks.begin(), ks.end());
    cp.stride = n / 200;
    if (n > 10000) cp.stride = std::gcd(cp.stride, static_cast<std::int64_t>(5000));
    return cp;
}

class Writer {
  public:
    Writer(const std::string& dir, Manifest& manifest) : dir_(dir), manifest_(manifest) {}

    void csv(const std::string& name, const Row& header, const std::vector<Row>& rows) {
        std::ofstream out(std::filesystem::path(dir_) / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + name);
        write_row(out, header);
        for (const Row& r : rows) write_row(out, r);
        manifest_.artifacts.push_back(name);
    }

  private:
    static void write_row(std::ofstream& out, const Row& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    }
    std::string dir_;
    Manifest& manifest_;
};

StepsizeSchedule schedule_by_name(const std::string& name, double alpha, double gamma) {
    if (name == "constant") return StepsizeSchedule::constant(alpha);
    if (name == "rescaled_linear") return StepsizeSchedule::rescaled_linear(gamma);
    if (name == "polynomial") return StepsizeSchedule::polynomial();
    throw ConfigError("unknown schedule: " + name);
}

// Tail-average error curves shared by figure1 and lfa. target is q* (theta*
// for the feature run); returns per-replication tail averages per checkpoint.
std::vector<Matrix> curve_tails(const ExperimentSpec& spec, const Lab& lab,
                                const StepsizeSchedule& sched, const Checkpoints& cp,
                                const Vector& start_point, std::uint64_t tag, bool use_features) {
    RunOptions opts;
    opts.keep_iterates = false;
    opts.record_stride = cp.stride;
    const int d = static_cast<int>(start_point.size());
    std::vector<Matrix> tails(spec.replications, Matrix(d, cp.ks.size()));
    parallel_for(spec.replications, [&](int rep) {
        const std::uint64_t seed = derive_seed(spec.master_seed, tag, rep);
        const RunTrace trace =
            use_features
                ? lfa_run(lab.mdp, lab.chain, lab.features, sched, start_point, seed, spec.n, opts)
                : run(lab.mdp, lab.chain, sched, start_point, seed, spec.n, opts);
        for (std::size_t c = 0; c < cp.ks.size(); ++c)
            tails[rep].col(c) = tail_average(trace, cp.ks[c] / 2, cp.ks[c]);
    });
    return tails;
}

void curve_pipeline(const ExperimentSpec& spec, const Lab& lab, Writer& writer,
                    const std::string& artifact, bool use_features) {
    const Checkpoints cp = make_checkpoints(spec.n);
    Vector target;
    if (use_features) {
        if (lab.features.size() == 0) throw ConfigError("lfa pipeline needs a feature preset");
        target = projected_value_iteration(lab.mdp, lab.features);
    } else {
        target = lab.sol.q_star;
    }
    const Vector start_point = target.array() + spec.q0_offset;

    std::vector<Row> rows;
    auto emit = [&](std::int64_t k, const std::string& sched_id, double alpha,
                    const std::string& metric, double value) {
        rows.push_back({std::to_string(k), sched_id, fmt(alpha), metric, fmt(value)});
    };

    // tails per constant alpha, kept for the RR rows
    std::vector<std::vector<Matrix>> const_tails(spec.stepsizes.size());
    for (std::size_t si = 0; si < spec.schedules.size(); ++si) {
        const std::string& name = spec.schedules[si];
        if (name == "constant") {
            for (std::size_t ai = 0; ai < spec.stepsizes.size(); ++ai) {
                const double alpha = spec.stepsizes[ai];
                // one stream per replication, shared across stepsizes (RR pairing)
                const std::uint64_t tag = si * 64;
                const auto tails = curve_tails(spec, lab, StepsizeSchedule::constant(alpha), cp,
                                               start_point, tag, use_features);
                const_tails[ai] = tails;
                for (std::size_t c = 0; c < cp.ks.size(); ++c) {
                    double err = 0.0;
                    for (const auto& t : tails) err += (t.col(c) - target).lpNorm<1>();
                    emit(cp.ks[c], "constant", alpha, "ta_error", err / tails.size());
                }
            }
        } else {
            const StepsizeSchedule sched = schedule_by_name(name, 0.0, lab.mdp.gamma);
            const auto tails =
                curve_tails(spec, lab, sched, cp, start_point, si * 64 + 63, use_features);
            for (std::size_t c = 0; c < cp.ks.size(); ++c) {
                double err = 0.0;
                for (const auto& t : tails) err += (t.col(c) - target).lpNorm<1>();
                emit(cp.ks[c], name, 1.0, "ta_error", err / tails.size());
            }
        }
    }
    for (std::size_t ai = 0; ai < spec.stepsizes.size(); ++ai) {
        if (const_tails[ai].empty()) continue;
        int twin = -1;
        for (std::size_t j = 0; j < spec.stepsizes.size(); ++j)
            if (!const_tails[j].empty() &&
                std::abs(spec.stepsizes[j] - 2.0 * spec.stepsizes[ai]) <
                    1e-12 * spec.stepsizes[j])
                twin = static_cast<int>(j);
        if (twin < 0) continue;
        for (std::size_t c = 0; c < cp.ks.size(); ++c) {
            double err = 0.0;
            for (int rep = 0; rep < spec.replications; ++rep)
                err += (2.0 * const_tails[ai][rep].col(c) - const_tails[twin][rep].col(c) - target)
                           .lpNorm<1>();
            emit(cp.ks[c], "constant", spec.stepsizes[ai], "rr_error", err / spec.replications);
        }
    }
    writer.csv(artifact, {"k", "schedule_id", "alpha", "metric", "value"}, rows);

    if (use_features) {
        const Vector iterated =
            Eigen::ColPivHouseholderQR<Matrix>(lab.features)
                .solve(bellman_optimality(lab.features * target, lab.mdp));
        const double residual = (iterated - target).lpNorm<Eigen::Infinity>();
        writer.csv("lfa_summary.csv", {"key", "value"},
                   {{"pvi_residual", fmt(residual)},
                    {"theta_dim", std::to_string(target.size())}});
    }
}

void bias_pipeline(const ExperimentSpec& spec, const Lab& lab, Writer& writer) {
    BiasBudget budget;
    budget.n = spec.n;
    budget.k0 = spec.k0;
    budget.replications = spec.replications;
    budget.master_seed = spec.master_seed;
    const BiasReport report = empirical_bias(lab.mdp, lab.chain, lab.sol, spec.stepsizes, budget);

    std::vector<Row> rows;
    auto emit_points = [&](const std::string& set, const std::vector<BiasPoint>& pts) {
        for (const auto& p : pts)
            for (int c = 0; c < p.bias.size(); ++c)
                rows.push_back({set, fmt(p.alpha), std::to_string(c), fmt(p.bias(c)),
                                fmt(p.se(c))});
    };
    emit_points("empirical", report.empirical_points);
    emit_points("rr", report.rr_points);
    writer.csv("bias.csv", {"set", "alpha", "coordinate", "value", "se"}, rows);

    std::vector<Row> summary;
    auto emit_vec = [&](const std::string& key, const Vector& v) {
        for (int c = 0; c < v.size(); ++c)
            summary.push_back({key, std::to_string(c), fmt(v(c))});
    };
    emit_vec("analytic_b", report.analytic_b);
    emit_vec("fitted_slope", report.fitted_slope);
    emit_vec("slope_se", report.slope_se);
    emit_vec("fitted_slope_free", report.fitted_slope_free);
    emit_vec("fitted_intercept", report.fitted_intercept);
    summary.push_back({"fitted_order", "-1", fmt(report.fitted_order)});
    summary.push_back({"rr_order", "-1", fmt(report.rr_order)});
    summary.push_back({"cosine", "-1", fmt(report.cosine)});
    writer.csv("bias_summary.csv", {"key", "coordinate", "value"}, summary);
}

void clt_pipeline(const ExperimentSpec& spec, const Lab& lab, Writer& writer) {
    if (spec.stepsizes.empty()) throw ConfigError("clt pipeline needs a stepsize");
    const double alpha = spec.stepsizes.front();
    const std::int64_t k0 = spec.k0 < 0 ? spec.n / 2 : spec.k0;
    constexpr int kBatches = 50;
    if ((spec.n - k0) % kBatches != 0)
        throw ConfigError("clt pipeline needs (n - k0) divisible by 50");
    if (spec.n % 4 != 0) throw ConfigError("clt pipeline needs n divisible by 4");

    RunOptions long_opts;
    long_opts.record_stride = 1;
    long_opts.record_from = k0;
    long_opts.keep_cumsum = false;
    const RunTrace long_trace =
        run(lab.mdp, lab.chain, StepsizeSchedule::constant(alpha), lab.sol.q_star,
            derive_seed(spec.master_seed, 900, 0), spec.n, long_opts);
    const CltEstimate est = clt_covariance(long_trace, k0, kBatches);

    std::vector<Row> sigma_rows;
    for (int i = 0; i < est.sigma_hat.rows(); ++i)
        for (int j = 0; j < est.sigma_hat.cols(); ++j)
            sigma_rows.push_back({std::to_string(i), std::to_string(j), fmt(est.sigma_hat(i, j))});
    writer.csv("clt_sigma.csv", {"i", "j", "value"}, sigma_rows);

    // Across-seed variance of the tail average at windows [n/4,n/2) and [n/2,n).
    double var_ratio = std::numeric_limits<double>::quiet_NaN();
    if (spec.replications >= 2) {
        RunOptions opts;
        opts.keep_iterates = false;
        opts.record_stride = spec.n / 4;
        std::vector<Vector> half(spec.replications), full(spec.replications);
        parallel_for(spec.replications, [&](int rep) {
            const RunTrace t =
                run(lab.mdp, lab.chain, StepsizeSchedule::constant(alpha), lab.sol.q_star,
                    derive_seed(spec.master_seed, 901, rep), spec.n, opts);
            half[rep] = tail_average(t, spec.n / 4, spec.n / 2);
            full[rep] = tail_average(t, spec.n / 2, spec.n);
        });
        auto spread = [&](const std::vector<Vector>& vs) {
            Vector mean = Vector::Zero(vs.front().size());
            for (const auto& v : vs) mean += v;
            mean /= static_cast<double>(vs.size());
            double s = 0.0;
            for (const auto& v : vs) s += (v - mean).squaredNorm();
            return s / (vs.size() - 1);
        };
        var_ratio = spread(full) / spread(half);
    }

    double max_skew = 0.0, max_kurt = 0.0;
    for (int c = 0; c < est.normality.skew_z.size(); ++c) {
        max_skew = std::max(max_skew, std::abs(est.normality.skew_z(c)));
        max_kurt = std::max(max_kurt, std::abs(est.normality.kurt_z(c)));
    }
    writer.csv("clt_summary.csv", {"key", "value"},
               {{"alpha", fmt(alpha)},
                {"batch_count", std::to_string(est.batch_count)},
                {"batch_len", std::to_string(est.batch_len)},
                {"normality_pass", est.normality.pass ? "1" : "0"},
                {"max_abs_skew_z", fmt(max_skew)},
                {"max_abs_kurt_z", fmt(max_kurt)},
                {"var_ratio", fmt(var_ratio)}});
}

void convergence_pipeline(const ExperimentSpec& spec, const Lab& lab, Writer& writer) {
    std::vector<Row> rows;
    const Vector q0_a = lab.sol.q_star.array() + spec.q0_offset;
    for (std::size_t ai = 0; ai < spec.stepsizes.size(); ++ai) {
        const double alpha = spec.stepsizes[ai];
        std::vector<CoupledTrace> traces(spec.replications);
        parallel_for(spec.replications, [&](int rep) {
            traces[rep] = coupled_run(lab.mdp, lab.chain, alpha, q0_a, lab.sol.q_star,
                                      derive_seed(spec.master_seed, 700 + ai, rep), spec.n);
        });
        std::int64_t violations = 0;
        for (const auto& t : traces) violations += t.sandwich_violations;
        const DecayFit fit = fit_decay(traces, 10);
        rows.push_back({fmt(alpha), "eta", fmt(fit.rate_eta)});
        rows.push_back({fmt(alpha), "r2", fmt(fit.log_linear_r2)});
        rows.push_back({fmt(alpha), "intercept", fmt(fit.intercept)});
        rows.push_back({fmt(alpha), "sandwich_violations", std::to_string(violations)});
    }
    writer.csv("convergence.csv", {"alpha", "metric", "value"}, rows);
}

void rr_pipeline(const ExperimentSpec& spec, const Lab& lab, Writer& writer) {
    const std::int64_t k0 = spec.k0 < 0 ? spec.n / 2 : spec.k0;
    RunOptions opts;
    opts.keep_iterates = false;
    opts.keep_cumsum = false;
    opts.tail_from = k0;
    const int na = static_cast<int>(spec.stepsizes.size());
    std::vector<std::vector<Vector>> tails(na,
                                           std::vector<Vector>(spec.replications));
    parallel_for(na * spec.replications, [&](int cell) {
        const int ai = cell / spec.replications, rep = cell % spec.replications;
        const RunTrace t = run(lab.mdp, lab.chain, StepsizeSchedule::constant(spec.stepsizes[ai]),
                               lab.sol.q_star, derive_seed(spec.master_seed, 800, rep),
                               spec.n, opts);
        tails[ai][rep] = tail_average(t, k0, spec.n);
    });

    std::vector<Row> rows;
    for (int ai = 0; ai < na; ++ai) {
        int twin = -1;
        for (int j = 0; j < na; ++j)
            if (std::abs(spec.stepsizes[j] - 2.0 * spec.stepsizes[ai]) <
                1e-12 * spec.stepsizes[j])
                twin = j;
        if (twin < 0) continue;
        double ta = 0.0, rr = 0.0;
        for (int rep = 0; rep < spec.replications; ++rep) {
            ta += (tails[ai][rep] - lab.sol.q_star).lpNorm<1>();
            rr += (rr_extrapolate(tails[ai][rep], tails[twin][rep]) - lab.sol.q_star).lpNorm<1>();
        }
        rows.push_back({fmt(spec.stepsizes[ai]), "ta_error", fmt(ta / spec.replications)});
        rows.push_back({fmt(spec.stepsizes[ai]), "rr_error", fmt(rr / spec.replications)});
    }
    writer.csv("rr.csv", {"alpha", "metric", "value"}, rows);
}

}  // namespace

ExperimentSpec spec_from_json(const json& root) {
    const json& j = root.contains("spec") ? root.at("spec") : root;
    ExperimentSpec spec;
    try {
        spec.preset = j.value("preset", std::string());
        spec.preset_seed = j.value("preset_seed", 0ull);
        if (j.contains("mdp")) {
            const json& m = j.at("mdp");
            Mdp mdp;
            mdp.n_states = m.at("n_states").get<int>();
            mdp.n_actions = m.at("n_actions").get<int>();
            mdp.gamma = m.at("gamma").get<double>();
            mdp.r_max = m.at("r_max").get<double>();
            mdp.kernel = Matrix::Zero(mdp.dim(), mdp.n_states);
            mdp.rewards = Vector::Zero(mdp.dim());
            const json& kern = m.at("kernel");
            const json& rew = m.at("rewards");
            for (int sa = 0; sa < mdp.dim(); ++sa) {
                for (int s2 = 0; s2 < mdp.n_states; ++s2)
                    mdp.kernel(sa, s2) = kern.at(sa).at(s2).get<double>();
                mdp.rewards(sa) = rew.at(sa).get<double>();
            }
            spec.inline_mdp = mdp;
        }
        if (j.contains("policy")) {
            BehaviorPolicy pol;
            const json& rows = j.at("policy");
            const int ns = static_cast<int>(rows.size());
            const int na = static_cast<int>(rows.at(0).size());
            pol.probs = Matrix::Zero(ns, na);
            for (int s = 0; s < ns; ++s)
                for (int a = 0; a < na; ++a) pol.probs(s, a) = rows.at(s).at(a).get<double>();
            spec.inline_policy = pol;
        }
        spec.stepsizes = j.value("stepsizes", std::vector<double>{});
        spec.schedules = j.value("schedules", std::vector<std::string>{"constant"});
        spec.n = j.value("n", static_cast<std::int64_t>(100000));
        spec.k0 = j.value("k0", static_cast<std::int64_t>(-1));
        spec.replications = j.value("replications", 1);
        spec.master_seed = j.value("master_seed", 1ull);
        spec.pipelines = j.value("pipelines", std::vector<std::string>{});
        spec.output_dir = j.value("output_dir", std::string("out"));
        spec.q0_offset = j.value("q0_offset", 10.0);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    return spec;
}

json spec_to_json(const ExperimentSpec& spec) {
    json j;
    if (!spec.preset.empty()) j["preset"] = spec.preset;
    j["preset_seed"] = spec.preset_seed;
    if (spec.inline_mdp) {
        const Mdp& m = *spec.inline_mdp;
        json mj;
        mj["n_states"] = m.n_states;
        mj["n_actions"] = m.n_actions;
        mj["gamma"] = m.gamma;
        mj["r_max"] = m.r_max;
        for (int sa = 0; sa < m.dim(); ++sa) {
            mj["rewards"].push_back(m.rewards(sa));
            json row = json::array();
            for (int s2 = 0; s2 < m.n_states; ++s2) row.push_back(m.kernel(sa, s2));
            mj["kernel"].push_back(row);
        }
        j["mdp"] = mj;
    }
    if (spec.inline_policy) {
        for (int s = 0; s < spec.inline_policy->probs.rows(); ++s) {
            json row = json::array();
            for (int a = 0; a < spec.inline_policy->probs.cols(); ++a)
                row.push_back(spec.inline_policy->probs(s, a));
            j["policy"].push_back(row);
        }
    }
    j["stepsizes"] = spec.stepsizes;
    j["schedules"] = spec.schedules;
    j["n"] = spec.n;
    j["k0"] = spec.k0;
    j["replications"] = spec.replications;
    j["master_seed"] = spec.master_seed;
    j["pipelines"] = spec.pipelines;
    j["output_dir"] = spec.output_dir;
    j["q0_offset"] = spec.q0_offset;
    return j;
}

ExperimentSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    return spec_from_json(j);
}

void validate_spec(const ExperimentSpec& spec) {
    if (spec.preset.empty() && !spec.inline_mdp)
        throw ConfigError("either a preset name or an inline mdp is required");
    if (!spec.preset.empty() &&
        spec.preset != "grid1x3" && spec.preset != "grid4x4" && spec.preset != "lfa-random")
        throw ConfigError("unknown preset: " + spec.preset);
    if (spec.n <= 0) throw ConfigError("n must be positive");
    if (spec.k0 >= spec.n) throw ConfigError("need n > k0");
    if (spec.replications < 1) throw ConfigError("replications must be >= 1");
    for (double a : spec.stepsizes)
        if (!(a > 0.0)) throw ConfigError("stepsizes must be strictly positive");
    const std::set<std::string> known_pipelines{"convergence", "bias", "clt",
                                               "rr", "figure1", "lfa"};
    for (const auto& p : spec.pipelines)
        if (!known_pipelines.count(p)) throw ConfigError("unknown pipeline: " + p);
    for (const auto& s : spec.schedules)
        if (s != "constant" && s != "rescaled_linear" && s != "polynomial")
            throw ConfigError("unknown schedule: " + s);
    if (std::count(spec.pipelines.begin(), spec.pipelines.end(), "rr")) {
        bool has_pair = false;
        for (double a : spec.stepsizes)
            for (double b : spec.stepsizes)
                if (std::abs(b - 2.0 * a) < 1e-12 * b) has_pair = true;
        if (!has_pair) throw ConfigError("rr pipeline needs a doubling stepsize pair");
    }
}

Manifest run_pipeline(const ExperimentSpec& spec) {
    validate_spec(spec);
    std::filesystem::create_directories(spec.output_dir);

    Manifest manifest;
    manifest.dir = spec.output_dir;
    manifest.status = "ok";
    Writer writer(spec.output_dir, manifest);

    auto write_manifest = [&] {
        json j;
        j["spec"] = spec_to_json(spec);
        j["artifacts"] = manifest.artifacts;
        j["status"] = manifest.status;
        std::ofstream out(std::filesystem::path(spec.output_dir) / "manifest.json",
                          std::ios::binary);
        out << j.dump(2) << '\n';
    };

    try {
        const Lab lab = materialize(spec);
        for (const auto& p : spec.pipelines) {
            if (p == "figure1") curve_pipeline(spec, lab, writer, "figure1.csv", false);
            else if (p == "lfa") curve_pipeline(spec, lab, writer, "lfa.csv", true);
            else if (p == "bias") bias_pipeline(spec, lab, writer);
            else if (p == "clt") clt_pipeline(spec, lab, writer);
            else if (p == "convergence") convergence_pipeline(spec, lab, writer);
            else if (p == "rr") rr_pipeline(spec, lab, writer);
        }
    } catch (const std::exception& e) {
        manifest.status = std::string("failed: ") + e.what();
        write_manifest();
        throw;
    }
    write_manifest();
    return manifest;
}

}  // namespace qsa
