#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qsa/bias.hpp"
#include "qsa/chain.hpp"
#include "qsa/diagnostics.hpp"
#include "qsa/engine.hpp"
#include "qsa/experiment.hpp"
#include "qsa/mdp.hpp"
#include "qsa/presets.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct CommonArgs {
    std::string config;
    std::int64_t seed = -1;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "config file (json)")->required();
    cmd->add_option("--seed", args.seed, "override master seed");
    cmd->add_option("--out", args.out, "override output directory");
}

qsa::ExperimentSpec load(const CommonArgs& args) {
    qsa::ExperimentSpec spec = qsa::load_spec(args.config);
    if (args.seed >= 0) spec.master_seed = static_cast<std::uint64_t>(args.seed);
    if (!args.out.empty()) spec.output_dir = args.out;
    if (const char* env = std::getenv("QSALAB_OUT")) spec.output_dir = env;
    return spec;
}

struct LabBits {
    qsa::Mdp mdp;
    qsa::BehaviorPolicy policy;
    qsa::JointChain chain;
};

LabBits build(const qsa::ExperimentSpec& spec) {
    LabBits bits;
    if (spec.inline_mdp) {
        bits.mdp = *spec.inline_mdp;
        bits.policy = spec.inline_policy ? *spec.inline_policy : qsa::uniform_policy(bits.mdp);
    } else {
        qsa::Preset p = qsa::build_preset(spec.preset, spec.preset_seed);
        bits.mdp = p.mdp;
        bits.policy = spec.inline_policy ? *spec.inline_policy : p.policy;
    }
    bits.chain = qsa::build_joint_chain(bits.mdp, bits.policy);
    return bits;
}

int cmd_validate(const CommonArgs& args) {
    const qsa::ExperimentSpec spec = load(args);
    qsa::validate_spec(spec);
    qsa::Mdp mdp;
    if (spec.inline_mdp) {
        mdp = *spec.inline_mdp;
    } else {
        mdp = qsa::build_preset(spec.preset, spec.preset_seed).mdp;
    }
    const qsa::ValidationReport rep = qsa::validate_mdp(mdp);
    if (rep.ok()) {
        std::cout << "ok\n";
        return kExitOk;
    }
    for (const auto& v : rep.violations) std::cout << "violation: " << v << '\n';
    return kExitValidation;
}

int cmd_solve(const CommonArgs& args) {
    const qsa::ExperimentSpec spec = load(args);
    const LabBits bits = build(spec);
    const qsa::OptimalSolution sol = qsa::solve_qstar(bits.mdp);
    std::cout.precision(12);
    std::cout << "residual " << sol.residual << "\ngap_delta " << sol.gap_delta << "\n";
    for (int s = 0; s < bits.mdp.n_states; ++s) {
        std::cout << "s " << s << " pi* " << sol.pi_star[s] << " q*";
        for (int a = 0; a < bits.mdp.n_actions; ++a)
            std::cout << ' ' << sol.q_star(bits.mdp.sa_index(s, a));
        std::cout << '\n';
    }
    return kExitOk;
}

int cmd_chain(const CommonArgs& args) {
    const qsa::ExperimentSpec spec = load(args);
    const LabBits bits = build(spec);
    std::cout.precision(12);
    std::cout << "states_x " << bits.chain.size() << "\nbeta " << bits.chain.beta << '\n';
    for (double delta : {0.25, 0.1, 0.01})
        std::cout << "t_delta " << delta << ' ' << qsa::mixing_time(bits.chain, delta) << '\n';
    const auto [c, rho] = qsa::fit_geometric_mixing(bits.chain, 200);
    std::cout << "geo_c " << c << "\ngeo_rho " << rho << '\n';
    return kExitOk;
}

int cmd_run(const CommonArgs& args) {
    const qsa::ExperimentSpec spec = load(args);
    qsa::validate_spec(spec);
    const LabBits bits = build(spec);
    const qsa::OptimalSolution sol = qsa::solve_qstar(bits.mdp);
    const double alpha = spec.stepsizes.empty() ? 0.1 : spec.stepsizes.front();
    const qsa::Vector q0 = sol.q_star.array() + spec.q0_offset;
    const qsa::RunTrace trace =
        qsa::run(bits.mdp, bits.chain, qsa::StepsizeSchedule::constant(alpha), q0,
                 spec.master_seed, spec.n);
    std::cout.precision(12);
    std::cout << "final_error " << (trace.final - sol.q_star).lpNorm<1>() << '\n';
    return kExitOk;
}

int cmd_pipeline(const CommonArgs& args, const std::string& pipeline) {
    qsa::ExperimentSpec spec = load(args);
    spec.pipelines = {pipeline};
    const qsa::Manifest manifest = qsa::run_pipeline(spec);
    for (const auto& a : manifest.artifacts) std::cout << a << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"constant-stepsize Q-learning laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    const char* names[] = {"validate", "solve", "chain",   "run", "bias",
                           "clt",      "rr",    "figure1", "lfa", "convergence"};
    for (const char* name : names) add_common(app.add_subcommand(name), args);

    CLI11_PARSE(app, argc, argv);
    const std::string sub = app.get_subcommands().front()->get_name();

    try {
        if (sub == "validate") return cmd_validate(args);
        if (sub == "solve") return cmd_solve(args);
        if (sub == "chain") return cmd_chain(args);
        if (sub == "run") return cmd_run(args);
        return cmd_pipeline(args, sub);
    } catch (const qsa::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const qsa::ChainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
}
