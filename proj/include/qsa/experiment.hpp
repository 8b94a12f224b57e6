#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qsa/chain.hpp"
#include "qsa/mdp.hpp"

namespace qsa {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentSpec {
    std::string preset;  // empty when an inline MDP is supplied
    std::uint64_t preset_seed = 0;
    std::optional<Mdp> inline_mdp;
    std::optional<BehaviorPolicy> inline_policy;  // default: uniform
    std::vector<double> stepsizes;
    std::vector<std::string> schedules{"constant"};
    std::int64_t n = 100000;
    std::int64_t k0 = -1;  // < 0: n/2
    int replications = 1;
    std::uint64_t master_seed = 1;
    std::vector<std::string> pipelines;
    std::string output_dir = "out";
    double q0_offset = 10.0;
};

ExperimentSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const ExperimentSpec& spec);
ExperimentSpec load_spec(const std::string& path);

// Throws ConfigError when an ExperimentSpec field is out of range.
void validate_spec(const ExperimentSpec& spec);

struct Manifest {
    std::string dir;
    std::vector<std::string> artifacts;  // file names relative to dir
    std::string status;                  // "ok" or "failed: <reason>"
};

// Runs the selected pipelines, writing CSV artifacts plus manifest.json into
// spec.output_dir; identical specs produce byte-identical files.
Manifest run_pipeline(const ExperimentSpec& spec);

}  // namespace qsa
