#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "qsa/chain.hpp"
#include "qsa/mdp.hpp"

namespace qsa {

struct UnknownPreset : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Preset {
    Mdp mdp;
    BehaviorPolicy policy;
    Matrix features;  // empty unless the preset carries a feature map
};

// Names: grid1x3, grid4x4, lfa-random (seed selects the random instance).
Preset build_preset(const std::string& name, std::uint64_t seed = 0);

}  // namespace qsa
