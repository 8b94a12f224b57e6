#include "qsa/presets.hpp"

#include <cmath>

#include "qsa/rng.hpp"

namespace qsa {

namespace {

// 1x3 corridor, actions 0=left 1=right; move 0.95 / stay 0.05, out-of-bounds
// stays with reward -4, else r(s) of the current state.
Preset grid1x3() {
    Mdp mdp;
    mdp.n_states = 3;
    mdp.n_actions = 2;
    mdp.gamma = 0.9;
    mdp.r_max = 10.0;
    mdp.kernel = Matrix::Zero(6, 3);
    mdp.rewards = Vector::Zero(6);
    const double state_r[3] = {0.0, 10.0, 0.5};
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) {
            const int sa = mdp.sa_index(s, a);
            const int dest = s + (a == 0 ? -1 : 1);
            if (dest < 0 || dest > 2) {
                mdp.kernel(sa, s) = 1.0;
                mdp.rewards(sa) = -4.0;
            } else {
                mdp.kernel(sa, dest) = 0.95;
                mdp.kernel(sa, s) = 0.05;
                mdp.rewards(sa) = state_r[s];
            }
        }
    Preset p;
    p.mdp = mdp;
    p.policy = uniform_policy(mdp);
    return p;
}

// 4x4 grid, actions 0=left 1=up 2=right 3=down; intended direction 0.9, each
// perpendicular 0.05, any out-of-bounds attempt stays. Teleports A=(0,1)->(3,1)
// r=10 and B=(0,3)->(2,3) r=5 fire on every action with slip disabled.
Preset grid4x4() {
    Mdp mdp;
    mdp.n_states = 16;
    mdp.n_actions = 4;
    mdp.gamma = 0.9;
    mdp.r_max = 10.0;
    mdp.kernel = Matrix::Zero(64, 16);
    mdp.rewards = Vector::Zero(64);

    const int dr[4] = {0, -1, 0, 1};
    const int dc[4] = {-1, 0, 1, 0};
    auto idx = [](int r, int c) { return r * 4 + c; };
    auto step = [&](int s, int dir) {
        const int r = s / 4 + dr[dir], c = s % 4 + dc[dir];
        return (r < 0 || r > 3 || c < 0 || c > 3) ? s : idx(r, c);
    };
    const int state_a = idx(0, 1), state_a2 = idx(3, 1);
    const int state_b = idx(0, 3), state_b2 = idx(2, 3);

    for (int s = 0; s < 16; ++s)
        for (int a = 0; a < 4; ++a) {
            const int sa = mdp.sa_index(s, a);
            if (s == state_a) {
                mdp.kernel(sa, state_a2) = 1.0;
                mdp.rewards(sa) = 10.0;
                continue;
            }
            if (s == state_b) {
                mdp.kernel(sa, state_b2) = 1.0;
                mdp.rewards(sa) = 5.0;
                continue;
            }
            mdp.kernel(sa, step(s, a)) += 0.9;
            mdp.kernel(sa, step(s, (a + 1) % 4)) += 0.05;
            mdp.kernel(sa, step(s, (a + 3) % 4)) += 0.05;
            mdp.rewards(sa) = step(s, a) == s ? -1.0 : 0.0;
        }
    Preset p;
    p.mdp = mdp;
    p.policy = uniform_policy(mdp);
    return p;
}

// |S|=20, |A|=5, uniform rewards, normalized-uniform kernel rows; d=10
// Bernoulli(0.5) features with rows scaled into the unit ball, redrawn until
// full column rank.
Preset lfa_random(std::uint64_t seed) {
    Mdp mdp;
    mdp.n_states = 20;
    mdp.n_actions = 5;
    mdp.gamma = 0.5;
    mdp.r_max = 1.0;
    const int d = mdp.dim();
    mdp.kernel = Matrix::Zero(d, 20);
    mdp.rewards = Vector::Zero(d);

    Rng rng(seed);
    for (int sa = 0; sa < d; ++sa) mdp.rewards(sa) = rng.next_double();
    for (int sa = 0; sa < d; ++sa) {
        double sum = 0.0;
        for (int s2 = 0; s2 < 20; ++s2) {
            mdp.kernel(sa, s2) = rng.next_double();
            sum += mdp.kernel(sa, s2);
        }
        mdp.kernel.row(sa) /= sum;
    }

    constexpr int kFeat = 10;
    Matrix phi(d, kFeat);
    for (;;) {
        for (int sa = 0; sa < d; ++sa)
            for (int j = 0; j < kFeat; ++j) phi(sa, j) = rng.next_double() < 0.5 ? 1.0 : 0.0;
        for (int sa = 0; sa < d; ++sa) {
            const double norm = phi.row(sa).norm();
            if (norm > 1.0) phi.row(sa) /= norm;
        }
        if (Eigen::ColPivHouseholderQR<Matrix>(phi).rank() == kFeat) break;
    }

    Preset p;
    p.mdp = mdp;
    p.policy = uniform_policy(mdp);
    p.features = phi;
    return p;
}

}  // namespace

Preset build_preset(const std::string& name, std::uint64_t seed) {
    if (name == "grid1x3") return grid1x3();
    if (name == "grid4x4") return grid4x4();
    if (name == "lfa-random") return lfa_random(seed);
    throw UnknownPreset("unknown preset: " + name);
}

}  // namespace qsa
