#pragma once

#include <qsa/chain.hpp>
#include <qsa/mdp.hpp>
#include <qsa/rng.hpp>

namespace qsa::test {

// single state, single action, reward r, discount gamma
inline Mdp single_state(double r = 1.0, double gamma = 0.5) {
    Mdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.gamma = gamma;
    mdp.r_max = std::max(1.0, std::abs(r));
    mdp.kernel = Matrix::Ones(1, 1);
    mdp.rewards = Vector::Constant(1, r);
    return mdp;
}

// deterministic two-state chain s0 -> s1 -> s1, single action
inline Mdp two_state_chain(double gamma = 0.5) {
    Mdp mdp;
    mdp.n_states = 2;
    mdp.n_actions = 1;
    mdp.gamma = gamma;
    mdp.r_max = 1.0;
    mdp.kernel = Matrix::Zero(2, 2);
    mdp.kernel(0, 1) = 1.0;
    mdp.kernel(1, 1) = 1.0;
    mdp.rewards = Vector::Zero(2);
    mdp.rewards(1) = 1.0;
    return mdp;
}

inline Mdp random_mdp(std::uint64_t seed, int n_states = 4, int n_actions = 3,
                      double gamma = 0.7) {
    Rng rng(seed);
    Mdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.r_max = 1.0;
    mdp.kernel = Matrix::Zero(mdp.dim(), n_states);
    mdp.rewards = Vector::Zero(mdp.dim());
    for (int sa = 0; sa < mdp.dim(); ++sa) {
        double sum = 0.0;
        for (int s2 = 0; s2 < n_states; ++s2) {
            mdp.kernel(sa, s2) = rng.next_double() + 1e-3;
            sum += mdp.kernel(sa, s2);
        }
        mdp.kernel.row(sa) /= sum;
        mdp.rewards(sa) = rng.next_double();
    }
    return mdp;
}

inline Vector random_vector(Rng& rng, int d, double scale = 1.0) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = scale * (2.0 * rng.next_double() - 1.0);
    return v;
}

// two-state kernel with second eigenvalue 0.7, stationary (2/3, 1/3)
inline Matrix two_state_kernel() {
    Matrix p(2, 2);
    p << 0.9, 0.1, 0.2, 0.8;
    return p;
}

}  // namespace qsa::test
