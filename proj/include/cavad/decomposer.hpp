#pragma once

// Prototype decomposition: pooled differences between a feature map and its
// memory reconstruction become channel gates splitting the pair into private
// (F_p, from F) and shared (F_s, from F') parts with exactly complementary
// weights.

#include "cavad/autograd.hpp"
#include "cavad/config.hpp"
#include "cavad/nn.hpp"

namespace cavad {

struct Decomposition {
    Var f_private;  // g       * F
    Var f_shared;   // (1 - g) * F'
    Var gate;       // g, (B, C) in (0,1)
};

struct Decomposer {
    Linear a1, a2;  // alpha head: C -> C/2 -> C, sigmoid-terminated, zero-init final
    Linear b1, b2;  // beta head, same shape
    bool use_avg = true;
    bool use_max = true;

    Decomposer() = default;
    Decomposer(ParamSet& ps, Rng& rng, const TrainConfig& cfg);

    Decomposition operator()(const Var& f, const Var& f_prime) const;
};

}  // namespace cavad
