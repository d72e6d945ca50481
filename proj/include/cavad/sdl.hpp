#pragma once

// Scene-debiasing learning: scene classifiers over the scene and motion
// features, their cross-entropy and mutual-KL losses, and the triplet loss
// contrasting the motion- and scene-branch correlation deviations.

#include <string>
#include <vector>

#include "cavad/autograd.hpp"
#include "cavad/nn.hpp"

namespace cavad {

constexpr real kProbFloor = 1e-12;

struct SceneClassifier {
    Linear l1, l2;

    SceneClassifier() = default;
    SceneClassifier(ParamSet& ps, Rng& rng, const std::string& name, int c, int n_scenes);

    // Global average pool -> 2-layer MLP -> softmax over N_s.
    Var operator()(const Var& fmap) const;
};

// -(1/b) sum log p[i, label_i], probabilities clamped to [1e-12, 1].
Var scene_ce_loss(const Var& probs, const std::vector<int>& labels);

// Mean over the batch of D_KL(p||q) + D_KL(q||p), same clamping.
Var kl_mutual_loss(const Var& p, const Var& q);

// max(d_motion - d_scene + margin, 0) on scalar correlation deviations.
Var triplet_consistency_loss(const Var& d_motion, const Var& d_scene, real margin);

}  // namespace cavad
