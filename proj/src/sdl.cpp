#include "cavad/sdl.hpp"

#include <algorithm>
#include <stdexcept>

namespace cavad {

SceneClassifier::SceneClassifier(ParamSet& ps, Rng& rng, const std::string& name, int c,
                                 int n_scenes) {
    if (n_scenes < 1) throw std::runtime_error("scene classifier: N_s must be >= 1");
    const int h = std::max(1, c / 2);
    l1 = Linear(ps, rng, name + ".l1", c, h);
    l2 = Linear(ps, rng, name + ".l2", h, n_scenes);
}

Var SceneClassifier::operator()(const Var& fmap) const {
    return softmax_rows(l2(relu(l1(global_avg_pool2d(fmap)))));
}

Var scene_ce_loss(const Var& probs, const std::vector<int>& labels) {
    return nll_probs(probs, labels, kProbFloor);
}

Var kl_mutual_loss(const Var& p, const Var& q) { return kl_mutual(p, q, kProbFloor); }

Var triplet_consistency_loss(const Var& d_motion, const Var& d_scene, real margin) {
    if (margin < 0.0) throw std::runtime_error("triplet loss: margin must be >= 0");
    return relu(add_scalar(sub(d_motion, d_scene), margin));
}

}  // namespace cavad
