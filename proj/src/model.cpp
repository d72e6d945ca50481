#include "cavad/model.hpp"

#include <cstdio>

namespace cavad {

Model::Model(const TrainConfig& cfg_, int n_scenes_)
    : cfg(cfg_), n_scenes(n_scenes_), rng(static_cast<uint64_t>(cfg_.seed)) {
    validate(cfg);
    sdl_active = cfg.sdl && n_scenes > 1;
    if (cfg.sdl && n_scenes <= 1)
        std::fprintf(stderr,
                     "warning: scene-debiasing disabled, dataset has a single scene\n");

    em = MotionEncoder(params, rng, cfg);
    es = SceneEncoder(params, rng, cfg);
    dec = Decomposer(params, rng, cfg);
    cic = Characterizer(params, rng, cfg);
    cls_motion = SceneClassifier(params, rng, "cls_m", cfg.channels(), std::max(1, n_scenes));
    cls_scene = SceneClassifier(params, rng, "cls_s", cfg.channels(), std::max(1, n_scenes));
    pool.init(cfg.channels(), cfg.N_mem, cfg.filtering ? cfg.k : cfg.N_mem, rng);
    opt.lr = cfg.lr;
}

Var Model::to_queries(const Var& fmap) {
    const int b = fmap.val().dim(0), c = fmap.val().dim(1);
    const int h = fmap.val().dim(2), w = fmap.val().dim(3);
    return reshape(permute(fmap, {1, 0, 2, 3}), {c, b * h * w});
}

Var Model::from_queries(const Var& q, int b, int c, int h, int w) {
    return permute(reshape(q, {c, b, h, w}), {1, 0, 2, 3});
}

BranchOutput Model::motion_branch(const Var& clips, bool write_memory) {
    BranchOutput out;
    out.features = em(clips);
    const int b = out.features.val().dim(0), c = out.features.val().dim(1);
    const int h = out.features.val().dim(2), w = out.features.val().dim(3);
    out.queries = to_queries(out.features);
    if (write_memory) pool.write(out.queries.val());
    out.read = from_queries(pool.read(out.queries), b, c, h, w);
    out.dec = dec(out.features, out.read);
    out.r_shared = cic(out.dec.f_shared);
    out.r_private = cic(out.dec.f_private);
    out.triple = correlation_matrices(out.r_shared, out.r_private);
    return out;
}

BranchOutput Model::scene_branch(const Var& clips) {
    BranchOutput out;
    out.features = es(clips);
    const int b = out.features.val().dim(0), c = out.features.val().dim(1);
    const int h = out.features.val().dim(2), w = out.features.val().dim(3);
    out.queries = to_queries(out.features);
    out.read = from_queries(pool.read(out.queries), b, c, h, w);
    out.dec = dec(out.features, out.read);
    out.r_shared = cic(out.dec.f_shared);
    out.r_private = cic(out.dec.f_private);
    out.triple = correlation_matrices(out.r_shared, out.r_private);
    return out;
}

}  // namespace cavad
