#pragma once

// Whole-model assembly: owns every parameterized module plus the memory pool
// and cluster model, and provides the two branch forward paths (motion and
// scene) shared by training and scoring.

#include "cavad/cic.hpp"
#include "cavad/config.hpp"
#include "cavad/decomposer.hpp"
#include "cavad/encoders.hpp"
#include "cavad/memory.hpp"
#include "cavad/sdl.hpp"

namespace cavad {

struct BranchOutput {
    Var features;   // encoder output (B,C,H,W)
    Var queries;    // spatial expansion (C, B*H*W)
    Var read;       // memory reconstruction mapped back to (B,C,H,W)
    Decomposition dec;
    Var r_shared;   // characterize(F_s), (B,n)
    Var r_private;  // characterize(F_p), (B,n)
    CorrelationTriple triple;
};

struct Model {
    TrainConfig cfg;
    int n_scenes = 1;
    bool sdl_active = false;

    ParamSet params;
    MotionEncoder em;
    SceneEncoder es;
    Decomposer dec;
    Characterizer cic;
    SceneClassifier cls_motion, cls_scene;
    MemoryPool pool;
    ClusterModel clusters;
    Adam opt;
    Rng rng;

    Model(const TrainConfig& cfg, int n_scenes);

    static Var to_queries(const Var& fmap);
    static Var from_queries(const Var& q, int b, int c, int h, int w);

    // write_memory: push this batch's features into the pool before reading
    // (training only; the pool is frozen at test time).
    BranchOutput motion_branch(const Var& clips, bool write_memory);
    BranchOutput scene_branch(const Var& clips);
};

}  // namespace cavad
