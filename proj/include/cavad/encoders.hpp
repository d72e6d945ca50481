#pragma once

// Motion encoder E_m (3D conv trunk + temporal-variance attention) and scene
// encoder E_s (2D convs over the clip's temporal mean frame). Both map a clip
// batch (B,3,T,S,S) to feature maps (B,C,H,W) with C = 4*em_base.

#include "cavad/autograd.hpp"
#include "cavad/config.hpp"
#include "cavad/nn.hpp"

namespace cavad {

struct AttentionMaps {
    Var s;      // compressed map (B, D_c, H, W)
    Var v_map;  // per-location channel variance (B, H, W)
    Var g;      // squared spatial softmax of v_map (B, H, W)
};

struct MotionEncoder {
    Conv3dLayer stage1, stage2, stage3;
    InstanceNorm2dLayer norm;  // keeps per-item spatial DC out of the base map
    Conv2dLayer attn_conv;     // 3x3, C -> D_c
    Conv2dLayer final_conv;    // 3x3, C -> C
    int feat_h = 0, feat_w = 0;
    int frame_size = 0;
    bool use_attention = true;

    MotionEncoder() = default;
    MotionEncoder(ParamSet& ps, Rng& rng, const TrainConfig& cfg);

    AttentionMaps temporal_attention(const Var& base) const;
    Var operator()(const Var& clips) const;
};

struct SceneEncoder {
    Conv2dLayer c1, c2, c3, c4;
    InstanceNorm2dLayer norm;
    int feat_h = 0, feat_w = 0;
    int frame_size = 0;

    SceneEncoder() = default;
    SceneEncoder(ParamSet& ps, Rng& rng, const TrainConfig& cfg);

    Var operator()(const Var& clips) const;
};

}  // namespace cavad
