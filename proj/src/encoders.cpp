#include "cavad/encoders.hpp"

#include <stdexcept>

namespace cavad {

namespace {
constexpr real kSlope = 0.1;
}

MotionEncoder::MotionEncoder(ParamSet& ps, Rng& rng, const TrainConfig& cfg) {
    const int w1 = cfg.em_base, w2 = 2 * cfg.em_base, c = cfg.channels();
    stage1 = Conv3dLayer(ps, rng, "em.stage1", 3, w1, 3, 3, 3, 1, 2, 2, 1, 1, 1);
    stage2 = Conv3dLayer(ps, rng, "em.stage2", w1, w2, 3, 3, 3, 2, 2, 2, 1, 1, 1);
    stage3 = Conv3dLayer(ps, rng, "em.stage3", w2, c, 3, 3, 3, 2, 2, 2, 1, 1, 1);
    norm = InstanceNorm2dLayer(ps, "em.norm", c);
    attn_conv = Conv2dLayer(ps, rng, "em.attn", c, cfg.d_c, 3, 3, 1, 1, 1, 1);
    final_conv = Conv2dLayer(ps, rng, "em.final", c, c, 3, 3, 1, 1, 1, 1);
    feat_h = cfg.feat_h;
    feat_w = cfg.feat_w;
    frame_size = cfg.frame_size;
    use_attention = cfg.temporal_attention;
}

AttentionMaps MotionEncoder::temporal_attention(const Var& base) const {
    AttentionMaps out;
    out.s = attn_conv(base);
    out.v_map = channel_variance(out.s);
    out.g = spatial_softmax_sq(out.v_map);
    return out;
}

Var MotionEncoder::operator()(const Var& clips) const {
    if (clips.val().ndim() != 5 || clips.val().dim(1) != 3 ||
        clips.val().dim(3) != frame_size || clips.val().dim(4) != frame_size)
        throw std::runtime_error("encode_motion: expects clips (B,3,T," +
                                 std::to_string(frame_size) + "," +
                                 std::to_string(frame_size) + "), got " +
                                 clips.val().shape_str());
    Var h = leaky_relu(stage1(clips), kSlope);
    h = leaky_relu(stage2(h), kSlope);
    h = leaky_relu(stage3(h), kSlope);
    // Normalize per item and channel so a shared background offset cannot
    // dominate the memory queries downstream.
    Var base = norm(adaptive_avg_pool2d(temporal_mean(h), feat_h, feat_w));
    if (use_attention) {
        AttentionMaps att = temporal_attention(base);
        base = spatial_gate(base, att.g);
    }
    return final_conv(base);
}

SceneEncoder::SceneEncoder(ParamSet& ps, Rng& rng, const TrainConfig& cfg) {
    const int w1 = cfg.em_base, w2 = 2 * cfg.em_base, c = cfg.channels();
    c1 = Conv2dLayer(ps, rng, "es.c1", 3, w1, 3, 3, 2, 2, 1, 1);
    c2 = Conv2dLayer(ps, rng, "es.c2", w1, w2, 3, 3, 2, 2, 1, 1);
    c3 = Conv2dLayer(ps, rng, "es.c3", w2, c, 3, 3, 2, 2, 1, 1);
    norm = InstanceNorm2dLayer(ps, "es.norm", c);
    c4 = Conv2dLayer(ps, rng, "es.c4", c, c, 3, 3, 1, 1, 1, 1);
    feat_h = cfg.feat_h;
    feat_w = cfg.feat_w;
    frame_size = cfg.frame_size;
}

Var SceneEncoder::operator()(const Var& clips) const {
    if (clips.val().ndim() != 5 || clips.val().dim(1) != 3 ||
        clips.val().dim(3) != frame_size || clips.val().dim(4) != frame_size)
        throw std::runtime_error("encode_scene: expects clips (B,3,T," +
                                 std::to_string(frame_size) + "," +
                                 std::to_string(frame_size) + "), got " +
                                 clips.val().shape_str());
    Var mean_frame = temporal_mean(clips);
    Var h = leaky_relu(c1(mean_frame), kSlope);
    h = leaky_relu(c2(h), kSlope);
    h = norm(leaky_relu(c3(h), kSlope));
    h = c4(h);
    return adaptive_avg_pool2d(h, feat_h, feat_w);
}

}  // namespace cavad
