#include <cmath>

#include "cavad/encoders.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cavad;
using namespace testsup;

namespace {

TrainConfig tiny_config() {
    // 12px clips, 2x2 feature maps, 8 channels: small enough for gradchecks
    return parse_train_config(
        "", {"frame_size=12", "feat_h=2", "feat_w=2", "em_base=2", "d_c=2", "clip_len=4"});
}

}  // namespace

TEST_CASE("variance map and squared spatial softmax match the hand case") {
    // S per location, 2 channels: (0,0) (0,2) / (1,1) (3,3)
    Tape tape;
    Tensor s = Tensor::zeros({1, 2, 2, 2});
    s.at(0, 0, 0, 1) = 0.0;
    s.at(0, 1, 0, 1) = 2.0;
    s.at(0, 0, 1, 0) = 1.0;
    s.at(0, 1, 1, 0) = 1.0;
    s.at(0, 0, 1, 1) = 3.0;
    s.at(0, 1, 1, 1) = 3.0;

    Var v = channel_variance(tape.leaf(s, true));
    CHECK(v.val().at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(v.val().at(0, 0, 1) == doctest::Approx(1.0));
    CHECK(v.val().at(0, 1, 0) == doctest::Approx(0.0));
    CHECK(v.val().at(0, 1, 1) == doctest::Approx(0.0));

    Var g = spatial_softmax_sq(v);
    // softmax of {0,1,0,0} squared, frozen from independent arithmetic
    const double g_hot = 0.22597367670338231;
    const double g_cold = 0.030582211540671003;
    CHECK(g.val().at(0, 0, 1) == doctest::Approx(g_hot).epsilon(1e-12));
    CHECK(g.val().at(0, 0, 0) == doctest::Approx(g_cold).epsilon(1e-12));
    CHECK(g.val().at(0, 1, 0) == doctest::Approx(g_cold).epsilon(1e-12));
    CHECK(g.val().at(0, 1, 1) == doctest::Approx(g_cold).epsilon(1e-12));
}

TEST_CASE("attention maps satisfy their invariants on random input") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(3);
    MotionEncoder em(ps, rng, cfg);

    Tape tape;
    ps.bind(tape);
    Tensor base = randt(rng, {2, cfg.channels(), 3, 3}, 1.0);
    AttentionMaps maps = em.temporal_attention(tape.leaf(base, true));

    CHECK(maps.s.val().dim(1) == cfg.d_c);
    for (long i = 0; i < maps.v_map.val().numel(); ++i) CHECK(maps.v_map.val()[i] >= 0.0);
    for (int bi = 0; bi < 2; ++bi) {
        double sum_sqrt = 0.0;
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) sum_sqrt += std::sqrt(maps.g.val().at(bi, y, x));
        CHECK(std::abs(sum_sqrt - 1.0) < 1e-5);
    }
}

TEST_CASE("constant-channel map gives uniform attention") {
    Tape tape;
    Tensor s = Tensor::zeros({1, 3, 2, 2});
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 3; ++c) s.at(0, c, y, x) = 0.7 * (y * 2 + x);
    Var v = channel_variance(tape.leaf(s, false));
    Var g = spatial_softmax_sq(v);
    for (long i = 0; i < v.val().numel(); ++i) CHECK(v.val()[i] == doctest::Approx(0.0));
    for (long i = 0; i < g.val().numel(); ++i)
        CHECK(g.val()[i] == doctest::Approx(1.0 / 16.0).epsilon(1e-12));
}

TEST_CASE("adding a constant to the variance map leaves the attention unchanged") {
    Tape tape;
    Rng rng(8);
    Tensor v = randt(rng, {1, 3, 3}, 1.0, 1.5);
    Tensor v_shift = v;
    for (long i = 0; i < v_shift.numel(); ++i) v_shift[i] += 4.2;
    Var g1 = spatial_softmax_sq(tape.leaf(v, false));
    Var g2 = spatial_softmax_sq(tape.leaf(v_shift, false));
    for (long i = 0; i < g1.val().numel(); ++i)
        CHECK(g1.val()[i] == doctest::Approx(g2.val()[i]).epsilon(1e-9));
}

TEST_CASE("motion encoder maps clips to the configured feature shape") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(5);
    MotionEncoder em(ps, rng, cfg);

    Tape tape;
    ps.bind(tape);
    Tensor clips = randt(rng, {2, 3, cfg.clip_len, cfg.frame_size, cfg.frame_size}, 0.5);
    Var f = em(tape.leaf(clips, false));
    REQUIRE(f.val().ndim() == 4);
    CHECK(f.val().dim(0) == 2);
    CHECK(f.val().dim(1) == cfg.channels());
    CHECK(f.val().dim(2) == cfg.feat_h);
    CHECK(f.val().dim(3) == cfg.feat_w);
    for (long i = 0; i < f.val().numel(); ++i) CHECK(std::isfinite(f.val()[i]));

    Tensor zeros = Tensor::zeros(clips.shape());
    Var fz = em(tape.leaf(zeros, false));
    for (long i = 0; i < fz.val().numel(); ++i) CHECK(std::isfinite(fz.val()[i]));

    Tensor bad = randt(rng, {2, 3, cfg.clip_len, 8, 8}, 0.5);
    CHECK_THROWS_AS(em(tape.leaf(bad, false)), std::runtime_error);
}

TEST_CASE("motion encoder distinguishes a clip from its time reversal") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(6);
    MotionEncoder em(ps, rng, cfg);

    // a bright dot sweeping left to right, symmetric when mirrored in time
    Tensor clips = Tensor::zeros({2, 3, cfg.clip_len, cfg.frame_size, cfg.frame_size});
    for (int t = 0; t < cfg.clip_len; ++t) {
        int x_fwd = 2 + 2 * t, x_rev = 2 + 2 * (cfg.clip_len - 1 - t);
        for (int c = 0; c < 3; ++c) {
            clips.at(0, c, t, 6, x_fwd) = 1.0;
            clips.at(1, c, t, 6, x_rev) = 1.0;
        }
    }
    Tape tape;
    ps.bind(tape);
    Var f = em(tape.leaf(clips, false));
    double diff = 0.0;
    for (int c = 0; c < cfg.channels(); ++c)
        for (int y = 0; y < cfg.feat_h; ++y)
            for (int x = 0; x < cfg.feat_w; ++x)
                diff += std::abs(f.val().at(0, c, y, x) - f.val().at(1, c, y, x));
    CHECK(diff > 1e-6);
}

TEST_CASE("batched encoding equals per-item encoding") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(7);
    MotionEncoder em(ps, rng, cfg);
    SceneEncoder es(ps, rng, cfg);

    Tensor clips = randt(rng, {3, 3, cfg.clip_len, cfg.frame_size, cfg.frame_size}, 0.5);

    Tape tape;
    ps.bind(tape);
    Var fb = em(tape.leaf(clips, false));
    Var sb = es(tape.leaf(clips, false));
    for (int bi = 0; bi < 3; ++bi) {
        Tensor one = Tensor::zeros({1, 3, cfg.clip_len, cfg.frame_size, cfg.frame_size});
        for (long i = 0; i < one.numel(); ++i) one[i] = clips[bi * one.numel() + i];
        Var f1 = em(tape.leaf(one, false));
        Var s1 = es(tape.leaf(one, false));
        for (int c = 0; c < cfg.channels(); ++c)
            for (int y = 0; y < cfg.feat_h; ++y)
                for (int x = 0; x < cfg.feat_w; ++x) {
                    CHECK(std::abs(fb.val().at(bi, c, y, x) - f1.val().at(0, c, y, x)) < 1e-6);
                    CHECK(std::abs(sb.val().at(bi, c, y, x) - s1.val().at(0, c, y, x)) < 1e-6);
                }
    }
}

TEST_CASE("scene encoder sees only the temporal mean") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(9);
    SceneEncoder es(ps, rng, cfg);

    Tensor clips = randt(rng, {1, 3, cfg.clip_len, cfg.frame_size, cfg.frame_size}, 0.5);
    // second clip: frames permuted in time, same mean
    Tensor shuffled = Tensor::zeros(clips.shape());
    std::vector<int> order = {3, 1, 0, 2};
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < cfg.clip_len; ++t)
            for (int y = 0; y < cfg.frame_size; ++y)
                for (int x = 0; x < cfg.frame_size; ++x)
                    shuffled.at(0, c, t, y, x) = clips.at(0, c, order[t], y, x);

    Tape tape;
    ps.bind(tape);
    Var a = es(tape.leaf(clips, false));
    Var b = es(tape.leaf(shuffled, false));
    for (long i = 0; i < a.val().numel(); ++i)
        CHECK(a.val()[i] == doctest::Approx(b.val()[i]).epsilon(1e-9));

    CHECK(a.val().dim(1) == cfg.channels());
    CHECK(a.val().dim(2) == cfg.feat_h);
    CHECK(a.val().dim(3) == cfg.feat_w);
}

TEST_CASE("gradients flow through both encoders and the attention path") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(10);
    MotionEncoder em(ps, rng, cfg);

    Tensor clips = randt(rng, {2, 3, cfg.clip_len, cfg.frame_size, cfg.frame_size}, 0.4);
    double err = max_grad_err({clips}, [&](Tape& tape, const std::vector<Var>& in) {
        ps.bind(tape);
        return probe(tape, em(in[0]));
    });
    CHECK(err < kTol);

    ParamSet ps2;
    Rng rng2(11);
    SceneEncoder es(ps2, rng2, cfg);
    double err2 = max_grad_err({clips}, [&](Tape& tape, const std::vector<Var>& in) {
        ps2.bind(tape);
        return probe(tape, es(in[0]));
    });
    CHECK(err2 < kTol);
}

TEST_CASE("attention gating can be disabled") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(12);
    MotionEncoder em(ps, rng, cfg);
    em.use_attention = false;

    ParamSet ps_on;
    Rng rng_on(12);
    MotionEncoder em_on(ps_on, rng_on, cfg);  // same init, gating active

    Tensor clips = randt(rng, {2, 3, cfg.clip_len, cfg.frame_size, cfg.frame_size}, 0.5);
    Tape tape;
    ps.bind(tape);
    ps_on.bind(tape);
    Var off = em(tape.leaf(clips, false));
    Var on = em_on(tape.leaf(clips, false));
    double diff = 0.0;
    for (long i = 0; i < off.val().numel(); ++i) diff += std::abs(off.val()[i] - on.val()[i]);
    CHECK(diff > 1e-9);
}
