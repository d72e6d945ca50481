#include <cmath>

#include "cavad/decomposer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cavad;
using namespace testsup;

namespace {

TrainConfig tiny_config() {
    return parse_train_config("", {"em_base=1", "d_c=2"});  // channels() = 4
}

// Hand-sized decomposer: C=2, hidden width 1, all weights chosen by hand.
Decomposer hand_decomposer(ParamSet& ps, Rng& rng) {
    Decomposer d;
    d.a1 = Linear(ps, rng, "a1", 2, 1);
    d.a2 = Linear(ps, rng, "a2", 1, 2);
    d.b1 = Linear(ps, rng, "b1", 2, 1);
    d.b2 = Linear(ps, rng, "b2", 1, 2);
    ps.get("a1.w").value = Tensor::from({1, 2}, {1.0, 0.0});
    ps.get("a2.w").value = Tensor::from({2, 1}, {1.0, -1.0});
    ps.get("b1.w").value = Tensor::from({1, 2}, {0.0, 1.0});
    ps.get("b2.w").value = Tensor::from({2, 1}, {2.0, 0.0});
    return d;
}

}  // namespace

TEST_CASE("hand-weight decomposition reproduces hand arithmetic") {
    ParamSet ps;
    Rng rng(1);
    Decomposer d = hand_decomposer(ps, rng);

    // F  channel 0: [1, 3], channel 1: [2, 0]
    // F' channel 0: [0, 1], channel 1: [1, 1]
    Tensor f = Tensor::from({1, 2, 1, 2}, {1.0, 3.0, 2.0, 0.0});
    Tensor fp = Tensor::from({1, 2, 1, 2}, {0.0, 1.0, 1.0, 1.0});

    // avg diff = (1.5, 0), max diff = (2, 1)
    // alpha = sigmoid((1.5, -1.5)); beta = sigmoid((2, 0))
    // g = (alpha + beta) / 2, frozen from independent arithmetic
    const double g0 = 0.84918577708576293;
    const double g1 = 0.34121276190317817;

    Tape tape;
    ps.bind(tape);
    Decomposition out = d(tape.leaf(f, true), tape.leaf(fp, true));

    CHECK(out.gate.val().at(0, 0) == doctest::Approx(g0).epsilon(1e-12));
    CHECK(out.gate.val().at(0, 1) == doctest::Approx(g1).epsilon(1e-12));
    CHECK(out.f_private.val().at(0, 0, 0, 0) == doctest::Approx(g0 * 1.0).epsilon(1e-12));
    CHECK(out.f_private.val().at(0, 0, 0, 1) == doctest::Approx(g0 * 3.0).epsilon(1e-12));
    CHECK(out.f_private.val().at(0, 1, 0, 0) == doctest::Approx(g1 * 2.0).epsilon(1e-12));
    CHECK(out.f_shared.val().at(0, 0, 0, 1) == doctest::Approx((1 - g0) * 1.0).epsilon(1e-12));
    CHECK(out.f_shared.val().at(0, 1, 0, 0) == doctest::Approx((1 - g1) * 1.0).epsilon(1e-12));
}

TEST_CASE("gate weights on F and F' sum to one exactly, bit for bit") {
    ParamSet ps;
    Rng rng(2);
    Decomposer d = hand_decomposer(ps, rng);

    // feeding all-ones maps recovers the two channel weights as raw outputs;
    // identical inputs make the gate depend only on the output-layer biases,
    // swept here across a wide logit range
    Tensor ones = Tensor::full({1, 2, 1, 2}, 1.0);
    Rng sweep(3);
    for (int round = 0; round < 200; ++round) {
        ps.get("a2.b").value = randt(sweep, {2}, 4.0);
        ps.get("b2.b").value = randt(sweep, {2}, 4.0);
        Tape tape;
        ps.bind(tape);
        Decomposition ref = d(tape.leaf(ones, false), tape.leaf(Tensor(ones), false));
        for (long i = 0; i < ref.f_private.val().numel(); ++i) {
            double sum = ref.f_private.val()[i] + ref.f_shared.val()[i];
            CHECK(sum == 1.0);
        }
    }
}

TEST_CASE("identical inputs give a symmetric gate of one half") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(4);
    Decomposer d(ps, rng, cfg);  // final layers zero-initialized

    Rng data(5);
    Tensor f = randt(data, {2, 4, 3, 3}, 1.0);

    Tape tape;
    ps.bind(tape);
    Decomposition out = d(tape.leaf(f, false), tape.leaf(Tensor(f), false));
    // pooled differences vanish and the zero-init output layers give logits 0
    for (long i = 0; i < out.gate.val().numel(); ++i)
        CHECK(out.gate.val()[i] == doctest::Approx(0.5).epsilon(1e-12));
    for (long i = 0; i < f.numel(); ++i)
        CHECK(out.f_private.val()[i] == doctest::Approx(0.5 * f[i]).epsilon(1e-12));
}

TEST_CASE("saturated logits drive the gate to its limits") {
    ParamSet ps;
    Rng rng(6);
    Decomposer d = hand_decomposer(ps, rng);
    ps.get("a2.w").value = Tensor::from({2, 1}, {400.0, 400.0});
    ps.get("b2.w").value = Tensor::from({2, 1}, {400.0, 400.0});

    Tensor f = Tensor::from({1, 2, 1, 2}, {1.0, 3.0, 2.0, 0.5});
    Tensor fp = Tensor::zeros({1, 2, 1, 2});

    Tape tape;
    ps.bind(tape);
    Decomposition out = d(tape.leaf(f, false), tape.leaf(fp, false));
    for (long i = 0; i < f.numel(); ++i) {
        CHECK(out.f_private.val()[i] == doctest::Approx(f[i]).epsilon(1e-9));
        CHECK(std::abs(out.f_shared.val()[i]) < 1e-9);
    }
}

TEST_CASE("pooling makes the gate invariant to joint spatial permutation") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(7);
    Decomposer d(ps, rng, cfg);
    // break the zero-init so the gate actually depends on the inputs
    Rng wrng(8);
    he_normal(ps.get("dec.a2.w").value, wrng, 2);
    he_normal(ps.get("dec.b2.w").value, wrng, 2);

    Rng data(9);
    Tensor f = randt(data, {1, 4, 2, 3}, 1.0);
    Tensor fp = randt(data, {1, 4, 2, 3}, 1.0);

    // permute the 6 spatial cells identically in both maps
    const int perm[6] = {4, 2, 0, 5, 1, 3};
    Tensor f2 = Tensor::zeros(f.shape()), fp2 = Tensor::zeros(fp.shape());
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 6; ++i) {
            f2.at(0, c, i / 3, i % 3) = f.at(0, c, perm[i] / 3, perm[i] % 3);
            fp2.at(0, c, i / 3, i % 3) = fp.at(0, c, perm[i] / 3, perm[i] % 3);
        }

    Tape tape;
    ps.bind(tape);
    Decomposition a = d(tape.leaf(f, false), tape.leaf(fp, false));
    Decomposition b = d(tape.leaf(f2, false), tape.leaf(fp2, false));
    for (long i = 0; i < a.gate.val().numel(); ++i)
        CHECK(a.gate.val()[i] == doctest::Approx(b.gate.val()[i]).epsilon(1e-12));
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 6; ++i)
            CHECK(b.f_private.val().at(0, c, i / 3, i % 3) ==
                  doctest::Approx(a.f_private.val().at(0, c, perm[i] / 3, perm[i] % 3))
                      .epsilon(1e-12));
}

TEST_CASE("single-pool ablations use only their own path") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(10);
    Decomposer d(ps, rng, cfg);
    Rng wrng(11);
    he_normal(ps.get("dec.a2.w").value, wrng, 2);
    he_normal(ps.get("dec.b2.w").value, wrng, 2);

    Rng data(12);
    Tensor f = randt(data, {2, 4, 2, 2}, 1.0);
    Tensor fp = randt(data, {2, 4, 2, 2}, 1.0);

    Tape tape;
    ps.bind(tape);

    d.use_avg = true;
    d.use_max = false;
    Var g_avg = d(tape.leaf(f, false), tape.leaf(Tensor(fp), false)).gate;
    d.use_avg = false;
    d.use_max = true;
    Var g_max = d(tape.leaf(f, false), tape.leaf(Tensor(fp), false)).gate;
    d.use_avg = true;
    Var g_both = d(tape.leaf(f, false), tape.leaf(Tensor(fp), false)).gate;

    for (long i = 0; i < g_both.val().numel(); ++i)
        CHECK(g_both.val()[i] ==
              doctest::Approx(0.5 * (g_avg.val()[i] + g_max.val()[i])).epsilon(1e-12));

    d.use_avg = false;
    d.use_max = false;
    Var g_off = d(tape.leaf(f, false), tape.leaf(Tensor(fp), false)).gate;
    for (long i = 0; i < g_off.val().numel(); ++i) CHECK(g_off.val()[i] == 0.5);
}

TEST_CASE("decomposition rejects mismatched shapes") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(13);
    Decomposer d(ps, rng, cfg);
    Tape tape;
    ps.bind(tape);
    Tensor f = Tensor::zeros({1, 4, 2, 2});
    Tensor fp = Tensor::zeros({1, 4, 2, 3});
    CHECK_THROWS_WITH_AS(d(tape.leaf(f, false), tape.leaf(fp, false)),
                         doctest::Contains("shape mismatch"), std::runtime_error);
}

TEST_CASE("gradients flow through both pooled paths and the gates") {
    TrainConfig cfg = tiny_config();
    ParamSet ps;
    Rng rng(14);
    Decomposer d(ps, rng, cfg);
    Rng wrng(15);
    he_normal(ps.get("dec.a2.w").value, wrng, 2);
    he_normal(ps.get("dec.b2.w").value, wrng, 2);

    Rng data(16);
    Tensor f = randt(data, {2, 4, 2, 2}, 1.0);
    Tensor fp = randt(data, {2, 4, 2, 2}, 1.0);

    double err = max_grad_err({f, fp}, [&](Tape& tape, std::vector<Var>& in) {
        ps.bind(tape);
        Decomposition out = d(in[0], in[1]);
        return add(probe(tape, out.f_private), probe(tape, out.f_shared));
    });
    CHECK(err < kTol);
}
