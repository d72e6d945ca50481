#include "doctest.h"
#include "support.hpp"

#include <cmath>

#include "cavad/nn.hpp"

using namespace cavad;
using testsup::kTol;
using testsup::max_grad_err;
using testsup::probe;
using testsup::randt;

TEST_CASE("rng: save/load reproduces the stream exactly") {
    Rng a(1234);
    for (int i = 0; i < 17; ++i) (void)a.u64();
    std::string state = a.save_state();
    std::vector<real> want;
    for (int i = 0; i < 8; ++i) want.push_back(a.gauss());
    Rng b(999);
    b.load_state(state);
    for (int i = 0; i < 8; ++i) CHECK(b.gauss() == want[static_cast<size_t>(i)]);
}

TEST_CASE("rng: bounded stays in range and shuffle is a permutation") {
    Rng r(7);
    for (int i = 0; i < 1000; ++i) CHECK(r.bounded(13) < 13u);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    r.shuffle(v);
    std::vector<int> s = v;
    std::sort(s.begin(), s.end());
    for (int i = 0; i < 8; ++i) CHECK(s[static_cast<size_t>(i)] == i);
}

TEST_CASE("tape: repeated use of a leaf accumulates gradient") {
    Tape t;
    Var x = t.leaf(Tensor::from({2}, {3.0, -1.0}), true);
    Var y = sum_all(add(x, x));
    t.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("tape: backward rejects non-scalar loss") {
    Tape t;
    Var x = t.leaf(Tensor::zeros({2, 2}), true);
    CHECK_THROWS(t.backward(x));
}

TEST_CASE("tape: constants receive no gradient") {
    Tape t;
    Var c = t.constant(Tensor::from({2}, {1.0, 2.0}));
    Var x = t.leaf(Tensor::from({2}, {1.0, 1.0}), true);
    Var y = sum_all(mul(x, c));
    t.backward(y);
    CHECK(c.n->grad.empty());
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("gradcheck: elementwise chain") {
    Rng rng(11);
    auto a = randt(rng, {3, 4});
    auto b = randt(rng, {3, 4});
    real err = max_grad_err({a, b}, [](Tape& t, std::vector<Var>& v) {
        Var z = mul(add(v[0], v[1]), sub(v[0], mul_scalar(v[1], 0.5)));
        return probe(t, add_scalar(z, 0.25));
    });
    CHECK(err < kTol);
}

TEST_CASE("gradcheck: activations and pointwise maps") {
    Rng rng(12);
    // offsets keep inputs away from the relu kink and the log floor
    auto a = randt(rng, {2, 5}, 1.0, 0.0);
    for (long i = 0; i < a.numel(); ++i)
        if (std::abs(a[i]) < 0.05) a[i] = 0.1;

    SUBCASE("leaky_relu") {
        real err = max_grad_err({a}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, leaky_relu(v[0], 0.1));
        });
        CHECK(err < kTol);
    }
    SUBCASE("relu") {
        real err = max_grad_err(
            {a}, [](Tape& t, std::vector<Var>& v) { return probe(t, relu(v[0])); });
        CHECK(err < kTol);
    }
    SUBCASE("sigmoid and square") {
        real err = max_grad_err({a}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, square(sigmoid(v[0])));
        });
        CHECK(err < kTol);
    }
    SUBCASE("sqrt and clamped_log of positive input") {
        Tensor p = a;
        for (long i = 0; i < p.numel(); ++i) p[i] = std::abs(p[i]) + 0.5;
        real err = max_grad_err({p}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, clamped_log(sqrt_v(v[0]), 1e-12));
        });
        CHECK(err < kTol);
    }
}

TEST_CASE("clamped_log: gradient is zero at the floor") {
    Tape t;
    Var x = t.leaf(Tensor::from({2}, {1e-15, 2.0}), true);
    Var y = sum_all(clamped_log(x, 1e-12));
    t.backward(y);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == doctest::Approx(0.5));
    CHECK(y.val()[0] == doctest::Approx(std::log(1e-12) + std::log(2.0)));
}

TEST_CASE("gradcheck: reshape and permute") {
    Rng rng(13);
    auto a = randt(rng, {2, 3, 4});
    real err = max_grad_err({a}, [](Tape& t, std::vector<Var>& v) {
        Var p = permute(v[0], {2, 0, 1});
        return probe(t, reshape(p, {4, 6}));
    });
    CHECK(err < kTol);
}

TEST_CASE("permute forward places elements correctly") {
    Tape t;
    Tensor x({2, 3});
    for (long i = 0; i < 6; ++i) x[i] = static_cast<real>(i);
    Var y = permute(t.leaf(x, false), {1, 0});
    CHECK(y.val().dim(0) == 3);
    CHECK(y.val().at(0, 1) == 3.0);
    CHECK(y.val().at(2, 0) == 2.0);
}

TEST_CASE("gradcheck: matmul, transpose, linear") {
    Rng rng(14);
    auto a = randt(rng, {3, 4});
    auto b = randt(rng, {4, 2});
    auto w = randt(rng, {5, 4});
    auto bias = randt(rng, {5});
    SUBCASE("matmul") {
        real err = max_grad_err({a, b}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, matmul(v[0], v[1]));
        });
        CHECK(err < kTol);
    }
    SUBCASE("transpose") {
        real err = max_grad_err({a}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, transpose(v[0]));
        });
        CHECK(err < kTol);
    }
    SUBCASE("linear") {
        real err = max_grad_err({a, w, bias}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, linear(v[0], v[1], v[2]));
        });
        CHECK(err < kTol);
    }
}

TEST_CASE("gradcheck: softmax rows and trace mean") {
    Rng rng(15);
    auto a = randt(rng, {3, 5});
    auto sq = randt(rng, {4, 4});
    SUBCASE("softmax_rows") {
        real err = max_grad_err({a}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, softmax_rows(v[0]));
        });
        CHECK(err < kTol);
    }
    SUBCASE("rows sum to one") {
        Tape t;
        Var p = softmax_rows(t.leaf(a, false));
        for (int i = 0; i < 3; ++i) {
            real s = 0.0;
            for (int j = 0; j < 5; ++j) s += p.val().at(i, j);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("trace_mean") {
        real err = max_grad_err({sq}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, trace_mean(v[0]));
        });
        CHECK(err < kTol);
    }
}

TEST_CASE("gradcheck: conv2d with stride and padding") {
    Rng rng(16);
    auto x = randt(rng, {2, 2, 5, 4});
    auto w = randt(rng, {3, 2, 3, 3}, 0.5);
    auto b = randt(rng, {3});
    real err = max_grad_err({x, w, b}, [](Tape& t, std::vector<Var>& v) {
        return probe(t, conv2d(v[0], v[1], v[2], 2, 1, 1, 1));
    });
    CHECK(err < kTol);
}

TEST_CASE("conv2d forward matches a hand-computed 1x1 case") {
    Tape t;
    Tensor x({1, 2, 2, 2});
    for (long i = 0; i < 8; ++i) x[i] = static_cast<real>(i + 1);
    Tensor w = Tensor::from({1, 2, 1, 1}, {2.0, -1.0});
    Tensor b = Tensor::from({1}, {0.5});
    Var y = conv2d(t.leaf(x, false), t.leaf(w, false), t.leaf(b, false), 1, 1, 0, 0);
    // out(h,w) = 2*x0(h,w) - x1(h,w) + 0.5
    CHECK(y.val().at(0, 0, 0, 0) == doctest::Approx(2.0 * 1.0 - 5.0 + 0.5));
    CHECK(y.val().at(0, 0, 1, 1) == doctest::Approx(2.0 * 4.0 - 8.0 + 0.5));
}

TEST_CASE("gradcheck: conv3d with anisotropic stride") {
    Rng rng(17);
    auto x = randt(rng, {1, 2, 4, 4, 3});
    auto w = randt(rng, {2, 2, 3, 3, 3}, 0.4);
    auto b = randt(rng, {2});
    real err = max_grad_err({x, w, b}, [](Tape& t, std::vector<Var>& v) {
        return probe(t, conv3d(v[0], v[1], v[2], 1, 2, 1, 1, 1, 1));
    });
    CHECK(err < kTol);
}

TEST_CASE("gradcheck: pooling") {
    Rng rng(18);
    auto x = randt(rng, {2, 3, 5, 4});
    SUBCASE("global average") {
        real err = max_grad_err({x}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, global_avg_pool2d(v[0]));
        });
        CHECK(err < kTol);
    }
    SUBCASE("global max") {
        real err = max_grad_err({x}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, global_max_pool2d(v[0]));
        });
        CHECK(err < kTol);
    }
    SUBCASE("adaptive average 5x4 -> 3x2") {
        real err = max_grad_err({x}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, adaptive_avg_pool2d(v[0], 3, 2));
        });
        CHECK(err < kTol);
    }
}

TEST_CASE("gradcheck: batch norm") {
    Rng rng(31);
    auto x = randt(rng, {3, 2, 2, 3});
    auto g = randt(rng, {2});
    auto b = randt(rng, {2});
    real err = max_grad_err({x, g, b}, [](Tape& t, std::vector<Var>& v) {
        return probe(t, batch_norm2d(v[0], v[1], v[2], 1e-5));
    });
    CHECK(err < kTol);
}

TEST_CASE("batch_norm2d standardizes each channel over (B,H,W)") {
    Rng rng(32);
    Tape t;
    Var x = t.leaf(randt(rng, {4, 3, 2, 2}, 2.0), false);
    Tensor ones({3}), zeros = Tensor::zeros({3});
    for (int i = 0; i < 3; ++i) ones[i] = 1.0;
    Var y = batch_norm2d(x, t.constant(ones), t.constant(zeros), 1e-12);
    const int n = 4 * 2 * 2;
    for (int c = 0; c < 3; ++c) {
        real mean = 0.0, var = 0.0;
        for (int b = 0; b < 4; ++b)
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 2; ++w) mean += y.val().at(b, c, h, w);
        mean /= n;
        for (int b = 0; b < 4; ++b)
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 2; ++w) {
                    real d = y.val().at(b, c, h, w) - mean;
                    var += d * d;
                }
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var / n == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("gradcheck: instance norm") {
    Rng rng(33);
    auto x = randt(rng, {3, 2, 2, 3});
    auto g = randt(rng, {2});
    auto b = randt(rng, {2});
    real err = max_grad_err({x, g, b}, [](Tape& t, std::vector<Var>& v) {
        return probe(t, instance_norm2d(v[0], v[1], v[2], 1e-5));
    });
    CHECK(err < kTol);
}

TEST_CASE("instance_norm2d standardizes per item and keeps items independent") {
    Rng rng(34);
    Tape t;
    Tensor xt = randt(rng, {4, 3, 2, 2}, 2.0);
    Tensor ones({3}), zeros = Tensor::zeros({3});
    for (int i = 0; i < 3; ++i) ones[i] = 1.0;
    Var y = instance_norm2d(t.leaf(xt, false), t.constant(ones), t.constant(zeros), 1e-12);
    const int n = 2 * 2;
    for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 3; ++c) {
            real mean = 0.0, var = 0.0;
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 2; ++w) mean += y.val().at(b, c, h, w);
            mean /= n;
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 2; ++w) {
                    real d = y.val().at(b, c, h, w) - mean;
                    var += d * d;
                }
            CHECK(std::abs(mean) < 1e-9);
            CHECK(var / n == doctest::Approx(1.0).epsilon(1e-6));
        }

    // Item 0's output must not change when the rest of the batch does.
    Tensor xt2 = xt;
    for (int b = 1; b < 4; ++b)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 2; ++w) xt2.at(b, c, h, w) += 7.5;
    Var y2 = instance_norm2d(t.leaf(xt2, false), t.constant(ones), t.constant(zeros), 1e-12);
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w)
                CHECK(y2.val().at(0, c, h, w) == doctest::Approx(y.val().at(0, c, h, w)).epsilon(0));
}

TEST_CASE("global_max_pool2d routes tied maxima to the first index") {
    Tape t;
    Tensor x({1, 1, 2, 2});
    x.at(0, 0, 0, 0) = 1.0;
    x.at(0, 0, 0, 1) = 5.0;
    x.at(0, 0, 1, 0) = 5.0;
    x.at(0, 0, 1, 1) = 0.0;
    Var xv = t.leaf(x, true);
    t.backward(sum_all(global_max_pool2d(xv)));
    CHECK(xv.grad().at(0, 0, 0, 1) == 1.0);
    CHECK(xv.grad().at(0, 0, 1, 0) == 0.0);
}

TEST_CASE("gradcheck: temporal mean") {
    Rng rng(19);
    auto x = randt(rng, {2, 2, 3, 2, 2});
    real err = max_grad_err({x}, [](Tape& t, std::vector<Var>& v) {
        return probe(t, temporal_mean(v[0]));
    });
    CHECK(err < kTol);
}

TEST_CASE("gradcheck: channel and spatial gates") {
    Rng rng(20);
    auto x = randt(rng, {2, 3, 3, 2});
    auto gc = randt(rng, {2, 3}, 0.5, 0.5);
    auto gs = randt(rng, {2, 3, 2}, 0.3);
    SUBCASE("scale_channels") {
        real err = max_grad_err({x, gc}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, scale_channels(v[0], v[1]));
        });
        CHECK(err < kTol);
    }
    SUBCASE("spatial_gate") {
        real err = max_grad_err({x, gs}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, spatial_gate(v[0], v[1]));
        });
        CHECK(err < kTol);
    }
}

TEST_CASE("gradcheck: channel variance and squared spatial softmax") {
    Rng rng(21);
    auto s = randt(rng, {2, 4, 3, 2});
    auto v3 = randt(rng, {2, 3, 3});
    SUBCASE("channel_variance") {
        real err = max_grad_err({s}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, channel_variance(v[0]));
        });
        CHECK(err < kTol);
    }
    SUBCASE("spatial_softmax_sq") {
        real err = max_grad_err({v3}, [](Tape& t, std::vector<Var>& v) {
            return probe(t, spatial_softmax_sq(v[0]));
        });
        CHECK(err < kTol);
    }
    SUBCASE("sqrt of squared softmax sums to one over space") {
        Tape t;
        Var g = spatial_softmax_sq(t.leaf(v3, false));
        for (int b = 0; b < 2; ++b) {
            real s1 = 0.0;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) s1 += std::sqrt(g.val().at(b, i, j));
            CHECK(std::abs(s1 - 1.0) < 1e-5);
        }
    }
}

TEST_CASE("gradcheck: cosine matrix") {
    Rng rng(22);
    auto a = randt(rng, {4, 3});
    auto b = randt(rng, {4, 5});
    real err = max_grad_err({a, b}, [](Tape& t, std::vector<Var>& v) {
        return probe(t, cosine_matrix(v[0], v[1], 1e-8));
    });
    CHECK(err < kTol);
}

TEST_CASE("cosine_matrix: unit diagonal against itself, degenerate column throws") {
    Tape t;
    Rng rng(23);
    auto a = randt(rng, {4, 3});
    Var av = t.leaf(a, false);
    Var c = cosine_matrix(av, av, 1e-8);
    for (int i = 0; i < 3; ++i) CHECK(c.val().at(i, i) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor z = a;
    for (int r = 0; r < 4; ++r) z.at(r, 1) = 0.0;
    Var zv = t.leaf(z, false);
    CHECK_THROWS_WITH_AS(cosine_matrix(zv, zv, 1e-8),
                         doctest::Contains("degenerate column 1"), std::runtime_error);
}

TEST_CASE("gradcheck: classification losses through softmax") {
    Rng rng(24);
    auto logits = randt(rng, {3, 4});
    auto logits2 = randt(rng, {3, 4});
    SUBCASE("nll on probabilities") {
        std::vector<int> labels{2, 0, 3};
        real err = max_grad_err({logits}, [labels](Tape& t, std::vector<Var>& v) {
            return nll_probs(softmax_rows(v[0]), labels, 1e-12);
        });
        CHECK(err < kTol);
    }
    SUBCASE("mutual KL") {
        real err = max_grad_err({logits, logits2}, [](Tape& t, std::vector<Var>& v) {
            return kl_mutual(softmax_rows(v[0]), softmax_rows(v[1]), 1e-12);
        });
        CHECK(err < kTol);
    }
    SUBCASE("mutual KL is symmetric and zero at equality") {
        Tape t;
        Var p = softmax_rows(t.leaf(logits, false));
        Var q = softmax_rows(t.leaf(logits2, false));
        real pq = kl_mutual(p, q, 1e-12).val()[0];
        real qp = kl_mutual(q, p, 1e-12).val()[0];
        CHECK(pq == doctest::Approx(qp).epsilon(1e-12));
        CHECK(kl_mutual(p, p, 1e-12).val()[0] == doctest::Approx(0.0));
    }
}

TEST_CASE("nll_probs rejects out-of-range labels") {
    Tape t;
    Var p = t.leaf(Tensor::full({2, 3}, 1.0 / 3.0), false);
    CHECK_THROWS(nll_probs(p, {0, 3}, 1e-12));
}

TEST_CASE("gradcheck: cluster distance") {
    Rng rng(25);
    auto r = randt(rng, {5, 3});
    Tensor centers = randt(rng, {2, 3}, 3.0);  // well separated from the points
    real err = max_grad_err({r}, [centers](Tape& t, std::vector<Var>& v) {
        return cluster_dist_sq(v[0], centers);
    });
    CHECK(err < kTol);
}

TEST_CASE("cluster_dist_sq picks the nearest center") {
    Tape t;
    Tensor r = Tensor::from({1, 2}, {0.0, 0.0});
    Tensor centers = Tensor::from({2, 2}, {3.0, 4.0, 1.0, 0.0});
    Var rv = t.leaf(r, false);
    CHECK(cluster_dist_sq(rv, centers).val()[0] == doctest::Approx(1.0));
}

TEST_CASE("memory ops: read, compact, separate") {
    Rng rng(26);
    const int C = 4, N = 6, Q = 3;
    Tensor m = randt(rng, {C, N});
    // normalise columns like the write path does
    for (int j = 0; j < N; ++j) {
        real s = 0.0;
        for (int c = 0; c < C; ++c) s += m.at(c, j) * m.at(c, j);
        s = std::sqrt(s);
        for (int c = 0; c < C; ++c) m.at(c, j) /= s;
    }
    Tensor q = randt(rng, {C, Q});

    SUBCASE("gradcheck read with top-k mask constant") {
        real err = max_grad_err({q}, [m](Tape& t, std::vector<Var>& v) {
            return probe(t, memory_read(m, v[0], 3));
        });
        CHECK(err < kTol);
    }
    SUBCASE("read with k equal to N is the full softmax read") {
        Tape t;
        Var qv = t.leaf(q, false);
        Tensor got = memory_read(m, qv, N).val();
        const real inv = 1.0 / std::sqrt(static_cast<real>(C));
        for (int p = 0; p < Q; ++p) {
            std::vector<real> w(N);
            real z = 0.0;
            for (int j = 0; j < N; ++j) {
                real dot = 0.0;
                for (int c = 0; c < C; ++c) dot += m.at(c, j) * q.at(c, p);
                w[static_cast<size_t>(j)] = std::exp(dot * inv);
                z += w[static_cast<size_t>(j)];
            }
            for (int c = 0; c < C; ++c) {
                real want = 0.0;
                for (int j = 0; j < N; ++j)
                    want += m.at(c, j) * w[static_cast<size_t>(j)] / z;
                CHECK(got.at(c, p) == doctest::Approx(want).epsilon(1e-10));
            }
        }
    }
    SUBCASE("read rejects k outside [1, N]") {
        Tape t;
        Var qv = t.leaf(q, false);
        CHECK_THROWS(memory_read(m, qv, 0));
        CHECK_THROWS(memory_read(m, qv, N + 1));
    }
    SUBCASE("gradcheck compact") {
        real err = max_grad_err({q}, [m](Tape& t, std::vector<Var>& v) {
            return memory_compact(m, v[0]);
        });
        CHECK(err < kTol);
    }
    SUBCASE("gradcheck separate") {
        real err = max_grad_err({q}, [m](Tape& t, std::vector<Var>& v) {
            return memory_separate(m, v[0], 1.0);
        });
        CHECK(err < kTol);
    }
    SUBCASE("separate needs two items") {
        Tensor m1 = randt(rng, {C, 1});
        Tape t;
        Var qv = t.leaf(q, false);
        CHECK_THROWS(memory_separate(m1, qv, 1.0));
    }
}

TEST_CASE("adam: converges on a quadratic and skips unused parameters") {
    ParamSet ps;
    Param& p = ps.add("x", Tensor::from({2}, {5.0, -3.0}));
    Param& unused = ps.add("y", Tensor::from({1}, {42.0}));
    Adam opt;
    opt.lr = 0.1;
    for (int it = 0; it < 400; ++it) {
        Tape t;
        ps.bind(t);
        t.backward(sum_all(square(p.var)));
        opt.step(ps);
    }
    CHECK(std::abs(p.value[0]) < 1e-2);
    CHECK(std::abs(p.value[1]) < 1e-2);
    CHECK(unused.value[0] == 42.0);
}

TEST_CASE("param set: duplicate and missing names throw") {
    ParamSet ps;
    ps.add("a", Tensor::zeros({1}));
    CHECK_THROWS(ps.add("a", Tensor::zeros({1})));
    CHECK_THROWS(ps.get("missing"));
}
