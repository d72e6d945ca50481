#pragma once

// Shared test helpers: random tensors, a weighted-sum probe and a central
// finite-difference gradient checker.

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cavad/autograd.hpp"
#include "cavad/rng.hpp"
#include "cavad/tensor.hpp"

namespace testsup {

using cavad::real;
using cavad::Rng;
using cavad::Tape;
using cavad::Tensor;
using cavad::Var;

constexpr real kTol = 1e-3;  // relative, float64, matches the per-module contracts

inline Tensor randt(Rng& rng, std::vector<int> shape, real scale = 1.0, real offset = 0.0) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.gauss() * scale + offset;
    return t;
}

// Deterministic nonuniform weighting so gradients do not cancel by symmetry.
inline Var probe(Tape& tape, const Var& v) {
    Tensor w(v.val().shape());
    for (long i = 0; i < w.numel(); ++i) w[i] = std::sin(0.7 * static_cast<real>(i)) + 1.3;
    return cavad::sum_all(cavad::mul(v, tape.constant(std::move(w))));
}

inline real rel_err(real a, real b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central differences against reverse-mode gradients for a scalar-valued f.
// f must be a pure function of the Vars handed to it.
inline real max_grad_err(std::vector<Tensor> inputs,
                         const std::function<Var(Tape&, std::vector<Var>&)>& f,
                         real eps = 1e-5) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var loss = f(tape, vars);
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (auto& v : vars) {
        v.n->ensure_grad();
        grads.push_back(v.n->grad);
    }

    auto eval = [&f](std::vector<Tensor>& ts) {
        Tape tp;
        std::vector<Var> vs;
        vs.reserve(ts.size());
        for (auto& t : ts) vs.push_back(tp.leaf(t, false));
        return f(tp, vs).val()[0];
    };

    real worst = 0.0;
    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        for (long i = 0; i < inputs[vi].numel(); ++i) {
            const real keep = inputs[vi][i];
            inputs[vi][i] = keep + eps;
            const real fp = eval(inputs);
            inputs[vi][i] = keep - eps;
            const real fm = eval(inputs);
            inputs[vi][i] = keep;
            const real numeric = (fp - fm) / (2.0 * eps);
            worst = std::max(worst, rel_err(grads[vi][i], numeric));
        }
    }
    return worst;
}

// Scratch directory helper; removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               (tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this) & 0xffff));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

}  // namespace testsup
