#pragma once

// Learnable-parameter registry, layer wrappers and the Adam optimizer.
// Parameters live in a ParamSet; each training step binds them onto a fresh
// tape so that repeated use of a shared layer accumulates into one gradient.

#include <memory>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cavad/autograd.hpp"
#include "cavad/rng.hpp"
#include "cavad/tensor.hpp"

namespace cavad {

struct Param {
    std::string name;
    Tensor value;
    Tensor m;  // Adam first moment
    Tensor v;  // Adam second moment
    Var var;   // bound per step by ParamSet::bind
};

class ParamSet {
public:
    Param& add(const std::string& name, Tensor init);
    Param& get(const std::string& name);
    const Param& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    // Creates one gradient-tracked Var per parameter on the given tape.
    void bind(Tape& tape);

    size_t size() const { return params_.size(); }
    Param& at(size_t i) { return *params_[i]; }
    const Param& at(size_t i) const { return *params_[i]; }

private:
    std::vector<std::unique_ptr<Param>> params_;  // insertion order, stable for serialization
    std::map<std::string, size_t> index_;
};

// He-normal fill with fan-in scaling; biases are zero-initialised separately.
void he_normal(Tensor& t, Rng& rng, int fan_in);

struct Adam {
    real lr = 8e-5;
    real beta1 = 0.9;
    real beta2 = 0.999;
    real eps = 1e-8;
    long step_count = 0;

    void step(ParamSet& params);
};

// --- layer wrappers --------------------------------------------------------

struct Linear {
    Param* w = nullptr;
    Param* b = nullptr;

    Linear() = default;
    Linear(ParamSet& ps, Rng& rng, const std::string& name, int in, int out,
           bool zero_init = false);
    Var operator()(const Var& x) const { return linear(x, w->var, b->var); }
};

struct Conv2dLayer {
    Param* w = nullptr;
    Param* b = nullptr;
    int sh = 1, sw = 1, ph = 0, pw = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamSet& ps, Rng& rng, const std::string& name, int in_c, int out_c, int kh,
                int kw, int sh, int sw, int ph, int pw);
    Var operator()(const Var& x) const { return conv2d(x, w->var, b->var, sh, sw, ph, pw); }
};

struct Conv3dLayer {
    Param* w = nullptr;
    Param* b = nullptr;
    int st = 1, sh = 1, sw = 1, pt = 0, ph = 0, pw = 0;

    Conv3dLayer() = default;
    Conv3dLayer(ParamSet& ps, Rng& rng, const std::string& name, int in_c, int out_c, int kt,
                int kh, int kw, int st, int sh, int sw, int pt, int ph, int pw);
    Var operator()(const Var& x) const {
        return conv3d(x, w->var, b->var, st, sh, sw, pt, ph, pw);
    }
};

// Batch-statistics normalization (gamma init 1, beta init 0). Only valid inside
// modules that require b >= 2; there is no inference-mode running average.
struct BatchNorm2dLayer {
    Param* gamma = nullptr;
    Param* beta = nullptr;
    real eps = 1e-5;

    BatchNorm2dLayer() = default;
    BatchNorm2dLayer(ParamSet& ps, const std::string& name, int c);
    Var operator()(const Var& x) const { return batch_norm2d(x, gamma->var, beta->var, eps); }
};

// Per-item normalization over (H,W) (gamma init 1, beta init 0). Keeps batch
// items independent, so it is safe inside the per-item encoder contracts.
struct InstanceNorm2dLayer {
    Param* gamma = nullptr;
    Param* beta = nullptr;
    real eps = 1e-5;

    InstanceNorm2dLayer() = default;
    InstanceNorm2dLayer(ParamSet& ps, const std::string& name, int c);
    Var operator()(const Var& x) const { return instance_norm2d(x, gamma->var, beta->var, eps); }
};

}  // namespace cavad
