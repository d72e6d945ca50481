#include "cavad/nn.hpp"

#include <cmath>

namespace cavad {

Param& ParamSet::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::runtime_error("ParamSet: duplicate parameter " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = std::move(init);
    p->m = Tensor::zeros(p->value.shape());
    p->v = Tensor::zeros(p->value.shape());
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
}

Param& ParamSet::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("ParamSet: unknown parameter " + name);
    return *params_[it->second];
}

const Param& ParamSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("ParamSet: unknown parameter " + name);
    return *params_[it->second];
}

void ParamSet::bind(Tape& tape) {
    for (auto& p : params_) p->var = tape.leaf(p->value, true);
}

void he_normal(Tensor& t, Rng& rng, int fan_in) {
    const real std = std::sqrt(2.0 / static_cast<real>(fan_in));
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.gauss() * std;
}

void Adam::step(ParamSet& params) {
    ++step_count;
    const real bc1 = 1.0 - std::pow(beta1, static_cast<real>(step_count));
    const real bc2 = 1.0 - std::pow(beta2, static_cast<real>(step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        Param& p = params.at(i);
        if (!p.var.defined() || p.var.n->grad.empty()) continue;
        const Tensor& g = p.var.n->grad;
        for (long j = 0; j < p.value.numel(); ++j) {
            p.m[j] = beta1 * p.m[j] + (1.0 - beta1) * g[j];
            p.v[j] = beta2 * p.v[j] + (1.0 - beta2) * g[j] * g[j];
            const real mh = p.m[j] / bc1;
            const real vh = p.v[j] / bc2;
            p.value[j] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

Linear::Linear(ParamSet& ps, Rng& rng, const std::string& name, int in, int out, bool zero_init) {
    Tensor wt({out, in});
    if (!zero_init) he_normal(wt, rng, in);
    w = &ps.add(name + ".w", std::move(wt));
    b = &ps.add(name + ".b", Tensor::zeros({out}));
}

Conv2dLayer::Conv2dLayer(ParamSet& ps, Rng& rng, const std::string& name, int in_c, int out_c,
                         int kh, int kw, int sh_, int sw_, int ph_, int pw_) {
    sh = sh_, sw = sw_, ph = ph_, pw = pw_;
    Tensor wt({out_c, in_c, kh, kw});
    he_normal(wt, rng, in_c * kh * kw);
    w = &ps.add(name + ".w", std::move(wt));
    b = &ps.add(name + ".b", Tensor::zeros({out_c}));
}

Conv3dLayer::Conv3dLayer(ParamSet& ps, Rng& rng, const std::string& name, int in_c, int out_c,
                         int kt, int kh, int kw, int st_, int sh_, int sw_, int pt_, int ph_,
                         int pw_) {
    st = st_, sh = sh_, sw = sw_, pt = pt_, ph = ph_, pw = pw_;
    Tensor wt({out_c, in_c, kt, kh, kw});
    he_normal(wt, rng, in_c * kt * kh * kw);
    w = &ps.add(name + ".w", std::move(wt));
    b = &ps.add(name + ".b", Tensor::zeros({out_c}));
}

BatchNorm2dLayer::BatchNorm2dLayer(ParamSet& ps, const std::string& name, int c) {
    Tensor g({c});
    for (int i = 0; i < c; ++i) g[i] = 1.0;
    gamma = &ps.add(name + ".gamma", std::move(g));
    beta = &ps.add(name + ".beta", Tensor::zeros({c}));
}

InstanceNorm2dLayer::InstanceNorm2dLayer(ParamSet& ps, const std::string& name, int c) {
    Tensor g({c});
    for (int i = 0; i < c; ++i) g[i] = 1.0;
    gamma = &ps.add(name + ".gamma", std::move(g));
    beta = &ps.add(name + ".beta", Tensor::zeros({c}));
}

}  // namespace cavad
