#include "cavad/decomposer.hpp"

#include <algorithm>
#include <stdexcept>

namespace cavad {

Decomposer::Decomposer(ParamSet& ps, Rng& rng, const TrainConfig& cfg) {
    const int c = cfg.channels(), h = std::max(1, c / 2);
    a1 = Linear(ps, rng, "dec.a1", c, h);
    a2 = Linear(ps, rng, "dec.a2", h, c, /*zero_init=*/true);
    b1 = Linear(ps, rng, "dec.b1", c, h);
    b2 = Linear(ps, rng, "dec.b2", h, c, /*zero_init=*/true);
    use_avg = cfg.avg_pool;
    use_max = cfg.max_pool;
}

Decomposition Decomposer::operator()(const Var& f, const Var& f_prime) const {
    if (!f.val().same_shape(f_prime.val()))
        throw std::runtime_error("decompose: shape mismatch " + f.val().shape_str() + " vs " +
                                 f_prime.val().shape_str());
    const int b = f.val().dim(0), c = f.val().dim(1);
    Tape* tape = f.tape;

    Var gate;
    if (use_avg && use_max) {
        Var alpha = sigmoid(a2(relu(a1(sub(global_avg_pool2d(f), global_avg_pool2d(f_prime))))));
        Var beta = sigmoid(b2(relu(b1(sub(global_max_pool2d(f), global_max_pool2d(f_prime))))));
        gate = mul_scalar(add(alpha, beta), 0.5);
    } else if (use_avg) {
        gate = sigmoid(a2(relu(a1(sub(global_avg_pool2d(f), global_avg_pool2d(f_prime))))));
    } else if (use_max) {
        gate = sigmoid(b2(relu(b1(sub(global_max_pool2d(f), global_max_pool2d(f_prime))))));
    } else {
        gate = tape->constant(Tensor::full({b, c}, 0.5));
    }

    Decomposition out;
    out.gate = gate;
    out.f_private = scale_channels(f, gate);
    out.f_shared = scale_channels(f_prime, sub(tape->constant(Tensor::full({b, c}, 1.0)), gate));
    return out;
}

}  // namespace cavad
