#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cavad/tensor.hpp"

namespace cavad {

// Reverse-mode automatic differentiation on a tape. Nodes are created in
// topological order by construction; backward() walks the tape in reverse.
// Every op's backward is hand-written and matched against finite differences
// in the test suite.

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily, same shape as val
    bool requires_grad = false;
    std::function<void()> backward;  // accumulates this->grad into parents

    void ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros(val.shape());
    }
};

class Tape;

struct Var {
    std::shared_ptr<Node> n;
    Tape* tape = nullptr;

    const Tensor& val() const { return n->val; }
    const Tensor& grad() const { return n->grad; }
    bool defined() const { return static_cast<bool>(n); }
};

class Tape {
public:
    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Runs reverse accumulation from a scalar loss.
    void backward(const Var& loss);

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

    Var adopt(std::shared_ptr<Node> node);

private:
    std::vector<std::shared_ptr<Node>> nodes_;
};

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, real s);
Var mul_scalar(const Var& a, real s);
Var relu(const Var& a);
Var leaky_relu(const Var& a, real slope);
Var sigmoid(const Var& a);
Var square(const Var& a);
Var sqrt_v(const Var& a);
// log(max(a, floor)); gradient is zero where the clamp is active
Var clamped_log(const Var& a, real floor);

// ---- reductions / shape ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var reshape(const Var& a, std::vector<int> shape);
Var permute(const Var& a, const std::vector<int>& perm);
Var matmul(const Var& a, const Var& b);   // (m,k) x (k,n)
Var transpose(const Var& a);              // 2-D
Var linear(const Var& x, const Var& w, const Var& b);  // x:(B,in) w:(out,in) b:(out)
Var softmax_rows(const Var& a);           // 2-D, softmax over each row
Var trace_mean(const Var& a);             // mean of the diagonal of a square matrix

// ---- convolution / pooling ----
// x:(B,C,H,W) w:(O,C,kh,kw) b:(O)
Var conv2d(const Var& x, const Var& w, const Var& b, int sh, int sw, int ph, int pw);
// x:(B,C,T,H,W) w:(O,C,kt,kh,kw) b:(O)
Var conv3d(const Var& x, const Var& w, const Var& b, int st, int sh, int sw, int pt, int ph,
           int pw);
// Per-channel normalization over (B,H,W) batch statistics (no running averages);
// gamma, beta: (C). Couples the batch items, so it is reserved for modules whose
// contract already requires b >= 2.
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, real eps);
// Per-(item,channel) normalization over (H,W); batch items stay independent.
Var instance_norm2d(const Var& x, const Var& gamma, const Var& beta, real eps);
Var global_avg_pool2d(const Var& x);           // (B,C,H,W) -> (B,C)
Var global_max_pool2d(const Var& x);           // ties routed to the first index in h,w scan order
Var adaptive_avg_pool2d(const Var& x, int oh, int ow);
Var temporal_mean(const Var& x);               // (B,C,T,H,W) -> (B,C,H,W)

// ---- broadcast gates ----
Var scale_channels(const Var& x, const Var& g);        // x:(B,C,H,W) g:(B,C)
Var spatial_gate(const Var& x, const Var& g);          // out = x * (1 + g), g:(B,H,W)

// ---- attention map pieces ----
Var channel_variance(const Var& s);            // (B,D,H,W) -> (B,H,W), population variance over D
Var spatial_softmax_sq(const Var& v);          // (B,H,W) -> squared spatial softmax

// ---- correlation / losses ----
// A:(b,n) B:(b,m) -> (n,m) of column cosines; throws on column norm <= eps_col
Var cosine_matrix(const Var& a, const Var& b, real eps_col);
// -(1/B) sum_i log(clamp(P[i, label_i], floor, 1))
Var nll_probs(const Var& p, const std::vector<int>& labels, real floor);
// mean_i [ KL(p_i || q_i) + KL(q_i || p_i) ], probabilities clamped at floor
Var kl_mutual(const Var& p, const Var& q, real floor);
// mean squared euclidean distance of each row of r to its nearest center (centers constant)
Var cluster_dist_sq(const Var& r, const Tensor& centers);

// ---- memory ops (pool M is a constant buffer, gradients flow to queries) ----
// q:(C,Q); for each query column: scaled-dot softmax over the N items of m,
// keep the top-k weights, renormalize to sum 1, reconstruct as M * w.
Var memory_read(const Tensor& m, const Var& q, int k);
// mean over queries of ||q - p1||^2 with p1 the most similar item
Var memory_compact(const Tensor& m, const Var& q);
// mean over queries of max(||q-p1||^2 - ||q-p2||^2 + margin, 0)
Var memory_separate(const Tensor& m, const Var& q, real margin);

}  // namespace cavad
