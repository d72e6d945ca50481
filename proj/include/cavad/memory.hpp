#pragma once

// Prototype memory pool: attention-addressed write, top-k filtered read, and
// the compactness/separateness losses. Items are the l2-normalized columns of
// an C x N matrix; the pool is updated by writes only, never by gradients.

#include "cavad/autograd.hpp"
#include "cavad/rng.hpp"
#include "cavad/tensor.hpp"

namespace cavad {

struct MemoryPool {
    Tensor m;      // C x N
    int top_k = 8;

    void init(int c, int n, int k, Rng& rng);

    // M <- l2cols(M + V_F * softmax_over_queries(K_F^T M / sqrt(C))) with
    // V_F = K_F = features; features are treated as constants (no gradient).
    void write(const Tensor& features);  // C x Q

    // Per query column: softmax over N of M^T q / sqrt(C), keep the k largest,
    // renormalize, return M * w. The selection mask is constant under
    // differentiation.
    Var read(const Var& queries) const;  // C x Q -> C x Q

    Var compact_loss(const Var& queries) const;
    Var separate_loss(const Var& queries, real margin) const;

    // Filtered weights (N x Q) for inspection; zeros outside the selection.
    Tensor read_weights(const Tensor& queries) const;

    void normalize_columns();
};

}  // namespace cavad
