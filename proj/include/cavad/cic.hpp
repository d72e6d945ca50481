#pragma once

// Causality-inspired characterizer: residual conv trunk mapping feature maps
// to causal representations (rows of a b x n matrix), the correlation triple
// (C1 cross-branch, C2/C3 within-branch column cosines), the correlation
// loss, and the K-means cluster model used in phase 2 and scoring.

#include <vector>

#include "cavad/autograd.hpp"
#include "cavad/config.hpp"
#include "cavad/nn.hpp"

namespace cavad {

struct Characterizer {
    Conv2dLayer stem;
    BatchNorm2dLayer stem_bn;
    std::vector<Conv2dLayer> conv1, conv2;  // per residual block
    std::vector<BatchNorm2dLayer> bn1, bn2;
    std::vector<Conv2dLayer> proj;          // 1x1 where the width changes (else unused)
    std::vector<BatchNorm2dLayer> proj_bn;
    std::vector<bool> has_proj;
    Linear head;

    Characterizer() = default;
    Characterizer(ParamSet& ps, Rng& rng, const TrainConfig& cfg);

    Var operator()(const Var& fmap) const;  // (B,C,H,W) -> (B,n), B >= 2
};

struct CorrelationTriple {
    Var c1, c2, c3;  // n x n
};

constexpr real kEpsCol = 1e-8;

// Column-cosine matrices; throws on any column with norm <= eps_col.
CorrelationTriple correlation_matrices(const Var& r, const Var& r_tilde, real eps_col = kEpsCol);

// lambda*||C1-I||_F^2 + ||C2-I||_F^2 + ||C3-I||_F^2 with per-term switches.
Var correlation_loss(const CorrelationTriple& t, real lambda, bool use_c1 = true,
                     bool use_c2 = true, bool use_c3 = true);

// Mean diagonal of C1: average cosine between corresponding columns.
Var consistency_similarity(const Var& r, const Var& r_tilde, real eps_col = kEpsCol);

struct ClusterModel {
    Tensor centers;  // K x n
    bool fitted = false;
};

// Lloyd iterations from seeded farthest-point init; stops when the largest
// center shift drops below 1e-4 or after 100 rounds.
ClusterModel update_clusters(const Tensor& reps, int k, Rng& rng);

// Mean squared distance of each row to its nearest center.
Var cluster_loss(const Var& r, const ClusterModel& model);

// Euclidean distance from one n-vector to its nearest center (scoring's D).
real nearest_center_distance(const Tensor& rep, const ClusterModel& model);

}  // namespace cavad
