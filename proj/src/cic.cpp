#include "cavad/cic.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cavad {

namespace {
constexpr real kSlope = 0.1;
}

Characterizer::Characterizer(ParamSet& ps, Rng& rng, const TrainConfig& cfg) {
    const int c = cfg.channels();
    stem = Conv2dLayer(ps, rng, "cic.stem", c, cfg.cic_width, 3, 3, 1, 1, 1, 1);
    stem_bn = BatchNorm2dLayer(ps, "cic.stem.bn", cfg.cic_width);
    int width = cfg.cic_width;
    for (int i = 0; i < cfg.cic_blocks; ++i) {
        // the back half of the trunk runs at double width
        const int out_w = (i >= (cfg.cic_blocks + 1) / 2) ? 2 * cfg.cic_width : cfg.cic_width;
        const std::string base = "cic.block" + std::to_string(i);
        conv1.push_back(Conv2dLayer(ps, rng, base + ".conv1", width, out_w, 3, 3, 1, 1, 1, 1));
        bn1.push_back(BatchNorm2dLayer(ps, base + ".bn1", out_w));
        conv2.push_back(Conv2dLayer(ps, rng, base + ".conv2", out_w, out_w, 3, 3, 1, 1, 1, 1));
        bn2.push_back(BatchNorm2dLayer(ps, base + ".bn2", out_w));
        if (out_w != width) {
            proj.push_back(Conv2dLayer(ps, rng, base + ".proj", width, out_w, 1, 1, 1, 1, 0, 0));
            proj_bn.push_back(BatchNorm2dLayer(ps, base + ".proj.bn", out_w));
            has_proj.push_back(true);
        } else {
            proj.push_back(Conv2dLayer());
            proj_bn.push_back(BatchNorm2dLayer());
            has_proj.push_back(false);
        }
        width = out_w;
    }
    head = Linear(ps, rng, "cic.head", width, cfg.n);
}

Var Characterizer::operator()(const Var& fmap) const {
    if (fmap.val().ndim() != 4)
        throw std::runtime_error("characterize: expects (B,C,H,W), got " +
                                 fmap.val().shape_str());
    if (fmap.val().dim(0) < 2)
        throw std::runtime_error("characterize: batch must have b >= 2 items");
    Var h = leaky_relu(stem_bn(stem(fmap)), kSlope);
    for (size_t i = 0; i < conv1.size(); ++i) {
        Var skip = has_proj[i] ? proj_bn[i](proj[i](h)) : h;
        Var y = bn2[i](conv2[i](leaky_relu(bn1[i](conv1[i](h)), kSlope)));
        h = leaky_relu(add(skip, y), kSlope);
    }
    return head(global_avg_pool2d(h));
}

CorrelationTriple correlation_matrices(const Var& r, const Var& r_tilde, real eps_col) {
    CorrelationTriple t;
    t.c1 = cosine_matrix(r, r_tilde, eps_col);
    t.c2 = cosine_matrix(r, r, eps_col);
    t.c3 = cosine_matrix(r_tilde, r_tilde, eps_col);
    return t;
}

Var correlation_loss(const CorrelationTriple& t, real lambda, bool use_c1, bool use_c2,
                     bool use_c3) {
    Tape* tape = t.c1.tape;
    const int n = t.c1.val().dim(0);
    Var loss = tape->constant(Tensor::zeros({1}));
    auto fro_sq = [&](const Var& c) {
        return sum_all(square(sub(c, tape->constant(Tensor::identity(n)))));
    };
    if (use_c1) loss = add(loss, mul_scalar(fro_sq(t.c1), lambda));
    if (use_c2) loss = add(loss, fro_sq(t.c2));
    if (use_c3) loss = add(loss, fro_sq(t.c3));
    return loss;
}

Var consistency_similarity(const Var& r, const Var& r_tilde, real eps_col) {
    return trace_mean(cosine_matrix(r, r_tilde, eps_col));
}

ClusterModel update_clusters(const Tensor& reps, int k, Rng& rng) {
    const int m = reps.dim(0), n = reps.dim(1);
    if (m < k)
        throw std::runtime_error("update_clusters: " + std::to_string(m) + " rows < K = " +
                                 std::to_string(k));
    auto dist_sq = [&](int row, const Tensor& centers, int center) {
        real d = 0.0;
        for (int j = 0; j < n; ++j) {
            const real diff = reps.at(row, j) - centers.at(center, j);
            d += diff * diff;
        }
        return d;
    };

    // farthest-point seeding
    Tensor centers({k, n});
    std::vector<real> best(static_cast<size_t>(m), std::numeric_limits<real>::infinity());
    int first = static_cast<int>(rng.bounded(static_cast<uint64_t>(m)));
    for (int j = 0; j < n; ++j) centers.at(0, j) = reps.at(first, j);
    for (int c = 1; c < k; ++c) {
        int far = 0;
        real far_d = -1.0;
        for (int i = 0; i < m; ++i) {
            best[static_cast<size_t>(i)] =
                std::min(best[static_cast<size_t>(i)], dist_sq(i, centers, c - 1));
            if (best[static_cast<size_t>(i)] > far_d) {
                far_d = best[static_cast<size_t>(i)];
                far = i;
            }
        }
        for (int j = 0; j < n; ++j) centers.at(c, j) = reps.at(far, j);
    }

    std::vector<int> assign(static_cast<size_t>(m), 0);
    for (int iter = 0; iter < 100; ++iter) {
        for (int i = 0; i < m; ++i) {
            real bd = std::numeric_limits<real>::infinity();
            int bc = 0;
            for (int c = 0; c < k; ++c) {
                const real d = dist_sq(i, centers, c);
                if (d < bd) {
                    bd = d;
                    bc = c;
                }
            }
            assign[static_cast<size_t>(i)] = bc;
        }
        Tensor fresh = Tensor::zeros({k, n});
        std::vector<int> count(static_cast<size_t>(k), 0);
        for (int i = 0; i < m; ++i) {
            const int c = assign[static_cast<size_t>(i)];
            ++count[static_cast<size_t>(c)];
            for (int j = 0; j < n; ++j) fresh.at(c, j) += reps.at(i, j);
        }
        real shift = 0.0;
        for (int c = 0; c < k; ++c) {
            if (count[static_cast<size_t>(c)] == 0) {
                // empty cluster keeps its previous center
                for (int j = 0; j < n; ++j) fresh.at(c, j) = centers.at(c, j);
            } else {
                for (int j = 0; j < n; ++j) fresh.at(c, j) /= count[static_cast<size_t>(c)];
            }
            real d = 0.0;
            for (int j = 0; j < n; ++j) {
                const real diff = fresh.at(c, j) - centers.at(c, j);
                d += diff * diff;
            }
            shift = std::max(shift, std::sqrt(d));
        }
        centers = fresh;
        if (shift < 1e-4) break;
    }

    ClusterModel model;
    model.centers = std::move(centers);
    model.fitted = true;
    return model;
}

Var cluster_loss(const Var& r, const ClusterModel& model) {
    if (!model.fitted) throw std::runtime_error("cluster_loss: model not fitted");
    return cluster_dist_sq(r, model.centers);
}

real nearest_center_distance(const Tensor& rep, const ClusterModel& model) {
    if (!model.fitted) throw std::runtime_error("nearest_center_distance: model not fitted");
    const int k = model.centers.dim(0), n = model.centers.dim(1);
    real best = std::numeric_limits<real>::infinity();
    for (int c = 0; c < k; ++c) {
        real d = 0.0;
        for (int j = 0; j < n; ++j) {
            const real diff = rep[j] - model.centers.at(c, j);
            d += diff * diff;
        }
        best = std::min(best, d);
    }
    return std::sqrt(best);
}

}  // namespace cavad
