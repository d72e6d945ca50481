#include "cavad/memory.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cavad {

namespace {
using CMatMap =
    Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMap = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
}  // namespace

void MemoryPool::init(int c, int n, int k, Rng& rng) {
    if (k < 1 || k > n) throw std::runtime_error("memory: k must be in [1, N]");
    m = Tensor({c, n});
    for (long i = 0; i < m.numel(); ++i) m[i] = rng.gauss();
    top_k = k;
    normalize_columns();
}

void MemoryPool::normalize_columns() {
    const int c = m.dim(0), n = m.dim(1);
    for (int j = 0; j < n; ++j) {
        real s = 0.0;
        for (int i = 0; i < c; ++i) s += m.at(i, j) * m.at(i, j);
        s = std::sqrt(s);
        if (s < 1e-12) {
            // a dead item re-seeds as a unit basis direction
            for (int i = 0; i < c; ++i) m.at(i, j) = (i == j % c) ? 1.0 : 0.0;
        } else {
            for (int i = 0; i < c; ++i) m.at(i, j) /= s;
        }
    }
}

void MemoryPool::write(const Tensor& features) {
    const int c = m.dim(0), n = m.dim(1);
    if (features.ndim() != 2 || features.dim(0) != c)
        throw std::runtime_error("memory write: features must be C x Q, got " +
                                 features.shape_str());
    const int q = features.dim(1);
    const real inv = 1.0 / std::sqrt(static_cast<real>(c));

    // scores(p, j) = <f_p, m_j> / sqrt(C); softmax over the query axis p
    Tensor scores({q, n});
    MatMap(scores.data(), q, n).noalias() =
        CMatMap(features.data(), c, q).transpose() * CMatMap(m.data(), c, n) * inv;
    for (int j = 0; j < n; ++j) {
        real mx = -std::numeric_limits<real>::infinity();
        for (int p = 0; p < q; ++p) mx = std::max(mx, scores.at(p, j));
        real z = 0.0;
        for (int p = 0; p < q; ++p) {
            scores.at(p, j) = std::exp(scores.at(p, j) - mx);
            z += scores.at(p, j);
        }
        for (int p = 0; p < q; ++p) scores.at(p, j) /= z;
    }
    MatMap(m.data(), c, n).noalias() +=
        CMatMap(features.data(), c, q) * CMatMap(scores.data(), q, n);
    normalize_columns();
}

Var MemoryPool::read(const Var& queries) const { return memory_read(m, queries, top_k); }

Var MemoryPool::compact_loss(const Var& queries) const { return memory_compact(m, queries); }

Var MemoryPool::separate_loss(const Var& queries, real margin) const {
    return memory_separate(m, queries, margin);
}

Tensor MemoryPool::read_weights(const Tensor& queries) const {
    const int c = m.dim(0), n = m.dim(1);
    if (queries.ndim() != 2 || queries.dim(0) != c)
        throw std::runtime_error("memory read_weights: queries must be C x Q");
    const int q = queries.dim(1);
    const real inv = 1.0 / std::sqrt(static_cast<real>(c));
    Tensor w({n, q});
    std::vector<real> s(static_cast<size_t>(n));
    for (int p = 0; p < q; ++p) {
        for (int j = 0; j < n; ++j) {
            real dot = 0.0;
            for (int i = 0; i < c; ++i) dot += m.at(i, j) * queries.at(i, p);
            s[static_cast<size_t>(j)] = dot * inv;
        }
        std::vector<int> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s[a] > s[b]; });
        idx.resize(static_cast<size_t>(top_k));
        real mx = -std::numeric_limits<real>::infinity();
        for (int id : idx) mx = std::max(mx, s[static_cast<size_t>(id)]);
        real z = 0.0;
        for (int id : idx) z += std::exp(s[static_cast<size_t>(id)] - mx);
        for (int id : idx) w.at(id, p) = std::exp(s[static_cast<size_t>(id)] - mx) / z;
    }
    return w;
}

}  // namespace cavad
