#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cavad {

using real = double;

// Dense row-major tensor of doubles, up to 5 dimensions.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, real v) {
        Tensor t(std::move(shape));
        t.fill(v);
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<real> data) {
        Tensor t;
        if (count(shape) != static_cast<long>(data.size()))
            throw std::runtime_error("Tensor::from: shape/data size mismatch");
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    static Tensor identity(int n) {
        Tensor t({n, n});
        for (int i = 0; i < n; ++i) t.data_[static_cast<size_t>(i) * n + i] = 1.0;
        return t;
    }

    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    long numel() const { return static_cast<long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }

    real& operator[](long i) { return data_[static_cast<size_t>(i)]; }
    real operator[](long i) const { return data_[static_cast<size_t>(i)]; }

    // Index helpers for the common ranks.
    real& at(int a, int b) { return data_[idx2(a, b)]; }
    real at(int a, int b) const { return data_[idx2(a, b)]; }
    real& at(int a, int b, int c) { return data_[idx3(a, b, c)]; }
    real at(int a, int b, int c) const { return data_[idx3(a, b, c)]; }
    real& at(int a, int b, int c, int d) { return data_[idx4(a, b, c, d)]; }
    real at(int a, int b, int c, int d) const { return data_[idx4(a, b, c, d)]; }
    real& at(int a, int b, int c, int d, int e) { return data_[idx5(a, b, c, d, e)]; }
    real at(int a, int b, int c, int d, int e) const { return data_[idx5(a, b, c, d, e)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(real v) {
        for (auto& x : data_) x = v;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

    static long count(const std::vector<int>& shape) {
        long n = 1;
        for (int d : shape) {
            if (d < 0) throw std::runtime_error("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

private:
    size_t idx2(int a, int b) const { return static_cast<size_t>(a) * shape_[1] + b; }
    size_t idx3(int a, int b, int c) const {
        return (static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c;
    }
    size_t idx4(int a, int b, int c, int d) const {
        return ((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
    }
    size_t idx5(int a, int b, int c, int d, int e) const {
        return (((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d) *
                   shape_[4] +
               e;
    }

    std::vector<int> shape_;
    std::vector<real> data_;
};

}  // namespace cavad
