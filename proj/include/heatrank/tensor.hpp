#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "heatrank/error.hpp"

namespace heatrank {

// Dense row-major double tensor. Images are [C,H,W]; batches are [N,C,H,W].
// All numerics in this artifact run in double precision; float32 only
// appears at the file-format boundary.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        size_t n = 1;
        for (int d : shape_) {
            if (d <= 0) throw InvalidArgument("tensor dimensions must be positive");
            n *= static_cast<size_t>(d);
        }
        v_.assign(n, 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> values)
        : shape_(std::move(shape)), v_(std::move(values)) {
        size_t n = 1;
        for (int d : shape_) n *= static_cast<size_t>(d);
        if (n != v_.size()) throw InvalidArgument("tensor value count does not match shape");
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    double& operator[](size_t i) { return v_[i]; }
    double operator[](size_t i) const { return v_[i]; }

    // [C,H,W] accessors.
    double& at(int c, int y, int x) { return v_[idx3(c, y, x)]; }
    double at(int c, int y, int x) const { return v_[idx3(c, y, x)]; }

    // [N,C,H,W] accessors.
    double& at(int n, int c, int y, int x) { return v_[idx4(n, c, y, x)]; }
    double at(int n, int c, int y, int x) const { return v_[idx4(n, c, y, x)]; }

    size_t idx3(int c, int y, int x) const {
        return (static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x;
    }
    size_t idx4(int n, int c, int y, int x) const {
        return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
    }

    void fill(double v) { std::fill(v_.begin(), v_.end(), v); }

    void reshape(std::vector<int> shape) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        if (n != v_.size()) throw InvalidArgument("reshape changes element count");
        shape_ = std::move(shape);
    }

    bool all_finite() const {
        for (double x : v_) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    std::vector<int> shape_;
    std::vector<double> v_;
};

}  // namespace heatrank
