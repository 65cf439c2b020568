#pragma once

#include <cstddef>
#include <vector>

#include "terraseg/common.hpp"

namespace terraseg {

// Dense row-major f64 tensor, logically (n, h, w, c) with unused dims = 1.
// Dense layers treat it as (n, c); conv layers as channels-last images.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int h, int w, int c)
        : n_(n), h_(h), w_(w), c_(c),
          data_(static_cast<size_t>(n) * h * w * c, 0.0) {
        if (n < 0 || h < 0 || w < 0 || c < 0) throw validation_error("negative tensor dim");
    }
    static Tensor matrix(int rows, int cols) { return Tensor(rows, 1, 1, cols); }
    static Tensor vec(int len) { return Tensor(1, 1, 1, len); }

    int n() const { return n_; }
    int h() const { return h_; }
    int w() const { return w_; }
    int c() const { return c_; }
    size_t size() const { return data_.size(); }

    double& at(int n, int h, int w, int c) {
        return data_[((static_cast<size_t>(n) * h_ + h) * w_ + w) * c_ + c];
    }
    double at(int n, int h, int w, int c) const {
        return data_[((static_cast<size_t>(n) * h_ + h) * w_ + w) * c_ + c];
    }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    // Pointer to the c-length slot at (n, h, w).
    double* slot(int n, int h, int w) {
        return data_.data() + ((static_cast<size_t>(n) * h_ + h) * w_ + w) * c_;
    }
    const double* slot(int n, int h, int w) const {
        return data_.data() + ((static_cast<size_t>(n) * h_ + h) * w_ + w) * c_;
    }

    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }
    void fill(double v) { data_.assign(data_.size(), v); }

private:
    int n_ = 0, h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> data_;
};

} // namespace terraseg
