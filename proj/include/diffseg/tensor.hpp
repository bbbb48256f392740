#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "diffseg/errors.hpp"

namespace diffseg {

// Dense row-major double tensor, rank 1..4. The last axis is fastest.
//
// Axis conventions used across the library:
//   images            (h, w, c)
//   rater masks       (h, w, K, n)
//   expertness maps   (h, w, K, n)
//   fused labels      (h, w, K)
//   network features  (H, W, C)
//   patch sequences   (N, D)
class tensor {
public:
    tensor() = default;

    explicit tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        for (int d : shape_)
            if (d <= 0) throw shape_error("tensor: non-positive dimension");
        v_.assign(static_cast<size_t>(count(shape_)), 0.0);
    }

    static tensor zeros(std::vector<int> shape) { return tensor(std::move(shape)); }

    static tensor full(std::vector<int> shape, double value) {
        tensor t(std::move(shape));
        std::fill(t.v_.begin(), t.v_.end(), value);
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    long size() const { return static_cast<long>(v_.size()); }
    bool empty() const { return v_.empty(); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    double& operator[](long i) { return v_[static_cast<size_t>(i)]; }
    double operator[](long i) const { return v_[static_cast<size_t>(i)]; }

    double& operator()(int i) { return v_[static_cast<size_t>(i)]; }
    const double& operator()(int i) const { return v_[static_cast<size_t>(i)]; }

    double& operator()(int i, int j) {
        return v_[static_cast<size_t>(i) * shape_[1] + j];
    }
    const double& operator()(int i, int j) const {
        return v_[static_cast<size_t>(i) * shape_[1] + j];
    }

    double& operator()(int i, int j, int k) {
        return v_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    const double& operator()(int i, int j, int k) const {
        return v_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    double& operator()(int i, int j, int k, int l) {
        return v_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    const double& operator()(int i, int j, int k, int l) const {
        return v_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    void fill(double value) { std::fill(v_.begin(), v_.end(), value); }

    tensor& operator+=(const tensor& o) {
        require_same_shape(o);
        for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
        return *this;
    }
    tensor& operator-=(const tensor& o) {
        require_same_shape(o);
        for (size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
        return *this;
    }
    tensor& operator*=(double s) {
        for (double& x : v_) x *= s;
        return *this;
    }

    bool same_shape(const tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    double min() const { return v_.empty() ? 0.0 : *std::min_element(v_.begin(), v_.end()); }
    double max() const { return v_.empty() ? 0.0 : *std::max_element(v_.begin(), v_.end()); }

    double sum() const { return std::accumulate(v_.begin(), v_.end(), 0.0); }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

    static long count(const std::vector<int>& shape) {
        long n = 1;
        for (int d : shape) n *= d;
        return n;
    }

private:
    void require_same_shape(const tensor& o) const {
        if (shape_ != o.shape_)
            throw shape_error("tensor: shape mismatch " + shape_str() + " vs " + o.shape_str());
    }

    std::vector<int> shape_;
    std::vector<double> v_;
};

inline bool operator==(const tensor& a, const tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (long i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

// Concatenate two (h, w, c) grids along the channel axis.
inline tensor concat_channels(const tensor& a, const tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1))
        throw shape_error("concat_channels: incompatible shapes " + a.shape_str() + " vs " +
                          b.shape_str());
    int h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
    tensor out({h, w, ca + cb});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::copy(&a(y, x, 0), &a(y, x, 0) + ca, &out(y, x, 0));
            std::copy(&b(y, x, 0), &b(y, x, 0) + cb, &out(y, x, ca));
        }
    return out;
}

inline double max_abs_diff(const tensor& a, const tensor& b) {
    if (a.shape() != b.shape())
        throw shape_error("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (long i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace diffseg
