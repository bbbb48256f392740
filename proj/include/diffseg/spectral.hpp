#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>

#include "diffseg/tensor.hpp"

namespace diffseg {

using mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using cmat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline const mat& dct_matrix(int n) {
    static std::map<int, mat> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    mat c(n, n);
    const double pi = std::acos(-1.0);
    for (int k = 0; k < n; ++k) {
        double s = (k == 0) ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (int i = 0; i < n; ++i)
            c(k, i) = s * std::cos(pi * (2.0 * i + 1.0) * k / (2.0 * n));
    }
    return cache.emplace(n, std::move(c)).first->second;
}

inline const cmat& dft_matrix(int n) {
    static std::map<int, cmat> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    cmat f(n, n);
    const double pi = std::acos(-1.0);
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i) {
            double ang = -2.0 * pi * k * i / n;
            f(k, i) = std::complex<double>(std::cos(ang), std::sin(ang));
        }
    return cache.emplace(n, std::move(f)).first->second;
}

}  // namespace detail

// Orthonormal 2-D cosine transform: real spectrum of a real (h, w) grid.
// idct2(dct2(x)) == x, and both transforms are linear, so the adjoint of
// idct2 is dct2 (used when backpropagating through spectral parameters).
inline mat dct2(const Eigen::Ref<const mat>& x) {
    const mat& ch = detail::dct_matrix(static_cast<int>(x.rows()));
    const mat& cw = detail::dct_matrix(static_cast<int>(x.cols()));
    return ch * x * cw.transpose();
}

inline mat idct2(const Eigen::Ref<const mat>& spec) {
    const mat& ch = detail::dct_matrix(static_cast<int>(spec.rows()));
    const mat& cw = detail::dct_matrix(static_cast<int>(spec.cols()));
    return ch.transpose() * spec * cw;
}

// |DFT|^2 of an (h, w) grid, separable evaluation.
inline mat dft2_power(const Eigen::Ref<const mat>& x) {
    const cmat& fh = detail::dft_matrix(static_cast<int>(x.rows()));
    const cmat& fw = detail::dft_matrix(static_cast<int>(x.cols()));
    cmat spec = fh * x.cast<std::complex<double>>() * fw.transpose();
    return spec.cwiseAbs2();
}

// Radial frequency of DFT bin (u, v) in cycles/sample, in [0, ~0.707].
inline double dft_radial_freq(int u, int v, int h, int w) {
    double fu = static_cast<double>(u <= h / 2 ? u : h - u) / h;
    double fv = static_cast<double>(v <= w / 2 ? v : w - v) / w;
    return std::sqrt(fu * fu + fv * fv);
}

}  // namespace diffseg
