#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "diffseg/errors.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg::nn {

using mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// (H, W, C) feature grid <-> (H*W, C) matrix, pixel-major rows.
inline mat to_mat(const tensor& t) {
    mat m(t.dim(0) * t.dim(1), t.dim(2));
    std::copy(t.data(), t.data() + t.size(), m.data());
    return m;
}

inline tensor from_mat(const mat& m, int h, int w) {
    tensor t({h, w, static_cast<int>(m.cols())});
    std::copy(m.data(), m.data() + m.size(), t.data());
    return t;
}

// One learnable matrix with its gradient accumulator and Adam moments.
struct param {
    mat w, g, m, v;

    void init(int rows, int cols) {
        w = mat::Zero(rows, cols);
        g = mat::Zero(rows, cols);
        m = mat::Zero(rows, cols);
        v = mat::Zero(rows, cols);
    }

    void he_normal(int rows, int cols, int fan_in, std::mt19937_64& rng) {
        init(rows, cols);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (long i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    }

    void zero_grad() { g.setZero(); }
};

// ---------------------------------------------------------------------------
// Convolution (im2col), square kernel, zero padding.

struct conv2d {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    param w;  // (k*k*in_c, out_c)
    param b;  // (1, out_c)
    // forward cache
    mat cols;
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;

    void init(int in_channels, int out_channels, int kernel, int stride_, int pad_,
              std::mt19937_64& rng) {
        in_c = in_channels;
        out_c = out_channels;
        k = kernel;
        stride = stride_;
        pad = pad_;
        w.he_normal(k * k * in_c, out_c, k * k * in_c, rng);
        b.init(1, out_c);
    }

    tensor forward(const tensor& x) {
        if (x.dim(2) != in_c)
            throw shape_error("conv2d: expected " + std::to_string(in_c) + " channels, got " +
                              x.shape_str());
        in_h = x.dim(0);
        in_w = x.dim(1);
        out_h = (in_h + 2 * pad - k) / stride + 1;
        out_w = (in_w + 2 * pad - k) / stride + 1;
        cols.setZero(out_h * out_w, k * k * in_c);
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                double* row = cols.data() + static_cast<long>(oy * out_w + ox) * cols.cols();
                for (int ky = 0; ky < k; ++ky) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= in_h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= in_w) continue;
                        const double* src = &x(iy, ix, 0);
                        std::copy(src, src + in_c, row + (ky * k + kx) * in_c);
                    }
                }
            }
        mat out = cols * w.w;
        out.rowwise() += b.w.row(0);
        return from_mat(out, out_h, out_w);
    }

    std::vector<param*> params() { return {&w, &b}; }

    tensor backward(const tensor& dy, bool accumulate = true) {
        mat dout = to_mat(dy);
        if (accumulate) {
            w.g.noalias() += cols.transpose() * dout;
            b.g.row(0) += dout.colwise().sum();
        }
        mat dcols = dout * w.w.transpose();
        tensor dx({in_h, in_w, in_c});
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                const double* row = dcols.data() + static_cast<long>(oy * out_w + ox) * dcols.cols();
                for (int ky = 0; ky < k; ++ky) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= in_h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= in_w) continue;
                        double* dst = &dx(iy, ix, 0);
                        const double* src = row + (ky * k + kx) * in_c;
                        for (int c = 0; c < in_c; ++c) dst[c] += src[c];
                    }
                }
            }
        return dx;
    }
};

// Transposed convolution, kernel 2, stride 2: exact 2x upsampling with no
// kernel overlap.
struct deconv2x2 {
    int in_c = 0, out_c = 0;
    param w;  // (in_c, 4*out_c), inner layout (dy*2+dx)*out_c + co
    param b;  // (1, out_c)
    mat in_cache;
    int in_h = 0, in_w = 0;

    void init(int in_channels, int out_channels, std::mt19937_64& rng) {
        in_c = in_channels;
        out_c = out_channels;
        w.he_normal(in_c, 4 * out_c, in_c, rng);
        b.init(1, out_c);
    }

    tensor forward(const tensor& x) {
        if (x.dim(2) != in_c) throw shape_error("deconv2x2: channel mismatch " + x.shape_str());
        in_h = x.dim(0);
        in_w = x.dim(1);
        in_cache = to_mat(x);
        mat out = in_cache * w.w;  // (H*W, 4*out_c)
        tensor y({2 * in_h, 2 * in_w, out_c});
        for (int iy = 0; iy < in_h; ++iy)
            for (int ix = 0; ix < in_w; ++ix) {
                const double* row = out.data() + static_cast<long>(iy * in_w + ix) * out.cols();
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        double* dst = &y(2 * iy + dy, 2 * ix + dx, 0);
                        const double* src = row + (dy * 2 + dx) * out_c;
                        for (int c = 0; c < out_c; ++c) dst[c] = src[c] + b.w(0, c);
                    }
            }
        return y;
    }

    std::vector<param*> params() { return {&w, &b}; }

    tensor backward(const tensor& dy, bool accumulate = true) {
        mat dout(in_h * in_w, 4 * out_c);
        for (int iy = 0; iy < in_h; ++iy)
            for (int ix = 0; ix < in_w; ++ix) {
                double* row = dout.data() + static_cast<long>(iy * in_w + ix) * dout.cols();
                for (int d = 0; d < 2; ++d)
                    for (int dx = 0; dx < 2; ++dx) {
                        const double* src = &dy(2 * iy + d, 2 * ix + dx, 0);
                        std::copy(src, src + out_c, row + (d * 2 + dx) * out_c);
                    }
            }
        if (accumulate) {
            w.g.noalias() += in_cache.transpose() * dout;
            for (int c = 0; c < out_c; ++c) {
                double s = 0.0;
                for (int pos = 0; pos < 4; ++pos) s += dout.col(pos * out_c + c).sum();
                b.g(0, c) += s;
            }
        }
        mat dx = dout * w.w.transpose();
        return from_mat(dx, in_h, in_w);
    }
};

struct linear {
    param w;  // (in, out)
    param b;  // (1, out)
    mat in_cache;
    bool bias = true;

    void init(int in_dim, int out_dim, std::mt19937_64& rng, bool with_bias = true) {
        bias = with_bias;
        w.he_normal(in_dim, out_dim, in_dim, rng);
        b.init(1, out_dim);
    }

    std::vector<param*> params() {
        if (bias) return {&w, &b};
        return {&w};
    }

    mat forward(const mat& x) {
        in_cache = x;
        mat out = x * w.w;
        if (bias) out.rowwise() += b.w.row(0);
        return out;
    }

    mat backward(const mat& dy, bool accumulate = true) {
        if (accumulate) {
            w.g.noalias() += in_cache.transpose() * dy;
            if (bias) b.g.row(0) += dy.colwise().sum();
        }
        return dy * w.w.transpose();
    }
};

// ---------------------------------------------------------------------------
// Activations (elementwise over tensors or matrices)

struct relu_t {
    tensor cache;
    tensor forward(const tensor& x) {
        cache = x;
        tensor y = x;
        for (long i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
        return y;
    }
    tensor backward(const tensor& dy) const {
        tensor dx = dy;
        for (long i = 0; i < dx.size(); ++i)
            if (cache[i] <= 0.0) dx[i] = 0.0;
        return dx;
    }
};

inline double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad_scalar(double x) {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::acos(-1.0));
    return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

struct gelu_t {
    mat cache;
    mat forward(const mat& x) {
        cache = x;
        mat y = x;
        for (long i = 0; i < y.size(); ++i) y.data()[i] = gelu_scalar(y.data()[i]);
        return y;
    }
    mat backward(const mat& dy) const {
        mat dx = dy;
        for (long i = 0; i < dx.size(); ++i) dx.data()[i] *= gelu_grad_scalar(cache.data()[i]);
        return dx;
    }
};

struct tanh_t {
    mat cache;  // stores output
    mat forward(const mat& x) {
        mat y = x;
        for (long i = 0; i < y.size(); ++i) y.data()[i] = std::tanh(y.data()[i]);
        cache = y;
        return y;
    }
    mat backward(const mat& dy) const {
        mat dx = dy;
        for (long i = 0; i < dx.size(); ++i)
            dx.data()[i] *= 1.0 - cache.data()[i] * cache.data()[i];
        return dx;
    }
};

inline double sigmoid_scalar(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

struct sigmoid_t {
    tensor cache;  // stores output
    tensor forward(const tensor& z) {
        tensor y = z;
        for (long i = 0; i < y.size(); ++i) y[i] = sigmoid_scalar(y[i]);
        cache = y;
        return y;
    }
    tensor backward(const tensor& dy) const {
        tensor dx = dy;
        for (long i = 0; i < dx.size(); ++i) dx[i] *= cache[i] * (1.0 - cache[i]);
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Pooling / resampling

struct global_avg_pool {
    int h = 0, w = 0, c = 0;
    mat forward(const tensor& x) {
        h = x.dim(0);
        w = x.dim(1);
        c = x.dim(2);
        mat out = mat::Zero(1, c);
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                for (int ch = 0; ch < c; ++ch) out(0, ch) += x(y, xx, ch);
        out /= double(h) * w;
        return out;
    }
    tensor backward(const mat& dy) const {
        tensor dx({h, w, c});
        double scale = 1.0 / (double(h) * w);
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                for (int ch = 0; ch < c; ++ch) dx(y, xx, ch) = dy(0, ch) * scale;
        return dx;
    }
};

inline tensor upsample2_nearest(const tensor& x) {
    tensor y({2 * x.dim(0), 2 * x.dim(1), x.dim(2)});
    for (int iy = 0; iy < y.dim(0); ++iy)
        for (int ix = 0; ix < y.dim(1); ++ix)
            for (int c = 0; c < x.dim(2); ++c) y(iy, ix, c) = x(iy / 2, ix / 2, c);
    return y;
}

inline tensor upsample2_nearest_backward(const tensor& dy) {
    tensor dx({dy.dim(0) / 2, dy.dim(1) / 2, dy.dim(2)});
    for (int iy = 0; iy < dy.dim(0); ++iy)
        for (int ix = 0; ix < dy.dim(1); ++ix)
            for (int c = 0; c < dy.dim(2); ++c) dx(iy / 2, ix / 2, c) += dy(iy, ix, c);
    return dx;
}

// ---------------------------------------------------------------------------
// Residual block: 3x3 conv (given stride) + relu, 3x3 conv stride 1, plus a
// 1x1 projection shortcut whenever geometry or width changes, relu after the
// sum. With stride 2 this halves the spatial grid.

struct residual_block {
    conv2d main1, main2, skip;
    relu_t act1, act2;
    bool projected = false;

    void init(int in_c, int out_c, int stride, std::mt19937_64& rng) {
        main1.init(in_c, out_c, 3, stride, 1, rng);
        main2.init(out_c, out_c, 3, 1, 1, rng);
        projected = (stride != 1 || in_c != out_c);
        if (projected) skip.init(in_c, out_c, 1, stride, 0, rng);
    }

    std::vector<param*> params() {
        std::vector<param*> ps = {&main1.w, &main1.b, &main2.w, &main2.b};
        if (projected) {
            ps.push_back(&skip.w);
            ps.push_back(&skip.b);
        }
        return ps;
    }

    tensor forward(const tensor& x) {
        tensor h = main2.forward(act1.forward(main1.forward(x)));
        tensor s = projected ? skip.forward(x) : x;
        h += s;
        return act2.forward(h);
    }

    tensor backward(const tensor& dy, bool accumulate = true) {
        tensor dsum = act2.backward(dy);
        tensor dx = main1.backward(act1.backward(main2.backward(dsum, accumulate)), accumulate);
        if (projected)
            dx += skip.backward(dsum, accumulate);
        else
            dx += dsum;
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Losses

// Numerically stable binary cross-entropy on a logit. d(loss)/dz = sigmoid(z) - y.
inline double bce_with_logits(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

inline double bce_with_logits_grad(double z, double y) { return sigmoid_scalar(z) - y; }

// Pixelwise BCE on probabilities in (0,1) against a soft target in [0,1];
// mean over all entries. Returns loss; writes d(loss)/d(prob) into dprob.
inline double bce_mean(const tensor& prob, const tensor& target, tensor& dprob,
                       double eps = 1e-7) {
    if (!prob.same_shape(target))
        throw shape_error("bce_mean: shape mismatch " + prob.shape_str() + " vs " +
                          target.shape_str());
    dprob = tensor(prob.shape());
    double total = 0.0;
    double inv_n = 1.0 / prob.size();
    for (long i = 0; i < prob.size(); ++i) {
        double p = std::clamp(prob[i], eps, 1.0 - eps);
        double t = target[i];
        total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
        dprob[i] = (p - t) / (p * (1.0 - p)) * inv_n;
    }
    return total * inv_n;
}

}  // namespace diffseg::nn
