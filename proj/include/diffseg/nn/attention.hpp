#pragma once

#include <cmath>
#include <vector>

#include "diffseg/nn/ops.hpp"

namespace diffseg::nn {

// ---------------------------------------------------------------------------
// Patch embedding: (H, W, C) -> (N, D) with N = (H/P)*(W/P), D = P*P*C.
// Patches are row-major over the patch grid; within a patch the layout is
// (py, px, channel), channel fastest. unpatchify is the exact inverse.

inline mat patchify(const tensor& x, int p) {
    int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (p <= 0 || h % p != 0 || w % p != 0)
        throw shape_error("patchify: patch size " + std::to_string(p) + " does not divide " +
                          x.shape_str());
    int gh = h / p, gw = w / p;
    mat out(gh * gw, p * p * c);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            double* row = out.data() + static_cast<long>(gy * gw + gx) * out.cols();
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px) {
                    const double* src = &x(gy * p + py, gx * p + px, 0);
                    std::copy(src, src + c, row + (py * p + px) * c);
                }
        }
    return out;
}

inline tensor unpatchify(const mat& seq, int h, int w, int c, int p) {
    int gh = h / p, gw = w / p;
    if (seq.rows() != gh * gw || seq.cols() != p * p * c)
        throw shape_error("unpatchify: sequence shape does not match target geometry");
    tensor x({h, w, c});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            const double* row = seq.data() + static_cast<long>(gy * gw + gx) * seq.cols();
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px) {
                    double* dst = &x(gy * p + py, gx * p + px, 0);
                    std::copy(row + (py * p + px) * c, row + (py * p + px + 1) * c, dst);
                }
        }
    return x;
}

// Fixed 2-D sinusoidal positional encoding over the patch grid, one row per
// patch, D = P*P*C columns. The first half of each row encodes the patch row
// index, the second half the patch column index, at geometrically spaced
// frequencies. Values are bounded by 1 in magnitude, the map is purely
// geometric (two feature grids with the same H, W, C, P share the identical
// table), and distinct grid positions get distinct rows: the base frequency
// is 1, and sin/cos of distinct integers never coincide because an integer is
// never an exact multiple of pi.
inline mat positional_encoding(int h, int w, int c, int p) {
    if (p <= 0 || h % p != 0 || w % p != 0)
        throw shape_error("positional_encoding: patch size does not divide feature grid");
    int gh = h / p, gw = w / p;
    int d = p * p * c;
    if (d < 2) throw shape_error("positional_encoding: embedding width must be at least 2");
    mat e(gh * gw, d);
    int half = d / 2;
    auto fill_axis = [](double* row, int len, int pos) {
        for (int i = 0; i < len; ++i) {
            double freq = std::pow(10000.0, -2.0 * (i / 2) / len);
            double v = pos * freq;
            row[i] = (i % 2 == 0) ? std::sin(v) : std::cos(v);
        }
    };
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            double* row = e.data() + static_cast<long>(gy * gw + gx) * d;
            fill_axis(row, half, gy);
            fill_axis(row + half, d - half, gx);
        }
    return e;
}

// ---------------------------------------------------------------------------
// Multi-head cross attention. Queries, keys and values come from three
// separate sequences; the affinity is softmax(q k^T / sqrt(D)) with D the full
// embedding width (not the per-head width). Head outputs are concatenated and
// merged by an output projection. All projections are bias-free.

struct mha {
    int d = 0, heads = 1, dh = 0;
    param wq, wk, wv, wo;

    // forward cache
    mat xq_c, xk_c, xv_c;     // inputs
    mat q_c, k_c, v_c, o_c;   // projections and concatenated head outputs
    std::vector<mat> affinity;  // per-head (Nq, Nk) softmax rows

    void init(int dim, int n_heads, std::mt19937_64& rng) {
        if (n_heads <= 0 || dim % n_heads != 0)
            throw shape_error("mha: head count must divide embedding width");
        d = dim;
        heads = n_heads;
        dh = d / heads;
        wq.he_normal(d, d, d, rng);
        wk.he_normal(d, d, d, rng);
        wv.he_normal(d, d, d, rng);
        wo.he_normal(d, d, d, rng);
    }

    std::vector<param*> params() { return {&wq, &wk, &wv, &wo}; }

    mat forward(const mat& xq, const mat& xk, const mat& xv) {
        if (xq.cols() != d || xk.cols() != d || xv.cols() != d)
            throw shape_error("mha: embedding width mismatch");
        if (xk.rows() != xv.rows()) throw shape_error("mha: key/value length mismatch");
        xq_c = xq;
        xk_c = xk;
        xv_c = xv;
        q_c = xq * wq.w;
        k_c = xk * wk.w;
        v_c = xv * wv.w;
        double scale = 1.0 / std::sqrt(static_cast<double>(d));
        o_c.setZero(xq.rows(), d);
        affinity.assign(heads, mat());
        for (int hh = 0; hh < heads; ++hh) {
            mat s = q_c.middleCols(hh * dh, dh) * k_c.middleCols(hh * dh, dh).transpose();
            s *= scale;
            for (long r = 0; r < s.rows(); ++r) {
                double mx = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - mx).exp();
                s.row(r) /= s.row(r).sum();
            }
            affinity[hh] = s;
            o_c.middleCols(hh * dh, dh) = s * v_c.middleCols(hh * dh, dh);
        }
        return o_c * wo.w;
    }

    void backward(const mat& dy, mat& dxq, mat& dxk, mat& dxv, bool accumulate = true) {
        if (accumulate) wo.g.noalias() += o_c.transpose() * dy;
        mat dO = dy * wo.w.transpose();
        mat dq = mat::Zero(q_c.rows(), d);
        mat dk = mat::Zero(k_c.rows(), d);
        mat dv = mat::Zero(v_c.rows(), d);
        double scale = 1.0 / std::sqrt(static_cast<double>(d));
        for (int hh = 0; hh < heads; ++hh) {
            const mat& a = affinity[hh];
            mat dOh = dO.middleCols(hh * dh, dh);
            mat da = dOh * v_c.middleCols(hh * dh, dh).transpose();
            dv.middleCols(hh * dh, dh) = a.transpose() * dOh;
            // softmax backward per row: ds = a .* (da - rowsum(da .* a))
            mat ds = a;
            for (long r = 0; r < a.rows(); ++r) {
                double dot = (da.row(r).array() * a.row(r).array()).sum();
                ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
            }
            ds *= scale;
            dq.middleCols(hh * dh, dh) = ds * k_c.middleCols(hh * dh, dh);
            dk.middleCols(hh * dh, dh) = ds.transpose() * q_c.middleCols(hh * dh, dh);
        }
        if (accumulate) {
            wq.g.noalias() += xq_c.transpose() * dq;
            wk.g.noalias() += xk_c.transpose() * dk;
            wv.g.noalias() += xv_c.transpose() * dv;
        }
        dxq = dq * wq.w.transpose();
        dxk = dk * wk.w.transpose();
        dxv = dv * wv.w.transpose();
    }
};

// Two-layer feed-forward: gelu(x W1) W2, no biases.
struct mlp2 {
    param w1, w2;
    gelu_t act;
    mat in_cache, hid_cache;

    void init(int d_in, int d_hidden, int d_out, std::mt19937_64& rng) {
        w1.he_normal(d_in, d_hidden, d_in, rng);
        w2.he_normal(d_hidden, d_out, d_hidden, rng);
    }

    std::vector<param*> params() { return {&w1, &w2}; }

    mat forward(const mat& x) {
        in_cache = x;
        hid_cache = act.forward(x * w1.w);  // activated hidden; act caches pre-activation
        return hid_cache * w2.w;
    }

    mat backward(const mat& dy, bool accumulate = true) {
        if (accumulate) w2.g.noalias() += hid_cache.transpose() * dy;
        mat dh = act.backward(dy * w2.w.transpose());
        if (accumulate) w1.g.noalias() += in_cache.transpose() * dh;
        return dh * w1.w.transpose();
    }
};

}  // namespace diffseg::nn
