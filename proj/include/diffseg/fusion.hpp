#pragma once

#include <cmath>

#include "diffseg/data.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

// Softmax over the rater axis, independently at every (pixel, structure).
// Free logits in, convex weights out.
inline expertness_map normalize_expertness(const tensor& logits) {
    const int h = logits.dim(0), w = logits.dim(1);
    const int ks = logits.dim(2), n = logits.dim(3);
    expertness_map m{tensor({h, w, ks, n})};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < ks; ++k) {
                double mx = logits(y, x, k, 0);
                for (int r = 1; r < n; ++r) mx = std::max(mx, logits(y, x, k, r));
                double denom = 0.0;
                for (int r = 0; r < n; ++r) denom += std::exp(logits(y, x, k, r) - mx);
                for (int r = 0; r < n; ++r)
                    m.weights(y, x, k, r) = std::exp(logits(y, x, k, r) - mx) / denom;
            }
    return m;
}

inline expertness_map uniform_expertness(int h, int w, int structures, int raters) {
    expertness_map m{tensor({h, w, structures, raters})};
    m.weights.fill(1.0 / raters);
    return m;
}

// Pixelwise convex combination of the rater masks under the expertness
// weights. The result stays inside the rater hull by construction.
inline fused_label fuse(const tensor& masks, const expertness_map& m,
                        fusion_provenance provenance) {
    const int h = masks.dim(0), w = masks.dim(1);
    const int ks = masks.dim(2), n = masks.dim(3);
    if (m.weights.dim(0) != h || m.weights.dim(1) != w || m.weights.dim(2) != ks ||
        m.weights.dim(3) != n)
        throw shape_error("fuse: expertness " + m.weights.shape_str() + " vs masks " +
                          masks.shape_str());
    fused_label out{tensor({h, w, ks}), provenance};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < ks; ++k) {
                double acc = 0.0;
                for (int r = 0; r < n; ++r) acc += m.weights(y, x, k, r) * masks(y, x, k, r);
                out.values(y, x, k) = acc;
            }
    return out;
}

// Equal-weight fusion; the baseline every optimized ground truth is judged
// against.
inline fused_label majority_vote(const tensor& masks) {
    return fuse(masks, uniform_expertness(masks.dim(0), masks.dim(1), masks.dim(2), masks.dim(3)),
                fusion_provenance::majority_vote);
}

// d(loss)/d(logits) given d(loss)/d(fused). Fusion is linear in the weights
// (d fused / d w_r = mask_r) and the weights come from a per-(pixel,
// structure) softmax, so the Jacobian contracts to
//   dz_r = w_r * (g_r - sum_q w_q g_q),   g_r = dfused * mask_r.
inline tensor fuse_backward_logits(const tensor& masks, const expertness_map& m,
                                   const tensor& dfused) {
    const int h = masks.dim(0), w = masks.dim(1);
    const int ks = masks.dim(2), n = masks.dim(3);
    tensor dlogits({h, w, ks, n});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < ks; ++k) {
                double dot = 0.0;
                for (int r = 0; r < n; ++r)
                    dot += m.weights(y, x, k, r) * dfused(y, x, k) * masks(y, x, k, r);
                for (int r = 0; r < n; ++r) {
                    double g = dfused(y, x, k) * masks(y, x, k, r);
                    dlogits(y, x, k, r) = m.weights(y, x, k, r) * (g - dot);
                }
            }
    return dlogits;
}

// Mean expertness weight per rater over all pixels and structures; the
// summary statistic persisted with every optimized ground truth.
inline std::vector<double> mean_expertness_per_rater(const expertness_map& m) {
    const int h = m.weights.dim(0), w = m.weights.dim(1);
    const int ks = m.weights.dim(2), n = m.weights.dim(3);
    std::vector<double> mean(n, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < ks; ++k)
                for (int r = 0; r < n; ++r) mean[r] += m.weights(y, x, k, r);
    for (auto& v : mean) v /= double(h) * w * ks;
    return mean;
}

}  // namespace diffseg
