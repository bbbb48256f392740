#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffseg/errors.hpp"
#include "diffseg/spectral.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

inline const std::vector<double>& default_dice_thresholds() {
    static const std::vector<double> t{0.1, 0.3, 0.5, 0.7, 0.9};
    return t;
}

// Soft Dice: binarize prediction and soft ground truth at each threshold
// (strictly greater-than), compute 2|A∩B|/(|A|+|B|), average over thresholds.
// A threshold where both binarized sets are empty contributes 1.0.
inline double soft_dice(const tensor& pred, const tensor& gt,
                        const std::vector<double>& thresholds = default_dice_thresholds()) {
    if (!pred.same_shape(gt))
        throw shape_error("soft_dice: shape mismatch " + pred.shape_str() + " vs " + gt.shape_str());
    if (thresholds.empty()) throw validation_error("soft_dice: empty threshold list");
    for (double t : thresholds)
        if (!(t > 0.0 && t < 1.0)) throw validation_error("soft_dice: threshold outside (0,1)");

    double acc = 0.0;
    for (double t : thresholds) {
        long inter = 0, a = 0, b = 0;
        for (long i = 0; i < pred.size(); ++i) {
            bool pa = pred[i] > t;
            bool pb = gt[i] > t;
            a += pa;
            b += pb;
            inter += (pa && pb);
        }
        acc += (a + b == 0) ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
    }
    return acc / static_cast<double>(thresholds.size());
}

// Mann-Whitney AUC via average ranks; ties between a positive and a negative
// count 0.5. Equals the exhaustive pair count exactly.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw shape_error("auc: scores and labels differ in length");
    long pos = 0, neg = 0;
    for (int y : labels) {
        if (y == 1)
            ++pos;
        else if (y == 0)
            ++neg;
        else
            throw validation_error("auc: labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0)
        throw metric_error("auc: undefined for single-class labels");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mean_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += mean_rank;
        i = j + 1;
    }
    double p = static_cast<double>(pos);
    double n = static_cast<double>(neg);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

// Vertical cup-to-disc ratio: span of rows with any foreground in the
// binarized cup over the same span for the disc. Empty cup gives 0; the
// reported value is clipped to 1.5.
inline double vcdr(const tensor& cup, const tensor& disc, double binarize_threshold) {
    if (!cup.same_shape(disc))
        throw shape_error("vcdr: shape mismatch " + cup.shape_str() + " vs " + disc.shape_str());
    if (cup.rank() != 2) throw shape_error("vcdr: expected (h,w) grids");
    const int h = cup.dim(0), w = cup.dim(1);

    auto row_span = [&](const tensor& m) -> int {
        int first = -1, last = -1;
        for (int y = 0; y < h; ++y) {
            bool any = false;
            for (int x = 0; x < w; ++x)
                if (m(y, x) > binarize_threshold) {
                    any = true;
                    break;
                }
            if (any) {
                if (first < 0) first = y;
                last = y;
            }
        }
        return first < 0 ? 0 : last - first + 1;
    };

    int disc_span = row_span(disc);
    if (disc_span == 0) throw metric_error("vcdr: undefined, disc has no foreground");
    int cup_span = row_span(cup);
    if (cup_span == 0) return 0.0;
    return std::min(1.5, static_cast<double>(cup_span) / static_cast<double>(disc_span));
}

// Fraction of spectral energy above cutoff_fraction * Nyquist, computed on
// the mean-subtracted map. A constant map has no non-DC energy and reports 0.
inline double high_freq_energy(const tensor& map, double cutoff_fraction) {
    if (map.rank() != 2) throw shape_error("high_freq_energy: expected (h,w) grid");
    const int h = map.dim(0), w = map.dim(1);
    if (h < 4 || w < 4) throw validation_error("high_freq_energy: grid smaller than 4x4");
    if (!(cutoff_fraction > 0.0 && cutoff_fraction < 1.0))
        throw validation_error("high_freq_energy: cutoff_fraction outside (0,1)");

    double mean = map.sum() / static_cast<double>(map.size());
    mat x(h, w);
    double amp = 0.0;
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            x(y, xx) = map(y, xx) - mean;
            amp = std::max(amp, std::abs(x(y, xx)));
        }
    // constant to machine precision: no non-DC energy
    if (amp <= 1e-12 * std::max(1.0, std::abs(mean))) return 0.0;

    mat power = dft2_power(x);
    const double nyquist = 0.5;
    const double cut = cutoff_fraction * nyquist;
    double total = 0.0, high = 0.0;
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            total += power(u, v);
            if (dft_radial_freq(u, v, h, w) > cut) high += power(u, v);
        }
    if (total <= 1e-300) return 0.0;
    return high / total;
}

struct metric_report {
    std::vector<double> dice_per_structure;
    std::optional<double> auc_value;
    std::vector<double> vcdr_values;
    std::optional<double> high_freq_fraction;
    int sample_count = 0;

    std::vector<std::pair<std::string, std::string>> to_kv() const {
        auto fmt = [](double v) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        std::vector<std::pair<std::string, std::string>> kv;
        kv.emplace_back("sample_count", std::to_string(sample_count));
        for (size_t k = 0; k < dice_per_structure.size(); ++k)
            kv.emplace_back("dice.s" + std::to_string(k), fmt(dice_per_structure[k]));
        if (auc_value) kv.emplace_back("auc", fmt(*auc_value));
        for (size_t i = 0; i < vcdr_values.size(); ++i)
            kv.emplace_back("vcdr." + std::to_string(i), fmt(vcdr_values[i]));
        if (high_freq_fraction) kv.emplace_back("high_freq_fraction", fmt(*high_freq_fraction));
        return kv;
    }
};

}  // namespace diffseg
