#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "diffseg/data.hpp"
#include "diffseg/dfgt.hpp"
#include "diffseg/diagnet.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/fusion.hpp"
#include "diffseg/metrics.hpp"

namespace diffseg {

// ---------------------------------------------------------------------------
// Evaluation harness. All aggregation is per-image first, then mean over the
// split; every emitted report states this in its header. Evaluation never
// mutates models or data beyond forward-pass caches.

// Per-structure, per-rater mean soft-Dice of predictions against each rater's
// own annotation.
struct rater_dice_table {
    std::vector<std::vector<double>> mean_dice;  // [structure][rater]

    int structures() const { return static_cast<int>(mean_dice.size()); }
    int raters() const { return mean_dice.empty() ? 0 : static_cast<int>(mean_dice[0].size()); }
};

inline void check_alignment(const std::vector<tensor>& preds, const dataset& data) {
    if (preds.size() != data.samples.size())
        throw validation_error("eval: " + std::to_string(preds.size()) + " predictions for " +
                               std::to_string(data.samples.size()) + " samples");
    for (size_t i = 0; i < preds.size(); ++i) {
        const auto& s = data.samples[i];
        if (preds[i].rank() != 3 || preds[i].dim(0) != s.h() || preds[i].dim(1) != s.w() ||
            preds[i].dim(2) != s.structures())
            throw validation_error("eval: prediction for sample '" + s.sample_id +
                                   "' has shape " + preds[i].shape_str());
    }
}

inline rater_dice_table eval_against_raters(
    const std::vector<tensor>& preds, const dataset& data,
    const std::vector<double>& thresholds = default_dice_thresholds()) {
    check_alignment(preds, data);
    if (data.empty()) throw validation_error("eval_against_raters: empty dataset");
    int K = data.structures(), n = data.n();
    rater_dice_table table;
    table.mean_dice.assign(static_cast<size_t>(K), std::vector<double>(static_cast<size_t>(n)));
    for (size_t i = 0; i < preds.size(); ++i)
        for (int k = 0; k < K; ++k) {
            tensor plane = fused_plane(preds[i], k);
            for (int j = 0; j < n; ++j)
                table.mean_dice[static_cast<size_t>(k)][static_cast<size_t>(j)] +=
                    soft_dice(plane, mask_plane(data.samples[i].masks, k, j), thresholds);
        }
    double inv = 1.0 / static_cast<double>(preds.size());
    for (auto& row : table.mean_dice)
        for (double& v : row) v *= inv;
    return table;
}

// Mean soft-Dice of predictions against the fused labels the model was
// trained toward, matched by sample id.
inline double eval_self_fusion(const std::vector<tensor>& preds, const dfgt_dataset& dfgt,
                               const dataset& data,
                               const std::vector<double>& thresholds = default_dice_thresholds()) {
    check_alignment(preds, data);
    if (data.empty()) throw validation_error("eval_self_fusion: empty dataset");
    double total = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        const dfgt_record* rec = dfgt.find(data.samples[i].sample_id);
        if (!rec)
            throw validation_error("eval_self_fusion: no fused label for sample '" +
                                   data.samples[i].sample_id + "'");
        total += soft_dice(preds[i], rec->fused.values, thresholds);
    }
    return total / static_cast<double>(preds.size());
}

// AUC of the frozen classifier's probability when shown each image together
// with its predicted mask.
inline double eval_diagnosis(const std::vector<tensor>& preds, const dataset& data,
                             diagnosis_net& net) {
    check_alignment(preds, data);
    if (!net.frozen) throw validation_error("eval_diagnosis: net must be frozen");
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(preds.size());
    labels.reserve(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) {
        scores.push_back(predict(net, data.samples[i].image, preds[i]));
        labels.push_back(data.samples[i].label);
    }
    return auc(scores, labels);  // metric_error when the split is single-class
}

// ---------------------------------------------------------------------------
// Fusion-strategy comparison: majority vote plus the requested optimized
// fusions, each scored by classifier AUC of its fused labels and by mean
// soft-Dice against the majority-vote fusion.

struct fusion_row {
    std::string name;
    double auc_value = 0.0;
    double dice_vs_mv = 0.0;
    double descent = 0.0;  // fraction of samples whose final loss <= initial
};

inline std::vector<fusion_row> compare_fusions(
    const dataset& data, diagnosis_net& net, const std::vector<dfgt_method>& methods,
    const dfgt_hyper& base, const std::vector<double>& thresholds = default_dice_thresholds()) {
    if (!net.frozen) throw validation_error("compare_fusions: net must be frozen");
    if (data.empty()) throw validation_error("compare_fusions: empty dataset");

    std::vector<tensor> mv_labels;
    std::vector<double> mv_scores;
    std::vector<int> labels;
    mv_labels.reserve(data.samples.size());
    for (const auto& s : data.samples) {
        mv_labels.push_back(majority_vote(s.masks).values);
        mv_scores.push_back(predict(net, s.image, mv_labels.back()));
        labels.push_back(s.label);
    }

    std::vector<fusion_row> rows;
    rows.push_back({"majority_vote", auc(mv_scores, labels), 1.0, 1.0});

    for (dfgt_method method : methods) {
        dfgt_hyper hyper = base;
        hyper.method = method;
        dfgt_dataset built = build_dfgt(net, data, hyper);
        std::vector<double> scores;
        std::vector<int> method_labels;
        double dice = 0.0;
        for (size_t i = 0; i < data.samples.size(); ++i) {
            const dfgt_record* rec = built.find(data.samples[i].sample_id);
            if (!rec) continue;  // optimization aborted for this sample
            scores.push_back(predict(net, data.samples[i].image, rec->fused.values));
            method_labels.push_back(data.samples[i].label);
            dice += soft_dice(rec->fused.values, mv_labels[i], thresholds);
        }
        if (scores.empty())
            throw numeric_error("compare_fusions: every sample failed for method " +
                                to_string(method));
        rows.push_back({to_string(method), auc(scores, method_labels),
                        dice / static_cast<double>(scores.size()), descent_fraction(built)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Key-value report files: a versioned header, fixed comment lines describing
// the aggregation, then one "key = value" line per entry in emission order.
// Identical inputs produce byte-identical files (doubles via %.17g, no
// timestamps).

inline void write_kv_report(const std::filesystem::path& path, const std::string& kind,
                            const std::vector<std::pair<std::string, std::string>>& entries) {
    std::ofstream os(path);
    if (!os) throw io_error("write_kv_report: cannot open " + path.string());
    os << "diffseg-report v1\n";
    os << "kind = " << kind << "\n";
    os << "# aggregation: metrics are computed per image, then averaged over the split\n";
    for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
    os.flush();
    if (!os) throw io_error("write_kv_report: short write on " + path.string());
}

inline std::vector<std::pair<std::string, std::string>> read_kv_report(
    const std::filesystem::path& path, std::string* kind = nullptr) {
    std::ifstream in(path);
    if (!in) throw io_error("read_kv_report: cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "diffseg-report v1")
        throw format_error("read_kv_report: " + path.string() + " is not a report file");
    std::vector<std::pair<std::string, std::string>> entries;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto sep = line.find(" = ");
        if (sep == std::string::npos)
            throw format_error("read_kv_report: malformed line '" + line + "'");
        std::string key = line.substr(0, sep), value = line.substr(sep + 3);
        if (key == "kind") {
            if (kind) *kind = value;
            continue;
        }
        entries.emplace_back(std::move(key), std::move(value));
    }
    return entries;
}

}  // namespace diffseg
