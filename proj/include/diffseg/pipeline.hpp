#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/config.hpp"
#include "diffseg/data.hpp"
#include "diffseg/dfgt.hpp"
#include "diffseg/diagnet.hpp"
#include "diffseg/eval.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/plot.hpp"
#include "diffseg/tgseg.hpp"

namespace diffseg {

// ---------------------------------------------------------------------------
// Pipeline stages. Each stage writes its artifacts first and its manifest
// last, so a crashed or rejected run never leaves a manifest behind; each
// downstream stage recomputes the expected content hash from the current
// config and refuses artifacts built under a different one.

namespace fs = std::filesystem;

inline void write_stage_manifest(const fs::path& path, const nlohmann::json& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw io_error("cannot write manifest " + path.string());
        os << content.dump(2) << "\n";
        os.flush();
        if (!os) throw io_error("short write on manifest " + path.string());
    }
    fs::rename(tmp, path);
}

inline nlohmann::json require_stage_manifest(const fs::path& path, const std::string& stage,
                                             const std::string& expected_hash) {
    std::ifstream in(path);
    if (!in)
        throw validation_error("missing upstream artifact " + path.string() +
                               "; run `diffseg " + stage + "` first");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.value("stage", "") != stage)
        throw validation_error("manifest " + path.string() + " belongs to stage '" +
                               j.value("stage", "") + "', expected '" + stage + "'");
    if (j.value("config_hash", "") != expected_hash)
        throw validation_error("stale artifact " + path.string() + ": built under config hash " +
                               j.value("config_hash", "") + ", current config expects " +
                               expected_hash + "; rerun `diffseg " + stage + "`");
    return j;
}

// ---------------------------------------------------------------------------
// Training-history files ("diffseg-history v1"): one line per epoch with the
// mean loss and any named metrics, %.17g throughout.

inline void save_history(const fs::path& path, const std::string& stage,
                         const train_history& hist) {
    std::ofstream os(path);
    if (!os) throw io_error("save_history: cannot open " + path.string());
    os << "diffseg-history v1\n";
    os << "stage = " << stage << "\n";
    for (const auto& r : hist.records) {
        os << "epoch " << r.epoch << " mean " << detail::fmt17(r.mean_loss);
        for (const auto& [k, v] : r.metrics) os << " " << k << " " << detail::fmt17(v);
        os << "\n";
    }
    os.flush();
    if (!os) throw io_error("save_history: short write on " + path.string());
}

inline train_history load_history(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_history: cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "diffseg-history v1")
        throw format_error("load_history: " + path.string() + " is not a history file");
    std::getline(in, line);  // stage tag, informational
    train_history hist;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string word;
        train_history::record r;
        if (!(ss >> word >> r.epoch) || word != "epoch")
            throw format_error("load_history: malformed line '" + line + "'");
        if (!(ss >> word >> r.mean_loss) || word != "mean")
            throw format_error("load_history: malformed line '" + line + "'");
        std::string key;
        double value;
        while (ss >> key >> value) r.metrics[key] = value;
        hist.records.push_back(std::move(r));
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Stage: synth

struct synth_result {
    int train_count = 0, val_count = 0, test_count = 0;
    int train_positives = 0, val_positives = 0, test_positives = 0;
};

inline synth_result run_synth(const run_config& cfg) {
    cfg.validate();
    synth_datasets sets = generate_dataset(cfg.synth);
    fs::path dir(cfg.dataset_dir);
    fs::create_directories(dir);
    save_dataset(sets.train, (dir / "train").string());
    save_dataset(sets.val, (dir / "val").string());
    save_dataset(sets.test, (dir / "test").string());

    auto positives = [](const dataset& d) {
        int p = 0;
        for (const auto& s : d.samples) p += s.label;
        return p;
    };
    synth_result res{static_cast<int>(sets.train.samples.size()),
                     static_cast<int>(sets.val.samples.size()),
                     static_cast<int>(sets.test.samples.size()),
                     positives(sets.train),
                     positives(sets.val),
                     positives(sets.test)};
    write_stage_manifest(dir / "stage.json",
                         {{"stage", "synth"},
                          {"config_hash", synth_hash(cfg)},
                          {"seed", cfg.seed},
                          {"counts", {res.train_count, res.val_count, res.test_count}},
                          {"positives", {res.train_positives, res.val_positives,
                                         res.test_positives}}});
    return res;
}

inline dataset load_split(const run_config& cfg, const std::string& split) {
    require_stage_manifest(fs::path(cfg.dataset_dir) / "stage.json", "synth", synth_hash(cfg));
    return load_dataset((fs::path(cfg.dataset_dir) / split).string());
}

// ---------------------------------------------------------------------------
// Stage: pretrain

inline train_history run_pretrain(const run_config& cfg) {
    cfg.validate();
    dataset train = load_split(cfg, "train");
    diagnosis_net net = diagnosis_net::build(cfg.make_diag_config());
    train_history hist = pretrain(net, train, cfg.diag_train);

    fs::path dir(cfg.checkpoint_dir);
    fs::create_directories(dir);
    save_diagnet(dir / "diagnet.ckpt", net);
    save_history(dir / "diagnet_history.txt", "pretrain", hist);
    write_stage_manifest(
        dir / "diagnet.stage.json",
        {{"stage", "pretrain"},
         {"config_hash", pretrain_hash(cfg)},
         {"upstream_hash", synth_hash(cfg)},
         {"seed", cfg.seed},
         {"epochs", static_cast<int>(hist.records.size())},
         {"final_loss", hist.records.empty() ? 0.0 : hist.records.back().mean_loss}});
    return hist;
}

inline diagnosis_net load_pretrained(const run_config& cfg) {
    require_stage_manifest(fs::path(cfg.checkpoint_dir) / "diagnet.stage.json", "pretrain",
                           pretrain_hash(cfg));
    return load_diagnet(fs::path(cfg.checkpoint_dir) / "diagnet.ckpt");
}

// ---------------------------------------------------------------------------
// Stage: dfgt — fused labels for the training split and for the evaluation
// split (the latter feeds self-fusion scoring and the fusion comparison).

struct dfgt_result {
    dfgt_dataset train;
    dfgt_dataset eval;  // split named by cfg.eval.split; aliases train when equal
};

inline dfgt_result run_dfgt(const run_config& cfg) {
    cfg.validate();
    diagnosis_net net = load_pretrained(cfg);

    dfgt_result res;
    fs::path dir(cfg.dfgt_dir);
    fs::create_directories(dir);

    dataset train = load_split(cfg, "train");
    res.train = build_dfgt(net, train, cfg.dfgt);
    save_dfgt(dir / "train", res.train);

    if (cfg.eval.split == "train") {
        res.eval = res.train;
    } else {
        dataset eval_split = load_split(cfg, cfg.eval.split);
        res.eval = build_dfgt(net, eval_split, cfg.dfgt);
        save_dfgt(dir / cfg.eval.split, res.eval);
    }

    write_stage_manifest(dir / "stage.json",
                         {{"stage", "dfgt"},
                          {"config_hash", dfgt_hash(cfg)},
                          {"upstream_hash", pretrain_hash(cfg)},
                          {"seed", cfg.seed},
                          {"train_descent", descent_fraction(res.train)},
                          {"train_failed", static_cast<int>(res.train.failed.size())},
                          {"eval_split", cfg.eval.split},
                          {"eval_descent", descent_fraction(res.eval)},
                          {"eval_failed", static_cast<int>(res.eval.failed.size())}});
    return res;
}

inline dfgt_dataset load_dfgt_split(const run_config& cfg, const std::string& split) {
    require_stage_manifest(fs::path(cfg.dfgt_dir) / "stage.json", "dfgt", dfgt_hash(cfg));
    return load_dfgt(fs::path(cfg.dfgt_dir) / split);
}

// ---------------------------------------------------------------------------
// Stage: train

inline train_history run_train(const run_config& cfg) {
    cfg.validate();
    diagnosis_net diag = load_pretrained(cfg);
    dataset train = load_split(cfg, "train");
    dfgt_dataset targets = load_dfgt_split(cfg, "train");

    tgseg_net net = tgseg_net::build(cfg.make_seg_config(), diag);
    train_history hist = train_tgseg(net, targets, train, cfg.seg_train);

    fs::path dir(cfg.checkpoint_dir);
    fs::create_directories(dir);
    save_tgseg(dir / "tgseg.ckpt", net);
    save_history(dir / "tgseg_history.txt", "train", hist);
    write_stage_manifest(
        dir / "tgseg.stage.json",
        {{"stage", "train"},
         {"config_hash", train_hash(cfg)},
         {"upstream_hash", dfgt_hash(cfg)},
         {"seed", cfg.seed},
         {"epochs", static_cast<int>(hist.records.size())},
         {"first_loss", hist.records.empty() ? 0.0 : hist.records.front().mean_loss},
         {"final_loss", hist.records.empty() ? 0.0 : hist.records.back().mean_loss}});
    return hist;
}

inline tgseg_net load_trained(const run_config& cfg, diagnosis_net& diag) {
    require_stage_manifest(fs::path(cfg.checkpoint_dir) / "tgseg.stage.json", "train",
                           train_hash(cfg));
    return load_tgseg(fs::path(cfg.checkpoint_dir) / "tgseg.ckpt", diag);
}

// ---------------------------------------------------------------------------
// Stage: eval — writes the machine-readable report; numbers only, no
// timestamps, so identical artifacts yield identical bytes.

inline fs::path eval_report_path(const run_config& cfg) {
    return fs::path(cfg.report_dir) / "eval_report.txt";
}

inline void run_eval(const run_config& cfg) {
    cfg.validate();
    diagnosis_net diag = load_pretrained(cfg);
    dataset split = load_split(cfg, cfg.eval.split);

    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("config_hash", eval_hash(cfg));
    kv.emplace_back("seed", std::to_string(cfg.seed));
    kv.emplace_back("split", cfg.eval.split);
    kv.emplace_back("samples", std::to_string(split.samples.size()));

    if (cfg.eval.score_segmentation) {
        dfgt_dataset targets = load_dfgt_split(cfg, cfg.eval.split);
        tgseg_net seg = load_trained(cfg, diag);
        std::vector<tensor> preds;
        preds.reserve(split.samples.size());
        for (const auto& s : split.samples) preds.push_back(seg.forward(s.image));

        rater_dice_table table = eval_against_raters(preds, split, cfg.eval.thresholds);
        for (int k = 0; k < table.structures(); ++k)
            for (int j = 0; j < table.raters(); ++j)
                kv.emplace_back(
                    "rater_dice.s" + std::to_string(k) + ".r" + std::to_string(j),
                    detail::fmt17(table.mean_dice[static_cast<size_t>(k)][static_cast<size_t>(j)]));
        kv.emplace_back("self_fusion_dice",
                        detail::fmt17(eval_self_fusion(preds, targets, split,
                                                       cfg.eval.thresholds)));
        kv.emplace_back("diagnosis_auc", detail::fmt17(eval_diagnosis(preds, split, diag)));
    }

    std::vector<dfgt_method> methods;
    for (const auto& m : cfg.eval.fusion_methods)
        methods.push_back(dfgt_method_from_string(m));
    std::vector<fusion_row> rows =
        compare_fusions(split, diag, methods, cfg.dfgt, cfg.eval.thresholds);
    for (const auto& row : rows) {
        kv.emplace_back("fusion." + row.name + ".auc", detail::fmt17(row.auc_value));
        kv.emplace_back("fusion." + row.name + ".dice_vs_mv", detail::fmt17(row.dice_vs_mv));
        kv.emplace_back("fusion." + row.name + ".descent", detail::fmt17(row.descent));
    }

    fs::create_directories(cfg.report_dir);
    write_kv_report(eval_report_path(cfg), "eval", kv);
    write_stage_manifest(fs::path(cfg.report_dir) / "eval.stage.json",
                         {{"stage", "eval"},
                          {"config_hash", eval_hash(cfg)},
                          {"upstream_hash", train_hash(cfg)},
                          {"seed", cfg.seed}});
}

// ---------------------------------------------------------------------------
// Stage: report — renders the eval report and training history into plots
// and a human-readable summary.

inline void run_report(const run_config& cfg) {
    cfg.validate();
    require_stage_manifest(fs::path(cfg.report_dir) / "eval.stage.json", "eval", eval_hash(cfg));
    auto kv = read_kv_report(eval_report_path(cfg));
    auto value_of = [&](const std::string& key) -> const std::string* {
        for (const auto& [k, v] : kv)
            if (k == key) return &v;
        return nullptr;
    };

    fs::path dir(cfg.report_dir);

    // per-method AUC bars (majority vote first, then the optimized fusions)
    std::vector<std::string> names = {"majority_vote"};
    for (const auto& m : cfg.eval.fusion_methods) names.push_back("dfgt_" + m);
    std::vector<std::string> labels;
    std::vector<double> aucs;
    for (const auto& name : names) {
        const std::string* v = value_of("fusion." + name + ".auc");
        if (!v) throw format_error("run_report: eval report lacks fusion row '" + name + "'");
        labels.push_back(name == "majority_vote" ? "MV" : name.substr(5));
        aucs.push_back(std::stod(*v));
    }
    bar_chart(dir / "auc_by_fusion.png", "DIAGNOSIS AUC BY FUSION", labels, aucs, 1.0);

    // training loss curves
    fs::path hist_path = fs::path(cfg.checkpoint_dir) / "tgseg_history.txt";
    bool have_history = cfg.eval.score_segmentation && fs::exists(hist_path);
    if (have_history) {
        train_history hist = load_history(hist_path);
        std::vector<double> total, main_bce, aux_bce;
        for (const auto& r : hist.records) {
            total.push_back(r.mean_loss);
            if (auto it = r.metrics.find("main_bce"); it != r.metrics.end())
                main_bce.push_back(it->second);
            if (auto it = r.metrics.find("aux_bce"); it != r.metrics.end())
                aux_bce.push_back(it->second);
        }
        std::vector<std::pair<std::string, std::vector<double>>> series;
        series.emplace_back("TOTAL", total);
        if (main_bce.size() == total.size()) series.emplace_back("MAIN", main_bce);
        if (aux_bce.size() == total.size()) series.emplace_back("AUX", aux_bce);
        line_chart(dir / "training_loss.png", "SEGMENTATION TRAINING LOSS", series);
    }

    std::ofstream os(dir / "summary.txt");
    if (!os) throw io_error("run_report: cannot write summary");
    os << "diffseg run summary\n";
    os << "===================\n";
    os << "config hash: " << eval_hash(cfg) << "\n";
    os << "seed:        " << cfg.seed << "\n\n";
    os << "fusion comparison (split: " << cfg.eval.split << ")\n";
    for (size_t i = 0; i < names.size(); ++i) {
        const std::string* dice = value_of("fusion." + names[i] + ".dice_vs_mv");
        os << "  " << names[i] << ": auc " << detail::fmt17(aucs[i]);
        if (dice) os << ", dice vs mv " << *dice;
        os << "\n";
    }
    if (const std::string* v = value_of("diagnosis_auc"))
        os << "\nsegmentation: diagnosis auc " << *v;
    if (const std::string* v = value_of("self_fusion_dice"))
        os << ", self-fusion dice " << *v;
    os << "\nplots: auc_by_fusion.png" << (have_history ? ", training_loss.png" : "") << "\n";
    os.flush();
    if (!os) throw io_error("run_report: short write on summary");
}

}  // namespace diffseg
