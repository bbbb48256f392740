#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/dfgt.hpp"
#include "diffseg/diagnet.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/rng.hpp"
#include "diffseg/synthgen.hpp"
#include "diffseg/tgseg.hpp"

namespace diffseg {

// ---------------------------------------------------------------------------
// Run configuration: one versioned JSON file drives the whole pipeline. A
// single global seed deterministically derives every stage seed, so a run is
// reproducible from (config file, seed) alone.

inline std::uint64_t derive_seed(std::uint64_t global, std::string_view stage) {
    return splitmix64(global ^ fnv1a64(stage));
}

struct eval_config {
    std::string split = "test";
    std::vector<double> thresholds = default_dice_thresholds();
    std::vector<std::string> fusion_methods = {"raw", "transrob", "fourier", "expg"};
    bool score_segmentation = true;  // score the trained segmentation checkpoint

    void validate() const {
        if (split != "train" && split != "val" && split != "test")
            throw validation_error("eval_config: unknown split '" + split + "'");
        if (thresholds.empty()) throw validation_error("eval_config: empty threshold list");
        for (double t : thresholds)
            if (!(t > 0.0 && t < 1.0))
                throw validation_error("eval_config: threshold outside (0,1)");
        for (const auto& m : fusion_methods) dfgt_method_from_string(m);  // throws on junk
    }

    nlohmann::json to_json() const {
        return {{"split", split},
                {"thresholds", thresholds},
                {"fusion_methods", fusion_methods},
                {"score_segmentation", score_segmentation}};
    }

    static eval_config from_json(const nlohmann::json& j) {
        eval_config c;
        c.split = j.at("split").get<std::string>();
        c.thresholds = j.at("thresholds").get<std::vector<double>>();
        c.fusion_methods = j.at("fusion_methods").get<std::vector<std::string>>();
        c.score_segmentation = j.at("score_segmentation").get<bool>();
        return c;
    }
};

struct run_config {
    static constexpr int version = 1;

    std::string dataset_dir = "artifacts/dataset";
    std::string checkpoint_dir = "artifacts/checkpoints";
    std::string dfgt_dir = "artifacts/dfgt";
    std::string report_dir = "artifacts/reports";

    synth_spec synth;
    diag_hyper diag_train;
    dfgt_hyper dfgt;
    seg_hyper seg_train;
    eval_config eval;

    // architecture knobs kept alongside the hyperparameters
    std::vector<int> diag_widths = {16, 32, 64, 128};
    std::vector<int> seg_widths = {16, 32, 64, 128};
    std::vector<int> seg_patch = {4, 2, 1, 1};
    int seg_heads = 4;
    std::vector<int> seg_connected = {1, 2, 3};
    bool diag_mask_zeros = false;

    std::uint64_t seed = 0;

    // Stage seeds always derive from the global seed; nested seed fields in
    // the config file are ignored in favor of the derivation.
    void reseed() {
        synth.seed = derive_seed(seed, "synth");
        diag_train.seed = derive_seed(seed, "diag-train");
        dfgt.seed = derive_seed(seed, "dfgt");
        seg_train.seed = derive_seed(seed, "seg-train");
    }

    diag_config make_diag_config() const {
        diag_config c;
        c.h = synth.h;
        c.w = synth.w;
        c.image_channels = synth.c;
        c.structures = synth_spec::structures;
        c.widths = diag_widths;
        c.seed = derive_seed(seed, "diag-init");
        return c;
    }

    seg_config make_seg_config() const {
        seg_config c;
        c.h = synth.h;
        c.w = synth.w;
        c.image_channels = synth.c;
        c.structures = synth_spec::structures;
        c.widths = seg_widths;
        c.patch = seg_patch;
        c.heads = seg_heads;
        c.connected = seg_connected;
        c.diag_mask_zeros = diag_mask_zeros;
        c.seed = derive_seed(seed, "seg-init");
        return c;
    }

    void validate() const {
        synth.validate();
        diag_train.validate();
        dfgt.validate();
        seg_train.validate();
        eval.validate();
        make_diag_config().validate();
        make_seg_config().validate();
        for (const std::string* p : {&dataset_dir, &checkpoint_dir, &dfgt_dir, &report_dir})
            if (p->empty()) throw validation_error("run_config: empty artifact path");
    }

    nlohmann::json to_json() const {
        return {{"version", version},
                {"dataset_dir", dataset_dir},
                {"checkpoint_dir", checkpoint_dir},
                {"dfgt_dir", dfgt_dir},
                {"report_dir", report_dir},
                {"synth", synth.to_json()},
                {"diag_train", diag_train.to_json()},
                {"dfgt", dfgt.to_json()},
                {"seg_train", seg_train.to_json()},
                {"eval", eval.to_json()},
                {"diag_widths", diag_widths},
                {"seg_widths", seg_widths},
                {"seg_patch", seg_patch},
                {"seg_heads", seg_heads},
                {"seg_connected", seg_connected},
                {"diag_mask_zeros", diag_mask_zeros},
                {"seed", seed}};
    }

    static run_config from_json(const nlohmann::json& j) {
        if (j.value("version", -1) != version)
            throw format_error("run_config: unsupported config version");
        run_config c;
        c.dataset_dir = j.at("dataset_dir").get<std::string>();
        c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
        c.dfgt_dir = j.at("dfgt_dir").get<std::string>();
        c.report_dir = j.at("report_dir").get<std::string>();
        c.synth = synth_spec::from_json(j.at("synth"));
        c.diag_train = diag_hyper::from_json(j.at("diag_train"));
        c.dfgt = dfgt_hyper::from_json(j.at("dfgt"));
        c.seg_train = seg_hyper::from_json(j.at("seg_train"));
        c.eval = eval_config::from_json(j.at("eval"));
        c.diag_widths = j.at("diag_widths").get<std::vector<int>>();
        c.seg_widths = j.at("seg_widths").get<std::vector<int>>();
        c.seg_patch = j.at("seg_patch").get<std::vector<int>>();
        c.seg_heads = j.at("seg_heads").get<int>();
        c.seg_connected = j.at("seg_connected").get<std::vector<int>>();
        c.diag_mask_zeros = j.at("diag_mask_zeros").get<bool>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.reseed();
        return c;
    }
};

inline run_config load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("config file not found: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    try {
        run_config cfg = run_config::from_json(j);
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw format_error("config file " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Content addressing: each stage manifest records a hash of everything that
// determines its artifact, chained through its upstream stage. A downstream
// command recomputes the expected hash from the current config and refuses
// stale artifacts.

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline std::string chain_hash(const std::string& upstream, const nlohmann::json& stage_inputs) {
    return hash_hex(fnv1a64(upstream + "|" + stage_inputs.dump()));
}

inline std::string synth_hash(const run_config& cfg) {
    return chain_hash("", {{"stage", "synth"}, {"spec", cfg.synth.to_json()}});
}

inline std::string pretrain_hash(const run_config& cfg) {
    return chain_hash(synth_hash(cfg), {{"stage", "pretrain"},
                                        {"config", cfg.make_diag_config().to_json()},
                                        {"hyper", cfg.diag_train.to_json()}});
}

inline std::string dfgt_hash(const run_config& cfg) {
    return chain_hash(pretrain_hash(cfg), {{"stage", "dfgt"}, {"hyper", cfg.dfgt.to_json()}});
}

inline std::string train_hash(const run_config& cfg) {
    return chain_hash(dfgt_hash(cfg), {{"stage", "train"},
                                       {"config", cfg.make_seg_config().to_json()},
                                       {"hyper", cfg.seg_train.to_json()}});
}

inline std::string eval_hash(const run_config& cfg) {
    return chain_hash(train_hash(cfg), {{"stage", "eval"}, {"eval", cfg.eval.to_json()}});
}

}  // namespace diffseg
