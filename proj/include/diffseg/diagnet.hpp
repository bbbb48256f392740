#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/checkpoint.hpp"
#include "diffseg/data.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/fusion.hpp"
#include "diffseg/nn/adam.hpp"
#include "diffseg/nn/ops.hpp"
#include "diffseg/rng.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

// ---------------------------------------------------------------------------
// Diagnosis classifier: takes the image concatenated with a segmentation mask
// (c + K input channels), runs a small residual CNN with stride-2 blocks, and
// emits one disease probability. After pretraining it is frozen and serves as
// the fixed loss landscape that expertness maps are optimized against.

struct diag_config {
    int h = 64, w = 64;
    int image_channels = 1;  // c
    int structures = 2;      // K
    std::vector<int> widths = {16, 32, 64, 128};
    std::uint64_t seed = 0;

    int input_channels() const { return image_channels + structures; }
    int blocks() const { return static_cast<int>(widths.size()); }

    void validate() const {
        if (h <= 0 || w <= 0 || image_channels <= 0 || structures <= 0)
            throw validation_error("diag_config: dimensions must be positive");
        if (widths.empty()) throw validation_error("diag_config: needs at least one block");
        int shrink = 1 << static_cast<int>(widths.size());
        if (h % shrink != 0 || w % shrink != 0)
            throw validation_error("diag_config: input size must be divisible by 2^blocks");
    }

    nlohmann::json to_json() const {
        return {{"h", h},
                {"w", w},
                {"image_channels", image_channels},
                {"structures", structures},
                {"widths", widths},
                {"seed", seed}};
    }

    static diag_config from_json(const nlohmann::json& j) {
        diag_config c;
        c.h = j.at("h").get<int>();
        c.w = j.at("w").get<int>();
        c.image_channels = j.at("image_channels").get<int>();
        c.structures = j.at("structures").get<int>();
        c.widths = j.at("widths").get<std::vector<int>>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }
};

struct diag_hyper {
    int epochs = 50;
    int batch_size = 16;
    double lr = 1e-4;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 0) throw validation_error("diag_hyper: negative epochs");
        if (batch_size <= 0 || lr <= 0.0)
            throw validation_error("diag_hyper: batch size and learning rate must be positive");
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr}, {"seed", seed}};
    }

    static diag_hyper from_json(const nlohmann::json& j) {
        diag_hyper h;
        h.epochs = j.at("epochs").get<int>();
        h.batch_size = j.at("batch_size").get<int>();
        h.lr = j.at("lr").get<double>();
        h.seed = j.at("seed").get<std::uint64_t>();
        return h;
    }
};

class diagnosis_net {
public:
    diag_config config;
    bool frozen = false;

    static diagnosis_net build(const diag_config& cfg) {
        cfg.validate();
        diagnosis_net net;
        net.config = cfg;
        std::mt19937_64 rng = stage_rng(cfg.seed, "diagnet-init");
        int in_c = cfg.input_channels();
        net.blocks_.resize(cfg.widths.size());
        for (size_t b = 0; b < cfg.widths.size(); ++b) {
            net.blocks_[b].init(in_c, cfg.widths[b], 2, rng);
            in_c = cfg.widths[b];
        }
        net.head_.init(cfg.widths.back(), 1, rng);
        return net;
    }

    std::vector<nn::param*> params() {
        std::vector<nn::param*> ps;
        for (auto& b : blocks_)
            for (nn::param* p : b.params()) ps.push_back(p);
        for (nn::param* p : head_.params()) ps.push_back(p);
        return ps;
    }

    std::uint64_t theta_hash() { return param_hash(params()); }

    // Forward on a pre-concatenated (h, w, c+K) input; caches activations for
    // backward. Also records per-block outputs for feature_maps.
    double forward_logit(const tensor& input) {
        if (input.rank() != 3 || input.dim(0) != config.h || input.dim(1) != config.w ||
            input.dim(2) != config.input_channels())
            throw shape_error("diagnosis_net: input " + input.shape_str() + ", expected (" +
                              std::to_string(config.h) + "," + std::to_string(config.w) + "," +
                              std::to_string(config.input_channels()) + ")");
        tensor f = input;
        block_outputs_.clear();
        for (auto& b : blocks_) {
            f = b.forward(f);
            block_outputs_.push_back(f);
        }
        return head_.forward(pool_.forward(f))(0, 0);
    }

    // Backprop a scalar d(loss)/d(logit) back to the input grid. When
    // accumulate is false (the frozen path) no parameter gradient is touched.
    tensor backward_input(double dlogit, bool accumulate) {
        nn::mat dy(1, 1);
        dy(0, 0) = dlogit;
        tensor df = pool_.backward(head_.backward(dy, accumulate));
        for (size_t b = blocks_.size(); b-- > 0;) df = blocks_[b].backward(df, accumulate);
        return df;
    }

    const std::vector<tensor>& block_outputs() const { return block_outputs_; }

private:
    std::vector<nn::residual_block> blocks_;
    nn::global_avg_pool pool_;
    nn::linear head_;
    std::vector<tensor> block_outputs_;
};

// Disease probability for one image and one fused mask.
inline double predict(diagnosis_net& net, const tensor& image, const tensor& mask) {
    if (image.rank() != 3 || mask.rank() != 3 || image.dim(0) != mask.dim(0) ||
        image.dim(1) != mask.dim(1))
        throw shape_error("predict: image " + image.shape_str() + " vs mask " + mask.shape_str());
    return nn::sigmoid_scalar(net.forward_logit(concat_channels(image, mask)));
}

// Pretrain on (image ⊕ majority-vote mask, label) with mini-batch Adam, then
// freeze. Per-epoch mean losses land in the history.
inline train_history pretrain(diagnosis_net& net, const dataset& data, const diag_hyper& hyper) {
    hyper.validate();
    if (net.frozen) throw validation_error("pretrain: net is already frozen");
    bool has0 = false, has1 = false;
    for (const auto& s : data.samples) (s.label ? has1 : has0) = true;
    if (!has0 || !has1)
        throw validation_error("pretrain: training set must contain both classes");
    if (!data.samples.empty()) {
        const auto& s0 = data.samples.front();
        if (s0.h() != net.config.h || s0.w() != net.config.w ||
            s0.c() != net.config.image_channels || s0.structures() != net.config.structures)
            throw shape_error("pretrain: dataset geometry does not match network config");
    }

    // majority-vote inputs are fixed, build them once
    std::vector<tensor> inputs;
    inputs.reserve(data.samples.size());
    for (const auto& s : data.samples)
        inputs.push_back(concat_channels(s.image, majority_vote(s.masks).values));

    train_history history;
    nn::adam opt(hyper.lr);
    std::vector<nn::param*> ps = net.params();
    std::mt19937_64 order_rng = stage_rng(hyper.seed, "diagnet-order");
    int n = static_cast<int>(data.samples.size());

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::vector<int> order = shuffle_indices(n, order_rng);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += hyper.batch_size) {
            int stop = std::min(n, start + hyper.batch_size);
            nn::adam::zero_grad(ps);
            double inv = 1.0 / (stop - start);
            for (int i = start; i < stop; ++i) {
                const auto& s = data.samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
                double z = net.forward_logit(inputs[static_cast<size_t>(order[static_cast<size_t>(i)])]);
                double y = static_cast<double>(s.label);
                epoch_loss += nn::bce_with_logits(z, y);
                net.backward_input(nn::bce_with_logits_grad(z, y) * inv, /*accumulate=*/true);
            }
            opt.step(ps);
        }
        double mean_loss = epoch_loss / n;
        if (!std::isfinite(mean_loss))
            throw numeric_error("pretrain: non-finite loss at epoch " + std::to_string(epoch));
        history.records.push_back({epoch, mean_loss, {}});
    }
    net.frozen = true;
    return history;
}

// Diagnosis loss of a fused label and its gradient with respect to the raw
// expertness logits, with the network parameters held fixed. The chain runs
// logits -> softmax weights -> pixelwise fusion -> classifier -> BCE.
inline std::pair<double, tensor> loss_and_grad(diagnosis_net& net, const tensor& image,
                                               const tensor& masks, const tensor& logits,
                                               int label) {
    if (!net.frozen) throw validation_error("loss_and_grad: net must be frozen");
    if (masks.rank() != 4 || !logits.same_shape(masks))
        throw shape_error("loss_and_grad: masks " + masks.shape_str() + " vs logits " +
                          logits.shape_str());
    expertness_map m = normalize_expertness(logits);
    fused_label fused = fuse(masks, m, fusion_provenance::dfgt_raw);

    double z = net.forward_logit(concat_channels(image, fused.values));
    double y = static_cast<double>(label);
    double loss = nn::bce_with_logits(z, y);
    if (!std::isfinite(loss))
        throw numeric_error("loss_and_grad: non-finite loss (logit " + std::to_string(z) + ")");

    tensor dinput = net.backward_input(nn::bce_with_logits_grad(z, y), /*accumulate=*/false);
    // peel off the mask channels: d(loss)/d(fused)
    int c = net.config.image_channels, ks = net.config.structures;
    tensor dfused({masks.dim(0), masks.dim(1), ks});
    for (int yy = 0; yy < masks.dim(0); ++yy)
        for (int xx = 0; xx < masks.dim(1); ++xx)
            for (int k = 0; k < ks; ++k) dfused(yy, xx, k) = dinput(yy, xx, c + k);
    return {loss, fuse_backward_logits(masks, m, dfused)};
}

// Per-block feature grids for the Give Module: block k output has spatial
// size (h / 2^(k+1), w / 2^(k+1)) and the configured width.
inline std::vector<tensor> feature_maps(diagnosis_net& net, const tensor& image,
                                        const tensor& mask) {
    net.forward_logit(concat_channels(image, mask));
    return net.block_outputs();
}

// ---------------------------------------------------------------------------
// Checkpointing

inline void save_diagnet(const std::filesystem::path& path, diagnosis_net& net) {
    nlohmann::json header = {{"arch", "diagnet"},
                             {"config", net.config.to_json()},
                             {"frozen", net.frozen}};
    save_checkpoint(path, header, net.params());
}

inline diagnosis_net load_diagnet(const std::filesystem::path& path) {
    // read the header first to recover the architecture, then load weights
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw io_error("load_diagnet: cannot open " + path.string());
    char magic[4];
    std::uint32_t ver;
    std::uint64_t hl;
    probe.read(magic, 4);
    probe.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    probe.read(reinterpret_cast<char*>(&hl), sizeof(hl));
    if (!probe || std::memcmp(magic, checkpoint_magic, 4) != 0)
        throw format_error("load_diagnet: " + path.string() + " is not a checkpoint file");
    std::string hs(hl, '\0');
    probe.read(hs.data(), static_cast<std::streamsize>(hl));
    if (!probe) throw format_error("load_diagnet: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("load_diagnet: bad header: ") + e.what());
    }
    if (header.value("arch", "") != "diagnet")
        throw format_error("load_diagnet: checkpoint does not hold a diagnosis net");

    diagnosis_net net = diagnosis_net::build(diag_config::from_json(header.at("config")));
    load_checkpoint(path, net.params());
    net.frozen = header.value("frozen", true);
    return net;
}

}  // namespace diffseg
