#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/checkpoint.hpp"
#include "diffseg/data.hpp"
#include "diffseg/dfgt.hpp"
#include "diffseg/diagnet.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/nn/adam.hpp"
#include "diffseg/nn/attention.hpp"
#include "diffseg/nn/ops.hpp"
#include "diffseg/rng.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

// ---------------------------------------------------------------------------
// Take-and-Give segmentation: a residual encoder-decoder whose decoder is fed
// diagnosis-classifier features through two attention bridges per connected
// block. The Give module lets encoder features select relevant diagnosis
// features; the Take module injects the selection into the decoder before its
// upsampling step. The diagnosis net stays frozen throughout; at segmentation
// time its mask input comes from a stop-gradient coarse prediction of a small
// auxiliary head (or zeros, by configuration).

struct seg_config {
    int h = 64, w = 64;
    int image_channels = 1;  // c
    int structures = 2;      // K
    std::vector<int> widths = {16, 32, 64, 128};  // per block, stride 2 each
    std::vector<int> patch = {4, 2, 1, 1};        // patch size per block
    int heads = 4;
    std::vector<int> connected = {1, 2, 3};  // 1-indexed block set with T&G bridges
    bool diag_mask_zeros = false;            // feed zeros instead of the coarse prediction
    std::uint64_t seed = 0;

    int blocks() const { return static_cast<int>(widths.size()); }
    int block_h(int k) const { return h >> k; }  // k is 1-indexed
    int block_w(int k) const { return w >> k; }
    int block_c(int k) const { return widths[static_cast<size_t>(k - 1)]; }
    int block_p(int k) const { return patch[static_cast<size_t>(k - 1)]; }
    int block_d(int k) const { return block_p(k) * block_p(k) * block_c(k); }
    bool is_connected(int k) const {
        return std::find(connected.begin(), connected.end(), k) != connected.end();
    }

    void validate() const {
        if (h <= 0 || w <= 0 || image_channels <= 0 || structures <= 0)
            throw validation_error("seg_config: dimensions must be positive");
        if (widths.empty() || widths.size() != patch.size())
            throw validation_error("seg_config: widths and patch lists must align");
        int shrink = 1 << blocks();
        if (h % shrink != 0 || w % shrink != 0)
            throw validation_error("seg_config: input size must be divisible by 2^blocks");
        if (widths.front() % 2 != 0)
            throw validation_error("seg_config: first width must be even for the final deconv");
        for (int k = 1; k <= blocks(); ++k) {
            if (block_p(k) <= 0 || block_h(k) % block_p(k) != 0 || block_w(k) % block_p(k) != 0)
                throw validation_error("seg_config: patch size must divide block " +
                                       std::to_string(k) + " geometry");
            if (block_d(k) % heads != 0)
                throw validation_error("seg_config: head count must divide block " +
                                       std::to_string(k) + " width");
        }
        std::set<int> seen;
        for (int k : connected) {
            if (k < 1 || k > blocks())
                throw validation_error("seg_config: connected block " + std::to_string(k) +
                                       " out of range");
            if (!seen.insert(k).second)
                throw validation_error("seg_config: duplicate connected block");
        }
    }

    nlohmann::json to_json() const {
        return {{"h", h},
                {"w", w},
                {"image_channels", image_channels},
                {"structures", structures},
                {"widths", widths},
                {"patch", patch},
                {"heads", heads},
                {"connected", connected},
                {"diag_mask_zeros", diag_mask_zeros},
                {"seed", seed}};
    }

    static seg_config from_json(const nlohmann::json& j) {
        seg_config c;
        c.h = j.at("h").get<int>();
        c.w = j.at("w").get<int>();
        c.image_channels = j.at("image_channels").get<int>();
        c.structures = j.at("structures").get<int>();
        c.widths = j.at("widths").get<std::vector<int>>();
        c.patch = j.at("patch").get<std::vector<int>>();
        c.heads = j.at("heads").get<int>();
        c.connected = j.at("connected").get<std::vector<int>>();
        c.diag_mask_zeros = j.at("diag_mask_zeros").get<bool>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }
};

struct seg_hyper {
    int epochs = 80;
    int batch_size = 16;
    double lr = 1e-4;
    double aux_weight = 0.5;  // weight of the coarse-head BCE term
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 0) throw validation_error("seg_hyper: negative epochs");
        if (batch_size <= 0 || lr <= 0.0)
            throw validation_error("seg_hyper: batch size and learning rate must be positive");
        if (aux_weight < 0.0) throw validation_error("seg_hyper: negative aux weight");
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", lr},
                {"aux_weight", aux_weight},
                {"seed", seed}};
    }

    static seg_hyper from_json(const nlohmann::json& j) {
        seg_hyper h;
        h.epochs = j.at("epochs").get<int>();
        h.batch_size = j.at("batch_size").get<int>();
        h.lr = j.at("lr").get<double>();
        h.aux_weight = j.at("aux_weight").get<double>();
        h.seed = j.at("seed").get<std::uint64_t>();
        return h;
    }
};

// ---------------------------------------------------------------------------
// Give module: encoder features query the diagnosis features; the selection
// is refined by a two-layer feed-forward. Inputs of differing width are first
// aligned by per-pixel linear projections. Output is a patch sequence at the
// block's geometry.

struct give_module {
    int gh = 0, gw = 0, c = 0, p = 1;
    bool proj_se = false, proj_d = false;
    nn::linear pse, pd;
    nn::mha attn;
    nn::mlp2 mlp;
    nn::mat pos;

    void init(int block_hh, int block_ww, int common_c, int patch_sz, int heads, int c_se,
              int c_d, std::mt19937_64& rng) {
        gh = block_hh;
        gw = block_ww;
        c = common_c;
        p = patch_sz;
        proj_se = (c_se != common_c);
        proj_d = (c_d != common_c);
        if (proj_se) pse.init(c_se, common_c, rng);
        if (proj_d) pd.init(c_d, common_c, rng);
        int d = p * p * c;
        attn.init(d, heads, rng);
        mlp.init(d, d, d, rng);
        pos = nn::positional_encoding(gh, gw, c, p);
    }

    std::vector<nn::param*> params() {
        std::vector<nn::param*> ps;
        if (proj_se)
            for (auto* q : pse.params()) ps.push_back(q);
        if (proj_d)
            for (auto* q : pd.params()) ps.push_back(q);
        for (auto* q : attn.params()) ps.push_back(q);
        for (auto* q : mlp.params()) ps.push_back(q);
        return ps;
    }

    // f_se, f_d: (H, W, C_*) grids at this block's geometry.
    nn::mat forward(const tensor& f_se, const tensor& f_d) {
        if (f_se.dim(0) != gh || f_se.dim(1) != gw || f_d.dim(0) != gh || f_d.dim(1) != gw)
            throw shape_error("give_module: feature grids do not match block geometry");
        tensor se = f_se, dd = f_d;
        if (proj_se) se = nn::from_mat(pse.forward(nn::to_mat(f_se)), gh, gw);
        if (proj_d) dd = nn::from_mat(pd.forward(nn::to_mat(f_d)), gh, gw);
        nn::mat q = nn::patchify(se, p) + pos;
        nn::mat k = nn::patchify(dd, p) + pos;
        nn::mat v = nn::patchify(dd, p);
        return mlp.forward(attn.forward(q, k, v));
    }

    // Returns the gradient for the encoder features. The diagnosis features
    // are a stop-gradient input (the frozen classifier gets no update), so
    // their gradient is only carried far enough to train the alignment
    // projection, then dropped.
    tensor backward(const nn::mat& dseq, bool accumulate = true) {
        nn::mat datt = mlp.backward(dseq, accumulate);
        nn::mat dq, dk, dv;
        attn.backward(datt, dq, dk, dv, accumulate);
        tensor dse = nn::unpatchify(dq, gh, gw, c, p);
        if (proj_d && accumulate)
            pd.backward(nn::to_mat(nn::unpatchify(dk + dv, gh, gw, c, p)), true);
        if (proj_se)
            return nn::from_mat(pse.backward(nn::to_mat(dse), accumulate), gh, gw);
        return dse;
    }
};

// Take module: the given diagnosis selection queries the decoder state; the
// refined sequence replaces the decoder feature ahead of its upsampling.
struct take_module {
    int gh = 0, gw = 0, c = 0, p = 1;
    bool proj_dec = false;
    nn::linear pdec;
    nn::mha attn;
    nn::mlp2 mlp;
    nn::mat pos;

    void init(int block_hh, int block_ww, int common_c, int patch_sz, int heads, int c_dec,
              std::mt19937_64& rng) {
        gh = block_hh;
        gw = block_ww;
        c = common_c;
        p = patch_sz;
        proj_dec = (c_dec != common_c);
        if (proj_dec) pdec.init(c_dec, common_c, rng);
        int d = p * p * c;
        attn.init(d, heads, rng);
        mlp.init(d, d, d, rng);
        pos = nn::positional_encoding(gh, gw, c, p);
    }

    std::vector<nn::param*> params() {
        std::vector<nn::param*> ps;
        if (proj_dec)
            for (auto* q : pdec.params()) ps.push_back(q);
        for (auto* q : attn.params()) ps.push_back(q);
        for (auto* q : mlp.params()) ps.push_back(q);
        return ps;
    }

    // fd_hat: the Give output sequence; f_sd: decoder grid at this block.
    nn::mat forward(const nn::mat& fd_hat, const tensor& f_sd) {
        if (f_sd.dim(0) != gh || f_sd.dim(1) != gw)
            throw shape_error("take_module: decoder grid does not match block geometry");
        if (fd_hat.rows() != pos.rows() || fd_hat.cols() != pos.cols())
            throw shape_error("take_module: sequence shape mismatch");
        tensor dec = f_sd;
        if (proj_dec) dec = nn::from_mat(pdec.forward(nn::to_mat(f_sd)), gh, gw);
        nn::mat q = fd_hat + pos;
        nn::mat k = nn::patchify(dec, p) + pos;
        nn::mat v = nn::patchify(dec, p);
        return mlp.forward(attn.forward(q, k, v));
    }

    void backward(const nn::mat& dseq, nn::mat& dfd_hat, tensor& df_sd, bool accumulate = true) {
        nn::mat datt = mlp.backward(dseq, accumulate);
        nn::mat dq, dk, dv;
        attn.backward(datt, dq, dk, dv, accumulate);
        dfd_hat = dq;
        tensor ddec = nn::unpatchify(dk + dv, gh, gw, c, p);
        if (proj_dec)
            df_sd = nn::from_mat(pdec.backward(nn::to_mat(ddec), accumulate), gh, gw);
        else
            df_sd = ddec;
    }
};

// ---------------------------------------------------------------------------

class tgseg_net {
public:
    seg_config config;
    diagnosis_net* diag = nullptr;  // frozen classifier, not owned

    static tgseg_net build(const seg_config& cfg, diagnosis_net& diag_net) {
        cfg.validate();
        if (!diag_net.frozen) throw validation_error("tgseg: diagnosis net must be frozen");
        if (diag_net.config.h != cfg.h || diag_net.config.w != cfg.w ||
            diag_net.config.image_channels != cfg.image_channels ||
            diag_net.config.structures != cfg.structures)
            throw validation_error("tgseg: diagnosis net geometry does not match");
        if (static_cast<int>(diag_net.config.widths.size()) < cfg.blocks())
            throw validation_error("tgseg: diagnosis net has fewer blocks than requested");

        tgseg_net net;
        net.config = cfg;
        net.diag = &diag_net;
        std::mt19937_64 rng = stage_rng(cfg.seed, "tgseg-init");
        int nb = cfg.blocks();

        int in_c = cfg.image_channels;
        net.enc_.resize(static_cast<size_t>(nb));
        for (int k = 1; k <= nb; ++k) {
            net.enc_[static_cast<size_t>(k - 1)].init(in_c, cfg.block_c(k), 2, rng);
            in_c = cfg.block_c(k);
        }

        net.aux_conv_.init(cfg.block_c(1), cfg.structures, 1, 1, 0, rng);

        for (int k = 1; k <= nb; ++k) {
            if (!cfg.is_connected(k)) continue;
            give_module g;
            g.init(cfg.block_h(k), cfg.block_w(k), cfg.block_c(k), cfg.block_p(k), cfg.heads,
                   cfg.block_c(k), net.diag->config.widths[static_cast<size_t>(k - 1)], rng);
            net.gives_[k] = std::move(g);
            take_module t;
            t.init(cfg.block_h(k), cfg.block_w(k), cfg.block_c(k), cfg.block_p(k), cfg.heads,
                   cfg.block_c(k), rng);
            net.takes_[k] = std::move(t);
        }

        net.deconvs_.resize(static_cast<size_t>(nb));
        net.fuses_.resize(static_cast<size_t>(nb - 1));
        net.fuse_acts_.resize(static_cast<size_t>(nb - 1));
        for (int k = nb; k >= 1; --k) {
            int out_c = k >= 2 ? cfg.block_c(k - 1) : cfg.widths.front() / 2;
            net.deconvs_[static_cast<size_t>(k - 1)].init(cfg.block_c(k), out_c, rng);
            if (k >= 2)
                net.fuses_[static_cast<size_t>(k - 2)].init(2 * out_c, out_c, 3, 1, 1, rng);
        }
        net.head_.init(cfg.widths.front() / 2, cfg.structures, 1, 1, 0, rng);
        return net;
    }

    std::vector<nn::param*> params() {
        std::vector<nn::param*> ps;
        auto add = [&](std::vector<nn::param*> qs) {
            for (auto* q : qs) ps.push_back(q);
        };
        for (auto& b : enc_) add(b.params());
        add(aux_conv_.params());
        for (auto& kv : gives_) add(kv.second.params());
        for (auto& kv : takes_) add(kv.second.params());
        for (auto& d : deconvs_) add(d.params());
        for (auto& f : fuses_) add(f.params());
        add(head_.params());
        return ps;
    }

    std::uint64_t weights_hash() { return param_hash(params()); }

    give_module& give_at(int k) { return gives_.at(k); }
    take_module& take_at(int k) { return takes_.at(k); }

    // Segmentation forward pass; output is an (h, w, K) probability grid.
    // Caches everything needed by backward().
    tensor forward(const tensor& image) {
        const seg_config& cfg = config;
        if (image.rank() != 3 || image.dim(0) != cfg.h || image.dim(1) != cfg.w ||
            image.dim(2) != cfg.image_channels)
            throw shape_error("tgseg: image " + image.shape_str() + ", expected (" +
                              std::to_string(cfg.h) + "," + std::to_string(cfg.w) + "," +
                              std::to_string(cfg.image_channels) + ")");
        if (!diag || !diag->frozen) throw validation_error("tgseg: diagnosis net must be frozen");
        int nb = cfg.blocks();

        // encoder
        e_.assign(static_cast<size_t>(nb), tensor());
        tensor f = image;
        for (int k = 1; k <= nb; ++k) {
            f = enc_[static_cast<size_t>(k - 1)].forward(f);
            e_[static_cast<size_t>(k - 1)] = f;
        }

        // coarse auxiliary prediction (stop-gradient input to the classifier)
        aux_prob_ = aux_sig_.forward(nn::upsample2_nearest(aux_conv_.forward(e_[0])));

        // frozen diagnosis features on (image, coarse mask or zeros)
        tensor diag_mask =
            cfg.diag_mask_zeros ? tensor::zeros({cfg.h, cfg.w, cfg.structures}) : aux_prob_;
        const std::vector<tensor>& fd = [&]() -> const std::vector<tensor>& {
            diag->forward_logit(concat_channels(image, diag_mask));
            return diag->block_outputs();
        }();

        // Give: encoder-queried diagnosis selections per connected block
        fhat_.clear();
        for (auto& [k, g] : gives_)
            fhat_[k] = g.forward(e_[static_cast<size_t>(k - 1)], fd[static_cast<size_t>(k - 1)]);

        // decoder, deepest block first
        d_.assign(static_cast<size_t>(nb), tensor());
        cat_widths_.assign(static_cast<size_t>(nb - 1), 0);
        d_[static_cast<size_t>(nb - 1)] = e_[static_cast<size_t>(nb - 1)];
        tensor cur;
        for (int k = nb; k >= 1; --k) {
            const tensor& dk = d_[static_cast<size_t>(k - 1)];
            tensor tk = cfg.is_connected(k)
                            ? nn::unpatchify(takes_[k].forward(fhat_[k], dk), cfg.block_h(k),
                                             cfg.block_w(k), cfg.block_c(k), cfg.block_p(k))
                            : dk;
            cur = deconvs_[static_cast<size_t>(k - 1)].forward(tk);
            if (k >= 2) {
                cat_widths_[static_cast<size_t>(k - 2)] = cur.dim(2);
                tensor cat = concat_channels(cur, e_[static_cast<size_t>(k - 2)]);
                d_[static_cast<size_t>(k - 2)] = fuse_acts_[static_cast<size_t>(k - 2)].forward(
                    fuses_[static_cast<size_t>(k - 2)].forward(cat));
            }
        }
        prob_ = out_sig_.forward(head_.forward(head_act_.forward(cur)));
        return prob_;
    }

    const tensor& aux_prob() const { return aux_prob_; }

    // Backprop from gradients on the main output and the auxiliary output.
    // Touches only this network's parameters; the diagnosis features and the
    // coarse mask feed-through are stop-gradient by construction.
    void backward(const tensor& dprob, const tensor& daux_prob) {
        const seg_config& cfg = config;
        int nb = cfg.blocks();
        std::vector<tensor> de(static_cast<size_t>(nb));  // grads on encoder outputs
        for (int k = 1; k <= nb; ++k)
            de[static_cast<size_t>(k - 1)] =
                tensor({cfg.block_h(k), cfg.block_w(k), cfg.block_c(k)});

        tensor dcur = head_act_.backward(head_.backward(out_sig_.backward(dprob)));
        for (int k = 1; k <= nb; ++k) {
            // dcur currently holds the gradient w.r.t. deconv_k's output
            tensor dtk = deconvs_[static_cast<size_t>(k - 1)].backward(dcur);
            tensor ddk;
            if (cfg.is_connected(k)) {
                nn::mat dseq =
                    nn::patchify(dtk, cfg.block_p(k));  // adjoint of unpatchify is patchify
                nn::mat dfhat;
                takes_[k].backward(dseq, dfhat, ddk);
                de[static_cast<size_t>(k - 1)] += gives_[k].backward(dfhat);
            } else {
                ddk = dtk;
            }
            if (k == nb) {
                de[static_cast<size_t>(nb - 1)] += ddk;  // decoder root is e_nb
                break;
            }
            // d_k was produced by stage k+1: relu(fuse(concat(deconv, e_k)))
            tensor dcat = fuses_[static_cast<size_t>(k - 1)].backward(
                fuse_acts_[static_cast<size_t>(k - 1)].backward(ddk));
            int wa = cat_widths_[static_cast<size_t>(k - 1)];
            tensor du({dcat.dim(0), dcat.dim(1), wa});
            for (int y = 0; y < dcat.dim(0); ++y)
                for (int x = 0; x < dcat.dim(1); ++x) {
                    for (int ch = 0; ch < wa; ++ch) du(y, x, ch) = dcat(y, x, ch);
                    for (int ch = wa; ch < dcat.dim(2); ++ch)
                        de[static_cast<size_t>(k - 1)](y, x, ch - wa) += dcat(y, x, ch);
                }
            dcur = du;
        }

        // auxiliary head
        tensor daux_pre =
            nn::upsample2_nearest_backward(aux_sig_.backward(daux_prob));
        de[0] += aux_conv_.backward(daux_pre);

        // encoder
        tensor g = de[static_cast<size_t>(nb - 1)];
        for (int k = nb; k >= 1; --k) {
            tensor gi = enc_[static_cast<size_t>(k - 1)].backward(g);
            if (k > 1) {
                gi += de[static_cast<size_t>(k - 2)];
                g = gi;
            }
        }
    }

private:
    std::vector<nn::residual_block> enc_;
    nn::conv2d aux_conv_;
    nn::sigmoid_t aux_sig_;
    std::map<int, give_module> gives_;
    std::map<int, take_module> takes_;
    std::vector<nn::deconv2x2> deconvs_;
    std::vector<nn::conv2d> fuses_;
    std::vector<nn::relu_t> fuse_acts_;
    nn::relu_t head_act_;
    nn::conv2d head_;
    nn::sigmoid_t out_sig_;

    // forward caches
    std::vector<tensor> e_, d_;
    std::map<int, nn::mat> fhat_;
    std::vector<int> cat_widths_;
    tensor aux_prob_, prob_;
};

// ---------------------------------------------------------------------------
// Training on DF-GT targets

inline tensor seg_forward(tgseg_net& net, const tensor& image) { return net.forward(image); }

inline train_history train_tgseg(tgseg_net& net, const dfgt_dataset& dfgt, const dataset& data,
                                 const seg_hyper& hyper) {
    hyper.validate();
    if (!net.diag || !net.diag->frozen)
        throw validation_error("train_tgseg: diagnosis net must be frozen");
    std::uint64_t diag_theta = net.diag->theta_hash();

    // pair samples with their fused targets up front; any hole is an error
    std::vector<const tensor*> targets;
    targets.reserve(data.samples.size());
    for (const auto& s : data.samples) {
        const dfgt_record* rec = dfgt.find(s.sample_id);
        if (!rec)
            throw validation_error("train_tgseg: no fused label for sample '" + s.sample_id +
                                   "'");
        targets.push_back(&rec->fused.values);
    }

    train_history history;
    nn::adam opt(hyper.lr);
    std::vector<nn::param*> ps = net.params();
    std::mt19937_64 order_rng = stage_rng(hyper.seed, "tgseg-order");
    int n = static_cast<int>(data.samples.size());

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::vector<int> order = shuffle_indices(n, order_rng);
        double epoch_main = 0.0, epoch_aux = 0.0;
        for (int start = 0; start < n; start += hyper.batch_size) {
            int stop = std::min(n, start + hyper.batch_size);
            nn::adam::zero_grad(ps);
            double inv = 1.0 / (stop - start);
            for (int i = start; i < stop; ++i) {
                int idx = order[static_cast<size_t>(i)];
                const auto& s = data.samples[static_cast<size_t>(idx)];
                const tensor& target = *targets[static_cast<size_t>(idx)];
                tensor prob = net.forward(s.image);
                tensor dprob, daux;
                double main_loss = nn::bce_mean(prob, target, dprob);
                double aux_loss = nn::bce_mean(net.aux_prob(), target, daux);
                epoch_main += main_loss;
                epoch_aux += aux_loss;
                dprob *= inv;
                daux *= inv * hyper.aux_weight;
                net.backward(dprob, daux);
            }
            opt.step(ps);
        }
        double mean_main = epoch_main / n, mean_aux = epoch_aux / n;
        double mean_total = mean_main + hyper.aux_weight * mean_aux;
        if (!std::isfinite(mean_total))
            throw numeric_error("train_tgseg: non-finite loss at epoch " + std::to_string(epoch));
        history.records.push_back(
            {epoch, mean_total, {{"main_bce", mean_main}, {"aux_bce", mean_aux}}});
    }

    if (net.diag->theta_hash() != diag_theta)
        throw numeric_error("train_tgseg: frozen diagnosis parameters changed");
    return history;
}

// ---------------------------------------------------------------------------
// Checkpointing (the diagnosis net is checkpointed separately; loading takes
// the frozen classifier to attach)

inline void save_tgseg(const std::filesystem::path& path, tgseg_net& net) {
    nlohmann::json header = {{"arch", "tgseg"}, {"config", net.config.to_json()}};
    save_checkpoint(path, header, net.params());
}

inline tgseg_net load_tgseg(const std::filesystem::path& path, diagnosis_net& diag_net) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw io_error("load_tgseg: cannot open " + path.string());
    char magic[4];
    std::uint32_t ver;
    std::uint64_t hl;
    probe.read(magic, 4);
    probe.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    probe.read(reinterpret_cast<char*>(&hl), sizeof(hl));
    if (!probe || std::memcmp(magic, checkpoint_magic, 4) != 0)
        throw format_error("load_tgseg: " + path.string() + " is not a checkpoint file");
    std::string hs(hl, '\0');
    probe.read(hs.data(), static_cast<std::streamsize>(hl));
    if (!probe) throw format_error("load_tgseg: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("load_tgseg: bad header: ") + e.what());
    }
    if (header.value("arch", "") != "tgseg")
        throw format_error("load_tgseg: checkpoint does not hold a segmentation net");
    tgseg_net net = tgseg_net::build(seg_config::from_json(header.at("config")), diag_net);
    load_checkpoint(path, net.params());
    return net;
}

}  // namespace diffseg
