#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "diffseg/tgseg.hpp"
#include "gradcheck.hpp"

using namespace diffseg;
using testutil::random_tensor;

namespace {

seg_config toy_seg_config() {
    seg_config cfg;
    cfg.h = 16;
    cfg.w = 16;
    cfg.image_channels = 1;
    cfg.structures = 1;
    cfg.widths = {8, 16};
    cfg.patch = {2, 1};
    cfg.heads = 4;
    cfg.connected = {1, 2};
    cfg.seed = 3;
    return cfg;
}

diag_config toy_diag_config() {
    diag_config cfg;
    cfg.h = 16;
    cfg.w = 16;
    cfg.image_channels = 1;
    cfg.structures = 1;
    cfg.widths = {8, 16};
    cfg.seed = 5;
    return cfg;
}

// A randomly initialized classifier is enough for wiring tests: the bridges
// only need fixed, frozen features to attend over.
diagnosis_net frozen_toy_diag() {
    diagnosis_net net = diagnosis_net::build(toy_diag_config());
    net.frozen = true;
    return net;
}

// Toy segmentation task: a bright axis-aligned square on a dim noisy
// background; the target is the square itself (softened to 0.05/0.95).
std::pair<dataset, dfgt_dataset> square_task(int count, std::uint64_t seed) {
    dataset data;
    data.split = dataset_split::train;
    dfgt_dataset dfgt;
    dfgt.structures = 1;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pos_d(1, 7), size_d(4, 8);
    std::uniform_real_distribution<double> noise(0.0, 0.2);
    for (int i = 0; i < count; ++i) {
        int y0 = pos_d(rng), x0 = pos_d(rng), sz = size_d(rng);
        multi_rater_sample s;
        s.sample_id = "sq_" + std::to_string(i);
        s.label = sz >= 6 ? 1 : 0;
        s.image = tensor({16, 16, 1});
        s.masks = tensor({16, 16, 1, 1});
        tensor fused({16, 16, 1});
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                bool inside = y >= y0 && y < std::min(16, y0 + sz) && x >= x0 &&
                              x < std::min(16, x0 + sz);
                s.image(y, x, 0) = noise(rng) + (inside ? 0.8 : 0.0);
                s.masks(y, x, 0, 0) = inside ? 1.0 : 0.0;
                fused(y, x, 0) = inside ? 0.95 : 0.05;
            }
        data.samples.push_back(std::move(s));
        dfgt.records.push_back({data.samples.back().sample_id, {fused}, 0.0, 0.0, {1.0}});
    }
    return {std::move(data), std::move(dfgt)};
}

nn::mat permute_rows(const nn::mat& m, const std::vector<int>& perm) {
    nn::mat out(m.rows(), m.cols());
    for (size_t i = 0; i < perm.size(); ++i) out.row(static_cast<long>(i)) = m.row(perm[i]);
    return out;
}

tensor permute_patches(const tensor& grid, int p, const std::vector<int>& perm) {
    return nn::unpatchify(permute_rows(nn::patchify(grid, p), perm), grid.dim(0), grid.dim(1),
                          grid.dim(2), p);
}

double max_param_delta(std::vector<nn::param*> after, const std::vector<nn::mat>& before,
                       size_t& cursor) {
    double worst = 0.0;
    for (auto* p : after) {
        worst = std::max(worst, (p->w - before[cursor]).cwiseAbs().maxCoeff());
        ++cursor;
    }
    return worst;
}

}  // namespace

TEST_CASE("seg_config validates geometry and serializes", "[tgseg]") {
    seg_config cfg = toy_seg_config();
    REQUIRE_NOTHROW(cfg.validate());

    seg_config back = seg_config::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.connected == cfg.connected);
    CHECK(back.block_d(1) == 2 * 2 * 8);

    seg_config bad = cfg;
    bad.patch = {3, 1};  // 3 does not divide the 8x8 block grid
    CHECK_THROWS_AS(bad.validate(), validation_error);

    bad = cfg;
    bad.heads = 5;  // does not divide D = 32
    CHECK_THROWS_AS(bad.validate(), validation_error);

    bad = cfg;
    bad.connected = {0};
    CHECK_THROWS_AS(bad.validate(), validation_error);
    bad.connected = {3};
    CHECK_THROWS_AS(bad.validate(), validation_error);
    bad.connected = {1, 1};
    CHECK_THROWS_AS(bad.validate(), validation_error);

    bad = cfg;
    bad.widths = {7, 16};  // final deconv halves the first width
    CHECK_THROWS_AS(bad.validate(), validation_error);

    bad = cfg;
    bad.widths = {8, 16, 32};  // length no longer matches patch list
    CHECK_THROWS_AS(bad.validate(), validation_error);
}

TEST_CASE("network construction follows the connected set", "[tgseg]") {
    diagnosis_net diag = frozen_toy_diag();

    tgseg_net bridged = tgseg_net::build(toy_seg_config(), diag);
    // encoder 2 blocks x 6, aux conv 2, two bridges x (give 6 + take 6),
    // deconvs 2 x 2, fuse conv 2, head 2
    CHECK(bridged.params().size() == 46);

    seg_config plain_cfg = toy_seg_config();
    plain_cfg.connected = {};
    tgseg_net plain = tgseg_net::build(plain_cfg, diag);
    CHECK(plain.params().size() == 22);

    // same seed, same shared trunk: construction draws bridge weights after
    // the trunk, so the trunk initialization matches across the two variants
    CHECK(plain.params()[0]->w == bridged.params()[0]->w);

    diagnosis_net thawed = diagnosis_net::build(toy_diag_config());
    CHECK_THROWS_AS(tgseg_net::build(toy_seg_config(), thawed), validation_error);

    diag_config small = toy_diag_config();
    small.h = small.w = 32;
    diagnosis_net mismatched = diagnosis_net::build(small);
    mismatched.frozen = true;
    CHECK_THROWS_AS(tgseg_net::build(toy_seg_config(), mismatched), validation_error);
}

TEST_CASE("give module emits the block sequence and dies with its feed-forward", "[tgseg]") {
    std::mt19937_64 rng(11);
    give_module g;
    g.init(8, 8, 8, 2, 4, 8, 8, rng);  // matched widths: no projections
    CHECK(g.params().size() == 6);

    tensor f_se = random_tensor({8, 8, 8}, rng);
    tensor f_d = random_tensor({8, 8, 8}, rng);
    nn::mat out = g.forward(f_se, f_d);
    REQUIRE(out.rows() == 16);  // 4x4 patch grid
    REQUIRE(out.cols() == 32);  // 2*2*8

    for (const nn::mat& a : g.attn.affinity)
        for (long r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-6);

    // zeroing the feed-forward output stage kills the module output exactly
    g.mlp.w2.w.setZero();
    nn::mat dead = g.forward(f_se, f_d);
    CHECK(dead.cwiseAbs().maxCoeff() == 0.0);

    tensor wrong = random_tensor({4, 4, 8}, rng);
    CHECK_THROWS_AS(g.forward(wrong, f_d), shape_error);
}

TEST_CASE("bridge attention permutes with the patch order", "[tgseg]") {
    std::mt19937_64 rng(13);
    std::vector<int> perm = {2, 0, 3, 1};  // 8x8 grid, patch 4 -> 4 patches

    give_module g;
    g.init(8, 8, 4, 4, 4, 4, 4, rng);
    tensor f_se = random_tensor({8, 8, 4}, rng);
    tensor f_d = random_tensor({8, 8, 4}, rng);
    nn::mat base = g.forward(f_se, f_d);

    give_module gp = g;
    gp.pos = permute_rows(g.pos, perm);
    nn::mat permuted = gp.forward(permute_patches(f_se, 4, perm), permute_patches(f_d, 4, perm));
    CHECK((permuted - permute_rows(base, perm)).cwiseAbs().maxCoeff() < 1e-9);

    take_module t;
    t.init(8, 8, 4, 4, 4, 4, rng);
    nn::mat fd_hat = base;
    tensor f_sd = random_tensor({8, 8, 4}, rng);
    nn::mat tbase = t.forward(fd_hat, f_sd);

    take_module tp = t;
    tp.pos = permute_rows(t.pos, perm);
    nn::mat tperm = tp.forward(permute_rows(fd_hat, perm), permute_patches(f_sd, 4, perm));
    CHECK((tperm - permute_rows(tbase, perm)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("take module wraps a standalone attention computation", "[tgseg]") {
    std::mt19937_64 rng(17);
    take_module t;
    t.init(8, 8, 8, 2, 4, 8, rng);

    nn::mat fd_hat = testutil::random_mat(16, 32, rng);
    tensor f_sd = random_tensor({8, 8, 8}, rng);
    nn::mat out = t.forward(fd_hat, f_sd);
    REQUIRE(out.rows() == 16);
    REQUIRE(out.cols() == 32);

    nn::mha standalone;
    std::mt19937_64 dummy(0);
    standalone.init(32, 4, dummy);
    standalone.wq.w = t.attn.wq.w;
    standalone.wk.w = t.attn.wk.w;
    standalone.wv.w = t.attn.wv.w;
    standalone.wo.w = t.attn.wo.w;
    nn::mat expected =
        standalone.forward(fd_hat + t.pos, nn::patchify(f_sd, 2) + t.pos, nn::patchify(f_sd, 2));
    CHECK((t.mlp.in_cache - expected).cwiseAbs().maxCoeff() < 1e-12);

    nn::mat bad = testutil::random_mat(16, 16, rng);
    CHECK_THROWS_AS(t.forward(bad, f_sd), shape_error);
}

TEST_CASE("alignment projections appear exactly when widths differ", "[tgseg]") {
    std::mt19937_64 rng(19);
    give_module g;
    g.init(8, 8, 8, 2, 4, 5, 7, rng);  // encoder 5 and classifier 7 channels, common 8
    CHECK(g.proj_se);
    CHECK(g.proj_d);
    CHECK(g.params().size() == 10);  // two biased projections + attention + feed-forward

    tensor f_se = random_tensor({8, 8, 5}, rng);
    tensor f_d = random_tensor({8, 8, 7}, rng);
    nn::mat out = g.forward(f_se, f_d);
    REQUIRE(out.rows() == 16);
    REQUIRE(out.cols() == 32);

    nn::adam::zero_grad(g.params());
    nn::mat dseq = testutil::random_mat(16, 32, rng);
    tensor dse = g.backward(dseq);
    CHECK(dse.shape() == std::vector<int>{8, 8, 5});
    CHECK(g.pse.w.g.cwiseAbs().maxCoeff() > 0.0);
    CHECK(g.pd.w.g.cwiseAbs().maxCoeff() > 0.0);

    take_module t;
    t.init(8, 8, 8, 2, 4, 6, rng);
    CHECK(t.proj_dec);
    CHECK(t.params().size() == 8);
    tensor f_sd = random_tensor({8, 8, 6}, rng);
    nn::mat tout = t.forward(out, f_sd);
    REQUIRE(tout.cols() == 32);

    nn::adam::zero_grad(t.params());
    nn::mat dfd;
    tensor dsd;
    t.backward(dseq, dfd, dsd);
    CHECK(dsd.shape() == std::vector<int>{8, 8, 6});
    CHECK(dfd.rows() == 16);
    CHECK(t.pdec.w.g.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("forward yields deterministic probabilities at the input geometry", "[tgseg]") {
    diagnosis_net diag = frozen_toy_diag();
    tgseg_net net = tgseg_net::build(toy_seg_config(), diag);

    std::mt19937_64 rng(23);
    tensor image = random_tensor({16, 16, 1}, rng, 0.0, 1.0);
    tensor prob = net.forward(image);
    REQUIRE(prob.shape() == std::vector<int>{16, 16, 1});
    for (long i = 0; i < prob.size(); ++i) {
        CHECK(prob[i] > 0.0);
        CHECK(prob[i] < 1.0);
    }

    const tensor& aux = net.aux_prob();
    REQUIRE(aux.shape() == std::vector<int>{16, 16, 1});
    CHECK(aux.min() > 0.0);
    CHECK(aux.max() < 1.0);

    for (int k : {1, 2}) {
        for (const nn::mat& a : net.give_at(k).attn.affinity)
            for (long r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-6);
        for (const nn::mat& a : net.take_at(k).attn.affinity)
            for (long r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-6);
    }

    tensor again = net.forward(image);
    CHECK(max_abs_diff(prob, again) == 0.0);

    // the stop-gradient classifier input is configurable: zeros instead of
    // the coarse auxiliary prediction
    seg_config zcfg = toy_seg_config();
    zcfg.diag_mask_zeros = true;
    tgseg_net znet = tgseg_net::build(zcfg, diag);
    tensor zprob = znet.forward(image);
    REQUIRE(zprob.shape() == std::vector<int>{16, 16, 1});

    tensor wrong = random_tensor({16, 8, 1}, rng);
    CHECK_THROWS_AS(net.forward(wrong), shape_error);
}

TEST_CASE("unbridged decoder runs as a plain deconvolution path", "[tgseg]") {
    diagnosis_net diag = frozen_toy_diag();
    seg_config cfg = toy_seg_config();
    cfg.connected = {};
    tgseg_net net = tgseg_net::build(cfg, diag);

    std::mt19937_64 rng(29);
    tensor image = random_tensor({16, 16, 1}, rng, 0.0, 1.0);
    tensor prob = net.forward(image);
    REQUIRE(prob.shape() == std::vector<int>{16, 16, 1});
    CHECK(prob.min() > 0.0);
    CHECK(prob.max() < 1.0);
}

TEST_CASE("one training step reaches every bridge parameter", "[tgseg]") {
    diagnosis_net diag = frozen_toy_diag();
    tgseg_net net = tgseg_net::build(toy_seg_config(), diag);
    auto [data, dfgt] = square_task(4, 31);

    std::vector<nn::mat> before;
    for (int k : {1, 2}) {
        for (auto* p : net.give_at(k).params()) before.push_back(p->w);
        for (auto* p : net.take_at(k).params()) before.push_back(p->w);
    }

    seg_hyper hyper;
    hyper.epochs = 1;
    hyper.batch_size = 4;
    hyper.lr = 1e-3;
    hyper.seed = 9;
    train_history hist = train_tgseg(net, dfgt, data, hyper);
    REQUIRE(hist.records.size() == 1);
    REQUIRE(hist.records[0].mean_loss > 0.0);

    size_t cursor = 0;
    for (int k : {1, 2}) {
        for (auto* p : net.give_at(k).params()) {
            CHECK((p->w - before[cursor]).cwiseAbs().maxCoeff() > 0.0);
            ++cursor;
        }
        for (auto* p : net.take_at(k).params()) {
            CHECK((p->w - before[cursor]).cwiseAbs().maxCoeff() > 0.0);
            ++cursor;
        }
    }
}

TEST_CASE("training descends on a toy task without touching the classifier", "[tgseg]") {
    diagnosis_net diag = frozen_toy_diag();
    std::uint64_t diag_theta = diag.theta_hash();
    auto [data, dfgt] = square_task(8, 37);

    seg_hyper hyper;
    hyper.epochs = 35;
    hyper.batch_size = 4;
    hyper.lr = 3e-3;
    hyper.seed = 41;

    tgseg_net net = tgseg_net::build(toy_seg_config(), diag);
    train_history hist = train_tgseg(net, dfgt, data, hyper);
    REQUIRE(hist.records.size() == 35);
    CHECK(hist.records.back().mean_loss < 0.5 * hist.records.front().mean_loss);
    CHECK(hist.records.back().metrics.at("main_bce") <
          hist.records.front().metrics.at("main_bce"));
    CHECK(diag.theta_hash() == diag_theta);

    // training is deterministic in (seed, data)
    tgseg_net twin = tgseg_net::build(toy_seg_config(), diag);
    train_tgseg(twin, dfgt, data, hyper);
    CHECK(twin.weights_hash() == net.weights_hash());

    // zero epochs: no history, no weight movement
    tgseg_net idle = tgseg_net::build(toy_seg_config(), diag);
    std::uint64_t before = idle.weights_hash();
    seg_hyper none = hyper;
    none.epochs = 0;
    train_history empty = train_tgseg(idle, dfgt, data, none);
    CHECK(empty.records.empty());
    CHECK(idle.weights_hash() == before);

    // every sample must have a fused label
    dfgt_dataset holey = dfgt;
    holey.records[2].sample_id = "unknown";
    tgseg_net other = tgseg_net::build(toy_seg_config(), diag);
    CHECK_THROWS_AS(train_tgseg(other, holey, data, hyper), validation_error);
}

TEST_CASE("checkpoints restore bit-identical predictions", "[tgseg]") {
    diagnosis_net diag = frozen_toy_diag();
    auto [data, dfgt] = square_task(4, 43);

    tgseg_net net = tgseg_net::build(toy_seg_config(), diag);
    seg_hyper hyper;
    hyper.epochs = 2;
    hyper.batch_size = 4;
    hyper.lr = 1e-3;
    train_tgseg(net, dfgt, data, hyper);

    std::filesystem::path dir =
        std::filesystem::temp_directory_path() / "diffseg_tgseg_ckpt";
    std::filesystem::create_directories(dir);
    std::filesystem::path path = dir / "seg.ckpt";
    save_tgseg(path, net);

    tgseg_net loaded = load_tgseg(path, diag);
    CHECK(loaded.weights_hash() == net.weights_hash());
    tensor image = data.samples[0].image;
    CHECK(max_abs_diff(loaded.forward(image), net.forward(image)) == 0.0);

    // a diagnosis checkpoint is not a segmentation checkpoint
    std::filesystem::path diag_path = dir / "diag.ckpt";
    save_diagnet(diag_path, diag);
    CHECK_THROWS_AS(load_tgseg(diag_path, diag), format_error);
    CHECK_THROWS_AS(load_tgseg(dir / "absent.ckpt", diag), io_error);

    // the attached classifier must match the stored geometry
    diag_config small = toy_diag_config();
    small.h = small.w = 32;
    diagnosis_net mismatched = diagnosis_net::build(small);
    mismatched.frozen = true;
    CHECK_THROWS_AS(load_tgseg(path, mismatched), validation_error);

    std::filesystem::remove_all(dir);
}
