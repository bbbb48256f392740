#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "diffseg/checkpoint.hpp"
#include "diffseg/nn/adam.hpp"
#include "diffseg/nn/attention.hpp"
#include "diffseg/nn/ops.hpp"
#include "gradcheck.hpp"

using namespace diffseg;
using namespace diffseg::nn;
using namespace testutil;

namespace {

// Direct (definition-level) convolution used as an independent oracle.
tensor conv_direct(const tensor& x, const mat& w, const mat& b, int k, int stride, int pad) {
    int in_h = x.dim(0), in_w = x.dim(1), in_c = x.dim(2);
    int out_c = static_cast<int>(w.cols());
    int out_h = (in_h + 2 * pad - k) / stride + 1;
    int out_w = (in_w + 2 * pad - k) / stride + 1;
    tensor y({out_h, out_w, out_c});
    for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox)
            for (int co = 0; co < out_c; ++co) {
                double acc = b(0, co);
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        for (int ci = 0; ci < in_c; ++ci) {
                            int iy = oy * stride + ky - pad;
                            int ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= in_h || ix < 0 || ix >= in_w) continue;
                            acc += x(iy, ix, ci) * w((ky * k + kx) * in_c + ci, co);
                        }
                y(oy, ox, co) = acc;
            }
    return y;
}

// Reference softmax cross-attention on full embeddings, no heads, no caching.
mat attention_direct(const mat& xq, const mat& xk, const mat& xv, const mha& m) {
    mat q = xq * m.wq.w, k = xk * m.wk.w, v = xv * m.wv.w;
    double scale = 1.0 / std::sqrt(static_cast<double>(m.d));
    mat out(q.rows(), m.d);
    for (int hh = 0; hh < m.heads; ++hh) {
        mat s = q.middleCols(hh * m.dh, m.dh) * k.middleCols(hh * m.dh, m.dh).transpose() * scale;
        for (long r = 0; r < s.rows(); ++r) {
            double mx = s.row(r).maxCoeff();
            double z = 0.0;
            for (long c = 0; c < s.cols(); ++c) z += std::exp(s(r, c) - mx);
            for (long c = 0; c < s.cols(); ++c) s(r, c) = std::exp(s(r, c) - mx) / z;
        }
        out.middleCols(hh * m.dh, m.dh) = s * v.middleCols(hh * m.dh, m.dh);
    }
    return out * m.wo.w;
}

}  // namespace

TEST_CASE("conv2d matches the direct convolution oracle") {
    std::mt19937_64 rng(101);
    for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 1, 0}, {1, 2, 0}}) {
        conv2d conv;
        conv.init(3, 5, k, stride, pad, rng);
        tensor x = random_tensor({8, 6, 3}, rng);
        tensor got = conv.forward(x);
        tensor want = conv_direct(x, conv.w.w, conv.b.w, k, stride, pad);
        REQUIRE(got.shape() == want.shape());
        REQUIRE(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv2d gradients match central differences") {
    std::mt19937_64 rng(102);
    conv2d conv;
    conv.init(2, 3, 3, 2, 1, rng);
    tensor x = random_tensor({6, 6, 2}, rng);
    tensor dy_dir = random_tensor({3, 3, 3}, rng);

    auto loss = [&] { return dot(conv.forward(x), dy_dir); };

    conv.w.zero_grad();
    conv.b.zero_grad();
    conv.forward(x);
    tensor dx = conv.backward(dy_dir);

    for (long i = 0; i < x.size(); i += 7)
        REQUIRE(grad_close(dx[i], central_diff(x[i], loss)));
    for (long i = 0; i < conv.w.w.size(); i += 11)
        REQUIRE(grad_close(conv.w.g.data()[i], central_diff(conv.w.w.data()[i], loss)));
    for (long i = 0; i < conv.b.w.size(); ++i)
        REQUIRE(grad_close(conv.b.g.data()[i], central_diff(conv.b.w.data()[i], loss)));
}

TEST_CASE("conv2d backward without accumulation leaves parameter grads untouched") {
    std::mt19937_64 rng(103);
    conv2d conv;
    conv.init(2, 2, 3, 1, 1, rng);
    tensor x = random_tensor({5, 5, 2}, rng);
    tensor dy_dir = random_tensor({5, 5, 2}, rng);
    conv.w.zero_grad();
    conv.b.zero_grad();
    conv.forward(x);

    tensor dx_frozen = conv.backward(dy_dir, /*accumulate=*/false);
    REQUIRE(conv.w.g.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(conv.b.g.cwiseAbs().maxCoeff() == 0.0);

    tensor dx_train = conv.backward(dy_dir, /*accumulate=*/true);
    REQUIRE(max_abs_diff(dx_frozen, dx_train) == 0.0);  // input grad identical either way
    REQUIRE(conv.w.g.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("deconv2x2 scatters each input pixel into exactly its 2x2 block") {
    std::mt19937_64 rng(104);
    deconv2x2 up;
    up.init(3, 2, rng);
    tensor x = tensor::zeros({4, 4, 3});
    x(1, 2, 0) = 1.0;  // single impulse

    tensor y = up.forward(x);
    REQUIRE(y.shape() == std::vector<int>{8, 8, 2});
    for (int oy = 0; oy < 8; ++oy)
        for (int ox = 0; ox < 8; ++ox)
            for (int c = 0; c < 2; ++c) {
                double base = up.b.w(0, c);
                bool inside = (oy / 2 == 1 && ox / 2 == 2);
                if (inside) {
                    int pos = (oy % 2) * 2 + (ox % 2);
                    REQUIRE(y(oy, ox, c) ==
                            Catch::Approx(up.w.w(0, pos * 2 + c) + base).margin(1e-14));
                } else {
                    REQUIRE(y(oy, ox, c) == Catch::Approx(base).margin(1e-14));
                }
            }
}

TEST_CASE("deconv2x2 gradients match central differences") {
    std::mt19937_64 rng(105);
    deconv2x2 up;
    up.init(2, 3, rng);
    tensor x = random_tensor({3, 4, 2}, rng);
    tensor dy_dir = random_tensor({6, 8, 3}, rng);

    auto loss = [&] { return dot(up.forward(x), dy_dir); };

    up.w.zero_grad();
    up.b.zero_grad();
    up.forward(x);
    tensor dx = up.backward(dy_dir);

    for (long i = 0; i < x.size(); i += 3)
        REQUIRE(grad_close(dx[i], central_diff(x[i], loss)));
    for (long i = 0; i < up.w.w.size(); i += 5)
        REQUIRE(grad_close(up.w.g.data()[i], central_diff(up.w.w.data()[i], loss)));
    for (long i = 0; i < up.b.w.size(); ++i)
        REQUIRE(grad_close(up.b.g.data()[i], central_diff(up.b.w.data()[i], loss)));
}

TEST_CASE("linear gradients match central differences, with and without bias") {
    std::mt19937_64 rng(106);
    for (bool bias : {true, false}) {
        linear lin;
        lin.init(5, 4, rng, bias);
        mat x = random_mat(3, 5, rng);
        mat dy_dir = random_mat(3, 4, rng);

        auto loss = [&] { return dot(lin.forward(x), dy_dir); };

        lin.w.zero_grad();
        lin.b.zero_grad();
        lin.forward(x);
        mat dx = lin.backward(dy_dir);

        for (long i = 0; i < x.size(); ++i)
            REQUIRE(grad_close(dx.data()[i], central_diff(x.data()[i], loss)));
        for (long i = 0; i < lin.w.w.size(); ++i)
            REQUIRE(grad_close(lin.w.g.data()[i], central_diff(lin.w.w.data()[i], loss)));
        if (bias)
            for (long i = 0; i < lin.b.w.size(); ++i)
                REQUIRE(grad_close(lin.b.g.data()[i], central_diff(lin.b.w.data()[i], loss)));
    }
}

TEST_CASE("activation forward values match closed forms") {
    REQUIRE(gelu_scalar(0.0) == 0.0);
    REQUIRE(gelu_scalar(1.0) == Catch::Approx(0.8413447460685429).epsilon(1e-14));
    REQUIRE(gelu_scalar(-1.0) == Catch::Approx(-0.15865525393145707).epsilon(1e-12));
    REQUIRE(sigmoid_scalar(0.0) == 0.5);
    REQUIRE(sigmoid_scalar(1000.0) == 1.0);
    REQUIRE(sigmoid_scalar(-1000.0) == Catch::Approx(0.0).margin(1e-300));
    REQUIRE(std::isfinite(sigmoid_scalar(-1000.0)));
}

TEST_CASE("activation gradients match central differences") {
    std::mt19937_64 rng(107);
    tensor x = random_tensor({4, 4, 2}, rng, -2.0, 2.0);
    // keep relu away from its kink
    for (long i = 0; i < x.size(); ++i)
        if (std::abs(x[i]) < 1e-3) x[i] = 0.1;
    tensor dy_dir = random_tensor({4, 4, 2}, rng);
    mat xm = random_mat(4, 6, rng, -2.0, 2.0);
    mat dym = random_mat(4, 6, rng);

    relu_t relu;
    auto relu_loss = [&] { return dot(relu.forward(x), dy_dir); };
    relu.forward(x);
    tensor drelu = relu.backward(dy_dir);
    for (long i = 0; i < x.size(); ++i)
        REQUIRE(grad_close(drelu[i], central_diff(x[i], relu_loss)));

    gelu_t gelu;
    auto gelu_loss = [&] { return dot(gelu.forward(xm), dym); };
    gelu.forward(xm);
    mat dgelu = gelu.backward(dym);
    for (long i = 0; i < xm.size(); ++i)
        REQUIRE(grad_close(dgelu.data()[i], central_diff(xm.data()[i], gelu_loss)));

    tanh_t th;
    auto tanh_loss = [&] { return dot(th.forward(xm), dym); };
    th.forward(xm);
    mat dtanh = th.backward(dym);
    for (long i = 0; i < xm.size(); ++i)
        REQUIRE(grad_close(dtanh.data()[i], central_diff(xm.data()[i], tanh_loss)));

    sigmoid_t sg;
    auto sig_loss = [&] { return dot(sg.forward(x), dy_dir); };
    sg.forward(x);
    tensor dsig = sg.backward(dy_dir);
    for (long i = 0; i < x.size(); ++i)
        REQUIRE(grad_close(dsig[i], central_diff(x[i], sig_loss)));
}

TEST_CASE("global average pool and nearest upsampling are exact adjoint pairs") {
    std::mt19937_64 rng(108);
    global_avg_pool pool;
    tensor x = random_tensor({6, 4, 3}, rng);
    mat pooled = pool.forward(x);
    for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int y = 0; y < 6; ++y)
            for (int xx = 0; xx < 4; ++xx) s += x(y, xx, c);
        REQUIRE(pooled(0, c) == Catch::Approx(s / 24.0).epsilon(1e-14));
    }
    mat dy_dir = random_mat(1, 3, rng);
    tensor dx = pool.backward(dy_dir);
    for (long i = 0; i < x.size(); ++i)
        REQUIRE(grad_close(dx[i], central_diff(x[i], [&] { return dot(pool.forward(x), dy_dir); })));

    // <up(x), y> == <x, up_backward(y)>
    tensor small = random_tensor({3, 5, 2}, rng);
    tensor big = random_tensor({6, 10, 2}, rng);
    double lhs = dot(upsample2_nearest(small), big);
    double rhs = dot(small, upsample2_nearest_backward(big));
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("binary cross entropy with logits is stable and has the sigmoid gradient") {
    REQUIRE(bce_with_logits(0.0, 0.0) == Catch::Approx(std::log(2.0)).epsilon(1e-14));
    REQUIRE(bce_with_logits(0.0, 1.0) == Catch::Approx(std::log(2.0)).epsilon(1e-14));
    REQUIRE(bce_with_logits(2.0, 1.0) == Catch::Approx(0.12692801104297263).epsilon(1e-13));
    REQUIRE(std::isfinite(bce_with_logits(1000.0, 0.0)));
    REQUIRE(std::isfinite(bce_with_logits(-1000.0, 1.0)));
    REQUIRE(bce_with_logits(1000.0, 1.0) == Catch::Approx(0.0).margin(1e-300));

    for (double z : {-3.0, -0.5, 0.0, 0.7, 4.0})
        for (double y : {0.0, 0.3, 1.0}) {
            double zz = z;
            double fd = central_diff(zz, [&] { return bce_with_logits(zz, y); });
            REQUIRE(grad_close(bce_with_logits_grad(z, y), fd));
        }
}

TEST_CASE("mean pixelwise cross entropy gradient matches central differences") {
    std::mt19937_64 rng(109);
    tensor prob = random_tensor({3, 4, 2}, rng, 0.05, 0.95);
    tensor target = random_tensor({3, 4, 2}, rng, 0.0, 1.0);
    tensor dprob;
    bce_mean(prob, target, dprob);
    for (long i = 0; i < prob.size(); ++i) {
        double fd = central_diff(prob[i], [&] {
            tensor scratch;
            return bce_mean(prob, target, scratch);
        });
        REQUIRE(grad_close(dprob[i], fd));
    }
    tensor bad({3, 4, 1});
    tensor scratch;
    REQUIRE_THROWS_AS(bce_mean(prob, bad, scratch), shape_error);
}

TEST_CASE("residual block gradients match central differences") {
    std::mt19937_64 rng(110);
    residual_block block;
    block.init(2, 3, 2, rng);
    tensor x = random_tensor({6, 6, 2}, rng);

    // keep every relu pre-activation away from the kink so finite differences
    // stay on one side
    block.forward(x);
    auto margin_ok = [&] {
        double m = 1e9;
        for (long i = 0; i < block.act1.cache.size(); ++i)
            m = std::min(m, std::abs(block.act1.cache[i]));
        for (long i = 0; i < block.act2.cache.size(); ++i)
            m = std::min(m, std::abs(block.act2.cache[i]));
        return m > 1e-4;
    };
    while (!margin_ok()) {
        x = random_tensor({6, 6, 2}, rng);
        block.forward(x);
    }

    tensor dy_dir = random_tensor({3, 3, 3}, rng);
    auto loss = [&] { return dot(block.forward(x), dy_dir); };

    for (param* p : block.params()) p->zero_grad();
    block.forward(x);
    tensor dx = block.backward(dy_dir);

    for (long i = 0; i < x.size(); i += 5)
        REQUIRE(grad_close(dx[i], central_diff(x[i], loss)));
    for (param* p : block.params())
        for (long i = 0; i < p->w.size(); i += 9)
            REQUIRE(grad_close(p->g.data()[i], central_diff(p->w.data()[i], loss)));
}

TEST_CASE("adam takes a near-sign step first and minimizes a quadratic") {
    param p;
    p.init(1, 1);
    p.w(0, 0) = 5.0;
    adam opt(0.05);
    std::vector<param*> ps = {&p};

    p.g(0, 0) = 2.0 * (p.w(0, 0) - 3.0);
    double before = p.w(0, 0);
    opt.step(ps);
    REQUIRE(before - p.w(0, 0) == Catch::Approx(0.05).epsilon(1e-6));  // lr * sign(grad)

    for (int i = 0; i < 2000; ++i) {
        p.zero_grad();
        p.g(0, 0) = 2.0 * (p.w(0, 0) - 3.0);
        opt.step(ps);
    }
    REQUIRE(p.w(0, 0) == Catch::Approx(3.0).margin(1e-3));
}

TEST_CASE("patchify and unpatchify are exact inverses with documented ordering") {
    std::mt19937_64 rng(111);
    tensor x = random_tensor({8, 12, 3}, rng);
    for (int p : {1, 2, 4}) {
        mat seq = patchify(x, p);
        REQUIRE(seq.rows() == (8 / p) * (12 / p));
        REQUIRE(seq.cols() == p * p * 3);
        tensor back = unpatchify(seq, 8, 12, 3, p);
        REQUIRE(max_abs_diff(x, back) == 0.0);
    }
    // ordering: patch (gy, gx) -> row gy*gw+gx; inside, (py, px, c) with c fastest
    mat seq = patchify(x, 2);
    int gw = 12 / 2;
    REQUIRE(seq(1 * gw + 2, (1 * 2 + 0) * 3 + 1) == x(1 * 2 + 1, 2 * 2 + 0, 1));
    REQUIRE_THROWS_AS(patchify(x, 5), shape_error);
}

TEST_CASE("positional encoding is bounded, geometric, and injective across positions") {
    mat e = positional_encoding(16, 16, 4, 4);  // 4x4 grid of patches, D=64
    REQUIRE(e.rows() == 16);
    REQUIRE(e.cols() == 64);
    REQUIRE(e.cwiseAbs().maxCoeff() <= 1.0);

    // same geometry -> identical table (purely geometric, no state)
    mat e2 = positional_encoding(16, 16, 4, 4);
    REQUIRE((e - e2).cwiseAbs().maxCoeff() == 0.0);

    // all rows pairwise distinct
    for (long a = 0; a < e.rows(); ++a)
        for (long b = a + 1; b < e.rows(); ++b)
            REQUIRE((e.row(a) - e.row(b)).cwiseAbs().maxCoeff() > 1e-6);

    REQUIRE_THROWS_AS(positional_encoding(16, 16, 4, 3), shape_error);
}

TEST_CASE("attention affinity rows sum to one") {
    std::mt19937_64 rng(112);
    mha m;
    m.init(8, 2, rng);
    mat xq = random_mat(5, 8, rng), xk = random_mat(7, 8, rng), xv = random_mat(7, 8, rng);
    m.forward(xq, xk, xv);
    REQUIRE(m.affinity.size() == 2);
    for (const mat& a : m.affinity) {
        REQUIRE(a.rows() == 5);
        REQUIRE(a.cols() == 7);
        for (long r = 0; r < a.rows(); ++r)
            REQUIRE(a.row(r).sum() == Catch::Approx(1.0).margin(1e-6));
        REQUIRE(a.minCoeff() >= 0.0);
    }
}

TEST_CASE("attention over a single key reduces to the merged value projection") {
    std::mt19937_64 rng(113);
    mha m;
    m.init(6, 3, rng);
    mat xq = random_mat(4, 6, rng), xkv = random_mat(1, 6, rng);
    mat out = m.forward(xq, xkv, xkv);
    mat expect = (xkv * m.wv.w) * m.wo.w;  // softmax over one key is 1
    for (long r = 0; r < out.rows(); ++r)
        REQUIRE((out.row(r) - expect.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention matches a brute-force evaluation on a two-patch instance") {
    std::mt19937_64 rng(114);
    mha m;
    m.init(8, 4, rng);
    mat xq = random_mat(2, 8, rng), xk = random_mat(2, 8, rng), xv = random_mat(2, 8, rng);
    mat got = m.forward(xq, xk, xv);
    mat want = attention_direct(xq, xk, xv, m);
    REQUIRE((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention gradients match central differences") {
    std::mt19937_64 rng(115);
    mha m;
    m.init(6, 2, rng);
    mat xq = random_mat(3, 6, rng), xk = random_mat(4, 6, rng), xv = random_mat(4, 6, rng);
    mat dy_dir = random_mat(3, 6, rng);

    auto loss = [&] { return dot(m.forward(xq, xk, xv), dy_dir); };

    for (param* p : m.params()) p->zero_grad();
    m.forward(xq, xk, xv);
    mat dxq, dxk, dxv;
    m.backward(dy_dir, dxq, dxk, dxv);

    for (long i = 0; i < xq.size(); ++i)
        REQUIRE(grad_close(dxq.data()[i], central_diff(xq.data()[i], loss)));
    for (long i = 0; i < xk.size(); ++i)
        REQUIRE(grad_close(dxk.data()[i], central_diff(xk.data()[i], loss)));
    for (long i = 0; i < xv.size(); ++i)
        REQUIRE(grad_close(dxv.data()[i], central_diff(xv.data()[i], loss)));
    for (param* p : m.params())
        for (long i = 0; i < p->w.size(); i += 3)
            REQUIRE(grad_close(p->g.data()[i], central_diff(p->w.data()[i], loss)));
}

TEST_CASE("feed-forward block gradients match central differences") {
    std::mt19937_64 rng(116);
    mlp2 ff;
    ff.init(5, 7, 5, rng);
    mat x = random_mat(3, 5, rng);
    mat dy_dir = random_mat(3, 5, rng);

    auto loss = [&] { return dot(ff.forward(x), dy_dir); };

    for (param* p : ff.params()) p->zero_grad();
    ff.forward(x);
    mat dx = ff.backward(dy_dir);

    for (long i = 0; i < x.size(); ++i)
        REQUIRE(grad_close(dx.data()[i], central_diff(x.data()[i], loss)));
    for (param* p : ff.params())
        for (long i = 0; i < p->w.size(); i += 2)
            REQUIRE(grad_close(p->g.data()[i], central_diff(p->w.data()[i], loss)));
}

TEST_CASE("checkpoints round trip bit-identically and reject mismatches") {
    auto dir = std::filesystem::temp_directory_path() / "diffseg_ckpt";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    auto path = dir / "net.ckpt";

    std::mt19937_64 rng(117);
    linear a, b;
    a.init(4, 3, rng);
    b.init(3, 2, rng);
    std::vector<param*> params = {&a.w, &a.b, &b.w, &b.b};
    std::uint64_t h0 = param_hash(params);

    nlohmann::json header = {{"arch", "toy"}, {"widths", {4, 3, 2}}};
    save_checkpoint(path, header, params);

    linear a2, b2;
    std::mt19937_64 rng2(999);  // different init, will be overwritten
    a2.init(4, 3, rng2);
    b2.init(3, 2, rng2);
    std::vector<param*> params2 = {&a2.w, &a2.b, &b2.w, &b2.b};
    nlohmann::json loaded = load_checkpoint(path, params2);

    REQUIRE(loaded["arch"] == "toy");
    REQUIRE(loaded["format"] == "diffseg-checkpoint");
    REQUIRE(param_hash(params2) == h0);
    REQUIRE((a.w.w - a2.w.w).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(a2.w.m.cwiseAbs().maxCoeff() == 0.0);  // moments reset on load

    // hash is sensitive to a single weight flip
    a2.w.w(0, 0) += 1e-15;
    REQUIRE(param_hash(params2) != h0);

    // wrong architecture is rejected before weights are touched
    linear wide;
    wide.init(5, 3, rng2);
    std::vector<param*> wrong = {&wide.w, &wide.b, &b2.w, &b2.b};
    REQUIRE_THROWS_AS(load_checkpoint(path, wrong), format_error);

    // not a checkpoint file
    {
        std::ofstream os(dir / "junk.ckpt", std::ios::binary);
        os << "not a checkpoint";
    }
    REQUIRE_THROWS_AS(load_checkpoint(dir / "junk.ckpt", params2), format_error);
    REQUIRE_THROWS_AS(load_checkpoint(dir / "missing.ckpt", params2), io_error);

    // saving twice produces byte-identical files
    auto path2 = dir / "net2.ckpt";
    save_checkpoint(path2, header, params);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);

    std::filesystem::remove_all(dir);
}
