#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "diffseg/fusion.hpp"

using namespace diffseg;

namespace {

tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = 0.0,
                     double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    tensor t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

}  // namespace

TEST_CASE("normalize_expertness yields convex weights") {
    tensor logits = random_tensor({6, 5, 2, 4}, 31, -3.0, 3.0);
    expertness_map m = normalize_expertness(logits);
    REQUIRE(validate_expertness(m).empty());
}

TEST_CASE("normalize_expertness is shift invariant per pixel") {
    tensor logits = random_tensor({3, 3, 1, 3}, 7, -2.0, 2.0);
    tensor shifted = logits;
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x)
            for (int r = 0; r < 3; ++r) shifted(y, x, 0, r) += 10.0 * (y + 1);
    expertness_map a = normalize_expertness(logits);
    expertness_map b = normalize_expertness(shifted);
    REQUIRE(max_abs_diff(a.weights, b.weights) < 1e-12);
}

TEST_CASE("zero logits give uniform weights and fuse equals majority vote") {
    tensor masks = random_tensor({8, 8, 2, 3}, 13);
    expertness_map uniform = normalize_expertness(tensor::zeros({8, 8, 2, 3}));
    fused_label via_softmax = fuse(masks, uniform, fusion_provenance::dfgt_raw);
    fused_label mv = majority_vote(masks);
    REQUIRE(max_abs_diff(via_softmax.values, mv.values) < 1e-12);
    REQUIRE(mv.provenance == fusion_provenance::majority_vote);
}

TEST_CASE("fuse with a one-hot expertness selects that rater") {
    tensor masks = random_tensor({4, 4, 1, 3}, 23);
    tensor logits = tensor::zeros({4, 4, 1, 3});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) logits(y, x, 0, 2) = 60.0;  // softmax saturates
    fused_label f = fuse(masks, normalize_expertness(logits), fusion_provenance::dfgt_raw);
    tensor rater2 = mask_plane(masks, 0, 2);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            REQUIRE(f.values(y, x, 0) == Catch::Approx(rater2(y, x)).margin(1e-12));
}

TEST_CASE("fused values stay inside the rater hull") {
    tensor masks = random_tensor({10, 9, 2, 4}, 77);
    tensor logits = random_tensor({10, 9, 2, 4}, 78, -5.0, 5.0);
    fused_label f = fuse(masks, normalize_expertness(logits), fusion_provenance::dfgt_raw);
    REQUIRE(fused_within_hull(f.values, masks));
    REQUIRE(f.values.min() >= 0.0);
    REQUIRE(f.values.max() <= 1.0);
}

TEST_CASE("fuse rejects mismatched shapes") {
    tensor masks({4, 4, 2, 3});
    expertness_map m{tensor({4, 4, 2, 2})};
    REQUIRE_THROWS_AS(fuse(masks, m, fusion_provenance::dfgt_raw), shape_error);
}

TEST_CASE("fuse_backward_logits matches central differences") {
    const int h = 3, w = 4, ks = 2, n = 3;
    tensor masks = random_tensor({h, w, ks, n}, 41);
    tensor logits = random_tensor({h, w, ks, n}, 42, -1.0, 1.0);
    tensor weight = random_tensor({h, w, ks}, 43, -1.0, 1.0);  // arbitrary loss direction

    auto loss = [&](const tensor& z) {
        fused_label f = fuse(masks, normalize_expertness(z), fusion_provenance::dfgt_raw);
        double acc = 0.0;
        for (long i = 0; i < f.values.size(); ++i) acc += f.values[i] * weight[i];
        return acc;
    };

    expertness_map m = normalize_expertness(logits);
    tensor analytic = fuse_backward_logits(masks, m, weight);

    const double eps = 1e-6;
    for (long i = 0; i < logits.size(); i += 5) {  // spot-check a spread of coordinates
        tensor zp = logits, zm = logits;
        zp[i] += eps;
        zm[i] -= eps;
        double fd = (loss(zp) - loss(zm)) / (2.0 * eps);
        REQUIRE(analytic[i] == Catch::Approx(fd).margin(1e-8));
    }
}

TEST_CASE("mean_expertness_per_rater averages to 1/n under uniform weights") {
    expertness_map m = uniform_expertness(6, 6, 2, 4);
    auto mean = mean_expertness_per_rater(m);
    REQUIRE(mean.size() == 4);
    for (double v : mean) REQUIRE(v == Catch::Approx(0.25));

    // tilt every pixel toward rater 0
    tensor logits = tensor::zeros({6, 6, 2, 4});
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            for (int k = 0; k < 2; ++k) logits(y, x, k, 0) = 1.0;
    auto tilted = mean_expertness_per_rater(normalize_expertness(logits));
    REQUIRE(tilted[0] > 0.25);
    REQUIRE(tilted[1] < 0.25);
    double total = tilted[0] + tilted[1] + tilted[2] + tilted[3];
    REQUIRE(total == Catch::Approx(1.0));
}
