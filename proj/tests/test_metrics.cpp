#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "diffseg/metrics.hpp"

using namespace diffseg;

namespace {

tensor grid4(std::initializer_list<double> vals) {
    tensor t({4, 4});
    int i = 0;
    for (double v : vals) t[i++] = v;
    return t;
}

// Exhaustive pairwise AUC: every (positive, negative) pair counts 1 for a
// win, 0.5 for a tie.
double auc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < s.size(); ++i)
        for (size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            ++pairs;
            if (s[i] > s[j])
                wins += 1.0;
            else if (s[i] == s[j])
                wins += 0.5;
        }
    return wins / double(pairs);
}

}  // namespace

TEST_CASE("soft_dice matches a hand-computed value") {
    tensor pred = grid4({0.05, 0.2, 0.4, 0.6, 0.8, 0.95, 0.5, 0.1, 0.3, 0.7, 0.9, 0.0, 1.0, 0.15,
                         0.35, 0.55});
    tensor gt = grid4({0.0, 0.25, 0.45, 0.65, 0.85, 1.0, 0.4, 0.05, 0.2, 0.75, 0.95, 0.1, 0.9, 0.1,
                       0.3, 0.6});
    REQUIRE(soft_dice(pred, gt) == Catch::Approx(0.85925146198830404).epsilon(1e-14));
}

TEST_CASE("soft_dice is 1 when both maps binarize empty") {
    tensor a = tensor::zeros({3, 3});
    tensor b = tensor::zeros({3, 3});
    REQUIRE(soft_dice(a, b) == 1.0);
    // still exceeds nothing at the top threshold but matches below it
    tensor c = tensor::full({3, 3}, 0.05);
    REQUIRE(soft_dice(c, tensor::zeros({3, 3})) == 1.0);  // 0.05 > 0.1 is false everywhere
}

TEST_CASE("soft_dice of a map with itself is 1") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    tensor m({8, 8});
    for (long i = 0; i < m.size(); ++i) m[i] = u(rng);
    REQUIRE(soft_dice(m, m) == 1.0);
}

TEST_CASE("soft_dice binarization is strictly greater-than") {
    tensor a = tensor::full({2, 2}, 0.5);
    tensor b = tensor::full({2, 2}, 0.51);
    // at t=0.5: a binarizes empty, b binarizes full -> dice 0; other
    // thresholds agree -> (1+1+0+1+1)/5
    REQUIRE(soft_dice(a, b) == Catch::Approx(0.8));
}

TEST_CASE("soft_dice validates input") {
    REQUIRE_THROWS_AS(soft_dice(tensor({2, 2}), tensor({3, 2})), shape_error);
    REQUIRE_THROWS_AS(soft_dice(tensor({2, 2}), tensor({2, 2}), {}), validation_error);
    REQUIRE_THROWS_AS(soft_dice(tensor({2, 2}), tensor({2, 2}), {0.0}), validation_error);
    REQUIRE_THROWS_AS(soft_dice(tensor({2, 2}), tensor({2, 2}), {1.0}), validation_error);
}

TEST_CASE("auc matches a hand-computed tied example") {
    std::vector<double> scores{0.1, 0.4, 0.35, 0.8, 0.4, 0.7, 0.2, 0.4};
    std::vector<int> labels{0, 0, 1, 1, 1, 1, 0, 0};
    REQUIRE(auc(scores, labels) == Catch::Approx(0.8125).epsilon(1e-15));
}

TEST_CASE("auc equals the exhaustive pairwise count on random data") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> level(0, 9);  // coarse grid forces ties
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s;
        std::vector<int> y;
        for (int i = 0; i < 40; ++i) {
            s.push_back(level(rng) / 9.0);
            y.push_back(coin(rng));
        }
        if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0)
            continue;
        REQUIRE(auc(s, y) == Catch::Approx(auc_pairwise(s, y)).epsilon(1e-12));
    }
}

TEST_CASE("auc extremes and failure modes") {
    REQUIRE(auc({0.1, 0.9}, {0, 1}) == 1.0);
    REQUIRE(auc({0.9, 0.1}, {0, 1}) == 0.0);
    REQUIRE(auc({0.5, 0.5}, {0, 1}) == 0.5);
    REQUIRE_THROWS_AS(auc({0.1, 0.2}, {1, 1}), metric_error);
    REQUIRE_THROWS_AS(auc({0.1, 0.2}, {0, 0}), metric_error);
    REQUIRE_THROWS_AS(auc({0.1, 0.2}, {0, 2}), validation_error);
    REQUIRE_THROWS_AS(auc({0.1}, {0, 1}), shape_error);
}

TEST_CASE("vcdr is the ratio of vertical mask extents") {
    tensor disc({10, 6});
    tensor cup({10, 6});
    for (int y = 2; y <= 9; ++y) disc(y, 3) = 1.0;  // span 8
    for (int y = 4; y <= 7; ++y) cup(y, 2) = 1.0;   // span 4
    REQUIRE(vcdr(cup, disc, 0.5) == Catch::Approx(0.5));
}

TEST_CASE("vcdr clips at 1.5 and handles empty masks") {
    tensor disc({12, 4});
    tensor cup({12, 4});
    disc(5, 1) = 1.0;  // span 1
    for (int y = 2; y <= 9; ++y) cup(y, 1) = 1.0;  // span 8 -> ratio 8, clipped
    REQUIRE(vcdr(cup, disc, 0.5) == 1.5);

    tensor empty({12, 4});
    REQUIRE(vcdr(empty, disc, 0.5) == 0.0);
    REQUIRE_THROWS_AS(vcdr(cup, empty, 0.5), metric_error);
}

TEST_CASE("vcdr respects the binarize threshold") {
    tensor disc({8, 3});
    tensor cup({8, 3});
    for (int y = 0; y < 8; ++y) disc(y, 1) = 0.8;
    for (int y = 3; y <= 4; ++y) cup(y, 1) = 0.4;
    REQUIRE(vcdr(cup, disc, 0.5) == 0.0);                      // 0.4 not > 0.5
    REQUIRE(vcdr(cup, disc, 0.3) == Catch::Approx(2.0 / 8.0));  // both visible
}

TEST_CASE("high_freq_energy separates pure tones") {
    const int h = 16, w = 16;
    const double pi = std::acos(-1.0);
    tensor low({h, w}), high({h, w}), mix({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double lo = std::cos(2.0 * pi * 1 * y / h);
            double hi = std::cos(2.0 * pi * 7 * y / h);
            low(y, x) = lo;
            high(y, x) = hi;
            mix(y, x) = lo + hi;
        }
    REQUIRE(high_freq_energy(low, 0.5) < 1e-12);
    REQUIRE(high_freq_energy(high, 0.5) == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(high_freq_energy(mix, 0.5) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("high_freq_energy of a constant map is 0") {
    REQUIRE(high_freq_energy(tensor::full({8, 8}, 0.7), 0.5) == 0.0);
}

TEST_CASE("high_freq_energy validates input") {
    REQUIRE_THROWS_AS(high_freq_energy(tensor({2, 2}), 0.5), validation_error);
    REQUIRE_THROWS_AS(high_freq_energy(tensor({8, 8}), 0.0), validation_error);
    REQUIRE_THROWS_AS(high_freq_energy(tensor({8, 8}), 1.0), validation_error);
    REQUIRE_THROWS_AS(high_freq_energy(tensor({8, 8, 1}), 0.5), shape_error);
}

TEST_CASE("metric_report serializes doubles at full precision") {
    metric_report r;
    r.sample_count = 3;
    r.dice_per_structure = {1.0 / 3.0};
    r.auc_value = 0.8125;
    auto kv = r.to_kv();
    REQUIRE(kv[0].first == "sample_count");
    REQUIRE(kv[0].second == "3");
    REQUIRE(kv[1].first == "dice.s0");
    REQUIRE(kv[1].second == "0.33333333333333331");
    REQUIRE(kv[2].second == "0.8125");
}
