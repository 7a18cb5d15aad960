#include <doctest.h>

#include <cmath>
#include <random>

#include "hcp/errors.hpp"
#include "hcp/probe.hpp"

using namespace hcp;
using namespace hcp::probe;
using ad::Tensor;

TEST_CASE("feature partition") {
    Tensor o({3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
    const std::vector<std::uint8_t> y{1, 0, 1};
    const auto part = partition_features(o, y);
    CHECK(part.m1() == 2);
    CHECK(part.m2() == 1);
    CHECK(part.present_rows == std::vector<std::size_t>{0, 2});
    CHECK(part.absent_rows == std::vector<std::size_t>{1});
    // Scatter both halves back: the original matrix, bitwise.
    Tensor back({3, 2});
    for (std::size_t r = 0; r < part.m1(); ++r)
        for (std::size_t c = 0; c < 2; ++c) back[part.present_rows[r] * 2 + c] = part.present[r * 2 + c];
    for (std::size_t r = 0; r < part.m2(); ++r)
        for (std::size_t c = 0; c < 2; ++c) back[part.absent_rows[r] * 2 + c] = part.absent[r * 2 + c];
    CHECK(back.values() == o.values());

    const auto full = partition_features(o, std::vector<std::uint8_t>{1, 1, 1});
    CHECK(full.m2() == 0);
    CHECK(full.absent.size() == 0);
    CHECK_THROWS_AS(partition_features(o, std::vector<std::uint8_t>{1, 0}), ShapeError);
}

TEST_CASE("mixing with fixed weights") {
    Tensor rows({2, 2}, std::vector<double>{1, 0, 0, 1});
    const auto s = mix_features(rows, {1.0, 3.0});
    CHECK(s.weights == std::vector<double>{0.25, 0.75});
    CHECK(s.feature.values() == std::vector<double>{0.25, 0.75});
    CHECK(s.target == 1);
    CHECK_THROWS_AS(mix_features(rows, {0.0, 0.0}), DomainError);
    CHECK_THROWS_AS(mix_features(rows, {1.0}), ShapeError);
}

TEST_CASE("a single absent feature is reproduced exactly") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor one({1, 5});
        for (double& v : one.data()) v = n(rng);
        const auto s = synthesize_unknown(one, 0.5 + trial % 3, 1.0, rng);
        REQUIRE(s);
        CHECK(s->weights == std::vector<double>{1.0});
        CHECK(s->feature.values() == one.values());
    }
    CHECK_FALSE(synthesize_unknown(Tensor{}, 1.0, 1.0, rng));
}

TEST_CASE("synthesized features stay on the simplex and inside the hull") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t m2 = 1 + static_cast<std::size_t>(trial % 7), d = 4;
        Tensor absent({m2, d});
        for (double& v : absent.data()) v = n(rng);
        const auto s = synthesize_unknown(absent, 1.0, 1.0, rng);
        REQUIRE(s);
        double total = 0.0;
        for (double w : s->weights) {
            CHECK(w >= 0.0);
            total += w;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
        for (std::size_t c = 0; c < d; ++c) {
            double lo = INFINITY, hi = -INFINITY;
            for (std::size_t r = 0; r < m2; ++r) {
                lo = std::min(lo, absent[r * d + c]);
                hi = std::max(hi, absent[r * d + c]);
            }
            CHECK(s->feature[c] >= lo - 1e-12);
            CHECK(s->feature[c] <= hi + 1e-12);
        }
    }
}

TEST_CASE("weights are deterministic per seed and fall back to uniform") {
    std::mt19937_64 a(9), b(9);
    for (int i = 0; i < 20; ++i) CHECK(sample_weights(5, 2.0, 3.0, a) == sample_weights(5, 2.0, 3.0, b));
    // A tiny alpha makes every draw underflow to zero.
    std::mt19937_64 rng(3);
    const auto w = sample_weights(4, 1e-300, 1.0, rng);
    CHECK(w == std::vector<double>(4, 0.25));
}

TEST_CASE("batch mixing matrix") {
    std::mt19937_64 rng(4);
    const std::vector<std::vector<std::uint8_t>> labels{{1, 0, 0, 1}, {1, 1, 1, 1}, {0, 0, 0, 0}};
    const auto mix = batch_mixing(labels, 1.0, 1.0, rng);
    CHECK(mix.mix.shape() == ad::Shape{3, 1, 4});
    CHECK(mix.has_unknown == std::vector<std::uint8_t>{1, 0, 1});
    for (std::size_t b = 0; b < 3; ++b) {
        double total = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
            const double w = mix.mix[b * 4 + k];
            if (labels[b][k]) CHECK(w == 0.0);
            total += w;
        }
        CHECK(std::abs(total - (mix.has_unknown[b] ? 1.0 : 0.0)) < 1e-12);
    }
}

TEST_CASE("config validation") {
    ProbeConfig c;
    c.alpha = 0.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
}
