#include <doctest.h>

#include <cmath>
#include <random>

#include "hcp/errors.hpp"
#include "hcp/losses.hpp"

using namespace hcp;
using ad::Tape;
using ad::Tensor;

namespace {

double loss_value(std::vector<double> p, std::vector<double> y, std::vector<double> w, const loss::LossConfig& cfg) {
    Tape tape;
    const std::size_t K = p.size();
    return loss::wasl_loss(tape.constant(Tensor({K}, p)), Tensor({K}, y), Tensor({K}, w), cfg).value()[0];
}

std::vector<double> loss_grad(std::vector<double> p, std::vector<double> y, const loss::LossConfig& cfg) {
    const std::size_t K = p.size();
    Tensor pt({K}, p);
    pt.set_requires_grad(true);
    Tape tape;
    tape.backward(loss::wasl_loss(tape.leaf(pt), Tensor({K}, y), Tensor({K}, 1.0), cfg));
    return {pt.grad().begin(), pt.grad().end()};
}

loss::LossConfig plain() {
    loss::LossConfig c;
    c.gamma_pos = 0.0;
    c.gamma_neg = 0.0;
    c.clip = 0.0;
    return c;
}

}  // namespace

TEST_CASE("new-class weight") {
    CHECK(std::abs(loss::new_class_weight(20, 2) - 3.16228) < 1e-5);
    CHECK(loss::new_class_weight(10, 10) == 1.0);
    CHECK(std::abs(loss::new_class_weight(80, 10) - 2.82843) < 1e-5);
    CHECK_THROWS_AS(loss::new_class_weight(10, 0), ContractError);
    CHECK_THROWS_AS(loss::new_class_weight(1, 2), ContractError);
}

TEST_CASE("direct evaluations") {
    loss::LossConfig c;
    c.gamma_neg = 4.0;
    c.clip = 0.0;
    CHECK(std::abs(loss_value({0.5}, {0}, {1}, c) - 0.04332) < 1e-5);
    CHECK(std::abs(loss_value({0.5}, {0}, {1}, c) + std::pow(0.5, 4) * std::log(0.5)) < 1e-15);
    CHECK(loss_value({1.0 - 1e-12}, {1}, {1}, c) < 1e-7);
}

TEST_CASE("plain settings reduce to binary cross-entropy") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t K = 1 + rng() % 9;
        std::vector<double> p(K), y(K);
        double bce = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            p[k] = u(rng);
            y[k] = static_cast<double>(rng() & 1);
            bce -= y[k] * std::log(p[k]) + (1 - y[k]) * std::log(1 - p[k]);
        }
        bce /= static_cast<double>(K);
        CHECK(std::abs(loss_value(p, y, std::vector<double>(K, 1.0), plain()) - bce) < 1e-12);
    }
}

TEST_CASE("loss properties on random inputs") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    loss::LossConfig c;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t K = 1 + rng() % 6;
        std::vector<double> p(K), y(K), w(K);
        for (std::size_t k = 0; k < K; ++k) {
            p[k] = u(rng);
            y[k] = static_cast<double>(rng() & 1);
            w[k] = 0.5 + 2.0 * u(rng);
        }
        const double base = loss_value(p, y, w, c);
        CHECK(base >= 0.0);

        // Doubling one weight adds exactly that class's contribution once more.
        const std::size_t k = rng() % K;
        auto w2 = w, w0 = w;
        w2[k] *= 2.0;
        w0[k] = 0.0;
        const double contribution = base - loss_value(p, y, w0, c);
        CHECK(std::abs(loss_value(p, y, w2, c) - (base + contribution)) < 1e-12);

        const auto g = loss_grad(p, y, c);
        for (std::size_t i = 0; i < K; ++i) {
            if (y[i] == 1.0 && p[i] < 1.0 - 1e-6) CHECK(g[i] < 0.0);
            if (y[i] == 0.0 && p[i] - c.clip > 1e-6) CHECK(g[i] > 0.0);
        }
    }
}

TEST_CASE("larger negative focusing shrinks negative contributions") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.06, 0.99);
    for (int trial = 0; trial < 200; ++trial) {
        const double p = u(rng);
        double prev = INFINITY;
        for (double g : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
            loss::LossConfig c;
            c.gamma_neg = g;
            const double v = loss_value({p}, {0}, {1}, c);
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("clip zeroes small negative probabilities") {
    loss::LossConfig c;
    c.clip = 0.05;
    CHECK(loss_value({0.04}, {0}, {1}, c) == 0.0);
    CHECK(loss_value({0.06}, {0}, {1}, c) > 0.0);
}

TEST_CASE("gradient matches finite differences") {
    loss::LossConfig c;
    const std::vector<double> p{0.2, 0.7, 0.45, 0.93}, y{1, 0, 1, 0};
    const auto g = loss_grad(p, y, c);
    for (std::size_t k = 0; k < p.size(); ++k) {
        auto hi = p, lo = p;
        hi[k] += 1e-6;
        lo[k] -= 1e-6;
        const double num = (loss_value(hi, y, {1, 1, 1, 1}, c) - loss_value(lo, y, {1, 1, 1, 1}, c)) / 2e-6;
        CHECK(std::abs(num - g[k]) < 1e-6 * std::max(1.0, std::abs(num)));
    }
}

TEST_CASE("batched loss averages kept entries per row") {
    Tape tape;
    Tensor p({2, 3}, std::vector<double>{0.3, 0.6, 0.9, 0.2, 0.4, 0.5});
    Tensor y({2, 3}, std::vector<double>{1, 0, 1, 0, 1, 1});
    Tensor w({2, 3}, std::vector<double>{1, 2, 1, 1, 1, 3});
    Tensor mask({2, 3}, std::vector<double>{1, 1, 0, 1, 1, 1});
    loss::LossConfig c;
    const double got = loss::wasl_batch(tape.constant(p), y, w, mask, c).value()[0];
    const double row0 = loss_value({0.3, 0.6}, {1, 0}, {1, 2}, c);
    const double row1 = loss_value({0.2, 0.4, 0.5}, {0, 1, 1}, {1, 1, 3}, c);
    CHECK(std::abs(got - (row0 + row1) / 2.0) < 1e-15);
    CHECK_THROWS_AS(loss::wasl_batch(tape.constant(p), Tensor({2, 2}), w, mask, c), ShapeError);
}

TEST_CASE("invalid inputs") {
    Tape tape;
    CHECK_THROWS_AS(loss::wasl_loss(tape.constant(Tensor({1}, 1.5)), Tensor({1}, 1.0), Tensor({1}, 1.0), {}),
                    NumericError);
    loss::LossConfig c;
    c.gamma_pos = 5.0;
    CHECK_THROWS_AS(loss::validate(c), ConfigError);
    c = {};
    c.clip = 1.0;
    CHECK_THROWS_AS(loss::validate(c), ConfigError);
}
