#include <doctest.h>

#include <cmath>
#include <random>

#include "hcp/adam.hpp"
#include "hcp/autodiff.hpp"
#include "hcp/errors.hpp"
#include "hcp/gradcheck.hpp"

using namespace hcp;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, scale);
    for (double& v : t.data()) v = n(rng);
    return t;
}

Tensor param(Tensor t) {
    t.set_requires_grad(true);
    return t;
}

}  // namespace

TEST_CASE("tensor shape invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.dim(-1) == 3);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor g({2});
    g.accumulate_grad(std::vector<double>{1.0, 2.0});
    CHECK_FALSE(g.has_grad());  // no grad without requires_grad
    g.set_requires_grad(true);
    g.accumulate_grad(std::vector<double>{1.0, 2.0});
    g.accumulate_grad(std::vector<double>{1.0, 2.0});
    CHECK(g.grad()[1] == 4.0);
    g.set_requires_grad(false);
    CHECK_FALSE(g.has_grad());
}

TEST_CASE("matmul values and shape errors") {
    Tape tape;
    Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
    Tensor m({2, 2}, std::vector<double>{1, 2, 3, 4});
    Var r = ad::matmul(tape.view(eye), tape.view(m));
    CHECK(r.value().values() == m.values());

    Tensor a({1, 2}, std::vector<double>{1, 2});
    Tensor b({2, 1}, std::vector<double>{3, 4});
    CHECK(ad::matmul(tape.view(a), tape.view(b)).value()[0] == 11.0);

    Tensor bad({3, 1});
    try {
        ad::matmul(tape.view(a), tape.view(bad));
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[1x2]") != std::string::npos);
        CHECK(msg.find("[3x1]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences") {
    std::mt19937_64 rng(3);
    Tensor a = param(random_tensor({3, 4}, rng)), b = param(random_tensor({4, 2}, rng));
    std::vector<Tensor*> ps{&a, &b};
    const auto rep = ad::grad_check(ps, [&](Tape& t) { return ad::sum(ad::matmul(t.leaf(a), t.leaf(b))); });
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("softmax values") {
    Tape tape;
    auto soft = [&](std::vector<double> x) {
        Tensor t({x.size()}, x);
        return ad::softmax_lastdim(tape.constant(t)).value().values();
    };
    auto s = soft({0, 0});
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);
    s = soft({1000, 1000});
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);
    // Independent long-double exp-normalize.
    s = soft({1, 2, 3});
    long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z)) < 1e-12);
    Tensor bad({2}, std::vector<double>{1.0, std::nan("")});
    CHECK_THROWS_AS(ad::softmax_lastdim(tape.constant(bad)), NumericError);
}

TEST_CASE("softmax rows sum to one for large inputs") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1000.0, 1000.0);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x({7, 9});
        for (double& v : x.data()) v = u(rng);
        Tape tape;
        const auto& y = ad::softmax_lastdim(tape.constant(x)).value();
        for (std::size_t r = 0; r < 7; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 9; ++c) {
                CHECK(y.at(r, c) >= 0.0);
                s += y.at(r, c);
            }
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("elementwise ops") {
    Tape tape;
    Tensor zero({1}, 0.0);
    CHECK(ad::sigmoid(tape.constant(zero)).value()[0] == 0.5);
    Tensor x({3}, std::vector<double>{-1, 0, 2});
    const auto back = ad::log(ad::exp(tape.constant(x))).value();
    for (int i = 0; i < 3; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-12);
    Tensor neg({1}, -1.0);
    CHECK_THROWS_AS(ad::log(tape.constant(zero)), DomainError);
    CHECK_THROWS_AS(ad::sqrt(tape.constant(neg)), DomainError);
    CHECK(ad::sqrt(tape.constant(zero)).value()[0] == 0.0);
}

TEST_CASE("sigmoid gradient at zero is one quarter") {
    Tensor x = param(Tensor({1}, 0.0));
    Tape tape;
    tape.backward(ad::sum(ad::sigmoid(tape.leaf(x))));
    CHECK(std::abs(x.grad()[0] - 0.25) < 1e-15);
    std::vector<Tensor*> ps{&x};
    x.zero_grad();
    const auto rep = ad::grad_check(ps, [&](Tape& t) { return ad::sum(ad::sigmoid(t.leaf(x))); });
    CHECK(rep.max_abs_error < 1e-9);
}

TEST_CASE("concat and slice") {
    Tape tape;
    Tensor a({1, 1}, 1.0), b({1, 1}, 2.0);
    Var c = ad::concat_rows(tape.view(a), tape.view(b));
    CHECK(c.shape() == ad::Shape{2, 1});
    CHECK(c.value().values() == std::vector<double>{1, 2});
    CHECK(ad::slice_rows(c, 0, 1).value().values() == a.values());
    CHECK_THROWS_AS(ad::slice_rows(c, 1, 3), BoundsError);
    CHECK_THROWS_AS(ad::slice_rows(c, 1, 1), BoundsError);
}

TEST_CASE("gradient routing through concat and slice") {
    Tensor a = param(Tensor({2, 3}, 1.0)), b = param(Tensor({3, 3}, 2.0));
    Tape tape;
    Var c = ad::concat_rows(tape.leaf(a), tape.leaf(b));
    tape.backward(ad::sum(ad::slice_rows(c, 1, 4)));
    CHECK(a.grad()[0] == 0.0);
    CHECK(a.grad()[3] == 1.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(b.grad()[i] == 1.0);
    CHECK(b.grad()[6] == 0.0);
}

TEST_CASE("backward basics") {
    Tensor x = param(Tensor({2}, std::vector<double>{1, 2}));
    Tensor y = param(Tensor({2}, 5.0));
    {
        Tape tape;
        Var xv = tape.leaf(x);
        tape.leaf(y);
        tape.backward(ad::sum(ad::mul(xv, xv)));
    }
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK((!y.has_grad() || (y.grad()[0] == 0.0 && y.grad()[1] == 0.0)));
    {
        Tape tape;
        Var xv = tape.leaf(x);
        tape.backward(ad::sum(ad::mul(xv, xv)));  // accumulates
    }
    CHECK(x.grad()[1] == 8.0);

    Tape tape;
    Var v = tape.leaf(x);
    CHECK_THROWS_AS(tape.backward(v), ContractError);
    Tape other;
    Var w = ad::sum(other.leaf(x));
    CHECK_THROWS_AS(tape.backward(w), ContractError);
}

TEST_CASE("backward visits each node once") {
    Tensor x = param(Tensor({3}, 1.0));
    Tape tape;
    Var a = tape.leaf(x);
    Var b = ad::mul(a, a);
    Var c = ad::add(b, a);
    Var loss = ad::sum(ad::add(c, b));
    tape.backward(loss);
    CHECK(tape.last_backward_visits() == tape.size());
}

TEST_CASE("frozen leaves never receive gradient") {
    Tensor frozen({2}, 3.0);
    Tensor live = param(Tensor({2}, 1.0));
    Tape tape;
    tape.backward(ad::sum(ad::mul(tape.leaf(frozen), tape.leaf(live))));
    CHECK_FALSE(frozen.has_grad());
    CHECK(live.grad()[0] == 3.0);
}

TEST_CASE("composite graph gradient check") {
    std::mt19937_64 rng(11);
    Tensor x = param(random_tensor({2, 3, 4}, rng));
    Tensor w = param(random_tensor({4, 4}, rng, 0.5));
    Tensor g = param(random_tensor({4}, rng));
    Tensor bvec = param(random_tensor({4}, rng));
    Tensor e = param(random_tensor({2, 4}, rng));
    std::vector<Tensor*> ps{&x, &w, &g, &bvec, &e};
    const auto rep = ad::grad_check(ps, [&](Tape& t) {
        Var xs = ad::concat_rows(t.leaf(x), ad::tile_batch(t.leaf(e), 2));        // [2,5,4]
        Var n = ad::layer_norm_lastdim(xs, t.leaf(g), t.leaf(bvec));
        Var flat = ad::reshape(n, {10, 4});
        Var q = ad::reshape(ad::matmul(flat, t.leaf(w)), {2, 5, 4});
        Var att = ad::softmax_lastdim(ad::scale(ad::bmm_nt(q, xs), 0.5));
        Var o = ad::bmm(att, xs);
        Var p = ad::sigmoid(ad::sum_lastdim(ad::slice_cols(o, 1, 3)));
        Var extra = ad::pow(ad::add_scalar(ad::mean_rows(ad::transpose(ad::reshape(o, {10, 4}))), 3.0), 1.5);
        return ad::add(ad::sum(ad::log(ad::clamp(p, 1e-6, 1.0))), ad::sum(ad::sqrt(ad::exp(extra))));
    });
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("forward and backward are deterministic") {
    std::mt19937_64 rng(2);
    Tensor a = param(random_tensor({6, 6}, rng));
    auto run = [&] {
        a.zero_grad();
        Tape t;
        Var v = t.leaf(a);
        Var y = ad::softmax_lastdim(ad::matmul(v, ad::transpose(v)));
        t.backward(ad::sum(ad::mul(y, y)));
        return std::make_pair(y.value().values(), std::vector<double>(a.grad().begin(), a.grad().end()));
    };
    CHECK(run() == run());
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Tensor p = param(Tensor({3}, std::vector<double>{1, -2, 3}));
        std::vector<Tensor*> ps{&p};
        ad::AdamConfig cfg;
        cfg.weight_decay = 0.0;
        auto st = ad::AdamState::for_params(ps, cfg);
        p.accumulate_grad(std::vector<double>{0, 0, 0});
        ad::adam_step(ps, st);
        CHECK(p.values() == std::vector<double>{1, -2, 3});
        CHECK(st.step == 1);
    }
    SUBCASE("first step moves by the learning rate") {
        Tensor p = param(Tensor({1}, 0.5));
        std::vector<Tensor*> ps{&p};
        ad::AdamConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.0;
        auto st = ad::AdamState::for_params(ps, cfg);
        p.accumulate_grad(std::vector<double>{1.0});
        ad::adam_step(ps, st);
        CHECK(std::abs(p[0] - (0.5 - 0.1)) < 1e-7);
    }
    SUBCASE("ten steps on x^2 follow an independent trace") {
        Tensor p = param(Tensor({1}, 1.0));
        std::vector<Tensor*> ps{&p};
        ad::AdamConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.0;
        auto st = ad::AdamState::for_params(ps, cfg);
        double x = 1.0, m = 0.0, v = 0.0, prev = 1.0;
        for (int k = 1; k <= 10; ++k) {
            p.zero_grad();
            p.accumulate_grad(std::vector<double>{2.0 * p[0]});
            ad::adam_step(ps, st);
            const double g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
            CHECK(std::abs(p[0] - x) < 1e-12);
            CHECK(std::abs(p[0]) < prev);
            prev = std::abs(p[0]);
        }
    }
    SUBCASE("frozen parameters are untouched and sizes must match") {
        Tensor live = param(Tensor({1}, 1.0));
        Tensor frozen({1}, 1.0);
        std::vector<Tensor*> ps{&live, &frozen};
        auto st = ad::AdamState::for_params(ps, {});
        live.accumulate_grad(std::vector<double>{1.0});
        ad::adam_step(ps, st);
        CHECK(frozen[0] == 1.0);
        CHECK(live[0] < 1.0);
        Tensor other = param(Tensor({2}, 1.0));
        std::vector<Tensor*> wrong{&other, &frozen};
        CHECK_THROWS_AS(ad::adam_step(wrong, st), ContractError);
    }
}
