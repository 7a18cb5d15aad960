#include "hcp/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "hcp/errors.hpp"
#include "hcp/kernels.hpp"

namespace hcp::ad {

using kernels::GemmDims;
using kernels::Trans;

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->value(id_);
}

Var Tape::leaf(Tensor& t) {
    Node n;
    n.external = &t;
    n.sink = &t;
    n.needs_grad = t.requires_grad();
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::view(const Tensor& t) {
    Node n;
    n.external = &t;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor t) {
    Node n;
    n.owned = std::move(t);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    for (int i : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(i)].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::value(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.external ? *n.external : n.owned;
}

std::span<const double> Tape::grad(Var v) const {
    if (v.tape() != this) throw ContractError("Var belongs to a different tape");
    return nodes_[static_cast<std::size_t>(v.id())].grad;
}

std::span<double> Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw ContractError("backward: loss was not produced on this tape");
    if (value(loss.id()).size() != 1)
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(value(loss.id()).shape()));
    for (auto& n : nodes_) n.grad.clear();
    visits_ = 0;
    if (!nodes_[static_cast<std::size_t>(loss.id())].needs_grad) return;
    grad_buffer(loss.id())[0] = 1.0;
    for (int i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.needs_grad || n.grad.empty()) continue;
        ++visits_;
        if (n.sink) {
            n.sink->accumulate_grad(n.grad);
        } else if (n.backward) {
            n.backward(*this, i);
        }
    }
}

namespace {

Tape& same_tape(Var a, Var b) {
    if (!a.valid() || !b.valid()) throw ContractError("use of an unbound Var");
    if (a.tape() != b.tape()) throw ContractError("operands live on different tapes");
    return *a.tape();
}

template <class F, class Dx, class Dy>
Var binary_op(Var a, Var b, const char* name, F f, Dx dx, Dy dy) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    bool a_scalar = false, b_scalar = false;
    Shape shape;
    if (av.shape() == bv.shape()) {
        shape = av.shape();
    } else if (bv.size() == 1) {
        shape = av.shape();
        b_scalar = true;
    } else if (av.size() == 1) {
        shape = bv.shape();
        a_scalar = true;
    } else {
        throw ShapeError(std::string(name) + ": incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
    }
    Tensor out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    return tape.record(std::move(out), {a.id(), b.id()}, [a_scalar, b_scalar, dx, dy](Tape& tp, int self) {
        const int ia = tp.input(self, 0), ib = tp.input(self, 1);
        auto g = tp.upstream(self);
        const Tensor& x = tp.value(ia);
        const Tensor& y = tp.value(ib);
        if (tp.needs_grad(ia)) {
            auto ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[a_scalar ? 0 : i] += g[i] * dx(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
        }
        if (tp.needs_grad(ib)) {
            auto gb = tp.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[b_scalar ? 0 : i] += g[i] * dy(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
        }
    });
}

// d(out)/d(in) may use both the input and the output value.
template <class F, class D>
Var unary_op(Var x, F f, D d) {
    if (!x.valid()) throw ContractError("use of an unbound Var");
    Tape& tape = *x.tape();
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return tape.record(std::move(out), {x.id()}, [d](Tape& tp, int self) {
        const int ix = tp.input(self, 0);
        auto g = tp.upstream(self);
        const Tensor& xv = tp.value(ix);
        const Tensor& yv = tp.value(self);
        auto gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i], yv[i]);
    });
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

// Row layout: outer blocks x rows x inner.
struct RowLayout {
    std::size_t outer, rows, inner;
};

RowLayout row_layout(const Shape& s) {
    if (s.size() == 1) return {1, s[0], 1};
    std::size_t outer = 1;
    for (std::size_t i = 0; i + 2 < s.size(); ++i) outer *= s[i];
    return {outer, s[s.size() - 2], s.back()};
}

std::size_t row_axis(const Shape& s) { return s.size() == 1 ? 0 : s.size() - 2; }

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0])
        throw ShapeError("matmul: dimension mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    Tensor out({m, n});
    kernels::gemm(av.data(), bv.data(), out.data(), {m, k, n}, Trans::No, Trans::No, false);
    return tape.record(std::move(out), {a.id(), b.id()}, [m, k, n](Tape& tp, int self) {
        const int ia = tp.input(self, 0), ib = tp.input(self, 1);
        auto g = tp.upstream(self);
        if (tp.needs_grad(ia))
            kernels::gemm(g, tp.value(ib).data(), tp.grad_buffer(ia), {m, n, k}, Trans::No, Trans::Yes, true);
        if (tp.needs_grad(ib))
            kernels::gemm(tp.value(ia).data(), g, tp.grad_buffer(ib), {k, m, n}, Trans::Yes, Trans::No, true);
    });
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    require_rank(av, 2, "transpose");
    const std::size_t r = av.shape()[0], c = av.shape()[1];
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    return a.tape()->record(std::move(out), {a.id()}, [r, c](Tape& tp, int self) {
        auto g = tp.upstream(self);
        auto ga = tp.grad_buffer(tp.input(self, 0));
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
}

Var bmm(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.shape()[0] != bv.shape()[0] || av.shape()[2] != bv.shape()[1])
        throw ShapeError("bmm: dimension mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    const std::size_t B = av.shape()[0], m = av.shape()[1], k = av.shape()[2], n = bv.shape()[2];
    Tensor out({B, m, n});
    kernels::batched_gemm(av.data(), bv.data(), out.data(), B, {m, k, n}, Trans::No, Trans::No, false);
    return tape.record(std::move(out), {a.id(), b.id()}, [B, m, k, n](Tape& tp, int self) {
        const int ia = tp.input(self, 0), ib = tp.input(self, 1);
        auto g = tp.upstream(self);
        if (tp.needs_grad(ia))
            kernels::batched_gemm(g, tp.value(ib).data(), tp.grad_buffer(ia), B, {m, n, k}, Trans::No,
                                  Trans::Yes, true);
        if (tp.needs_grad(ib))
            kernels::batched_gemm(tp.value(ia).data(), g, tp.grad_buffer(ib), B, {k, m, n}, Trans::Yes,
                                  Trans::No, true);
    });
}

Var bmm_nt(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.shape()[0] != bv.shape()[0] || av.shape()[2] != bv.shape()[2])
        throw ShapeError("bmm_nt: dimension mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) +
                         "^T");
    const std::size_t B = av.shape()[0], m = av.shape()[1], k = av.shape()[2], n = bv.shape()[1];
    Tensor out({B, m, n});
    kernels::batched_gemm(av.data(), bv.data(), out.data(), B, {m, k, n}, Trans::No, Trans::Yes, false);
    return tape.record(std::move(out), {a.id(), b.id()}, [B, m, k, n](Tape& tp, int self) {
        const int ia = tp.input(self, 0), ib = tp.input(self, 1);
        auto g = tp.upstream(self);
        if (tp.needs_grad(ia))
            kernels::batched_gemm(g, tp.value(ib).data(), tp.grad_buffer(ia), B, {m, n, k}, Trans::No,
                                  Trans::No, true);
        if (tp.needs_grad(ib))
            kernels::batched_gemm(g, tp.value(ia).data(), tp.grad_buffer(ib), B, {n, m, k}, Trans::Yes,
                                  Trans::No, true);
    });
}

Var softmax_lastdim(Var x) {
    const Tensor& xv = x.value();
    for (double v : xv.data())
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    const std::size_t cols = xv.shape().back(), rows = xv.size() / cols;
    Tensor out(xv.shape());
    kernels::softmax_rows(xv.data(), out.data(), rows, cols);
    return x.tape()->record(std::move(out), {x.id()}, [rows, cols](Tape& tp, int self) {
        auto g = tp.upstream(self);
        const Tensor& y = tp.value(self);
        auto gx = tp.grad_buffer(tp.input(self, 0));
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += g[o + j] * y[o + j];
            for (std::size_t j = 0; j < cols; ++j) gx[o + j] += y[o + j] * (g[o + j] - dot);
        }
    });
}

Var layer_norm_lastdim(Var x, Var gamma, Var beta, double eps) {
    Tape& tape = same_tape(x, gamma);
    same_tape(x, beta);
    const Tensor& xv = x.value();
    const std::size_t d = xv.shape().back(), rows = xv.size() / d;
    if (gamma.size() != d || beta.size() != d)
        throw ShapeError("layer_norm: scale/shift length must equal last extent of " + shape_str(xv.shape()));
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xv[o + j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xv[o + j] - mean) * (xv[o + j] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xv[o + j] - mean) * is;
            (*xhat)[o + j] = h;
            out[o + j] = gv[j] * h + bv[j];
        }
    }
    return tape.record(std::move(out), {x.id(), gamma.id(), beta.id()},
                       [rows, d, xhat, inv_std](Tape& tp, int self) {
                           const int ix = tp.input(self, 0), ig = tp.input(self, 1), ib = tp.input(self, 2);
                           auto g = tp.upstream(self);
                           const Tensor& gv = tp.value(ig);
                           if (tp.needs_grad(ib)) {
                               auto gb = tp.grad_buffer(ib);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                           }
                           if (tp.needs_grad(ig)) {
                               auto gg = tp.grad_buffer(ig);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
                           }
                           if (tp.needs_grad(ix)) {
                               auto gx = tp.grad_buffer(ix);
                               const double inv_d = 1.0 / static_cast<double>(d);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   const std::size_t o = r * d;
                                   double s1 = 0.0, s2 = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gh = g[o + j] * gv[j];
                                       s1 += gh;
                                       s2 += gh * (*xhat)[o + j];
                                   }
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gh = g[o + j] * gv[j];
                                       gx[o + j] += (*inv_std)[r] * (gh - s1 * inv_d - (*xhat)[o + j] * s2 * inv_d);
                                   }
                               }
                           }
                       });
}

Var add(Var a, Var b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var scale(Var x, double s) {
    return unary_op(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(Var x, double s) {
    return unary_op(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var exp(Var x) {
    return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
    for (double v : x.value().data())
        if (!(v > 0.0)) throw DomainError("log: argument must be positive, got " + std::to_string(v));
    return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
    for (double v : x.value().data())
        if (!(v >= 0.0)) throw DomainError("sqrt: argument must be non-negative, got " + std::to_string(v));
    return unary_op(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var pow(Var x, double e) {
    if (e == 0.0) return unary_op(x, [](double) { return 1.0; }, [](double, double) { return 0.0; });
    if (e != std::floor(e))
        for (double v : x.value().data())
            if (v < 0.0) throw DomainError("pow: negative base with non-integer exponent");
    return unary_op(
        x, [e](double v) { return std::pow(v, e); },
        [e](double v, double) { return e == 1.0 ? 1.0 : e * std::pow(v, e - 1.0); });
}

Var sigmoid(Var x) {
    return unary_op(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double z = std::exp(v);
            return z / (1.0 + z);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var clamp(Var x, double lo, double hi) {
    return unary_op(
        x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var concat_rows(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const auto la = row_layout(av.shape()), lb = row_layout(bv.shape());
    bool ok = av.rank() == bv.rank() && la.outer == lb.outer && la.inner == lb.inner;
    for (std::size_t i = 0; ok && i + 2 < av.rank(); ++i) ok = av.shape()[i] == bv.shape()[i];
    if (!ok)
        throw ShapeError("concat_rows: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
    Shape shape = av.shape();
    shape[row_axis(shape)] = la.rows + lb.rows;
    Tensor out(shape);
    const std::size_t sa = la.rows * la.inner, sb = lb.rows * lb.inner;
    for (std::size_t o = 0; o < la.outer; ++o) {
        std::copy_n(av.data().begin() + o * sa, sa, out.data().begin() + o * (sa + sb));
        std::copy_n(bv.data().begin() + o * sb, sb, out.data().begin() + o * (sa + sb) + sa);
    }
    return tape.record(std::move(out), {a.id(), b.id()}, [outer = la.outer, sa, sb](Tape& tp, int self) {
        const int ia = tp.input(self, 0), ib = tp.input(self, 1);
        auto g = tp.upstream(self);
        if (tp.needs_grad(ia)) {
            auto ga = tp.grad_buffer(ia);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < sa; ++i) ga[o * sa + i] += g[o * (sa + sb) + i];
        }
        if (tp.needs_grad(ib)) {
            auto gb = tp.grad_buffer(ib);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < sb; ++i) gb[o * sb + i] += g[o * (sa + sb) + sa + i];
        }
    });
}

Var slice_rows(Var x, std::size_t lo, std::size_t hi) {
    const Tensor& xv = x.value();
    const auto l = row_layout(xv.shape());
    if (!(lo < hi && hi <= l.rows))
        throw BoundsError("slice_rows: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                          ") out of bounds for " + shape_str(xv.shape()));
    Shape shape = xv.shape();
    shape[row_axis(shape)] = hi - lo;
    Tensor out(shape);
    const std::size_t span = (hi - lo) * l.inner, stride = l.rows * l.inner, off = lo * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o)
        std::copy_n(xv.data().begin() + o * stride + off, span, out.data().begin() + o * span);
    return x.tape()->record(std::move(out), {x.id()}, [outer = l.outer, span, stride, off](Tape& tp, int self) {
        auto g = tp.upstream(self);
        auto gx = tp.grad_buffer(tp.input(self, 0));
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < span; ++i) gx[o * stride + off + i] += g[o * span + i];
    });
}

Var concat_cols(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Shape sa_shape(av.shape().begin(), av.shape().end() - 1), sb_shape(bv.shape().begin(), bv.shape().end() - 1);
    if (av.rank() != bv.rank() || sa_shape != sb_shape)
        throw ShapeError("concat_cols: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
    const std::size_t ca = av.shape().back(), cb = bv.shape().back(), rows = av.size() / ca;
    Shape shape = av.shape();
    shape.back() = ca + cb;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.data().begin() + r * ca, ca, out.data().begin() + r * (ca + cb));
        std::copy_n(bv.data().begin() + r * cb, cb, out.data().begin() + r * (ca + cb) + ca);
    }
    return tape.record(std::move(out), {a.id(), b.id()}, [rows, ca, cb](Tape& tp, int self) {
        const int ia = tp.input(self, 0), ib = tp.input(self, 1);
        auto g = tp.upstream(self);
        if (tp.needs_grad(ia)) {
            auto ga = tp.grad_buffer(ia);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * (ca + cb) + j];
        }
        if (tp.needs_grad(ib)) {
            auto gb = tp.grad_buffer(ib);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * (ca + cb) + ca + j];
        }
    });
}

Var slice_cols(Var x, std::size_t lo, std::size_t hi) {
    const Tensor& xv = x.value();
    const std::size_t cols = xv.shape().back(), rows = xv.size() / cols;
    if (!(lo < hi && hi <= cols))
        throw BoundsError("slice_cols: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                          ") out of bounds for " + shape_str(xv.shape()));
    const std::size_t w = hi - lo;
    Shape shape = xv.shape();
    shape.back() = w;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(xv.data().begin() + r * cols + lo, w, out.data().begin() + r * w);
    return x.tape()->record(std::move(out), {x.id()}, [rows, cols, lo, w](Tape& tp, int self) {
        auto g = tp.upstream(self);
        auto gx = tp.grad_buffer(tp.input(self, 0));
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) gx[r * cols + lo + j] += g[r * w + j];
    });
}

Var reshape(Var x, Shape shape) {
    const Tensor& xv = x.value();
    if (shape_size(shape) != xv.size())
        throw ShapeError("reshape: cannot view " + shape_str(xv.shape()) + " as " + shape_str(shape));
    Tensor out(std::move(shape), xv.values());
    return x.tape()->record(std::move(out), {x.id()}, [](Tape& tp, int self) {
        auto g = tp.upstream(self);
        auto gx = tp.grad_buffer(tp.input(self, 0));
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var tile_batch(Var x, std::size_t batch) {
    const Tensor& xv = x.value();
    if (batch == 0) throw ShapeError("tile_batch: batch must be positive");
    Shape shape;
    shape.push_back(batch);
    shape.insert(shape.end(), xv.shape().begin(), xv.shape().end());
    Tensor out(shape);
    const std::size_t n = xv.size();
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(xv.data().begin(), n, out.data().begin() + b * n);
    return x.tape()->record(std::move(out), {x.id()}, [batch, n](Tape& tp, int self) {
        auto g = tp.upstream(self);
        auto gx = tp.grad_buffer(tp.input(self, 0));
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[b * n + i];
    });
}

Var add_rowvec(Var x, Var v) {
    Tape& tape = same_tape(x, v);
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    const std::size_t n = xv.shape().back();
    if (vv.size() != n)
        throw ShapeError("add_rowvec: vector " + shape_str(vv.shape()) + " does not match last extent of " +
                         shape_str(xv.shape()));
    Tensor out(xv.shape());
    const std::size_t rows = xv.size() / n;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] + vv[j];
    return tape.record(std::move(out), {x.id(), v.id()}, [rows, n](Tape& tp, int self) {
        const int ix = tp.input(self, 0), iv = tp.input(self, 1);
        auto g = tp.upstream(self);
        if (tp.needs_grad(ix)) {
            auto gx = tp.grad_buffer(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.needs_grad(iv)) {
            auto gv = tp.grad_buffer(iv);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) gv[j] += g[r * n + j];
        }
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.tape()->record(Tensor::scalar(s), {x.id()}, [](Tape& tp, int self) {
        const double g = tp.upstream(self)[0];
        auto gx = tp.grad_buffer(tp.input(self, 0));
        for (auto& v : gx) v += g;
    });
}

Var sum_lastdim(Var x) {
    const Tensor& xv = x.value();
    const std::size_t n = xv.shape().back(), rows = xv.size() / n;
    Shape shape(xv.shape().begin(), xv.shape().end() - 1);
    if (shape.empty()) shape = {1};
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j];
        out[r] = s;
    }
    return x.tape()->record(std::move(out), {x.id()}, [rows, n](Tape& tp, int self) {
        auto g = tp.upstream(self);
        auto gx = tp.grad_buffer(tp.input(self, 0));
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r];
    });
}

Var mean_rows(Var x) {
    const Tensor& xv = x.value();
    const auto l = row_layout(xv.shape());
    Shape shape = xv.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(row_axis(shape)));
    if (shape.empty()) shape = {1};
    Tensor out(shape);
    const double inv = 1.0 / static_cast<double>(l.rows);
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t r = 0; r < l.rows; ++r)
            for (std::size_t j = 0; j < l.inner; ++j)
                out[o * l.inner + j] += xv[(o * l.rows + r) * l.inner + j] * inv;
    return x.tape()->record(std::move(out), {x.id()}, [l, inv](Tape& tp, int self) {
        auto g = tp.upstream(self);
        auto gx = tp.grad_buffer(tp.input(self, 0));
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t r = 0; r < l.rows; ++r)
                for (std::size_t j = 0; j < l.inner; ++j) gx[(o * l.rows + r) * l.inner + j] += g[o * l.inner + j] * inv;
    });
}

}  // namespace hcp::ad
