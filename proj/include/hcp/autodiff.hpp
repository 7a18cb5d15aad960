#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hcp/tensor.hpp"

// Tape-based reverse-mode differentiation over hcp::ad::Tensor.
//
// A Tape is append-only: every op records its output value, its input node
// ids and a closure that pushes the output gradient back to the inputs.
// Inputs always precede their consumers, so one reverse sweep visits each
// node once. Leaves either reference an external Tensor (parameters; grads
// accumulate into Tensor::grad when it requires grad) or own a constant.
namespace hcp::ad {

class Tape;

class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    Tape* tape() const noexcept { return tape_; }
    int id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records a reference to `t`. `t` must outlive the tape and stay
    /// unmodified until backward() returns.
    Var leaf(Tensor& t);
    /// Non-differentiable view of `t` (no copy); same lifetime rule as leaf().
    Var view(const Tensor& t);
    Var constant(Tensor t);

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// calls; intermediate gradients are reset at the start of each sweep.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t last_backward_visits() const noexcept { return visits_; }

    const Tensor& value(int id) const;
    /// Gradient of an intermediate node after backward(); empty when the
    /// node did not need one.
    std::span<const double> grad(Var v) const;

    // Op-construction interface.
    Var record(Tensor value, std::vector<int> inputs, BackwardFn fn);
    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    std::span<double> grad_buffer(int id);
    std::span<const double> upstream(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    int input(int id, std::size_t k) const { return nodes_[static_cast<std::size_t>(id)].inputs[k]; }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor* sink = nullptr;  // where leaf gradients accumulate
        std::vector<int> inputs;
        BackwardFn backward;
        bool needs_grad = false;
        std::vector<double> grad;
    };

    std::vector<Node> nodes_;
    std::size_t visits_ = 0;
};

// --- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b);               // [m,k] x [k,n]
Var transpose(Var a);                   // rank-2
Var bmm(Var a, Var b);                  // [B,m,k] x [B,k,n]
Var bmm_nt(Var a, Var b);               // [B,m,k] x [B,n,k]^T -> [B,m,n]
Var softmax_lastdim(Var x);
Var layer_norm_lastdim(Var x, Var gamma, Var beta, double eps = 1e-5);

// --- elementwise ------------------------------------------------------------
// Binary ops take equal shapes or a single-element operand on either side.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var pow(Var x, double exponent);
Var sigmoid(Var x);
Var clamp(Var x, double lo, double hi);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// --- structural -------------------------------------------------------------
// "Rows" means the second-to-last axis for rank >= 2 and axis 0 for rank 1.

Var concat_rows(Var a, Var b);
Var slice_rows(Var x, std::size_t lo, std::size_t hi);
Var concat_cols(Var a, Var b);          // along the last axis
Var slice_cols(Var x, std::size_t lo, std::size_t hi);
Var reshape(Var x, Shape shape);
Var tile_batch(Var x, std::size_t batch);   // [..] -> [batch, ..]
Var add_rowvec(Var x, Var v);           // x[..., n] + v[n]

// --- reductions -------------------------------------------------------------

Var sum(Var x);                         // -> [1]
Var sum_lastdim(Var x);
Var mean_rows(Var x);                   // mean over the rows axis

}  // namespace hcp::ad
