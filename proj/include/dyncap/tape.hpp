#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "dyncap/tensor.hpp"

namespace dyncap {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Tensor& grad() const;
};

// Recorded computation graph for reverse-mode differentiation. Nodes are
// appended in evaluation order, so every node's inputs precede it and a
// single reverse sweep computes all gradients.
//
// Tapes are single-threaded. Parallelism lives inside individual kernels
// and does not change results.
class Tape {
  public:
    Var leaf(Tensor value, bool trainable = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Accumulates gradients for every node reachable from `loss` whose
    // subtree contains a trainable leaf. Unreached nodes keep a zero
    // gradient of matching shape. `loss` must be scalar-shaped.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    // Throws if backward has not run since this node was recorded.
    const Tensor& grad(std::size_t id) const { return grads_.at(id); }
    std::size_t size() const { return nodes_.size(); }

  private:
    enum class Op : std::uint8_t {
        Leaf, MatMul, Add, Sub, Mul, ColMul, ColAdd, Scale,
        Sqrt, Square, Abs, Mean, Sum, Sigmoid, Tanh, Log, Clamp,
    };

    struct Node {
        Op op = Op::Leaf;
        std::size_t in0 = 0;
        std::size_t in1 = 0;
        std::uint8_t n_in = 0;
        bool needs_grad = false;
        double p0 = 0.0;  // clamp lower bound / scale factor
        double p1 = 0.0;  // clamp upper bound
        Tensor value;
    };

    Var push(Op op, Tensor value, const Var* a, const Var* b, double p0 = 0.0, double p1 = 0.0);

    // deque: appending never invalidates references to recorded values.
    std::deque<Node> nodes_;
    std::vector<Tensor> grads_;

    friend Var matmul(Var, Var);
    friend Var add(Var, Var);
    friend Var sub(Var, Var);
    friend Var mul(Var, Var);
    friend Var colmul(Var, Var);
    friend Var coladd(Var, Var);
    friend Var scale(Var, double);
    friend Var sqrt(Var);
    friend Var square(Var);
    friend Var abs(Var);
    friend Var mean(Var);
    friend Var sum(Var);
    friend Var sigmoid(Var);
    friend Var tanh(Var);
    friend Var log(Var);
    friend Var clamp(Var, double, double);
};

// Forward operations. Each records a node on the owning tape.
Var matmul(Var a, Var b);            // (m,k) x (k,n) -> (m,n)
Var add(Var a, Var b);               // same shape or scalar broadcast
Var sub(Var a, Var b);
Var mul(Var a, Var b);               // elementwise, scalar broadcast allowed
Var colmul(Var a, Var v);            // a (B,N) or (N); v (N): column n scaled by v[n]
Var coladd(Var a, Var v);            // column n offset by v[n]
Var scale(Var a, double c);          // constant scalar multiply
Var sqrt(Var a);                     // domain: all elements >= 0
Var square(Var a);
Var abs(Var a);
Var mean(Var a);                     // -> scalar
Var sum(Var a);                      // -> scalar
Var sigmoid(Var a);
Var tanh(Var a);
Var log(Var a);                      // domain: all elements > 0
Var clamp(Var a, double lo, double hi);  // gradient passes inside [lo,hi], zero outside

// Max over coordinates of |analytic - central difference| / max(1, |cd|),
// where the central difference of f is taken with the given step. f is
// evaluated by pure forward passes, independent of any backward code.
// step must lie in [1e-7, 1e-3].
double finite_difference_check(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, const Tensor& analytic_grad, double step);

}  // namespace dyncap
