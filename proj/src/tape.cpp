#include "dyncap/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dyncap/kernels.hpp"

namespace dyncap {

namespace {

void check_same_tape(Var a, Var b, const char* op) {
    if (a.tape == nullptr || b.tape == nullptr) {
        throw std::invalid_argument(std::string(op) + ": unbound operand");
    }
    if (a.tape != b.tape) {
        throw std::invalid_argument(std::string(op) + ": operands from different tapes");
    }
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

// Columns of a rank-1 or rank-2 tensor; rank-1 counts as a single row.
std::size_t col_count(const Tensor& t) {
    return t.rank() == 1 ? t.dim(0) : t.dim(1);
}

std::size_t row_count(const Tensor& t) {
    return t.rank() == 1 ? 1 : t.dim(0);
}

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Tensor value, bool trainable) {
    Node node;
    node.op = Op::Leaf;
    node.needs_grad = trainable;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Tape::push(Op op, Tensor value, const Var* a, const Var* b, double p0, double p1) {
    Node node;
    node.op = op;
    node.p0 = p0;
    node.p1 = p1;
    if (a != nullptr) {
        node.in0 = a->id;
        node.n_in = 1;
        node.needs_grad = nodes_[a->id].needs_grad;
    }
    if (b != nullptr) {
        node.in1 = b->id;
        node.n_in = 2;
        node.needs_grad = node.needs_grad || nodes_[b->id].needs_grad;
    }
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

// ---------------------------------------------------------------------------
// forward ops
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    check_same_tape(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_error("matmul", av, bv);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    kernels::matmul_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return a.tape->push(Tape::Op::MatMul, std::move(out), &a, &b);
}

namespace {

// add/sub/mul share the shape rule: equal shapes, or one operand scalar.
Tensor ew_forward(const char* op, const Tensor& av, const Tensor& bv,
                  double (*fn)(double, double)) {
    if (av.same_shape(bv)) {
        Tensor out(av.shape());
        for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fn(av[i], bv[i]);
        return out;
    }
    if (bv.is_scalar()) {
        Tensor out(av.shape());
        const double s = bv[0];
        for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fn(av[i], s);
        return out;
    }
    if (av.is_scalar()) {
        Tensor out(bv.shape());
        const double s = av[0];
        for (std::size_t i = 0; i < bv.numel(); ++i) out[i] = fn(s, bv[i]);
        return out;
    }
    shape_error(op, av, bv);
}

}  // namespace

Var add(Var a, Var b) {
    check_same_tape(a, b, "add");
    Tensor out = ew_forward("add", a.value(), b.value(), +[](double x, double y) { return x + y; });
    return a.tape->push(Tape::Op::Add, std::move(out), &a, &b);
}

Var sub(Var a, Var b) {
    check_same_tape(a, b, "sub");
    Tensor out = ew_forward("sub", a.value(), b.value(), +[](double x, double y) { return x - y; });
    return a.tape->push(Tape::Op::Sub, std::move(out), &a, &b);
}

Var mul(Var a, Var b) {
    check_same_tape(a, b, "mul");
    Tensor out = ew_forward("mul", a.value(), b.value(), +[](double x, double y) { return x * y; });
    return a.tape->push(Tape::Op::Mul, std::move(out), &a, &b);
}

Var colmul(Var a, Var v) {
    check_same_tape(a, v, "colmul");
    const Tensor& av = a.value();
    const Tensor& vv = v.value();
    if (av.rank() > 2 || vv.rank() != 1 || col_count(av) != vv.dim(0)) shape_error("colmul", av, vv);
    Tensor out(av.shape());
    const std::size_t rows = row_count(av), cols = col_count(av);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t n = 0; n < cols; ++n) out[i * cols + n] = av[i * cols + n] * vv[n];
    }
    return a.tape->push(Tape::Op::ColMul, std::move(out), &a, &v);
}

Var coladd(Var a, Var v) {
    check_same_tape(a, v, "coladd");
    const Tensor& av = a.value();
    const Tensor& vv = v.value();
    if (av.rank() > 2 || vv.rank() != 1 || col_count(av) != vv.dim(0)) shape_error("coladd", av, vv);
    Tensor out(av.shape());
    const std::size_t rows = row_count(av), cols = col_count(av);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t n = 0; n < cols; ++n) out[i * cols + n] = av[i * cols + n] + vv[n];
    }
    return a.tape->push(Tape::Op::ColAdd, std::move(out), &a, &v);
}

Var scale(Var a, double c) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.numel(); ++i) out[i] = c * av[i];
    return a.tape->push(Tape::Op::Scale, std::move(out), &a, nullptr, c);
}

namespace {

Tensor unary_forward(const Tensor& av, double (*fn)(double)) {
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fn(av[i]);
    return out;
}

}  // namespace

Var sqrt(Var a) {
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < av.numel(); ++i) {
        if (av[i] < 0.0) throw std::domain_error("sqrt: negative input " + std::to_string(av[i]));
    }
    return a.tape->push(Tape::Op::Sqrt, unary_forward(av, +[](double x) { return std::sqrt(x); }), &a, nullptr);
}

Var square(Var a) {
    return a.tape->push(Tape::Op::Square, unary_forward(a.value(), +[](double x) { return x * x; }), &a, nullptr);
}

Var abs(Var a) {
    return a.tape->push(Tape::Op::Abs, unary_forward(a.value(), +[](double x) { return std::fabs(x); }), &a, nullptr);
}

Var mean(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
    return a.tape->push(Tape::Op::Mean, Tensor::scalar(s / static_cast<double>(av.numel())), &a, nullptr);
}

Var sum(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
    return a.tape->push(Tape::Op::Sum, Tensor::scalar(s), &a, nullptr);
}

Var sigmoid(Var a) {
    return a.tape->push(Tape::Op::Sigmoid,
                        unary_forward(a.value(), +[](double x) { return 1.0 / (1.0 + std::exp(-x)); }),
                        &a, nullptr);
}

Var tanh(Var a) {
    return a.tape->push(Tape::Op::Tanh, unary_forward(a.value(), +[](double x) { return std::tanh(x); }), &a, nullptr);
}

Var log(Var a) {
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < av.numel(); ++i) {
        if (av[i] <= 0.0) throw std::domain_error("log: non-positive input " + std::to_string(av[i]));
    }
    return a.tape->push(Tape::Op::Log, unary_forward(av, +[](double x) { return std::log(x); }), &a, nullptr);
}

Var clamp(Var a, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.numel(); ++i) out[i] = std::min(std::max(av[i], lo), hi);
    return a.tape->push(Tape::Op::Clamp, std::move(out), &a, nullptr, lo, hi);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {

// Accumulate dy into da, reducing to a scalar if a is scalar-broadcast.
void accum_maybe_scalar(Tensor& da, const Tensor& dy, double sign) {
    if (da.numel() == dy.numel()) {
        for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += sign * dy[i];
    } else {
        double s = 0.0;
        for (std::size_t i = 0; i < dy.numel(); ++i) s += dy[i];
        da[0] += sign * s;
    }
}

}  // namespace

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss from a different tape");
    if (!nodes_[loss.id].value.is_scalar()) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_string(nodes_[loss.id].value.shape()));
    }

    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const Node& n : nodes_) grads_.emplace_back(Tensor::zeros(n.value.shape()));

    std::vector<bool> reached(nodes_.size(), false);
    reached[loss.id] = true;
    grads_[loss.id][0] = 1.0;

    for (std::size_t idx = loss.id + 1; idx-- > 0;) {
        const Node& node = nodes_[idx];
        if (!reached[idx] || !node.needs_grad || node.op == Op::Leaf) continue;
        const Tensor& dy = grads_[idx];
        const Tensor& y = node.value;

        const bool g0 = nodes_[node.in0].needs_grad;
        const bool g1 = node.n_in > 1 && nodes_[node.in1].needs_grad;
        if (g0) reached[node.in0] = true;
        if (g1) reached[node.in1] = true;

        const Tensor& a = nodes_[node.in0].value;
        Tensor& da = grads_[node.in0];

        switch (node.op) {
            case Op::MatMul: {
                const Tensor& b = nodes_[node.in1].value;
                const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
                if (g0) {
                    Tensor tmp({m, k});
                    kernels::matmul_nt(dy.data().data(), b.data().data(), tmp.data().data(), m, n, k);
                    for (std::size_t i = 0; i < tmp.numel(); ++i) da[i] += tmp[i];
                }
                if (g1) {
                    Tensor tmp({k, n});
                    kernels::matmul_tn(a.data().data(), dy.data().data(), tmp.data().data(), k, m, n);
                    Tensor& db = grads_[node.in1];
                    for (std::size_t i = 0; i < tmp.numel(); ++i) db[i] += tmp[i];
                }
                break;
            }
            case Op::Add:
                if (g0) accum_maybe_scalar(da, dy, 1.0);
                if (g1) accum_maybe_scalar(grads_[node.in1], dy, 1.0);
                break;
            case Op::Sub:
                if (g0) accum_maybe_scalar(da, dy, 1.0);
                if (g1) accum_maybe_scalar(grads_[node.in1], dy, -1.0);
                break;
            case Op::Mul: {
                const Tensor& b = nodes_[node.in1].value;
                if (g0) {
                    if (a.numel() == dy.numel()) {
                        for (std::size_t i = 0; i < dy.numel(); ++i) {
                            da[i] += dy[i] * (b.is_scalar() ? b[0] : b[i]);
                        }
                    } else {  // a is the broadcast scalar
                        double s = 0.0;
                        for (std::size_t i = 0; i < dy.numel(); ++i) s += dy[i] * b[i];
                        da[0] += s;
                    }
                }
                if (g1) {
                    Tensor& db = grads_[node.in1];
                    if (b.numel() == dy.numel()) {
                        for (std::size_t i = 0; i < dy.numel(); ++i) {
                            db[i] += dy[i] * (a.is_scalar() ? a[0] : a[i]);
                        }
                    } else {
                        double s = 0.0;
                        for (std::size_t i = 0; i < dy.numel(); ++i) s += dy[i] * a[i];
                        db[0] += s;
                    }
                }
                break;
            }
            case Op::ColMul: {
                const Tensor& v = nodes_[node.in1].value;
                const std::size_t cols = v.dim(0), rows = a.numel() / cols;
                if (g0) {
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t n = 0; n < cols; ++n) da[i * cols + n] += dy[i * cols + n] * v[n];
                }
                if (g1) {
                    Tensor& dv = grads_[node.in1];
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t n = 0; n < cols; ++n) dv[n] += dy[i * cols + n] * a[i * cols + n];
                }
                break;
            }
            case Op::ColAdd: {
                const Tensor& v = nodes_[node.in1].value;
                const std::size_t cols = v.dim(0), rows = a.numel() / cols;
                if (g0) {
                    for (std::size_t i = 0; i < a.numel(); ++i) da[i] += dy[i];
                }
                if (g1) {
                    Tensor& dv = grads_[node.in1];
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t n = 0; n < cols; ++n) dv[n] += dy[i * cols + n];
                }
                break;
            }
            case Op::Scale:
                for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += node.p0 * dy[i];
                break;
            case Op::Sqrt:
                for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * 0.5 / y[i];
                break;
            case Op::Square:
                for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * 2.0 * a[i];
                break;
            case Op::Abs:
                for (std::size_t i = 0; i < dy.numel(); ++i) {
                    da[i] += dy[i] * (a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0));
                }
                break;
            case Op::Mean: {
                const double g = dy[0] / static_cast<double>(a.numel());
                for (std::size_t i = 0; i < a.numel(); ++i) da[i] += g;
                break;
            }
            case Op::Sum:
                for (std::size_t i = 0; i < a.numel(); ++i) da[i] += dy[0];
                break;
            case Op::Sigmoid:
                for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
                break;
            case Op::Tanh:
                for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * (1.0 - y[i] * y[i]);
                break;
            case Op::Log:
                for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] / a[i];
                break;
            case Op::Clamp:
                for (std::size_t i = 0; i < dy.numel(); ++i) {
                    if (a[i] >= node.p0 && a[i] <= node.p1) da[i] += dy[i];
                }
                break;
            case Op::Leaf:
                break;
        }
    }
}

// ---------------------------------------------------------------------------
// gradient oracle
// ---------------------------------------------------------------------------

double finite_difference_check(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, const Tensor& analytic_grad, double step) {
    if (!(step >= 1e-7 && step <= 1e-3)) {
        throw std::invalid_argument("finite_difference_check: step must be in [1e-7, 1e-3]");
    }
    if (!x.same_shape(analytic_grad)) {
        throw std::invalid_argument("finite_difference_check: gradient shape " +
                                    shape_string(analytic_grad.shape()) + " does not match input " +
                                    shape_string(x.shape()));
    }
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        probe[i] = x[i] + step;
        const double fp = f(probe);
        probe[i] = x[i] - step;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error("finite_difference_check: non-finite value from f");
        }
        const double cd = (fp - fm) / (2.0 * step);
        const double rel = std::fabs(analytic_grad[i] - cd) / std::max(1.0, std::fabs(cd));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace dyncap
