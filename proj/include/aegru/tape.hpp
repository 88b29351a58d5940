#pragma once

#include <cstddef>
#include <vector>

#include "aegru/errors.hpp"
#include "aegru/matrix.hpp"
#include "aegru/rng.hpp"

// Reverse-mode automatic differentiation on a flat tape.
//
// A Tape owns a growing vector of nodes; every operation appends one node
// whose parents were created earlier, so node order is already topological
// and backward() is a single reverse sweep. Gradients accumulate additively
// into node.grad. A tape is built for one loss evaluation and then thrown
// away; calling backward() twice on the same tape is a contract error, which
// fails loudly instead of silently doubling gradients.

namespace aegru {

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
};

namespace detail {

enum class Op {
    kLeaf,
    kMatMul,
    kLinear,
    kAdd,
    kSub,
    kAddBias,
    kHadamard,
    kScale,
    kSigmoid,
    kTanh,
    kExp,
    kLog,
    kSoftplus,
    kRelu,
    kSum,
    kSliceRows,
    kSampleGaussian,
    kBatchNorm,
};

struct TapeNode {
    Op op = Op::kLeaf;
    int a = -1, b = -1, c = -1;
    bool requires_grad = true;
    Matrix value;
    Matrix grad;    // empty until backward touches the node
    Matrix saved;   // op-specific forward byproduct reused by backward
    Matrix saved2;
    double scalar = 0.0;
    std::size_t r0 = 0, r1 = 0;
};

}  // namespace detail

class Tape {
public:
    using Op = detail::Op;
    using Node = detail::TapeNode;

    Var leaf(Matrix v) {
        Node n;
        n.op = Op::kLeaf;
        n.value = std::move(v);
        return push(std::move(n));
    }

    // A leaf no gradient will ever be asked for (inputs, targets, fixed
    // initial states). Backward prunes every branch that only reaches
    // constants.
    Var constant(Matrix v) {
        Node n;
        n.op = Op::kLeaf;
        n.requires_grad = false;
        n.value = std::move(v);
        return push(std::move(n));
    }

    Var matmul(Var a, Var b) {
        Node n;
        n.op = Op::kMatMul;
        n.a = a.id;
        n.b = b.id;
        n.value = aegru::matmul(val(a), val(b));
        return push(std::move(n));
    }

    Var add(Var a, Var b) { return binary(Op::kAdd, a, b, aegru::add(val(a), val(b))); }
    Var sub(Var a, Var b) { return binary(Op::kSub, a, b, aegru::sub(val(a), val(b))); }

    Var hadamard(Var a, Var b) {
        return binary(Op::kHadamard, a, b, aegru::hadamard(val(a), val(b)));
    }

    // a (m x n) plus a 1 x n bias broadcast over rows.
    Var add_bias(Var a, Var bias) {
        return binary(Op::kAddBias, a, bias, add_row_broadcast(val(a), val(bias)));
    }

    // Fused affine map x * w + bias; one node instead of a matmul/broadcast
    // pair, which matters in the training loop's inner graph.
    Var linear(Var x, Var w, Var bias) {
        const Matrix& xv = val(x);
        const Matrix& wv = val(w);
        const Matrix& bv = val(bias);
        if (bv.rows() != 1 || bv.cols() != wv.cols())
            throw DimensionError("linear: bias " + bv.shape_str() + " does not match " +
                                 wv.shape_str());
        Node n;
        n.op = Op::kLinear;
        n.a = x.id;
        n.b = w.id;
        n.c = bias.id;
        n.value = Matrix(xv.rows(), wv.cols());
        matmul_acc(n.value, xv, wv);
        const double* brow = bv.row_ptr(0);
        for (std::size_t i = 0; i < n.value.rows(); ++i) {
            double* row = n.value.row_ptr(i);
            for (std::size_t j = 0; j < n.value.cols(); ++j) row[j] += brow[j];
        }
        return push(std::move(n));
    }

    Var scale(Var a, double s) {
        Node n;
        n.op = Op::kScale;
        n.a = a.id;
        n.scalar = s;
        n.value = aegru::scale(val(a), s);
        return push(std::move(n));
    }

    Var sigmoid(Var a) { return unary(Op::kSigmoid, a, aegru::sigmoid(val(a))); }
    Var tanh(Var a) { return unary(Op::kTanh, a, aegru::tanh(val(a))); }
    Var exp(Var a) { return unary(Op::kExp, a, aegru::exp(val(a))); }
    Var log(Var a) { return unary(Op::kLog, a, aegru::log(val(a))); }
    Var relu(Var a) { return unary(Op::kRelu, a, aegru::relu(val(a))); }

    Var softplus(Var a) {
        Node n;
        n.op = Op::kSoftplus;
        n.a = a.id;
        n.value = aegru::softplus(val(a));
        n.saved = aegru::sigmoid(val(a));  // the derivative
        return push(std::move(n));
    }

    Var sum(Var a) {
        Node n;
        n.op = Op::kSum;
        n.a = a.id;
        n.value = Matrix(1, 1);
        n.value(0, 0) = aegru::sum(val(a));
        return push(std::move(n));
    }

    Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
        Node n;
        n.op = Op::kSliceRows;
        n.a = a.id;
        n.r0 = r0;
        n.r1 = r1;
        n.value = aegru::slice_rows(val(a), r0, r1);
        return push(std::move(n));
    }

    // Reparameterized Gaussian sample: mu + exp(0.5 * log_var) .* eps with
    // eps ~ N(0, I) drawn from the stream. log_var is clamped to [-40, 10]
    // before the exp; gradient is zero where the clamp is active. The clamp
    // keeps exp() finite and makes the zero-variance limit exact.
    Var sample_gaussian(Var mu, Var log_var, RngStream& rng) {
        detail::require_same_shape(val(mu), val(log_var), "sample_gaussian");
        const Matrix& lv = val(log_var);
        Node n;
        n.op = Op::kSampleGaussian;
        n.a = mu.id;
        n.b = log_var.id;
        n.saved = Matrix(lv.rows(), lv.cols());   // sigma .* eps
        n.saved2 = Matrix(lv.rows(), lv.cols());  // 1 where the clamp is inactive
        for (std::size_t k = 0; k < lv.size(); ++k) {
            const double raw = lv.at_flat(k);
            const double clamped = raw < -40.0 ? -40.0 : (raw > 10.0 ? 10.0 : raw);
            n.saved.at_flat(k) = std::exp(0.5 * clamped) * rng.normal();
            n.saved2.at_flat(k) = (raw == clamped) ? 1.0 : 0.0;
        }
        n.value = aegru::add(val(mu), n.saved);
        return push(std::move(n));
    }

    Var sample_gaussian(Var mu, Var log_var, std::uint64_t seed) {
        RngStream rng(seed);
        return sample_gaussian(mu, log_var, rng);
    }

    // Batch normalization over rows, per column. Training mode normalizes
    // with the batch statistics and folds them into the running estimates
    // (biased variance for the normalization, unbiased for the running
    // estimate); inference mode uses the running estimates unchanged.
    Var batchnorm(Var x, Var gamma, Var beta, Matrix& running_mean, Matrix& running_var,
                  bool training, double momentum = 0.1, double eps = 1e-5) {
        const Matrix& xv = val(x);
        const std::size_t rows = xv.rows(), c = xv.cols();
        if (val(gamma).cols() != c || val(beta).cols() != c || running_mean.cols() != c ||
            running_var.cols() != c)
            throw DimensionError("batchnorm: parameter width does not match input " +
                                 xv.shape_str());
        Matrix mean(1, c), var(1, c);
        if (training) {
            if (rows == 0) throw ContractError("batchnorm: empty batch in training mode");
            mean = aegru::scale(col_sums(xv), 1.0 / static_cast<double>(rows));
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = xv(i, j) - mean(0, j);
                    var(0, j) += d * d;
                }
            for (std::size_t j = 0; j < c; ++j) var(0, j) /= static_cast<double>(rows);
            const double unbias =
                rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
            for (std::size_t j = 0; j < c; ++j) {
                running_mean(0, j) = (1.0 - momentum) * running_mean(0, j) + momentum * mean(0, j);
                running_var(0, j) =
                    (1.0 - momentum) * running_var(0, j) + momentum * unbias * var(0, j);
            }
        } else {
            mean = running_mean;
            var = running_var;
        }
        Node n;
        n.op = Op::kBatchNorm;
        n.a = x.id;
        n.b = gamma.id;
        n.c = beta.id;
        n.scalar = training ? 1.0 : 0.0;
        n.saved2 = Matrix(1, c);  // 1 / sqrt(var + eps)
        for (std::size_t j = 0; j < c; ++j) n.saved2(0, j) = 1.0 / std::sqrt(var(0, j) + eps);
        n.saved = Matrix(rows, c);  // normalized input
        n.value = Matrix(rows, c);
        const Matrix& gv = val(gamma);
        const Matrix& bv = val(beta);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double xhat = (xv(i, j) - mean(0, j)) * n.saved2(0, j);
                n.saved(i, j) = xhat;
                n.value(i, j) = gv(0, j) * xhat + bv(0, j);
            }
        return push(std::move(n));
    }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }

    // Gradient of the last backward() with respect to this node; zero if the
    // node did not influence the loss.
    const Matrix& grad(Var v) {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void backward(Var loss) {
        if (backward_done_)
            throw ContractError("backward: tape already differentiated; build a new tape");
        const Matrix& lv = val(loss);
        if (lv.rows() != 1 || lv.cols() != 1)
            throw ContractError("backward: loss must be 1x1, got " + lv.shape_str());
        backward_done_ = true;

        // A node participates when it lies between the loss and some
        // gradient-requiring leaf.
        std::vector<char> needed(nodes_.size(), 0);
        needed[loss.id] = 1;
        for (int i = loss.id; i >= 0; --i) {
            if (!needed[i]) continue;
            const Node& n = nodes_[i];
            if (n.a >= 0 && nodes_[n.a].requires_grad) needed[n.a] = 1;
            if (n.b >= 0 && nodes_[n.b].requires_grad) needed[n.b] = 1;
            if (n.c >= 0 && nodes_[n.c].requires_grad) needed[n.c] = 1;
        }
        for (int i = 0; i <= loss.id; ++i)
            if (needed[i]) nodes_[i].grad = Matrix(nodes_[i].value.rows(), nodes_[i].value.cols());
        nodes_[loss.id].grad(0, 0) = 1.0;

        for (int i = loss.id; i >= 0; --i) {
            if (!needed[i]) continue;
            propagate(nodes_[i]);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    friend struct Var;

    const Matrix& val(Var v) const { return nodes_[v.id].value; }

    Var push(Node n) {
        if (n.op != Op::kLeaf)
            n.requires_grad = (n.a >= 0 && nodes_[n.a].requires_grad) ||
                              (n.b >= 0 && nodes_[n.b].requires_grad) ||
                              (n.c >= 0 && nodes_[n.c].requires_grad);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size() - 1)};
    }

    Var unary(Op op, Var a, Matrix value) {
        Node n;
        n.op = op;
        n.a = a.id;
        n.value = std::move(value);
        return push(std::move(n));
    }

    Var binary(Op op, Var a, Var b, Matrix value) {
        Node n;
        n.op = op;
        n.a = a.id;
        n.b = b.id;
        n.value = std::move(value);
        return push(std::move(n));
    }

    bool wants(int id) const { return id >= 0 && !nodes_[id].grad.empty(); }

    void propagate(Node& n) {
        const Matrix& g = n.grad;
        switch (n.op) {
            case Op::kLeaf:
                break;
            case Op::kMatMul:
                if (wants(n.a)) matmul_nt_acc(nodes_[n.a].grad, g, nodes_[n.b].value);
                if (wants(n.b)) matmul_tn_acc(nodes_[n.b].grad, nodes_[n.a].value, g);
                break;
            case Op::kLinear:
                if (wants(n.a)) matmul_nt_acc(nodes_[n.a].grad, g, nodes_[n.b].value);
                if (wants(n.b)) matmul_tn_acc(nodes_[n.b].grad, nodes_[n.a].value, g);
                if (wants(n.c)) add_in_place(nodes_[n.c].grad, col_sums(g));
                break;
            case Op::kAdd:
                if (wants(n.a)) add_in_place(nodes_[n.a].grad, g);
                if (wants(n.b)) add_in_place(nodes_[n.b].grad, g);
                break;
            case Op::kSub:
                if (wants(n.a)) add_in_place(nodes_[n.a].grad, g);
                if (wants(n.b)) axpy(nodes_[n.b].grad, -1.0, g);
                break;
            case Op::kAddBias:
                if (wants(n.a)) add_in_place(nodes_[n.a].grad, g);
                if (wants(n.b)) add_in_place(nodes_[n.b].grad, col_sums(g));
                break;
            case Op::kHadamard:
                if (wants(n.a)) acc_product(nodes_[n.a].grad, g, nodes_[n.b].value);
                if (wants(n.b)) acc_product(nodes_[n.b].grad, g, nodes_[n.a].value);
                break;
            case Op::kScale:
                axpy(nodes_[n.a].grad, n.scalar, g);
                break;
            case Op::kSigmoid: {
                Matrix& ga = nodes_[n.a].grad;
                for (std::size_t k = 0; k < g.size(); ++k) {
                    const double y = n.value.at_flat(k);
                    ga.at_flat(k) += g.at_flat(k) * y * (1.0 - y);
                }
                break;
            }
            case Op::kTanh: {
                Matrix& ga = nodes_[n.a].grad;
                for (std::size_t k = 0; k < g.size(); ++k) {
                    const double y = n.value.at_flat(k);
                    ga.at_flat(k) += g.at_flat(k) * (1.0 - y * y);
                }
                break;
            }
            case Op::kExp:
                acc_product(nodes_[n.a].grad, g, n.value);
                break;
            case Op::kLog: {
                Matrix& ga = nodes_[n.a].grad;
                const Matrix& x = nodes_[n.a].value;
                for (std::size_t k = 0; k < g.size(); ++k)
                    ga.at_flat(k) += g.at_flat(k) / x.at_flat(k);
                break;
            }
            case Op::kSoftplus:
                acc_product(nodes_[n.a].grad, g, n.saved);
                break;
            case Op::kRelu: {
                Matrix& ga = nodes_[n.a].grad;
                const Matrix& x = nodes_[n.a].value;
                for (std::size_t k = 0; k < g.size(); ++k)
                    if (x.at_flat(k) > 0.0) ga.at_flat(k) += g.at_flat(k);
                break;
            }
            case Op::kSum: {
                Matrix& ga = nodes_[n.a].grad;
                const double s = g(0, 0);
                for (std::size_t k = 0; k < ga.size(); ++k) ga.at_flat(k) += s;
                break;
            }
            case Op::kSliceRows: {
                Matrix& ga = nodes_[n.a].grad;
                for (std::size_t i = n.r0; i < n.r1; ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j)
                        ga(i, j) += g(i - n.r0, j);
                break;
            }
            case Op::kSampleGaussian: {
                if (wants(n.a)) add_in_place(nodes_[n.a].grad, g);
                if (wants(n.b)) {
                    Matrix& glv = nodes_[n.b].grad;
                    for (std::size_t k = 0; k < g.size(); ++k)
                        glv.at_flat(k) +=
                            0.5 * g.at_flat(k) * n.saved.at_flat(k) * n.saved2.at_flat(k);
                }
                break;
            }
            case Op::kBatchNorm:
                backward_batchnorm(n);
                break;
        }
    }

    void backward_batchnorm(Node& n) {
        const Matrix& g = n.grad;
        const Matrix& xhat = n.saved;
        const Matrix& istd = n.saved2;
        const Matrix& gamma = nodes_[n.b].value;
        const std::size_t rows = g.rows(), c = g.cols();

        Matrix gsum = col_sums(g);
        Matrix gx_sum(1, c);  // sum of g .* xhat per column
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < c; ++j) gx_sum(0, j) += g(i, j) * xhat(i, j);

        if (wants(n.c)) add_in_place(nodes_[n.c].grad, gsum);
        if (wants(n.b)) add_in_place(nodes_[n.b].grad, gx_sum);

        if (!wants(n.a)) return;
        Matrix& gx = nodes_[n.a].grad;
        if (n.scalar != 0.0) {
            const double inv_rows = 1.0 / static_cast<double>(rows);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    gx(i, j) += gamma(0, j) * istd(0, j) *
                                (g(i, j) - inv_rows * gsum(0, j) -
                                 xhat(i, j) * inv_rows * gx_sum(0, j));
        } else {
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    gx(i, j) += g(i, j) * gamma(0, j) * istd(0, j);
        }
    }

    // dst += a .* b
    static void acc_product(Matrix& dst, const Matrix& a, const Matrix& b) {
        for (std::size_t k = 0; k < dst.size(); ++k)
            dst.at_flat(k) += a.at_flat(k) * b.at_flat(k);
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

// Free-function spellings so expressions read like the matrix versions.
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }
inline Var add(Var a, Var b) { return a.tape->add(a, b); }
inline Var sub(Var a, Var b) { return a.tape->sub(a, b); }
inline Var hadamard(Var a, Var b) { return a.tape->hadamard(a, b); }
inline Var add_bias(Var a, Var bias) { return a.tape->add_bias(a, bias); }
inline Var linear(Var x, Var w, Var bias) { return x.tape->linear(x, w, bias); }
inline Var scale(Var a, double s) { return a.tape->scale(a, s); }
inline Var sigmoid(Var a) { return a.tape->sigmoid(a); }
inline Var tanh(Var a) { return a.tape->tanh(a); }
inline Var exp(Var a) { return a.tape->exp(a); }
inline Var log(Var a) { return a.tape->log(a); }
inline Var softplus(Var a) { return a.tape->softplus(a); }
inline Var relu(Var a) { return a.tape->relu(a); }
inline Var sum(Var a) { return a.tape->sum(a); }
inline Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    return a.tape->slice_rows(a, r0, r1);
}
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }

}  // namespace aegru
