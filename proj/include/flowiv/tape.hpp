#pragma once

#include "flowiv/param_vector.hpp"

#include <Eigen/Core>

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace flowiv {

using Mat = Eigen::MatrixXd;

// Handle to a node on a Tape. Valid only for the tape that created it.
struct Var {
    int idx = -1;
};

// Reverse-mode differentiation over dense matrices (scalars are 1x1).
// A tape is built once per evaluation, is single-use, and is confined to
// one thread. Gradients are accumulated lazily: nodes that no leaf feeds
// into carry no backward pass at all.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Mat value);
    Var constant_scalar(double value);
    Var leaf(Mat value);

    const Mat& value(Var v) const { return nodes_[v.idx].value; }
    // Accumulated gradient of the last backward() root w.r.t. v.
    // Zero matrix if nothing flowed into v.
    Mat grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.idx].requires_grad; }

    // Elementwise binary ops. Shapes must match, or one operand may be 1x1
    // (scalar broadcast). add/sub additionally accept a 1xM row-vector
    // second operand against an NxM first operand.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);

    Var matmul(Var a, Var b);

    Var neg(Var a);
    Var exp_(Var a);
    Var log_(Var a);
    Var sqrt_(Var a);
    Var square(Var a);
    Var tanh_(Var a);
    Var softplus(Var a);

    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var transpose(Var a);
    // Column-major reinterpretation preserving element count.
    Var reshape(Var a, int rows, int cols);

    Var sum(Var a);
    Var mean(Var a);

    // Rowwise softmax over an NxK matrix.
    Var softmax_rows(Var a);
    // NxK -> Nx(K+1): column 0 is zero, column j is the sum of input
    // columns 0..j-1 (inclusive prefix sums shifted right).
    Var cumsum0_rows(Var a);
    // Nx(K-1) -> Nx(K+1) with a column of ones prepended and appended.
    Var pad_ones(Var a);
    Var slice_cols(Var a, int first, int count);
    // Per-row column gather: out(i,0) = a(i, idx[i]). A 1xK input is
    // broadcast across rows.
    Var gather_cols(Var a, const std::vector<int>& idx);
    // Per-row selection between two Nx1 columns; mask[i] != 0 picks a.
    Var select_rows(const std::vector<char>& mask, Var a, Var b);
    // 1xM -> NxM.
    Var repeat_rows(Var a, int n);
    // (N*g)x1 -> Nx1, averaging consecutive groups of g entries.
    Var group_mean(Var a, int g);

    // Seeds d(root)=1 (root must be 1x1) and propagates to all leaves.
    void backward(Var root);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;                        // lazily sized on first accumulation
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    Var push(Mat value, bool requires_grad, std::function<void(Tape&)> bw);
    void accum(int idx, const Mat& g);
    Mat& grad_ref(int idx);
    bool has_grad(int idx) const { return nodes_[idx].grad.size() > 0; }

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Generic gradient entry point over a ParamVector.
//
// The loss builder receives one Nx1 leaf per parameter segment, keyed by
// segment name, and must return a 1x1 loss node.
// ---------------------------------------------------------------------------

using ParamLeaves = std::map<std::string, Var>;
using LossBuilder = std::function<Var(Tape&, const ParamLeaves&)>;

double eval_loss(const LossBuilder& loss, const ParamVector& at);

// Gradient of `loss` at `at`; result has the same segment layout.
// Throws NumericError when the loss or any gradient entry is non-finite,
// naming the offending parameter segment.
ParamVector grad(const LossBuilder& loss, const ParamVector& at);

} // namespace flowiv
