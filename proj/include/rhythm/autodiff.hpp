// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode tape over Mat. One tape per forward pass; nodes are
// appended in program order, so walking indices backwards is a valid reverse
// topological order. Gradients are checked against central finite differences
// in the test suite; the analytic backward of each op is the contract.

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rhythm/mat.hpp"

namespace rhythm::ad {

struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

class Tape {
  public:
    Var leaf(Mat value);

    // elementwise
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var add_const(Var a, double c);
    Var mul_const(Var a, double c);
    Var add_constmat(Var a, const Mat& c);
    // mul broadcasts: same shape, either side 1x1, or (L,C) with (L,1).
    Var mul(Var a, Var b);
    Var exp_ew(Var a);
    Var silu(Var a);

    // linear algebra
    Var matmul(Var a, Var b);
    Var matmul_tn(Var a, Var b);              // a^T * b
    Var const_matmul(const Mat& a, Var b);    // fixed left operand
    Var add_rowvec(Var a, Var v);             // v is (1,C), added to every row

    // shape
    Var concat_cols(const std::vector<Var>& parts);
    Var slice_cols(Var a, int c0, int c1);
    Var reverse_rows(Var a);

    // row/column normalizers
    Var softmax_rows(Var a);
    Var softmax_cols(Var a);
    Var rmsnorm_rows(Var a, double eps);

    // reductions
    Var sum(Var a);                      // (1,1)
    Var mse(Var a, const Mat& target);   // mean squared error, (1,1)

    // phase helpers: elementwise cos/sin of (beta * phi) with beta a (1,1) var
    Var cos_affine(Var beta, const Mat& phi);
    Var sin_affine(Var beta, const Mat& phi);

    // fused selective-SSM scan, forward direction (see ssm.hpp for the math)
    Var selective_scan(Var x, Var A_log, Var W_B, Var W_C, Var W_delta, Var b_delta, Var M);

    const Mat& value(Var v) const { return nodes_[v.i].value; }
    // zero-sized until backward touches the node
    const Mat& grad(Var v) const { return nodes_[v.i].grad; }
    Mat grad_or_zero(Var v) const;

    // Seed d(root)/d(root) = seed and propagate to every reachable node.
    void backward(Var root, const Mat& seed);

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&)> backprop;  // empty for leaves
    };

    Var push(Mat value, std::function<void(Tape&)> backprop = {});
    Var next_var() const { return Var{static_cast<int>(nodes_.size())}; }
    void accum(int idx, const Mat& delta);
    Mat& grad_ref(int idx);

    std::vector<Node> nodes_;
};

}  // namespace rhythm::ad
