// SPDX-License-Identifier: Apache-2.0
//
// Every op's analytic backward is validated against central finite
// differences on randomized inputs.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "rhythm/autodiff.hpp"
#include "rhythm/rng.hpp"

using namespace rhythm;
using ad::Tape;
using ad::Var;

namespace {

// Builds the graph from leaf values and returns the scalar root.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

double eval(const GraphFn& fn, const std::vector<Mat>& inputs) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Mat& m : inputs) leaves.push_back(tape.leaf(m));
    return tape.value(fn(tape, leaves)).a[0];
}

// max relative error between analytic and FD gradients over all inputs
double check_gradients(const GraphFn& fn, std::vector<Mat> inputs, double step = 1e-6) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Mat& m : inputs) leaves.push_back(tape.leaf(m));
    const Var root = fn(tape, leaves);
    REQUIRE(tape.value(root).rows == 1);
    REQUIRE(tape.value(root).cols == 1);
    tape.backward(root, Mat::full(1, 1, 1.0));

    double worst = 0.0;
    for (size_t p = 0; p < inputs.size(); ++p) {
        const Mat analytic = tape.grad_or_zero(leaves[p]);
        for (size_t i = 0; i < inputs[p].a.size(); ++i) {
            const double keep = inputs[p].a[i];
            inputs[p].a[i] = keep + step;
            const double up = eval(fn, inputs);
            inputs[p].a[i] = keep - step;
            const double dn = eval(fn, inputs);
            inputs[p].a[i] = keep;
            const double fd = (up - dn) / (2.0 * step);
            const double err = std::abs(analytic.a[i] - fd) / (std::max(std::abs(analytic.a[i]), std::abs(fd)) + 1e-6);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

Mat randm(Rng& rng, int r, int c, double s = 1.0) { return rng.normal_mat(r, c, s); }

}  // namespace

TEST_CASE("elementwise and broadcast ops match finite differences") {
    Rng rng(1);
    const Mat A = randm(rng, 3, 4), B = randm(rng, 3, 4);
    const Mat col = randm(rng, 3, 1), scalar = randm(rng, 1, 1);

    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.add(v[0], v[1])); }, {A, B}) < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.sub(v[0], v[1])); }, {A, B}) < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(v[0], v[1])); }, {A, B}) < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(v[0], v[1])); }, {A, col})
          < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(v[0], v[1])); }, {col, A})
          < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(v[0], v[1])); }, {A, scalar})
          < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(v[0], v[1])); }, {scalar, A})
          < 1e-7);
    CHECK(check_gradients(
              [](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul_const(t.add_const(v[0], 0.7), -1.3)); },
              {A})
          < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.silu(v[0])); }, {A}) < 1e-7);
    CHECK(check_gradients(
              [](Tape& t, const std::vector<Var>& v) { return t.sum(t.exp_ew(t.mul_const(v[0], 0.3))); }, {A})
          < 1e-7);
}

TEST_CASE("matmul variants match finite differences") {
    Rng rng(2);
    const Mat A = randm(rng, 3, 4), B = randm(rng, 4, 2), C = randm(rng, 3, 2), V = randm(rng, 1, 2);

    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.matmul(v[0], v[1])); }, {A, B})
          < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.matmul_tn(v[0], v[1])); }, {A, C})
          < 1e-7);
    const Mat K = randm(rng, 5, 3);
    CHECK(check_gradients([K](Tape& t, const std::vector<Var>& v) { return t.sum(t.const_matmul(K, v[0])); }, {A})
          < 1e-7);
    CHECK(check_gradients([](Tape& t, const std::vector<Var>& v) { return t.sum(t.add_rowvec(v[0], v[1])); }, {C, V})
          < 1e-7);
}

TEST_CASE("shape ops match finite differences") {
    Rng rng(3);
    const Mat A = randm(rng, 3, 2), B = randm(rng, 3, 3), C = randm(rng, 3, 1);

    CHECK(check_gradients(
              [](Tape& t, const std::vector<Var>& v) {
                  Var cat = t.concat_cols({v[0], v[1], v[2]});
                  Var s = t.slice_cols(cat, 1, 5);
                  return t.sum(t.mul(s, s));
              },
              {A, B, C})
          < 1e-7);
    CHECK(check_gradients(
              [](Tape& t, const std::vector<Var>& v) {
                  Var r = t.reverse_rows(v[0]);
                  return t.sum(t.mul(r, t.add_const(v[0], 1.0)));
              },
              {B})
          < 1e-7);
}

TEST_CASE("normalizers match finite differences") {
    Rng rng(4);
    const Mat A = randm(rng, 4, 5);
    const Mat W = randm(rng, 4, 5);

    auto weighted = [W](Tape& t, Var x) { return t.sum(t.mul(x, t.leaf(W))); };

    CHECK(check_gradients([&](Tape& t, const std::vector<Var>& v) { return weighted(t, t.softmax_rows(v[0])); }, {A},
                          1e-5)
          < 1e-5);
    CHECK(check_gradients([&](Tape& t, const std::vector<Var>& v) { return weighted(t, t.softmax_cols(v[0])); }, {A},
                          1e-5)
          < 1e-5);
    CHECK(check_gradients(
              [&](Tape& t, const std::vector<Var>& v) { return weighted(t, t.rmsnorm_rows(v[0], 1e-6)); }, {A}, 1e-5)
          < 1e-5);
}

TEST_CASE("reductions and trig helpers match finite differences") {
    Rng rng(5);
    const Mat A = randm(rng, 3, 4);
    const Mat target = randm(rng, 3, 4);
    const Mat beta = Mat::full(1, 1, 0.8);
    Mat phi(6, 1);
    for (int i = 0; i < 6; ++i) phi(i, 0) = 0.3 + 0.9 * i;

    CHECK(check_gradients([target](Tape& t, const std::vector<Var>& v) { return t.mse(v[0], target); }, {A}) < 1e-7);
    const Mat w6 = randm(rng, 6, 1);
    CHECK(check_gradients(
              [phi, w6](Tape& t, const std::vector<Var>& v) {
                  return t.sum(t.mul(t.cos_affine(v[0], phi), t.leaf(w6)));
              },
              {beta})
          < 1e-6);
    CHECK(check_gradients(
              [phi, w6](Tape& t, const std::vector<Var>& v) {
                  return t.sum(t.mul(t.sin_affine(v[0], phi), t.leaf(w6)));
              },
              {beta})
          < 1e-6);
}

TEST_CASE("selective scan op matches finite differences") {
    Rng rng(6);
    const int L = 5, Di = 3, N = 2;
    const Mat x = randm(rng, L, Di, 0.8);
    Mat A_log = randm(rng, Di, N, 0.2);
    for (auto& v : A_log.a) v = std::abs(v);  // keep A = -exp(A_log) well away from 0
    const Mat W_B = randm(rng, N, Di, 0.5), W_C = randm(rng, N, Di, 0.5);
    const Mat W_delta = randm(rng, Di, Di, 0.5), b_delta = randm(rng, 1, Di, 0.5);
    Mat M(L, 1);
    for (int i = 0; i < L; ++i) M(i, 0) = 0.4 + 0.2 * i;
    const Mat U = randm(rng, L, Di);

    const double err = check_gradients(
        [U](Tape& t, const std::vector<Var>& v) {
            Var y = t.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
            return t.sum(t.mul(y, t.leaf(U)));
        },
        {x, A_log, W_B, W_C, W_delta, b_delta, M}, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE("backward accumulates through shared subexpressions") {
    // d/dx sum(x * x) = 2x
    Tape tape;
    Mat x(2, 2, {1.0, -2.0, 0.5, 3.0});
    Var v = tape.leaf(x);
    Var y = tape.sum(tape.mul(v, v));
    tape.backward(y, Mat::full(1, 1, 1.0));
    const Mat g = tape.grad_or_zero(v);
    for (size_t i = 0; i < x.a.size(); ++i) CHECK(g.a[i] == doctest::Approx(2.0 * x.a[i]));
}

TEST_CASE("cotangent scaling is linear") {
    Rng rng(7);
    const Mat x = randm(rng, 4, 3);

    auto grads_for = [&](double seed_scale) {
        Tape tape;
        Var v = tape.leaf(x);
        Var y = tape.rmsnorm_rows(tape.silu(v), 1e-6);
        tape.backward(y, Mat::full(4, 3, seed_scale));
        return tape.grad_or_zero(v);
    };
    const Mat g1 = grads_for(1.0);
    const Mat g2 = grads_for(2.0);
    for (size_t i = 0; i < g1.a.size(); ++i) CHECK(g2.a[i] == doctest::Approx(2.0 * g1.a[i]).epsilon(1e-12));
}
