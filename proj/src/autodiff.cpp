// SPDX-License-Identifier: Apache-2.0

#include "rhythm/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "rhythm/errors.hpp"
#include "rhythm/ssm.hpp"

namespace rhythm::ad {

namespace {

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

Var Tape::push(Mat value, std::function<void(Tape&)> backprop) {
    nodes_.push_back(Node{std::move(value), Mat(), std::move(backprop)});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(int idx) { return nodes_[idx].grad; }

void Tape::accum(int idx, const Mat& delta) {
    Mat& g = nodes_[idx].grad;
    if (g.rows == 0) g = Mat(nodes_[idx].value.rows, nodes_[idx].value.cols);
    if (!g.same_shape(delta)) throw std::logic_error("tape: gradient shape mismatch");
    for (size_t i = 0; i < g.a.size(); ++i) g.a[i] += delta.a[i];
}

Mat Tape::grad_or_zero(Var v) const {
    const Node& n = nodes_[v.i];
    if (n.grad.rows != 0) return n.grad;
    return Mat(n.value.rows, n.value.cols);
}

void Tape::backward(Var root, const Mat& seed) {
    if (!seed.same_shape(nodes_[root.i].value)) throw ArgumentError("backward: seed shape mismatch");
    accum(root.i, seed);
    for (int i = root.i; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.rows != 0 && n.backprop) n.backprop(*this);
    }
}

Var Tape::leaf(Mat value) { return push(std::move(value)); }

Var Tape::add(Var a, Var b) {
    const Mat& va = value(a);
    const Mat& vb = value(b);
    if (!va.same_shape(vb)) throw ArgumentError("add: shape mismatch");
    Mat out = va;
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += vb.a[i];
    const Var o = next_var();
    push(std::move(out), [a, b, o](Tape& t) {
        const Mat g = t.grad_ref(o.i);
        t.accum(a.i, g);
        t.accum(b.i, g);
    });
    return o;
}

Var Tape::sub(Var a, Var b) {
    const Mat& va = value(a);
    const Mat& vb = value(b);
    if (!va.same_shape(vb)) throw ArgumentError("sub: shape mismatch");
    Mat out = va;
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] -= vb.a[i];
    const Var o = next_var();
    push(std::move(out), [a, b, o](Tape& t) {
        const Mat g = t.grad_ref(o.i);
        t.accum(a.i, g);
        Mat neg = g;
        for (auto& x : neg.a) x = -x;
        t.accum(b.i, neg);
    });
    return o;
}

Var Tape::add_const(Var a, double c) {
    Mat out = value(a);
    for (auto& x : out.a) x += c;
    const Var o = next_var();
    push(std::move(out), [a, o](Tape& t) { t.accum(a.i, t.grad_ref(o.i)); });
    return o;
}

Var Tape::mul_const(Var a, double c) {
    Mat out = value(a);
    for (auto& x : out.a) x *= c;
    const Var o = next_var();
    push(std::move(out), [a, c, o](Tape& t) {
        Mat g = t.grad_ref(o.i);
        for (auto& x : g.a) x *= c;
        t.accum(a.i, g);
    });
    return o;
}

Var Tape::add_constmat(Var a, const Mat& c) {
    const Mat& va = value(a);
    if (!va.same_shape(c)) throw ArgumentError("add_constmat: shape mismatch");
    Mat out = va;
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += c.a[i];
    const Var o = next_var();
    push(std::move(out), [a, o](Tape& t) { t.accum(a.i, t.grad_ref(o.i)); });
    return o;
}

Var Tape::mul(Var a, Var b) {
    const Mat& va = value(a);
    const Mat& vb = value(b);

    enum class Mode { same, b_scalar, a_scalar, b_col, a_col };
    Mode mode;
    if (va.same_shape(vb))
        mode = Mode::same;
    else if (vb.rows == 1 && vb.cols == 1)
        mode = Mode::b_scalar;
    else if (va.rows == 1 && va.cols == 1)
        mode = Mode::a_scalar;
    else if (vb.cols == 1 && vb.rows == va.rows)
        mode = Mode::b_col;
    else if (va.cols == 1 && va.rows == vb.rows)
        mode = Mode::a_col;
    else
        throw ArgumentError("mul: incompatible shapes");

    const bool swapped = (mode == Mode::a_scalar || mode == Mode::a_col);
    const Var big_v = swapped ? b : a;
    const Var small_v = swapped ? a : b;
    const Mat& big = value(big_v);
    const Mat& small = value(small_v);
    const bool scalar = (mode == Mode::a_scalar || mode == Mode::b_scalar);

    Mat out(big.rows, big.cols);
    if (mode == Mode::same) {
        for (size_t i = 0; i < out.a.size(); ++i) out.a[i] = va.a[i] * vb.a[i];
    } else if (scalar) {
        const double s = small.a[0];
        for (size_t i = 0; i < out.a.size(); ++i) out.a[i] = big.a[i] * s;
    } else {
        for (int i = 0; i < big.rows; ++i)
            for (int j = 0; j < big.cols; ++j) out(i, j) = big(i, j) * small(i, 0);
    }

    const Var o = next_var();
    if (mode == Mode::same) {
        push(std::move(out), [a, b, o](Tape& t) {
            const Mat& g = t.grad_ref(o.i);
            const Mat& va2 = t.value(a);
            const Mat& vb2 = t.value(b);
            Mat ga(va2.rows, va2.cols), gb(vb2.rows, vb2.cols);
            for (size_t i = 0; i < g.a.size(); ++i) {
                ga.a[i] = g.a[i] * vb2.a[i];
                gb.a[i] = g.a[i] * va2.a[i];
            }
            t.accum(a.i, ga);
            t.accum(b.i, gb);
        });
    } else if (scalar) {
        push(std::move(out), [big_v, small_v, o](Tape& t) {
            const Mat& g = t.grad_ref(o.i);
            const Mat& vbig = t.value(big_v);
            const double s = t.value(small_v).a[0];
            Mat gbig(vbig.rows, vbig.cols);
            double gs = 0.0;
            for (size_t i = 0; i < g.a.size(); ++i) {
                gbig.a[i] = g.a[i] * s;
                gs += g.a[i] * vbig.a[i];
            }
            t.accum(big_v.i, gbig);
            Mat gsm(1, 1);
            gsm.a[0] = gs;
            t.accum(small_v.i, gsm);
        });
    } else {
        push(std::move(out), [big_v, small_v, o](Tape& t) {
            const Mat& g = t.grad_ref(o.i);
            const Mat& vbig = t.value(big_v);
            const Mat& vcol = t.value(small_v);
            Mat gbig(vbig.rows, vbig.cols), gcol(vcol.rows, 1);
            for (int i = 0; i < vbig.rows; ++i) {
                double s = 0.0;
                for (int j = 0; j < vbig.cols; ++j) {
                    gbig(i, j) = g(i, j) * vcol(i, 0);
                    s += g(i, j) * vbig(i, j);
                }
                gcol(i, 0) = s;
            }
            t.accum(big_v.i, gbig);
            t.accum(small_v.i, gcol);
        });
    }
    return o;
}

Var Tape::exp_ew(Var a) {
    Mat out = value(a);
    for (auto& x : out.a) x = std::exp(x);
    const Var o = next_var();
    push(std::move(out), [a, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        const Mat& y = t.value(o);
        Mat ga(y.rows, y.cols);
        for (size_t i = 0; i < y.a.size(); ++i) ga.a[i] = g.a[i] * y.a[i];
        t.accum(a.i, ga);
    });
    return o;
}

Var Tape::silu(Var a) {
    const Mat& va = value(a);
    Mat out(va.rows, va.cols);
    for (size_t i = 0; i < va.a.size(); ++i) out.a[i] = va.a[i] * sigmoid(va.a[i]);
    const Var o = next_var();
    push(std::move(out), [a, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        const Mat& x = t.value(a);
        Mat ga(x.rows, x.cols);
        for (size_t i = 0; i < x.a.size(); ++i) {
            const double s = sigmoid(x.a[i]);
            ga.a[i] = g.a[i] * s * (1.0 + x.a[i] * (1.0 - s));
        }
        t.accum(a.i, ga);
    });
    return o;
}

Var Tape::matmul(Var a, Var b) {
    Mat out = rhythm::matmul(value(a), value(b));
    const Var o = next_var();
    push(std::move(out), [a, b, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        t.accum(a.i, matmul_nt(g, t.value(b)));
        t.accum(b.i, rhythm::matmul_tn(t.value(a), g));
    });
    return o;
}

Var Tape::matmul_tn(Var a, Var b) {
    Mat out = rhythm::matmul_tn(value(a), value(b));
    const Var o = next_var();
    push(std::move(out), [a, b, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        t.accum(a.i, matmul_nt(t.value(b), g));
        t.accum(b.i, rhythm::matmul(t.value(a), g));
    });
    return o;
}

Var Tape::const_matmul(const Mat& a, Var b) {
    Mat out = rhythm::matmul(a, value(b));
    const Var o = next_var();
    auto a_copy = std::make_shared<Mat>(a);
    push(std::move(out), [a_copy, b, o](Tape& t) { t.accum(b.i, rhythm::matmul_tn(*a_copy, t.grad_ref(o.i))); });
    return o;
}

Var Tape::add_rowvec(Var a, Var v) {
    const Mat& va = value(a);
    const Mat& vv = value(v);
    if (vv.rows != 1 || vv.cols != va.cols) throw ArgumentError("add_rowvec: want (1, cols)");
    Mat out = va;
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out(i, j) += vv(0, j);
    const Var o = next_var();
    push(std::move(out), [a, v, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        t.accum(a.i, g);
        Mat gv(1, g.cols);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) gv(0, j) += g(i, j);
        t.accum(v.i, gv);
    });
    return o;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: no parts");
    const int rows = value(parts[0]).rows;
    int cols = 0;
    for (Var p : parts) {
        if (value(p).rows != rows) throw ArgumentError("concat_cols: row mismatch");
        cols += value(p).cols;
    }
    Mat out(rows, cols);
    int off = 0;
    for (Var p : parts) {
        const Mat& vp = value(p);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < vp.cols; ++j) out(i, off + j) = vp(i, j);
        off += vp.cols;
    }
    const Var o = next_var();
    auto parts_copy = std::make_shared<std::vector<Var>>(parts);
    push(std::move(out), [parts_copy, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        int off2 = 0;
        for (Var p : *parts_copy) {
            const Mat& vp = t.value(p);
            Mat gp(vp.rows, vp.cols);
            for (int i = 0; i < vp.rows; ++i)
                for (int j = 0; j < vp.cols; ++j) gp(i, j) = g(i, off2 + j);
            t.accum(p.i, gp);
            off2 += vp.cols;
        }
    });
    return o;
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    const Mat& va = value(a);
    if (!(0 <= c0 && c0 < c1 && c1 <= va.cols)) throw ArgumentError("slice_cols: bad range");
    Mat out(va.rows, c1 - c0);
    for (int i = 0; i < va.rows; ++i)
        for (int j = c0; j < c1; ++j) out(i, j - c0) = va(i, j);
    const Var o = next_var();
    push(std::move(out), [a, c0, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        const Mat& va2 = t.value(a);
        Mat ga(va2.rows, va2.cols);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga(i, c0 + j) = g(i, j);
        t.accum(a.i, ga);
    });
    return o;
}

Var Tape::reverse_rows(Var a) {
    const Mat& va = value(a);
    Mat out(va.rows, va.cols);
    for (int i = 0; i < va.rows; ++i)
        for (int j = 0; j < va.cols; ++j) out(i, j) = va(va.rows - 1 - i, j);
    const Var o = next_var();
    push(std::move(out), [a, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        Mat ga(g.rows, g.cols);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga(i, j) = g(g.rows - 1 - i, j);
        t.accum(a.i, ga);
    });
    return o;
}

Var Tape::softmax_rows(Var a) {
    const Mat& x = value(a);
    Mat y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double m = x(i, 0);
        for (int j = 1; j < x.cols; ++j) m = std::max(m, x(i, j));
        double z = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            y(i, j) = std::exp(x(i, j) - m);
            z += y(i, j);
        }
        const double inv = 1.0 / z;
        for (int j = 0; j < x.cols; ++j) y(i, j) *= inv;
    }
    const Var o = next_var();
    push(std::move(y), [a, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        const Mat& yv = t.value(o);
        Mat ga(yv.rows, yv.cols);
        for (int i = 0; i < yv.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < yv.cols; ++j) dot += g(i, j) * yv(i, j);
            for (int j = 0; j < yv.cols; ++j) ga(i, j) = yv(i, j) * (g(i, j) - dot);
        }
        t.accum(a.i, ga);
    });
    return o;
}

Var Tape::softmax_cols(Var a) {
    const Mat& x = value(a);
    Mat y(x.rows, x.cols);
    for (int j = 0; j < x.cols; ++j) {
        double m = x(0, j);
        for (int i = 1; i < x.rows; ++i) m = std::max(m, x(i, j));
        double z = 0.0;
        for (int i = 0; i < x.rows; ++i) z += std::exp(x(i, j) - m);
        const double inv = 1.0 / z;
        for (int i = 0; i < x.rows; ++i) y(i, j) = std::exp(x(i, j) - m) * inv;
    }
    const Var o = next_var();
    push(std::move(y), [a, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        const Mat& yv = t.value(o);
        Mat ga(yv.rows, yv.cols);
        for (int j = 0; j < yv.cols; ++j) {
            double dot = 0.0;
            for (int i = 0; i < yv.rows; ++i) dot += g(i, j) * yv(i, j);
            for (int i = 0; i < yv.rows; ++i) ga(i, j) = yv(i, j) * (g(i, j) - dot);
        }
        t.accum(a.i, ga);
    });
    return o;
}

Var Tape::rmsnorm_rows(Var a, double eps) {
    const Mat& x = value(a);
    Mat y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double ms = 0.0;
        for (int j = 0; j < x.cols; ++j) ms += x(i, j) * x(i, j);
        ms /= x.cols;
        const double inv = 1.0 / std::sqrt(ms + eps);
        for (int j = 0; j < x.cols; ++j) y(i, j) = x(i, j) * inv;
    }
    const Var o = next_var();
    push(std::move(y), [a, eps, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        const Mat& x2 = t.value(a);
        Mat ga(x2.rows, x2.cols);
        for (int i = 0; i < x2.rows; ++i) {
            double ms = 0.0, gdotx = 0.0;
            for (int j = 0; j < x2.cols; ++j) {
                ms += x2(i, j) * x2(i, j);
                gdotx += g(i, j) * x2(i, j);
            }
            ms /= x2.cols;
            const double r = std::sqrt(ms + eps);
            const double r3 = r * r * r;
            for (int j = 0; j < x2.cols; ++j) ga(i, j) = g(i, j) / r - x2(i, j) * gdotx / (x2.cols * r3);
        }
        t.accum(a.i, ga);
    });
    return o;
}

Var Tape::sum(Var a) {
    const Mat& va = value(a);
    Mat out(1, 1);
    for (double x : va.a) out.a[0] += x;
    const Var o = next_var();
    push(std::move(out), [a, o](Tape& t) {
        const double g = t.grad_ref(o.i).a[0];
        const Mat& va2 = t.value(a);
        t.accum(a.i, Mat::full(va2.rows, va2.cols, g));
    });
    return o;
}

Var Tape::mse(Var a, const Mat& target) {
    const Mat& va = value(a);
    if (!va.same_shape(target)) throw ArgumentError("mse: shape mismatch");
    Mat out(1, 1);
    for (size_t i = 0; i < va.a.size(); ++i) {
        const double d = va.a[i] - target.a[i];
        out.a[0] += d * d;
    }
    out.a[0] /= static_cast<double>(va.a.size());
    const Var o = next_var();
    auto tgt = std::make_shared<Mat>(target);
    push(std::move(out), [a, tgt, o](Tape& t) {
        const double g = t.grad_ref(o.i).a[0];
        const Mat& va2 = t.value(a);
        Mat ga(va2.rows, va2.cols);
        const double scale = 2.0 * g / static_cast<double>(va2.a.size());
        for (size_t i = 0; i < va2.a.size(); ++i) ga.a[i] = scale * (va2.a[i] - tgt->a[i]);
        t.accum(a.i, ga);
    });
    return o;
}

Var Tape::cos_affine(Var beta, const Mat& phi) {
    const double b = value(beta).a[0];
    Mat out(phi.rows, phi.cols);
    for (size_t i = 0; i < phi.a.size(); ++i) out.a[i] = std::cos(b * phi.a[i]);
    const Var o = next_var();
    auto phi_c = std::make_shared<Mat>(phi);
    push(std::move(out), [beta, phi_c, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        const double b2 = t.value(beta).a[0];
        double gb = 0.0;
        for (size_t i = 0; i < phi_c->a.size(); ++i) gb += g.a[i] * (-phi_c->a[i] * std::sin(b2 * phi_c->a[i]));
        Mat gbm(1, 1);
        gbm.a[0] = gb;
        t.accum(beta.i, gbm);
    });
    return o;
}

Var Tape::sin_affine(Var beta, const Mat& phi) {
    const double b = value(beta).a[0];
    Mat out(phi.rows, phi.cols);
    for (size_t i = 0; i < phi.a.size(); ++i) out.a[i] = std::sin(b * phi.a[i]);
    const Var o = next_var();
    auto phi_c = std::make_shared<Mat>(phi);
    push(std::move(out), [beta, phi_c, o](Tape& t) {
        const Mat& g = t.grad_ref(o.i);
        const double b2 = t.value(beta).a[0];
        double gb = 0.0;
        for (size_t i = 0; i < phi_c->a.size(); ++i) gb += g.a[i] * (phi_c->a[i] * std::cos(b2 * phi_c->a[i]));
        Mat gbm(1, 1);
        gbm.a[0] = gb;
        t.accum(beta.i, gbm);
    });
    return o;
}

Var Tape::selective_scan(Var x, Var A_log, Var W_B, Var W_C, Var W_delta, Var b_delta, Var M) {
    const Mat& vx = value(x);
    if (!all_finite(vx)) throw ValidationError("selective_scan: NaN/Inf in input");
    const int L = vx.rows;
    const int d_inner = vx.cols;
    const int n_state = value(A_log).cols;
    if (value(A_log).rows != d_inner || value(W_B).cols != d_inner || value(W_B).rows != n_state
        || value(W_C).cols != d_inner || value(W_C).rows != n_state || value(W_delta).rows != d_inner
        || value(W_delta).cols != d_inner || value(b_delta).cols != d_inner || value(M).rows != L
        || value(M).cols != 1)
        throw ArgumentError("selective_scan: shape mismatch");

    ScanParamsView<double> p{value(A_log).a.data(), value(W_B).a.data(), value(W_C).a.data(),
                             value(W_delta).a.data(), value(b_delta).a.data()};
    auto cache = std::make_shared<ScanCache<double>>();
    Mat y(L, d_inner);
    scan_forward<double>(vx.a.data(), L, d_inner, n_state, p, value(M).a.data(), y.a.data(), cache.get());

    const Var o = next_var();
    push(std::move(y), [x, A_log, W_B, W_C, W_delta, b_delta, M, cache, o, L, d_inner, n_state](Tape& t) {
        ScanParamsView<double> p2{t.value(A_log).a.data(), t.value(W_B).a.data(), t.value(W_C).a.data(),
                                  t.value(W_delta).a.data(), t.value(b_delta).a.data()};
        Mat gx(L, d_inner);
        Mat gA(d_inner, n_state), gWB(n_state, d_inner), gWC(n_state, d_inner);
        Mat gWd(d_inner, d_inner), gbd(1, d_inner), gM(L, 1);
        scan_backward(t.value(x).a.data(), L, d_inner, n_state, p2, t.value(M).a.data(), *cache,
                      t.grad_ref(o.i).a.data(), gx.a.data(), gA.a.data(), gWB.a.data(), gWC.a.data(), gWd.a.data(),
                      gbd.a.data(), gM.a.data());
        t.accum(x.i, gx);
        t.accum(A_log.i, gA);
        t.accum(W_B.i, gWB);
        t.accum(W_C.i, gWC);
        t.accum(W_delta.i, gWd);
        t.accum(b_delta.i, gbd);
        t.accum(M.i, gM);
    });
    return o;
}

}  // namespace rhythm::ad
