// SPDX-License-Identifier: Apache-2.0

#include "rhythm/ssm.hpp"

#include <cmath>

#include "rhythm/errors.hpp"

namespace rhythm {

namespace {

template <typename T>
T softplus(T x) {
    if (x > T(30)) return x;
    return std::log1p(std::exp(x));
}

}  // namespace

template <typename T>
void scan_forward(const T* x, int L, int d_inner, int n_state, const ScanParamsView<T>& p, const T* M, T* y,
                  ScanCache<T>* cache) {
    const size_t dn = static_cast<size_t>(d_inner) * n_state;
    std::vector<T> A(dn);
    for (size_t i = 0; i < dn; ++i) A[i] = -std::exp(p.A_log[i]);

    if (cache) {
        cache->delta.assign(static_cast<size_t>(L) * d_inner, T(0));
        cache->B.assign(static_cast<size_t>(L) * n_state, T(0));
        cache->C.assign(static_cast<size_t>(L) * n_state, T(0));
        cache->h.assign(static_cast<size_t>(L) * dn, T(0));
    }

    std::vector<T> h(dn, T(0));
    std::vector<T> delta(d_inner), Bt(n_state), Ct(n_state);

    for (int t = 0; t < L; ++t) {
        const T* xt = x + static_cast<size_t>(t) * d_inner;
        const T mt = M ? M[t] : T(1);

        for (int d = 0; d < d_inner; ++d) {
            const T* wrow = p.W_delta + static_cast<size_t>(d) * d_inner;
            T s = p.b_delta[d];
            for (int k = 0; k < d_inner; ++k) s += wrow[k] * xt[k];
            delta[d] = softplus(s);
        }
        for (int n = 0; n < n_state; ++n) {
            const T* brow = p.W_B + static_cast<size_t>(n) * d_inner;
            const T* crow = p.W_C + static_cast<size_t>(n) * d_inner;
            T sb = T(0), sc = T(0);
            for (int k = 0; k < d_inner; ++k) {
                sb += brow[k] * xt[k];
                sc += crow[k] * xt[k];
            }
            Bt[n] = sb;
            Ct[n] = sc;
        }

        T* yt = y + static_cast<size_t>(t) * d_inner;
        for (int d = 0; d < d_inner; ++d) {
            T* hd = h.data() + static_cast<size_t>(d) * n_state;
            const T* Ad = A.data() + static_cast<size_t>(d) * n_state;
            const T in_d = delta[d] * mt * xt[d];
            T acc = T(0);
            for (int n = 0; n < n_state; ++n) {
                const T abar = std::exp(delta[d] * Ad[n]);
                hd[n] = abar * hd[n] + in_d * Bt[n];
                acc += Ct[n] * hd[n];
            }
            yt[d] = acc;
        }

        if (cache) {
            std::copy(delta.begin(), delta.end(), cache->delta.begin() + static_cast<size_t>(t) * d_inner);
            std::copy(Bt.begin(), Bt.end(), cache->B.begin() + static_cast<size_t>(t) * n_state);
            std::copy(Ct.begin(), Ct.end(), cache->C.begin() + static_cast<size_t>(t) * n_state);
            std::copy(h.begin(), h.end(), cache->h.begin() + static_cast<size_t>(t) * dn);
        }
    }
}

template void scan_forward<double>(const double*, int, int, int, const ScanParamsView<double>&, const double*,
                                   double*, ScanCache<double>*);
template void scan_forward<float>(const float*, int, int, int, const ScanParamsView<float>&, const float*, float*,
                                  ScanCache<float>*);

void scan_backward(const double* x, int L, int d_inner, int n_state, const ScanParamsView<double>& p,
                   const double* M, const ScanCache<double>& cache, const double* y_bar, double* x_bar,
                   double* A_log_bar, double* W_B_bar, double* W_C_bar, double* W_delta_bar, double* b_delta_bar,
                   double* M_bar) {
    const size_t dn = static_cast<size_t>(d_inner) * n_state;
    std::vector<double> A(dn);
    for (size_t i = 0; i < dn; ++i) A[i] = -std::exp(p.A_log[i]);

    std::vector<double> A_bar(dn, 0.0);
    std::vector<double> h_bar(dn, 0.0);
    std::vector<double> delta_bar(d_inner), B_bar(n_state), C_bar(n_state), s_bar(d_inner);
    const std::vector<double> zeros(dn, 0.0);

    for (int t = L - 1; t >= 0; --t) {
        const double* xt = x + static_cast<size_t>(t) * d_inner;
        const double* yb = y_bar + static_cast<size_t>(t) * d_inner;
        const double* delta = cache.delta.data() + static_cast<size_t>(t) * d_inner;
        const double* Bt = cache.B.data() + static_cast<size_t>(t) * n_state;
        const double* Ct = cache.C.data() + static_cast<size_t>(t) * n_state;
        const double* ht = cache.h.data() + static_cast<size_t>(t) * dn;
        const double* hprev = t > 0 ? cache.h.data() + static_cast<size_t>(t - 1) * dn : zeros.data();
        const double mt = M ? M[t] : 1.0;

        std::fill(delta_bar.begin(), delta_bar.end(), 0.0);
        std::fill(B_bar.begin(), B_bar.end(), 0.0);
        std::fill(C_bar.begin(), C_bar.end(), 0.0);
        double m_bar_t = 0.0;

        for (int d = 0; d < d_inner; ++d) {
            const double* Ad = A.data() + static_cast<size_t>(d) * n_state;
            double* Abar_d = A_bar.data() + static_cast<size_t>(d) * n_state;
            double* hb = h_bar.data() + static_cast<size_t>(d) * n_state;
            const double* hd = ht + static_cast<size_t>(d) * n_state;
            const double* hp = hprev + static_cast<size_t>(d) * n_state;
            const double ybd = yb[d];
            const double dmx = delta[d] * mt * xt[d];

            double dbar_d = 0.0;
            double xbar_direct = 0.0;
            for (int n = 0; n < n_state; ++n) {
                // y_t[d] = sum_n C[n] h[d,n]
                C_bar[n] += ybd * hd[n];
                double hbn = hb[n] + ybd * Ct[n];  // total adjoint of h_t[d,n]

                const double abar = std::exp(delta[d] * Ad[n]);
                // h_t = abar*h_prev + delta*B*M*x
                Abar_d[n] += hbn * abar * delta[d] * hp[n];
                dbar_d += hbn * (abar * Ad[n] * hp[n] + Bt[n] * mt * xt[d]);
                B_bar[n] += hbn * dmx;
                m_bar_t += hbn * delta[d] * Bt[n] * xt[d];
                xbar_direct += hbn * delta[d] * Bt[n] * mt;

                hb[n] = hbn * abar;  // carry into h_{t-1}
            }
            delta_bar[d] = dbar_d;
            x_bar[static_cast<size_t>(t) * d_inner + d] += xbar_direct;
        }

        if (M_bar) M_bar[t] += m_bar_t;

        // delta = softplus(s); sigmoid(s) = 1 - exp(-delta)
        for (int d = 0; d < d_inner; ++d) s_bar[d] = delta_bar[d] * (1.0 - std::exp(-delta[d]));

        double* xbt = x_bar + static_cast<size_t>(t) * d_inner;
        for (int d = 0; d < d_inner; ++d) {
            const double sb = s_bar[d];
            if (sb != 0.0) {
                double* wrow = W_delta_bar + static_cast<size_t>(d) * d_inner;
                const double* prow = p.W_delta + static_cast<size_t>(d) * d_inner;
                for (int k = 0; k < d_inner; ++k) {
                    wrow[k] += sb * xt[k];
                    xbt[k] += prow[k] * sb;
                }
                b_delta_bar[d] += sb;
            }
        }
        for (int n = 0; n < n_state; ++n) {
            const double bb = B_bar[n];
            const double cb = C_bar[n];
            double* wbrow = W_B_bar + static_cast<size_t>(n) * d_inner;
            double* wcrow = W_C_bar + static_cast<size_t>(n) * d_inner;
            const double* pb = p.W_B + static_cast<size_t>(n) * d_inner;
            const double* pc = p.W_C + static_cast<size_t>(n) * d_inner;
            for (int k = 0; k < d_inner; ++k) {
                wbrow[k] += bb * xt[k];
                wcrow[k] += cb * xt[k];
                xbt[k] += pb[k] * bb + pc[k] * cb;
            }
        }
    }

    // A = -exp(A_log) => dA/dA_log = A
    for (size_t i = 0; i < dn; ++i) A_log_bar[i] += A_bar[i] * A[i];
}

Mat ssm_recurrence(const Mat& x, const Mat& abar, const Mat& bbar, const Mat& c, const std::vector<double>& M) {
    const int L = x.rows;
    const int d_inner = x.cols;
    const int n_state = abar.cols;
    if (abar.rows != L || !bbar.same_shape(abar) || !c.same_shape(abar) || static_cast<int>(M.size()) != L)
        throw ArgumentError("ssm_recurrence: shape mismatch");

    Mat y(L, d_inner);
    std::vector<double> h(static_cast<size_t>(d_inner) * n_state, 0.0);
    for (int t = 0; t < L; ++t) {
        for (int d = 0; d < d_inner; ++d) {
            double* hd = h.data() + static_cast<size_t>(d) * n_state;
            const double in_d = M[t] * x(t, d);
            double acc = 0.0;
            for (int n = 0; n < n_state; ++n) {
                hd[n] = abar(t, n) * hd[n] + bbar(t, n) * in_d;
                acc += c(t, n) * hd[n];
            }
            y(t, d) = acc;
        }
    }
    return y;
}

SsmBlockParams SsmBlockParams::init(int d_model, int d_inner, int n_state, Rng& rng) {
    SsmBlockParams p;
    p.d_model = d_model;
    p.d_inner = d_inner;
    p.n_state = n_state;
    p.W_phi = rng.normal_mat(2, d_model, 0.02);
    p.W_in = rng.normal_mat(d_model, 2 * d_inner, 1.0 / std::sqrt(static_cast<double>(d_model)));
    p.b_in = Mat(1, 2 * d_inner);
    p.W_out = rng.normal_mat(d_inner, d_model, 1.0 / std::sqrt(static_cast<double>(d_inner)));
    p.b_out = Mat(1, d_model);

    for (SsmDirectionParams* dir : {&p.fwd, &p.bwd}) {
        dir->A_log = Mat(d_inner, n_state);
        for (int d = 0; d < d_inner; ++d)
            for (int n = 0; n < n_state; ++n) dir->A_log(d, n) = std::log(static_cast<double>(n + 1));
        dir->W_B = rng.normal_mat(n_state, d_inner, 1.0 / std::sqrt(static_cast<double>(d_inner)));
        dir->W_C = rng.normal_mat(n_state, d_inner, 1.0 / std::sqrt(static_cast<double>(d_inner)));
        dir->W_delta = rng.normal_mat(d_inner, d_inner, 1.0 / std::sqrt(static_cast<double>(d_inner)));
        dir->b_delta = Mat(1, d_inner);
        for (int d = 0; d < d_inner; ++d) {
            // softplus(b) uniform in [1e-3, 1e-1] on a log scale
            const double target = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
            dir->b_delta(0, d) = std::log(std::expm1(target));
        }
    }
    return p;
}

SsmBlockVars bind_ssm_block(ad::Tape& tape, const SsmBlockParams& p) {
    SsmBlockVars v;
    v.W_phi = tape.leaf(p.W_phi);
    v.W_in = tape.leaf(p.W_in);
    v.b_in = tape.leaf(p.b_in);
    v.W_out = tape.leaf(p.W_out);
    v.b_out = tape.leaf(p.b_out);
    auto bind_dir = [&](const SsmDirectionParams& d) {
        SsmBlockVars::Dir dv;
        dv.A_log = tape.leaf(d.A_log);
        dv.W_B = tape.leaf(d.W_B);
        dv.W_C = tape.leaf(d.W_C);
        dv.W_delta = tape.leaf(d.W_delta);
        dv.b_delta = tape.leaf(d.b_delta);
        return dv;
    };
    v.fwd = bind_dir(p.fwd);
    v.bwd = bind_dir(p.bwd);
    return v;
}

ad::Var project_phase(ad::Tape& tape, const Mat& Phi, ad::Var W_phi) {
    if (Phi.cols != 2) throw ArgumentError("project_phase: Phi must be (L, 2)");
    return tape.const_matmul(Phi, W_phi);
}

ad::Var selective_scan(ad::Tape& tape, ad::Var x, const SsmBlockVars::Dir& dir, ad::Var M,
                       ScanDirection direction) {
    if (direction == ScanDirection::forward)
        return tape.selective_scan(x, dir.A_log, dir.W_B, dir.W_C, dir.W_delta, dir.b_delta, M);
    ad::Var xr = tape.reverse_rows(x);
    ad::Var Mr = tape.reverse_rows(M);
    ad::Var yr = tape.selective_scan(xr, dir.A_log, dir.W_B, dir.W_C, dir.W_delta, dir.b_delta, Mr);
    return tape.reverse_rows(yr);
}

ad::Var ssm_block(ad::Tape& tape, ad::Var X, ad::Var M, const Mat& Phi, const SsmBlockVars& vars, double norm_eps) {
    ad::Var x_phi = X;
    if (Phi.rows > 0) x_phi = tape.add(X, project_phase(tape, Phi, vars.W_phi));

    const int d_inner = tape.value(vars.W_out).rows;
    ad::Var xn = tape.rmsnorm_rows(x_phi, norm_eps);
    ad::Var uz = tape.add_rowvec(tape.matmul(xn, vars.W_in), vars.b_in);
    ad::Var u = tape.slice_cols(uz, 0, d_inner);
    ad::Var z = tape.slice_cols(uz, d_inner, 2 * d_inner);

    ad::Var y_fwd = selective_scan(tape, u, vars.fwd, M, ScanDirection::forward);
    ad::Var y_bwd = selective_scan(tape, u, vars.bwd, M, ScanDirection::backward);
    ad::Var gated = tape.mul(tape.add(y_fwd, y_bwd), tape.silu(z));
    ad::Var out = tape.add_rowvec(tape.matmul(gated, vars.W_out), vars.b_out);
    return tape.add(x_phi, out);
}

template <typename T>
MatT<T> ssm_block_forward(const MatT<T>& X, const std::vector<T>& M, const MatT<T>& Phi, const SsmBlockParams& p,
                          double norm_eps) {
    const int L = X.rows;
    const int d_model = X.cols;
    const int d_inner = p.d_inner;
    if (static_cast<int>(M.size()) != L) throw ArgumentError("ssm_block_forward: M length mismatch");

    auto to_t = [](const Mat& m) {
        MatT<T> out(m.rows, m.cols);
        for (size_t i = 0; i < m.a.size(); ++i) out.a[i] = static_cast<T>(m.a[i]);
        return out;
    };

    // X_phi = X + Phi W_phi
    MatT<T> x_phi = X;
    if (Phi.rows > 0) {
        MatT<T> phi_d = matmul(Phi, to_t(p.W_phi));
        for (size_t i = 0; i < x_phi.a.size(); ++i) x_phi.a[i] += phi_d.a[i];
    }

    // pre-norm
    MatT<T> xn(L, d_model);
    for (int i = 0; i < L; ++i) {
        double ms = 0.0;
        for (int j = 0; j < d_model; ++j) ms += static_cast<double>(x_phi(i, j)) * x_phi(i, j);
        const T inv = static_cast<T>(1.0 / std::sqrt(ms / d_model + norm_eps));
        for (int j = 0; j < d_model; ++j) xn(i, j) = x_phi(i, j) * inv;
    }

    MatT<T> uz = matmul(xn, to_t(p.W_in));
    const MatT<T> b_in = to_t(p.b_in);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < 2 * d_inner; ++j) uz(i, j) += b_in(0, j);

    MatT<T> u(L, d_inner), z(L, d_inner);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < d_inner; ++j) {
            u(i, j) = uz(i, j);
            z(i, j) = uz(i, j + d_inner);
        }

    auto run_dir = [&](const SsmDirectionParams& dp, bool reversed) {
        MatT<T> A_log = to_t(dp.A_log), W_B = to_t(dp.W_B), W_C = to_t(dp.W_C), W_delta = to_t(dp.W_delta),
                b_delta = to_t(dp.b_delta);
        ScanParamsView<T> view{A_log.a.data(), W_B.a.data(), W_C.a.data(), W_delta.a.data(), b_delta.a.data()};
        MatT<T> xin = u;
        std::vector<T> m(L);
        for (int t = 0; t < L; ++t) m[t] = static_cast<T>(M[reversed ? L - 1 - t : t]);
        if (reversed)
            for (int t = 0; t < L; ++t)
                for (int j = 0; j < d_inner; ++j) xin(t, j) = u(L - 1 - t, j);
        MatT<T> y(L, d_inner);
        scan_forward<T>(xin.a.data(), L, d_inner, p.n_state, view, m.data(), y.a.data(), nullptr);
        if (reversed) {
            MatT<T> yr(L, d_inner);
            for (int t = 0; t < L; ++t)
                for (int j = 0; j < d_inner; ++j) yr(t, j) = y(L - 1 - t, j);
            return yr;
        }
        return y;
    };

    MatT<T> y_fwd = run_dir(p.fwd, false);
    MatT<T> y_bwd = run_dir(p.bwd, true);

    auto sigmoid_t = [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    };
    MatT<T> gated(L, d_inner);
    for (size_t i = 0; i < gated.a.size(); ++i) {
        const T zv = z.a[i];
        gated.a[i] = (y_fwd.a[i] + y_bwd.a[i]) * zv * sigmoid_t(zv);
    }

    MatT<T> out = matmul(gated, to_t(p.W_out));
    const MatT<T> b_out = to_t(p.b_out);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < d_model; ++j) out(i, j) += b_out(0, j) + x_phi(i, j);
    return out;
}

template MatT<double> ssm_block_forward<double>(const MatT<double>&, const std::vector<double>&, const MatT<double>&,
                                                const SsmBlockParams&, double);
template MatT<float> ssm_block_forward<float>(const MatT<float>&, const std::vector<float>&, const MatT<float>&,
                                              const SsmBlockParams&, double);

}  // namespace rhythm
