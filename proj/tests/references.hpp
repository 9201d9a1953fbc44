// SPDX-License-Identifier: Apache-2.0
//
// Test-side reference implementations, written independently of the library
// code paths they check: a vanilla bidirectional selective-SSM block and a
// plain linear differential cross-attention. Raw loops on purpose.

#pragma once

#include <cmath>
#include <vector>

#include "rhythm/attention.hpp"
#include "rhythm/mat.hpp"
#include "rhythm/ssm.hpp"

namespace rhythm::testref {

// whole block without keyframe weighting or phase input
inline Mat vanilla_block_reference(const Mat& X, const SsmBlockParams& p, double eps = 1e-6) {
    const int L = X.rows, D = X.cols, Di = p.d_inner, N = p.n_state;

    Mat xn(L, D);
    for (int i = 0; i < L; ++i) {
        double ms = 0.0;
        for (int j = 0; j < D; ++j) ms += X(i, j) * X(i, j);
        const double inv = 1.0 / std::sqrt(ms / D + eps);
        for (int j = 0; j < D; ++j) xn(i, j) = X(i, j) * inv;
    }

    Mat u(L, Di), z(L, Di);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < Di; ++j) {
            double su = p.b_in(0, j), sz = p.b_in(0, j + Di);
            for (int k = 0; k < D; ++k) {
                su += xn(i, k) * p.W_in(k, j);
                sz += xn(i, k) * p.W_in(k, j + Di);
            }
            u(i, j) = su;
            z(i, j) = sz;
        }

    auto scan = [&](const SsmDirectionParams& dp, bool rev) {
        Mat y(L, Di);
        std::vector<double> h(static_cast<size_t>(Di) * N, 0.0);
        for (int step = 0; step < L; ++step) {
            const int t = rev ? L - 1 - step : step;
            std::vector<double> delta(Di), Bt(N), Ct(N);
            for (int d = 0; d < Di; ++d) {
                double s = dp.b_delta(0, d);
                for (int k = 0; k < Di; ++k) s += dp.W_delta(d, k) * u(t, k);
                delta[d] = s > 30.0 ? s : std::log1p(std::exp(s));
            }
            for (int n = 0; n < N; ++n) {
                double sb = 0.0, sc = 0.0;
                for (int k = 0; k < Di; ++k) {
                    sb += dp.W_B(n, k) * u(t, k);
                    sc += dp.W_C(n, k) * u(t, k);
                }
                Bt[n] = sb;
                Ct[n] = sc;
            }
            for (int d = 0; d < Di; ++d) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    const double a = -std::exp(dp.A_log(d, n));
                    double& hdn = h[static_cast<size_t>(d) * N + n];
                    hdn = std::exp(delta[d] * a) * hdn + delta[d] * Bt[n] * u(t, d);
                    acc += Ct[n] * hdn;
                }
                y(t, d) = acc;
            }
        }
        return y;
    };

    const Mat yf = scan(p.fwd, false);
    const Mat yb = scan(p.bwd, true);

    Mat out(L, D);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < D; ++j) {
            double s = p.b_out(0, j);
            for (int k = 0; k < Di; ++k) {
                const double zv = z(i, k);
                const double sig = zv >= 0 ? 1.0 / (1.0 + std::exp(-zv)) : std::exp(zv) / (1.0 + std::exp(zv));
                s += (yf(i, k) + yb(i, k)) * zv * sig * p.W_out(k, j);
            }
            out(i, j) = X(i, j) + s;
        }
    return out;
}

// multi-head linear differential cross-attention without phase rotation or
// keyframe scaling, scalar lambda (efficient softmax axes)
inline Mat plain_lin_diff_reference(const Mat& X, const Mat& T, const CrossAttnParams& p) {
    const int L_m = X.rows, L_t = T.rows, dh = p.d_head();

    auto softmax_rows = [](Mat m) {
        for (int i = 0; i < m.rows; ++i) {
            double mx = m(i, 0);
            for (int j = 1; j < m.cols; ++j) mx = std::max(mx, m(i, j));
            double z = 0;
            for (int j = 0; j < m.cols; ++j) z += std::exp(m(i, j) - mx);
            for (int j = 0; j < m.cols; ++j) m(i, j) = std::exp(m(i, j) - mx) / z;
        }
        return m;
    };
    auto softmax_cols = [](Mat m) {
        for (int j = 0; j < m.cols; ++j) {
            double mx = m(0, j);
            for (int i = 1; i < m.rows; ++i) mx = std::max(mx, m(i, j));
            double z = 0;
            for (int i = 0; i < m.rows; ++i) z += std::exp(m(i, j) - mx);
            for (int i = 0; i < m.rows; ++i) m(i, j) = std::exp(m(i, j) - mx) / z;
        }
        return m;
    };

    double lq1k1 = 0, lq2k2 = 0;
    for (int i = 0; i < dh; ++i) {
        lq1k1 += p.lam_q1(0, i) * p.lam_k1(0, i);
        lq2k2 += p.lam_q2(0, i) * p.lam_k2(0, i);
    }
    const double lambda = std::exp(lq1k1) - std::exp(lq2k2) + p.lambda_init;

    Mat cat(L_m, 2 * p.d_model);
    int off = 0;
    for (int h = 0; h < p.heads; ++h) {
        Mat Q = matmul(X, p.W_Q[h]), K = matmul(T, p.W_K[h]), V = matmul(T, p.W_V[h]);
        Mat Q1(L_m, dh), Q2(L_m, dh), K1(L_t, dh), K2(L_t, dh);
        for (int i = 0; i < L_m; ++i)
            for (int j = 0; j < dh; ++j) {
                Q1(i, j) = Q(i, j);
                Q2(i, j) = Q(i, j + dh);
            }
        for (int i = 0; i < L_t; ++i)
            for (int j = 0; j < dh; ++j) {
                K1(i, j) = K(i, j);
                K2(i, j) = K(i, j + dh);
            }
        const Mat pq1 = softmax_rows(Q1), pq2 = softmax_rows(Q2);
        const Mat pk1 = softmax_cols(K1), pk2 = softmax_cols(K2);
        const Mat A1 = matmul_tn(pk1, V), A2 = matmul_tn(pk2, V);
        const Mat b1 = matmul(pq1, A1), b2 = matmul(pq2, A2);
        for (int i = 0; i < L_m; ++i)
            for (int j = 0; j < 2 * dh; ++j) cat(i, off + j) = b1(i, j) - lambda * b2(i, j);
        off += 2 * dh;
    }

    Mat normed(L_m, cat.cols);
    for (int i = 0; i < L_m; ++i) {
        double ms = 0;
        for (int j = 0; j < cat.cols; ++j) ms += cat(i, j) * cat(i, j);
        const double inv = 1.0 / std::sqrt(ms / cat.cols + p.rmsnorm_eps);
        for (int j = 0; j < cat.cols; ++j) normed(i, j) = cat(i, j) * inv * (1.0 - p.lambda_init);
    }
    return matmul(normed, p.W_O);
}

}  // namespace rhythm::testref
