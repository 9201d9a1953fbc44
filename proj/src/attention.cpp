// SPDX-License-Identifier: Apache-2.0

#include "rhythm/attention.hpp"

#include <cmath>

#include "rhythm/errors.hpp"

namespace rhythm {

CrossAttnParams CrossAttnParams::init(int d_model, int heads, Rng& rng) {
    if (heads < 1 || d_model % heads != 0) throw ArgumentError("cross_attn: heads must divide d_model");
    CrossAttnParams p;
    p.d_model = d_model;
    p.heads = heads;
    const int dh = p.d_head();
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d_model));
    for (int h = 0; h < heads; ++h) {
        p.W_Q.push_back(rng.normal_mat(d_model, 2 * dh, w_std));
        p.W_K.push_back(rng.normal_mat(d_model, 2 * dh, w_std));
        p.W_V.push_back(rng.normal_mat(d_model, 2 * dh, w_std));
    }
    p.W_O = rng.normal_mat(2 * d_model, d_model, 1.0 / std::sqrt(2.0 * d_model));
    p.lam_q1 = rng.normal_mat(1, dh, 0.1);
    p.lam_k1 = rng.normal_mat(1, dh, 0.1);
    p.lam_q2 = rng.normal_mat(1, dh, 0.1);
    p.lam_k2 = rng.normal_mat(1, dh, 0.1);
    p.alpha_imp = Mat(1, 1);            // keyframe modulation starts neutral
    p.beta = Mat::full(1, 1, 1.0);
    return p;
}

CrossAttnVars bind_cross_attn(ad::Tape& tape, const CrossAttnParams& p) {
    CrossAttnVars v;
    for (size_t h = 0; h < p.W_Q.size(); ++h) {
        v.W_Q.push_back(tape.leaf(p.W_Q[h]));
        v.W_K.push_back(tape.leaf(p.W_K[h]));
        v.W_V.push_back(tape.leaf(p.W_V[h]));
    }
    v.W_O = tape.leaf(p.W_O);
    v.lam_q1 = tape.leaf(p.lam_q1);
    v.lam_k1 = tape.leaf(p.lam_k1);
    v.lam_q2 = tape.leaf(p.lam_q2);
    v.lam_k2 = tape.leaf(p.lam_k2);
    v.alpha_imp = tape.leaf(p.alpha_imp);
    v.beta = tape.leaf(p.beta);
    return v;
}

ad::Var lambda_base(ad::Tape& tape, const CrossAttnVars& v, double lambda_init) {
    ad::Var d1 = tape.sum(tape.mul(v.lam_q1, v.lam_k1));
    ad::Var d2 = tape.sum(tape.mul(v.lam_q2, v.lam_k2));
    ad::Var diff = tape.sub(tape.exp_ew(d1), tape.exp_ew(d2));
    return tape.add_const(diff, lambda_init);
}

ad::Var token_lambda(ad::Tape& tape, const CrossAttnVars& v, double lambda_init, const Mat& M) {
    if (M.cols != 1) throw ArgumentError("token_lambda: M must be a column");
    ad::Var base = lambda_base(tape, v, lambda_init);
    Mat m_minus_1 = M;
    for (auto& x : m_minus_1.a) x -= 1.0;
    // 1 + alpha_imp * (M - 1)
    ad::Var mod = tape.add_const(tape.mul(v.alpha_imp, tape.leaf(m_minus_1)), 1.0);
    return tape.mul(base, mod);
}

std::pair<ad::Var, ad::Var> phase_rotate(ad::Tape& tape, ad::Var Q1, ad::Var Q2, ad::Var beta, const Mat& phi) {
    if (phi.cols != 1 || phi.rows != tape.value(Q1).rows) throw ArgumentError("phase_rotate: phi must be (L_m, 1)");
    ad::Var c = tape.cos_affine(beta, phi);
    ad::Var s = tape.sin_affine(beta, phi);
    ad::Var q1r = tape.sub(tape.mul(Q1, c), tape.mul(Q2, s));
    ad::Var q2r = tape.add(tape.mul(Q1, s), tape.mul(Q2, c));
    return {q1r, q2r};
}

QkvVars qkv_project(ad::Tape& tape, ad::Var X, ad::Var T, const Mat& M, const CrossAttnVars& v, int head) {
    const int dh = tape.value(v.W_Q[head]).cols / 2;
    if (M.rows != tape.value(X).rows || M.cols != 1) throw ArgumentError("cross_attn: M must be (L_m, 1)");

    // queries scaled per frame by the keyframe weight
    ad::Var QQ = tape.mul(tape.matmul(X, v.W_Q[head]), tape.leaf(M));
    ad::Var KK = tape.matmul(T, v.W_K[head]);
    QkvVars q;
    q.Q1 = tape.slice_cols(QQ, 0, dh);
    q.Q2 = tape.slice_cols(QQ, dh, 2 * dh);
    q.K1 = tape.slice_cols(KK, 0, dh);
    q.K2 = tape.slice_cols(KK, dh, 2 * dh);
    q.V = tape.matmul(T, v.W_V[head]);
    return q;
}

ad::Var lin_diff_cross_attn_head(ad::Tape& tape, ad::Var X, ad::Var T, const Mat& M, const Mat& phi,
                                 const CrossAttnVars& v, int head, ad::Var lambda_tokens, SoftmaxAxes axes) {
    const auto [Q1, Q2, K1, K2, V] = qkv_project(tape, X, T, M, v, head);
    auto [Q1r, Q2r] = phase_rotate(tape, Q1, Q2, v.beta, phi);

    ad::Var phi_q1, phi_q2, phi_k1, phi_k2;
    if (axes == SoftmaxAxes::efficient) {
        phi_q1 = tape.softmax_rows(Q1r);
        phi_q2 = tape.softmax_rows(Q2r);
        phi_k1 = tape.softmax_cols(K1);
        phi_k2 = tape.softmax_cols(K2);
    } else {
        phi_q1 = tape.softmax_cols(Q1r);
        phi_q2 = tape.softmax_cols(Q2r);
        phi_k1 = tape.softmax_rows(K1);
        phi_k2 = tape.softmax_rows(K2);
    }

    ad::Var A1 = tape.matmul_tn(phi_k1, V);  // (d_head, 2*d_head)
    ad::Var A2 = tape.matmul_tn(phi_k2, V);
    ad::Var branch1 = tape.matmul(phi_q1, A1);
    ad::Var branch2 = tape.mul(tape.matmul(phi_q2, A2), lambda_tokens);
    return tape.sub(branch1, branch2);
}

ad::Var multi_head_cross_attn(ad::Tape& tape, ad::Var X, ad::Var T, const Mat& M, const Mat& phi,
                              const CrossAttnVars& v, const CrossAttnParams& p) {
    ad::Var lam = token_lambda(tape, v, p.lambda_init, M);
    std::vector<ad::Var> heads;
    heads.reserve(p.heads);
    for (int h = 0; h < p.heads; ++h)
        heads.push_back(lin_diff_cross_attn_head(tape, X, T, M, phi, v, h, lam, p.softmax_axes));
    ad::Var cat = p.heads == 1 ? heads[0] : tape.concat_cols(heads);
    ad::Var normed = tape.rmsnorm_rows(cat, p.rmsnorm_eps);
    ad::Var scaled = tape.mul_const(normed, 1.0 - p.lambda_init);
    return tape.matmul(scaled, v.W_O);
}

}  // namespace rhythm
