// SPDX-License-Identifier: Apache-2.0
//
// Linear differential cross-attention between a motion stream and text
// tokens. Queries are keyframe-weighted and phase-rotated; two linear
// attention branches are subtracted with a token-adaptive lambda, so common-
// mode content cancels and discriminative cross-modal cues remain.

#pragma once

#include <string>
#include <vector>

#include "rhythm/autodiff.hpp"
#include "rhythm/mat.hpp"
#include "rhythm/rng.hpp"

namespace rhythm {

// Which axis each softmax normalizes. `efficient` keeps the linear-attention
// convention (queries over features, keys over the token sequence);
// `literal` swaps both.
enum class SoftmaxAxes { efficient, literal };

struct CrossAttnParams {
    int d_model = 0;
    int heads = 0;             // d_head = d_model / heads
    double lambda_init = 0.8;  // fixed scalar, not trained
    double rmsnorm_eps = 1e-6;
    SoftmaxAxes softmax_axes = SoftmaxAxes::efficient;

    std::vector<Mat> W_Q, W_K, W_V;  // per head, (d_model, 2*d_head)
    Mat W_O;                         // (2*d_model, d_model)
    Mat lam_q1, lam_k1, lam_q2, lam_k2;  // (1, d_head), shared across heads
    Mat alpha_imp;                   // (1,1), keyframe modulation of lambda
    Mat beta;                        // (1,1), phase temperature

    int d_head() const { return d_model / heads; }

    static CrossAttnParams init(int d_model, int heads, Rng& rng);

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        for (size_t h = 0; h < W_Q.size(); ++h) {
            const std::string hp = prefix + ".h" + std::to_string(h);
            f(hp + ".W_Q", W_Q[h]);
            f(hp + ".W_K", W_K[h]);
            f(hp + ".W_V", W_V[h]);
        }
        f(prefix + ".W_O", W_O);
        f(prefix + ".lam_q1", lam_q1);
        f(prefix + ".lam_k1", lam_k1);
        f(prefix + ".lam_q2", lam_q2);
        f(prefix + ".lam_k2", lam_k2);
        f(prefix + ".alpha_imp", alpha_imp);
        f(prefix + ".beta", beta);
    }
};

struct CrossAttnVars {
    std::vector<ad::Var> W_Q, W_K, W_V;
    ad::Var W_O;
    ad::Var lam_q1, lam_k1, lam_q2, lam_k2;
    ad::Var alpha_imp, beta;
};

CrossAttnVars bind_cross_attn(ad::Tape& tape, const CrossAttnParams& p);

// lambda_base = exp(<lam_q1, lam_k1>) - exp(<lam_q2, lam_k2>) + lambda_init
ad::Var lambda_base(ad::Tape& tape, const CrossAttnVars& v, double lambda_init);

// lambda_i = lambda_base * (1 + alpha_imp * (M_i - 1)), (L_m, 1)
ad::Var token_lambda(ad::Tape& tape, const CrossAttnVars& v, double lambda_init, const Mat& M);

// Rotate the query halves by beta*phi per frame:
//   Q1' = Q1 cos(b phi) - Q2 sin(b phi);  Q2' = Q1 sin(b phi) + Q2 cos(b phi)
std::pair<ad::Var, ad::Var> phase_rotate(ad::Tape& tape, ad::Var Q1, ad::Var Q2, ad::Var beta, const Mat& phi);

// Projections for one head; query rows are scaled by the keyframe weight M,
// keys and values are not.
struct QkvVars {
    ad::Var Q1, Q2;  // (L_m, d_head)
    ad::Var K1, K2;  // (L_t, d_head)
    ad::Var V;       // (L_t, 2*d_head)
};
QkvVars qkv_project(ad::Tape& tape, ad::Var X, ad::Var T, const Mat& M, const CrossAttnVars& v, int head);

// Single head with an explicit token-lambda vector, (L_m, 2*d_head).
// X is the motion stream, T the text tokens, M the per-frame weight column.
ad::Var lin_diff_cross_attn_head(ad::Tape& tape, ad::Var X, ad::Var T, const Mat& M, const Mat& phi,
                                 const CrossAttnVars& v, int head, ad::Var lambda_tokens, SoftmaxAxes axes);

// All heads, RMSNorm over the concatenated features, (1 - lambda_init)
// scaling, output projection. (L_m, d_model).
ad::Var multi_head_cross_attn(ad::Tape& tape, ad::Var X, ad::Var T, const Mat& M, const Mat& phi,
                              const CrossAttnVars& v, const CrossAttnParams& p);

}  // namespace rhythm
