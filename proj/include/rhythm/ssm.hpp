// SPDX-License-Identifier: Apache-2.0
//
// Selective state-space block with keyframe-weighted input projection and
// phase-enriched input.
//
// Per timestep t (forward direction):
//   delta_t = softplus(W_delta x_t + b_delta)            (D_inner)
//   A       = -exp(A_log)                                (D_inner, N_state)
//   Abar_t[d,n] = exp(delta_t[d] * A[d,n])
//   B_t = W_B x_t,  C_t = W_C x_t                        (N_state)
//   h_t[d,n] = Abar_t[d,n] h_{t-1}[d,n] + delta_t[d] B_t[n] M_t x_t[d]
//   y_t[d]   = sum_n C_t[n] h_t[d,n]
// The keyframe weight M_t multiplies the discretized input projection, so
// weighted frames contribute proportionally more to the carried state. The
// backward direction runs the same recurrence on the reversed sequence.

#pragma once

#include <cstdint>
#include <vector>

#include "rhythm/autodiff.hpp"
#include "rhythm/mat.hpp"
#include "rhythm/rng.hpp"

namespace rhythm {

enum class ScanDirection { forward, backward };

// Raw views into parameter storage; lifetime owned by the caller.
template <typename T>
struct ScanParamsView {
    const T* A_log;    // (D_inner, N_state)
    const T* W_B;      // (N_state, D_inner)
    const T* W_C;      // (N_state, D_inner)
    const T* W_delta;  // (D_inner, D_inner)
    const T* b_delta;  // (D_inner)
};

template <typename T>
struct ScanCache {
    std::vector<T> delta;  // (L, D_inner)
    std::vector<T> B;      // (L, N_state)
    std::vector<T> C;      // (L, N_state)
    std::vector<T> h;      // (L, D_inner, N_state)
};

// M may be null (treated as all-ones). cache may be null when no backward
// pass will follow.
template <typename T>
void scan_forward(const T* x, int L, int d_inner, int n_state, const ScanParamsView<T>& p, const T* M, T* y,
                  ScanCache<T>* cache);

// Accumulates (+=) into every non-null gradient buffer.
void scan_backward(const double* x, int L, int d_inner, int n_state, const ScanParamsView<double>& p,
                   const double* M, const ScanCache<double>& cache, const double* y_bar, double* x_bar,
                   double* A_log_bar, double* W_B_bar, double* W_C_bar, double* W_delta_bar, double* b_delta_bar,
                   double* M_bar);

// Low-level recurrence with externally supplied coefficients:
//   h_t = abar_t .* h_{t-1} + bbar_t * (M_t * x_t[d]),  y_t[d] = <c_t, h_t[d,:]>
// abar/bbar/c are (L, N_state) streams shared across channels; used by tests
// to pin the recurrence independent of the selective parameterization.
Mat ssm_recurrence(const Mat& x, const Mat& abar, const Mat& bbar, const Mat& c, const std::vector<double>& M);

struct SsmDirectionParams {
    Mat A_log;    // (D_inner, N_state)
    Mat W_B;      // (N_state, D_inner)
    Mat W_C;      // (N_state, D_inner)
    Mat W_delta;  // (D_inner, D_inner)
    Mat b_delta;  // (1, D_inner)
};

// Pre-norm block: X_phi = X + Phi W_phi; u,z = split(norm(X_phi) W_in + b_in);
// y = X_phi + (scan_fwd(u) + scan_bwd(u)) .* silu(z) W_out + b_out.
struct SsmBlockParams {
    int d_model = 0;
    int d_inner = 0;
    int n_state = 0;
    Mat W_phi;  // (2, d_model)
    Mat W_in;   // (d_model, 2*d_inner)
    Mat b_in;   // (1, 2*d_inner)
    Mat W_out;  // (d_inner, d_model)
    Mat b_out;  // (1, d_model)
    SsmDirectionParams fwd, bwd;

    static SsmBlockParams init(int d_model, int d_inner, int n_state, Rng& rng);

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".W_phi", W_phi);
        f(prefix + ".W_in", W_in);
        f(prefix + ".b_in", b_in);
        f(prefix + ".W_out", W_out);
        f(prefix + ".b_out", b_out);
        const char* dir_name[2] = {"fwd", "bwd"};
        SsmDirectionParams* dirs[2] = {&fwd, &bwd};
        for (int i = 0; i < 2; ++i) {
            const std::string d = prefix + "." + dir_name[i];
            f(d + ".A_log", dirs[i]->A_log);
            f(d + ".W_B", dirs[i]->W_B);
            f(d + ".W_C", dirs[i]->W_C);
            f(d + ".W_delta", dirs[i]->W_delta);
            f(d + ".b_delta", dirs[i]->b_delta);
        }
    }
};

// Tape handles for one block's parameters.
struct SsmBlockVars {
    ad::Var W_phi, W_in, b_in, W_out, b_out;
    struct Dir {
        ad::Var A_log, W_B, W_C, W_delta, b_delta;
    } fwd, bwd;
};

SsmBlockVars bind_ssm_block(ad::Tape& tape, const SsmBlockParams& p);

// phi_d = Phi * W_phi  (Phi is a fixed (L,2) input)
ad::Var project_phase(ad::Tape& tape, const Mat& Phi, ad::Var W_phi);

// Directional scan on the tape; M is a (L,1) var.
ad::Var selective_scan(ad::Tape& tape, ad::Var x, const SsmBlockVars::Dir& dir, ad::Var M, ScanDirection direction);

// Full block on the tape. Phi may be empty (treated as zero phase input).
ad::Var ssm_block(ad::Tape& tape, ad::Var X, ad::Var M, const Mat& Phi, const SsmBlockVars& vars,
                  double norm_eps = 1e-6);

// Plain (non-tape) forward used for benchmarking and as a cross-check of the
// tape path. T is float or double.
template <typename T>
MatT<T> ssm_block_forward(const MatT<T>& X, const std::vector<T>& M, const MatT<T>& Phi, const SsmBlockParams& p,
                          double norm_eps = 1e-6);

}  // namespace rhythm
