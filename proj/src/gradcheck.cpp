// SPDX-License-Identifier: Apache-2.0

#include "rhythm/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "rhythm/attention.hpp"
#include "rhythm/denoiser.hpp"
#include "rhythm/rng.hpp"
#include "rhythm/ssm.hpp"

namespace rhythm {

namespace {

constexpr double kStep = 1e-5;

double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / (std::max(std::abs(analytic), std::abs(fd)) + 1e-6);
}

// Checks `probes` entries of one parameter (0 = all) against central FD of
// `loss` and records the worst error.
GradCheckGroup check_group(const std::string& name, Mat& param, const Mat& analytic,
                           const std::function<double()>& loss, int probes, Rng& pick) {
    GradCheckGroup g;
    g.name = name;
    const size_t n = param.a.size();
    const size_t count = probes > 0 ? std::min<size_t>(probes, n) : n;
    for (size_t k = 0; k < count; ++k) {
        const size_t i = (probes > 0 && n > count) ? pick.next_u64() % n : k;
        const double keep = param.a[i];
        param.a[i] = keep + kStep;
        const double up = loss();
        param.a[i] = keep - kStep;
        const double dn = loss();
        param.a[i] = keep;
        const double fd = (up - dn) / (2.0 * kStep);
        g.max_rel_err = std::max(g.max_rel_err, rel_err(analytic.a[i], fd));
        ++g.entries_checked;
    }
    return g;
}

}  // namespace

GradCheckReport gradcheck_ssm(uint64_t seed) {
    Rng rng(hash_mix(seed, 0x73736dULL));
    const int L = 6, D = 4, Di = 6, N = 3;
    SsmBlockParams p = SsmBlockParams::init(D, Di, N, rng);
    const Mat X = rng.normal_mat(L, D);
    const Mat Phi = rng.normal_mat(L, 2);
    Mat m_col(L, 1);
    for (int i = 0; i < L; ++i) m_col(i, 0) = 0.3 + 0.1 * i;
    const Mat U = rng.normal_mat(L, D);

    auto loss = [&]() {
        ad::Tape tape;
        SsmBlockVars vars = bind_ssm_block(tape, p);
        ad::Var y = ssm_block(tape, tape.leaf(X), tape.leaf(m_col), Phi, vars);
        const Mat& yv = tape.value(y);
        double s = 0.0;
        for (size_t i = 0; i < yv.a.size(); ++i) s += yv.a[i] * U.a[i];
        return s;
    };

    ad::Tape tape;
    SsmBlockVars vars = bind_ssm_block(tape, p);
    ad::Var y = ssm_block(tape, tape.leaf(X), tape.leaf(m_col), Phi, vars);
    tape.backward(y, U);

    GradCheckReport report;
    report.module = "ssm";
    Rng pick(1);
    auto add = [&](const std::string& name, Mat& param, ad::Var var) {
        report.groups.push_back(check_group(name, param, tape.grad_or_zero(var), loss, 0, pick));
    };
    add("W_phi", p.W_phi, vars.W_phi);
    add("W_in", p.W_in, vars.W_in);
    add("b_in", p.b_in, vars.b_in);
    add("W_out", p.W_out, vars.W_out);
    add("b_out", p.b_out, vars.b_out);
    add("fwd.A_log", p.fwd.A_log, vars.fwd.A_log);
    add("fwd.W_B", p.fwd.W_B, vars.fwd.W_B);
    add("fwd.W_C", p.fwd.W_C, vars.fwd.W_C);
    add("fwd.W_delta", p.fwd.W_delta, vars.fwd.W_delta);
    add("fwd.b_delta", p.fwd.b_delta, vars.fwd.b_delta);
    add("bwd.A_log", p.bwd.A_log, vars.bwd.A_log);
    add("bwd.W_B", p.bwd.W_B, vars.bwd.W_B);
    add("bwd.W_C", p.bwd.W_C, vars.bwd.W_C);
    add("bwd.W_delta", p.bwd.W_delta, vars.bwd.W_delta);
    add("bwd.b_delta", p.bwd.b_delta, vars.bwd.b_delta);
    return report;
}

GradCheckReport gradcheck_attn(uint64_t seed) {
    Rng rng(hash_mix(seed, 0x6174746eULL));
    const int L_m = 5, L_t = 3, D = 4, H = 2;
    CrossAttnParams p = CrossAttnParams::init(D, H, rng);
    const Mat X = rng.normal_mat(L_m, D);
    const Mat T = rng.normal_mat(L_t, D);
    Mat m_col(L_m, 1);
    for (int i = 0; i < L_m; ++i) m_col(i, 0) = 0.3 + 0.15 * i;
    Mat phi(L_m, 1);
    for (int i = 0; i < L_m; ++i) phi(i, 0) = 0.5 * i;
    const Mat U = rng.normal_mat(L_m, D);

    auto loss = [&]() {
        ad::Tape tape;
        CrossAttnVars v = bind_cross_attn(tape, p);
        ad::Var out = multi_head_cross_attn(tape, tape.leaf(X), tape.leaf(T), m_col, phi, v, p);
        const Mat& ov = tape.value(out);
        double s = 0.0;
        for (size_t i = 0; i < ov.a.size(); ++i) s += ov.a[i] * U.a[i];
        return s;
    };

    ad::Tape tape;
    CrossAttnVars v = bind_cross_attn(tape, p);
    ad::Var out = multi_head_cross_attn(tape, tape.leaf(X), tape.leaf(T), m_col, phi, v, p);
    tape.backward(out, U);

    GradCheckReport report;
    report.module = "attn";
    Rng pick(2);
    auto add = [&](const std::string& name, Mat& param, ad::Var var) {
        report.groups.push_back(check_group(name, param, tape.grad_or_zero(var), loss, 0, pick));
    };
    for (int h = 0; h < H; ++h) {
        const std::string hp = "h" + std::to_string(h);
        add(hp + ".W_Q", p.W_Q[h], v.W_Q[h]);
        add(hp + ".W_K", p.W_K[h], v.W_K[h]);
        add(hp + ".W_V", p.W_V[h], v.W_V[h]);
    }
    add("W_O", p.W_O, v.W_O);
    add("lam_q1", p.lam_q1, v.lam_q1);
    add("lam_k1", p.lam_k1, v.lam_k1);
    add("lam_q2", p.lam_q2, v.lam_q2);
    add("lam_k2", p.lam_k2, v.lam_k2);
    add("alpha_imp", p.alpha_imp, v.alpha_imp);
    add("beta", p.beta, v.beta);
    return report;
}

GradCheckReport gradcheck_model(uint64_t seed) {
    Rng rng(hash_mix(seed, 0x6d6f64ULL));
    ModelDims dims;
    dims.motion_dim = 8;
    dims.d_model = 8;
    dims.d_inner = 8;
    dims.n_state = 2;
    dims.heads = 2;
    dims.ffn_mult = 2;
    dims.text_tokens = 2;
    Model model = Model::init(dims, 2, seed);

    const int L = 8;
    const Mat x_t = rng.normal_mat(L, dims.motion_dim);
    const Mat x0 = rng.normal_mat(L, dims.motion_dim);
    ConditioningBundle cond = neutral_conditioning(L, 100, dims.d_model);
    cond.Phi = Mat(L, 2);
    for (int i = 0; i < L; ++i) {
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        cond.phi[i] = phi;
        cond.Phi(i, 0) = std::sin(phi);
        cond.Phi(i, 1) = std::cos(phi);
        cond.M[i] = rng.uniform(0.3, 1.0);
    }
    cond.text = stub_text_embedding(0, dims.text_tokens, dims.d_model, 5).tokens;

    auto loss = [&]() {
        ad::Tape tape;
        ModelBinding binding = bind_model(tape, model);
        ad::Var pred = predict_x0_tape(tape, model, binding, x_t, cond);
        return tape.value(tape.mse(pred, x0)).a[0];
    };

    ad::Tape tape;
    ModelBinding binding = bind_model(tape, model);
    ad::Var pred = predict_x0_tape(tape, model, binding, x_t, cond);
    ad::Var l = tape.mse(pred, x0);
    tape.backward(l, Mat::full(1, 1, 1.0));

    GradCheckReport report;
    report.module = "model";
    report.tolerance = 1e-3;  // deep composition in double precision
    Rng pick(3);
    for (size_t pidx = 0; pidx < binding.params.size(); ++pidx) {
        report.groups.push_back(
            check_group(binding.names[pidx], *binding.params[pidx], tape.grad_or_zero(binding.vars[pidx]), loss, 4,
                        pick));
    }
    return report;
}

}  // namespace rhythm
