// SPDX-License-Identifier: Apache-2.0

#include "rhythm/keyframes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rhythm/errors.hpp"

namespace rhythm {

Mat pairwise_sq_dist(const Mat& segment) {
    const int M = segment.rows;
    if (M < 2) throw ArgumentError("pairwise_sq_dist: need at least 2 frames");
    Mat d(M, M);
    for (int i = 0; i < M; ++i) {
        const double* xi = segment.row_ptr(i);
        for (int j = i + 1; j < M; ++j) {
            const double* xj = segment.row_ptr(j);
            double s = 0.0;
            for (int k = 0; k < segment.cols; ++k) {
                const double diff = xi[k] - xj[k];
                s += diff * diff;
            }
            d(i, j) = s;
            d(j, i) = s;
        }
    }
    return d;
}

double cutoff_distance(const Mat& dists, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("cutoff_distance: fraction must be in (0,1)");
    const int M = dists.rows;
    std::vector<double> upper;
    upper.reserve(static_cast<size_t>(M) * (M - 1) / 2);
    for (int i = 0; i < M; ++i)
        for (int j = i + 1; j < M; ++j) upper.push_back(dists(i, j));
    std::sort(upper.begin(), upper.end());

    const size_t n = upper.size();
    size_t rank = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    double d_c = upper[rank - 1];

    if (d_c <= 0.0) {
        auto pos = std::find_if(upper.begin(), upper.end(), [](double v) { return v > 0.0; });
        d_c = pos != upper.end() ? *pos : 1e-12;
    }
    return d_c;
}

std::vector<double> local_density(const Mat& dists, double d_c) {
    if (!(d_c > 0.0)) throw ArgumentError("local_density: d_c must be positive");
    const int M = dists.rows;
    std::vector<double> rho(M, 0.0);
    for (int i = 0; i < M; ++i) {
        double s = 0.0;
        for (int j = 0; j < M; ++j) {
            if (j == i) continue;
            const double r = dists(i, j) / d_c;
            s += std::exp(-r * r);
        }
        rho[i] = s;
    }
    return rho;
}

std::vector<double> separation_distance(const std::vector<double>& rho, const Mat& dists) {
    const int M = dists.rows;
    if (static_cast<int>(rho.size()) != M) throw ArgumentError("separation_distance: rho length mismatch");

    double global_max = 0.0;
    for (int i = 0; i < M; ++i)
        for (int j = i + 1; j < M; ++j) global_max = std::max(global_max, dists(i, j));

    // rho ties broken by lower index: j outranks i iff rho_j > rho_i, or
    // rho_j == rho_i and j < i. Exactly one frame outranks nobody.
    std::vector<double> delta(M, 0.0);
    for (int i = 0; i < M; ++i) {
        double best = -1.0;
        for (int j = 0; j < M; ++j) {
            if (j == i) continue;
            const bool higher = rho[j] > rho[i] || (rho[j] == rho[i] && j < i);
            if (higher && (best < 0.0 || dists(i, j) < best)) best = dists(i, j);
        }
        delta[i] = best >= 0.0 ? best : global_max;
    }
    return delta;
}

int elbow_count(const std::vector<double>& gamma_sorted_desc) {
    const int M = static_cast<int>(gamma_sorted_desc.size());
    if (M < 2) return 1;
    const double g_hi = gamma_sorted_desc.front();
    const double g_lo = gamma_sorted_desc.back();
    if (!(g_hi > g_lo)) return 1;  // flat curve, no elbow

    // Normalize the curve onto [0,1]^2 and take the point farthest from the
    // chord (0,1)-(1,0); the elbow point itself starts the tail, so the head
    // before it is the keyframe count. Ties keep the last (tail-most) point.
    int best_i = 0;
    double best_d = -1.0;
    for (int i = 0; i < M; ++i) {
        const double u = static_cast<double>(i) / (M - 1);
        const double v = (gamma_sorted_desc[i] - g_lo) / (g_hi - g_lo);
        const double d = std::abs(u + v - 1.0);
        if (d >= best_d) {
            best_d = d;
            best_i = i;
        }
    }
    if (best_d < 1e-12) return 1;
    return std::max(best_i, 1);
}

DpcDiagnostics detect_keyframes(const Mat& segment, const DpcConfig& cfg) {
    const int M = segment.rows;
    if (M < 2) throw ArgumentError("detect_keyframes: need at least 2 frames");

    DpcDiagnostics diag;
    const Mat dists = pairwise_sq_dist(segment);
    diag.d_c = cutoff_distance(dists, cfg.cutoff_fraction);
    diag.rho = local_density(dists, diag.d_c);
    diag.delta = separation_distance(diag.rho, dists);
    diag.gamma.resize(M);
    for (int i = 0; i < M; ++i) diag.gamma[i] = diag.rho[i] * diag.delta[i];

    std::vector<int> order(M);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return diag.gamma[a] > diag.gamma[b]; });

    std::vector<double> sorted_gamma(M);
    for (int i = 0; i < M; ++i) sorted_gamma[i] = diag.gamma[order[i]];

    int k = elbow_count(sorted_gamma);
    const int k_max = (M + 3) / 4;  // ceil(M/4)
    k = std::clamp(k, 1, std::max(1, k_max));

    diag.keyframe_local_indices.assign(order.begin(), order.begin() + k);
    std::sort(diag.keyframe_local_indices.begin(), diag.keyframe_local_indices.end());
    return diag;
}

int default_num_segments(int L) { return (L + 31) / 32; }

KeyframeWeights keyframe_weights(const MotionSequence& seq, int num_segments, const DpcConfig& cfg) {
    validate_motion(seq);
    const int L = seq.length();
    if (num_segments < 1 || num_segments > L / 2)
        throw ArgumentError("keyframe_weights: num_segments must be in [1, floor(L/2)]");

    KeyframeWeights kw;
    kw.weights.assign(L, 1.0);

    const int base = L / num_segments;  // last span absorbs the remainder
    for (int s = 0; s < num_segments; ++s) {
        const int start = s * base;
        const int end = (s == num_segments - 1) ? L : start + base;
        Mat segment(end - start, seq.dim());
        for (int t = start; t < end; ++t)
            for (int d = 0; d < seq.dim(); ++d) segment(t - start, d) = seq.frames(t, d);

        DpcDiagnostics diag = detect_keyframes(segment, cfg);
        diag.span = {start, end};
        for (int local : diag.keyframe_local_indices) kw.keyframes.push_back(start + local);
        kw.per_segment.push_back(std::move(diag));
    }

    // min-max normalize gamma over the keyframes of the whole sequence
    auto gamma_of = [&](int global_idx) {
        for (const auto& diag : kw.per_segment)
            if (global_idx >= diag.span.start && global_idx < diag.span.end)
                return diag.gamma[global_idx - diag.span.start];
        throw ArgumentError("keyframe_weights: index outside all segments");
    };
    std::vector<double> gammas;
    gammas.reserve(kw.keyframes.size());
    for (int kf : kw.keyframes) gammas.push_back(gamma_of(kf));
    const std::vector<double> w = normalize_peak_scores(gammas, cfg.weight_mode);
    for (size_t i = 0; i < kw.keyframes.size(); ++i) kw.weights[kw.keyframes[i]] = w[i];
    return kw;
}

std::vector<double> normalize_peak_scores(const std::vector<double>& gamma, DpcConfig::WeightMode mode) {
    double g_min = 0.0, g_max = 0.0;
    for (size_t i = 0; i < gamma.size(); ++i) {
        if (i == 0 || gamma[i] < g_min) g_min = gamma[i];
        if (i == 0 || gamma[i] > g_max) g_max = gamma[i];
    }
    // all-equal gamma: a keyframe never ranks below an ordinary frame
    const bool degenerate = gamma.empty() || !(g_max > g_min);
    std::vector<double> w(gamma.size());
    for (size_t i = 0; i < gamma.size(); ++i) {
        double wi = degenerate ? 1.0 : (gamma[i] - g_min) / (g_max - g_min);
        if (mode == DpcConfig::WeightMode::one_plus_gamma) wi = degenerate ? 2.0 : 1.0 + wi;
        w[i] = wi;
    }
    return w;
}

}  // namespace rhythm
