// SPDX-License-Identifier: Apache-2.0
//
// Keyframe detection and weight estimation via segmented density-peaks
// clustering. Distances are squared Euclidean throughout; the Gaussian kernel
// of the local density already squares the ratio once more, so rho decays very
// fast past the cutoff.

#pragma once

#include <vector>

#include "rhythm/mat.hpp"
#include "rhythm/motion.hpp"

namespace rhythm {

struct DpcConfig {
    double cutoff_fraction = 0.015;  // quantile of pairwise distances used for d_c
    enum class WeightMode { eq3, one_plus_gamma };
    WeightMode weight_mode = WeightMode::eq3;
};

struct DpcDiagnostics {
    std::vector<double> rho;    // local densities, 0 <= rho_i <= M-1
    std::vector<double> delta;  // separation distances (squared-distance units)
    std::vector<double> gamma;  // rho * delta peak scores
    double d_c = 0.0;
    std::vector<int> keyframe_local_indices;  // sorted ascending
    SegmentSpan span;                         // global frame range this segment covers
};

struct KeyframeWeights {
    std::vector<double> weights;  // length L, 1 off the keyframe set
    std::vector<int> keyframes;   // sorted global frame indices
    std::vector<DpcDiagnostics> per_segment;
};

// Symmetric matrix of squared Euclidean distances between segment frames.
Mat pairwise_sq_dist(const Mat& segment);

// Nearest-rank quantile of the strict upper triangle, floored to stay positive.
double cutoff_distance(const Mat& dists, double fraction);

// rho_i = sum_{j != i} exp(-(d_ij / d_c)^2)
std::vector<double> local_density(const Mat& dists, double d_c);

// delta_i = min distance to any point of higher density (rho ties broken by
// lower index); the unique density maximum gets the global max distance.
std::vector<double> separation_distance(const std::vector<double>& rho, const Mat& dists);

// Full per-segment DPC: d_c, rho, delta, gamma, and elbow-selected keyframes.
DpcDiagnostics detect_keyframes(const Mat& segment, const DpcConfig& cfg = {});

// Number of peaks chosen by the max-distance-to-chord elbow on the descending
// gamma curve, clamped to [1, ceil(M/4)]. Exposed for tests.
int elbow_count(const std::vector<double>& gamma_sorted_desc);

// Min-max normalization of keyframe peak scores into weights; all-equal
// scores (including a single keyframe) collapse to weight 1.
std::vector<double> normalize_peak_scores(const std::vector<double>& gamma,
                                          DpcConfig::WeightMode mode = DpcConfig::WeightMode::eq3);

// Segment the sequence into num_segments contiguous spans, detect keyframes in
// each, and min-max normalize gamma over all detected keyframes (weight 1
// everywhere else; all-equal gamma collapses to weight 1).
KeyframeWeights keyframe_weights(const MotionSequence& seq, int num_segments, const DpcConfig& cfg = {});

// ceil(L / 32), the default segment count.
int default_num_segments(int L);

}  // namespace rhythm
