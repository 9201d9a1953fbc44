// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rhythm/errors.hpp"
#include "rhythm/keyframes.hpp"
#include "rhythm/rng.hpp"

using namespace rhythm;

namespace {

Mat column(const std::vector<double>& v) {
    Mat m(static_cast<int>(v.size()), 1);
    for (size_t i = 0; i < v.size(); ++i) m(static_cast<int>(i), 0) = v[i];
    return m;
}

// three well-separated plateaus of `per` frames each, small seeded jitter
Mat plateau_segment(int per, double jitter, uint64_t seed) {
    Rng rng(seed);
    Mat seg(3 * per, 2);
    const double centers[3][2] = {{0.0, 0.0}, {10.0, 0.0}, {5.0, 9.0}};
    for (int p = 0; p < 3; ++p)
        for (int i = 0; i < per; ++i) {
            seg(p * per + i, 0) = centers[p][0] + jitter * rng.normal();
            seg(p * per + i, 1) = centers[p][1] + jitter * rng.normal();
        }
    return seg;
}

}  // namespace

TEST_CASE("pairwise squared distances") {
    const Mat d = pairwise_sq_dist(column({0, 1, 2}));
    const double expect[3][3] = {{0, 1, 4}, {1, 0, 1}, {4, 1, 0}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(d(i, j) == doctest::Approx(expect[i][j]));

    CHECK_THROWS_AS(pairwise_sq_dist(Mat(1, 2)), ArgumentError);

    const Mat zero = pairwise_sq_dist(column({3, 3, 3}));
    for (double v : zero.a) CHECK(v == 0.0);

    // scaling features by c scales entries by c^2
    const Mat scaled = pairwise_sq_dist(column({0, 3, 6}));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(scaled(i, j) == doctest::Approx(9.0 * d(i, j)));
}

TEST_CASE("cutoff distance is the nearest-rank quantile with a positive floor") {
    // hand-built symmetric matrix with strict upper triangle {1,2,2,3,4,1}
    Mat dd(4, 4);
    dd(0, 1) = dd(1, 0) = 1;
    dd(0, 2) = dd(2, 0) = 2;
    dd(0, 3) = dd(3, 0) = 3;
    dd(1, 2) = dd(2, 1) = 4;
    dd(1, 3) = dd(3, 1) = 2;
    dd(2, 3) = dd(3, 2) = 1;
    // sorted {1,1,2,2,3,4}: fraction .5 -> rank 3 -> 2
    CHECK(cutoff_distance(dd, 0.5) == doctest::Approx(2.0));

    // nearest-rank on {1,2,3}: fraction .5 -> rank 2 -> 2; tiny fraction floors at rank 1
    Mat d3(3, 3);
    d3(0, 1) = d3(1, 0) = 1;
    d3(0, 2) = d3(2, 0) = 2;
    d3(1, 2) = d3(2, 1) = 3;
    CHECK(cutoff_distance(d3, 0.5) == doctest::Approx(2.0));
    CHECK(cutoff_distance(d3, 0.01) == doctest::Approx(1.0));

    Mat zeros(3, 3);
    CHECK(cutoff_distance(zeros, 0.015) == doctest::Approx(1e-12));

    // uniform feature scaling by c scales the quantile by c^2
    Mat scaled = dd;
    for (auto& v : scaled.a) v *= 9.0;  // c = 3 on features
    CHECK(cutoff_distance(scaled, 0.5) == doctest::Approx(9.0 * 2.0));

    CHECK_THROWS_AS(cutoff_distance(dd, 0.0), ArgumentError);
    CHECK_THROWS_AS(cutoff_distance(dd, 1.0), ArgumentError);
}

TEST_CASE("local density follows the Gaussian kernel") {
    // three mutually equidistant frames with d_ij == d_c
    Mat d(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) d(i, j) = i == j ? 0.0 : 2.5;
    const auto rho = local_density(d, 2.5);
    for (double r : rho) CHECK(r == doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-9));

    // two coincident frames
    Mat z(2, 2);
    const auto rho2 = local_density(z, 1.0);
    CHECK(rho2[0] == doctest::Approx(1.0));
    CHECK(rho2[1] == doctest::Approx(1.0));

    // far apart
    Mat far(2, 2);
    far(0, 1) = far(1, 0) = 1e6;
    const auto rho3 = local_density(far, 1.0);
    CHECK(rho3[0] == doctest::Approx(0.0));
}

TEST_CASE("separation distance on 1-D frames [0,1,2] with d_c = 1") {
    const Mat d = pairwise_sq_dist(column({0, 1, 2}));
    const auto rho = local_density(d, 1.0);
    CHECK(rho[0] == doctest::Approx(std::exp(-1.0) + std::exp(-16.0)));
    CHECK(rho[1] == doctest::Approx(2.0 * std::exp(-1.0)));
    CHECK(rho[2] == doctest::Approx(rho[0]));

    const auto delta = separation_distance(rho, d);
    CHECK(delta[0] == doctest::Approx(1.0));
    CHECK(delta[1] == doctest::Approx(4.0));  // density max takes the global max distance
    CHECK(delta[2] == doctest::Approx(1.0));
}

TEST_CASE("coincident frames collapse to one index-0 keyframe") {
    Mat seg(2, 1);
    seg(0, 0) = seg(1, 0) = 5.0;
    const DpcDiagnostics diag = detect_keyframes(seg);
    CHECK(diag.delta[0] == 0.0);
    CHECK(diag.delta[1] == 0.0);
    REQUIRE(diag.keyframe_local_indices.size() == 1);
    CHECK(diag.keyframe_local_indices[0] == 0);
}

TEST_CASE("elbow rule picks the knee of the sorted curve") {
    CHECK(elbow_count({1, 1, 1, 0, 0, 0}) == 3);
    CHECK(elbow_count({1, 0, 0, 0}) == 1);
    CHECK(elbow_count({5, 5, 5, 5}) == 1);
    CHECK(elbow_count({7, 2}) == 1);
    CHECK(elbow_count({1.0, 0.9, 0.8, 0.001, 0.0009, 0.0}) == 3);
}

TEST_CASE("plateau segments yield one keyframe per plateau") {
    int ok = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const Mat seg = plateau_segment(20, 0.05, seed);
        const DpcDiagnostics diag = detect_keyframes(seg);
        if (diag.keyframe_local_indices.size() != 3) continue;
        bool in0 = false, in1 = false, in2 = false;
        for (int idx : diag.keyframe_local_indices) {
            if (idx < 20) in0 = true;
            else if (idx < 40) in1 = true;
            else in2 = true;
        }
        if (in0 && in1 && in2) ++ok;
    }
    CHECK(ok >= 18);
}

TEST_CASE("all-identical frames give k = 1 at index 0") {
    Mat seg = Mat::full(12, 2, 3.5);
    const DpcDiagnostics diag = detect_keyframes(seg);
    REQUIRE(diag.keyframe_local_indices.size() == 1);
    CHECK(diag.keyframe_local_indices[0] == 0);
}

TEST_CASE("permuting frames permutes the diagnostics") {
    Rng rng(3);
    Mat seg = rng.normal_mat(14, 3);
    const DpcDiagnostics base = detect_keyframes(seg);

    // rotate frames by 5
    Mat rotated(14, 3);
    for (int i = 0; i < 14; ++i)
        for (int j = 0; j < 3; ++j) rotated(i, j) = seg((i + 5) % 14, j);
    const DpcDiagnostics rot = detect_keyframes(rotated);

    for (int i = 0; i < 14; ++i) {
        CHECK(rot.rho[i] == doctest::Approx(base.rho[(i + 5) % 14]).epsilon(1e-9));
        CHECK(rot.delta[i] == doctest::Approx(base.delta[(i + 5) % 14]).epsilon(1e-9));
    }

    // same selected feature vectors, permuted indices
    std::vector<int> base_mapped;
    for (int idx : base.keyframe_local_indices) base_mapped.push_back((idx - 5 + 14) % 14);
    std::sort(base_mapped.begin(), base_mapped.end());
    CHECK(base_mapped == rot.keyframe_local_indices);
}

TEST_CASE("peak-score normalization follows the min-max rule") {
    const auto w = normalize_peak_scores({2, 5, 8});
    REQUIRE(w.size() == 3);
    CHECK(w[0] == doctest::Approx(0.0));
    CHECK(w[1] == doctest::Approx(0.5));
    CHECK(w[2] == doctest::Approx(1.0));

    CHECK(normalize_peak_scores({4.2}) == std::vector<double>{1.0});
    CHECK(normalize_peak_scores({3, 3, 3}) == std::vector<double>({1.0, 1.0, 1.0}));

    const auto wp = normalize_peak_scores({2, 5, 8}, DpcConfig::WeightMode::one_plus_gamma);
    CHECK(wp[0] == doctest::Approx(1.0));
    CHECK(wp[2] == doctest::Approx(2.0));
}

TEST_CASE("keyframe weights cover the sequence with 1 off the keyframe set") {
    Rng rng(11);
    MotionSequence seq;
    seq.frames = rng.normal_mat(96, 4);
    seq.fps = 20;
    seq.name = "t";

    const KeyframeWeights kw = keyframe_weights(seq, 3);
    CHECK(static_cast<int>(kw.weights.size()) == 96);
    CHECK(std::is_sorted(kw.keyframes.begin(), kw.keyframes.end()));

    std::vector<bool> is_kf(96, false);
    for (int k : kw.keyframes) is_kf[k] = true;
    for (int i = 0; i < 96; ++i) {
        if (!is_kf[i]) CHECK(kw.weights[i] == 1.0);
        CHECK(kw.weights[i] >= 0.0);
        CHECK(kw.weights[i] <= 1.0);
    }

    // with >= 2 distinct gammas, min and max weights hit 0 and 1
    if (kw.keyframes.size() >= 2) {
        double lo = 2.0, hi = -1.0;
        for (int k : kw.keyframes) {
            lo = std::min(lo, kw.weights[k]);
            hi = std::max(hi, kw.weights[k]);
        }
        CHECK(lo == doctest::Approx(0.0));
        CHECK(hi == doctest::Approx(1.0));
    }

    CHECK_THROWS_AS(keyframe_weights(seq, 0), ArgumentError);
    CHECK_THROWS_AS(keyframe_weights(seq, 49), ArgumentError);
}

TEST_CASE("uniform feature scaling keeps selection and weights") {
    Rng rng(5);
    MotionSequence seq;
    seq.frames = rng.normal_mat(64, 3);
    seq.fps = 20;
    const KeyframeWeights base = keyframe_weights(seq, 2);

    MotionSequence scaled = seq;
    for (auto& v : scaled.frames.a) v *= 7.5;
    const KeyframeWeights s = keyframe_weights(scaled, 2);

    CHECK(base.keyframes == s.keyframes);
    for (size_t i = 0; i < base.weights.size(); ++i)
        CHECK(base.weights[i] == doctest::Approx(s.weights[i]).epsilon(1e-9));

    // rho is scale-free, delta and gamma scale by c^2
    for (size_t g = 0; g < base.per_segment.size(); ++g)
        for (size_t i = 0; i < base.per_segment[g].rho.size(); ++i) {
            CHECK(s.per_segment[g].rho[i] == doctest::Approx(base.per_segment[g].rho[i]).epsilon(1e-6));
            CHECK(s.per_segment[g].delta[i]
                  == doctest::Approx(base.per_segment[g].delta[i] * 7.5 * 7.5).epsilon(1e-6));
        }
}

TEST_CASE("density and score bounds hold on random segments") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const int m = 6 + static_cast<int>(seed);
        const Mat seg = rng.normal_mat(m, 3);
        const DpcDiagnostics diag = detect_keyframes(seg);
        for (int i = 0; i < m; ++i) {
            CHECK(diag.rho[i] >= 0.0);
            CHECK(diag.rho[i] <= m - 1 + 1e-12);
            CHECK(diag.gamma[i] >= 0.0);
            CHECK(diag.gamma[i] == doctest::Approx(diag.rho[i] * diag.delta[i]));
        }
        CHECK(static_cast<int>(diag.keyframe_local_indices.size()) <= (m + 3) / 4);
    }
}
