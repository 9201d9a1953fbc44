// SPDX-License-Identifier: Apache-2.0
//
// Per-segment dominant-period detection: mean signal -> linear (zero-padded)
// autocorrelation via the power spectrum -> peak / prominence / spectral
// entropy criteria -> instantaneous phase.

#pragma once

#include <vector>

#include "rhythm/keyframes.hpp"
#include "rhythm/mat.hpp"
#include "rhythm/motion.hpp"

namespace rhythm {

// Thresholds calibrated on the synthetic suite: clean and 10%-noise tones
// stay below H = 0.71 (worst case is the shortest segment, L_s = 8), while
// white noise stays above 0.81 for L_s >= 32. 0.75 splits the two cleanly.
struct PeriodicityConfig {
    double theta_peak = 0.3;   // min ACF value at the dominant peak
    double theta_prom = 0.15;  // min margin of the peak over the mean ACF
    double theta_ent = 0.75;   // max normalized spectral entropy
};

struct PeriodReport {
    SegmentSpan span;
    bool periodic = false;
    int period = 0;           // = span length when not periodic
    int peak_lag = 0;         // tau_max, 0 when no candidate peak exists
    double peak_value = 0.0;  // R(tau_max)
    double mean_acf = 0.0;    // mean of R over tau in [1, L_s-1]
    double entropy = 1.0;
    PeriodicityConfig thresholds_used;
};

struct PhaseTrack {
    std::vector<double> phi;      // length L, radians in [0, 2*pi)
    Mat phase_encoding;           // (L, 2) rows (sin phi, cos phi)
    std::vector<PeriodReport> reports;
};

struct AcfResult {
    std::vector<double> r;  // length L_s, r[0] == 1 unless zero_power
    bool zero_power = false;
};

// Mean over feature dimensions, one value per frame.
std::vector<double> mean_signal(const Mat& segment);

// O(L^2) reference: mean-removed, biased, normalized by R(0).
AcfResult autocorrelation_naive(const std::vector<double>& x);

// Same contract as the naive version, computed from the power spectrum with
// zero-padding to the next power of two >= 2*L-1 (linear, not circular).
AcfResult autocorrelation_fft(const std::vector<double>& x);

// Shannon entropy of a power vector, normalized by log(N) to [0, 1].
// All-zero power maps to 1 (maximally irregular).
double spectral_entropy_from_power(const std::vector<double>& power);

// Entropy of the zero-padded spectrum of the mean-removed signal.
double spectral_entropy(const std::vector<double>& x);

struct PeriodDecision {
    bool periodic = false;
    int period = 0;
    int peak_lag = 0;
    double peak_value = 0.0;
    double mean_acf = 0.0;
};

// tau_max = the highest ACF value among local maxima at lag >= 2; periodic iff
// peak, prominence and entropy criteria all hold. Fallback period is L_s.
PeriodDecision classify_periodic(const AcfResult& acf, double entropy, const PeriodicityConfig& cfg);

// Analyze one segment end to end (segments shorter than 4 frames are
// reported non-periodic without analysis).
PeriodReport analyze_segment(const Mat& segment, SegmentSpan span, const PeriodicityConfig& cfg);

// Segment the sequence between consecutive keyframes, analyze each segment,
// and emit the per-frame phase phi(t_local) = 2*pi*t_local/T (mod 2*pi).
PhaseTrack phase_track(const MotionSequence& seq, const KeyframeWeights& kf, const PeriodicityConfig& cfg = {});

}  // namespace rhythm
