// SPDX-License-Identifier: Apache-2.0

#include "rhythm/periodicity.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "rhythm/errors.hpp"
#include "rhythm/fft.hpp"

namespace rhythm {

namespace {

std::vector<double> remove_mean(const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - mean;
    return out;
}

}  // namespace

std::vector<double> mean_signal(const Mat& segment) {
    if (segment.rows < 1 || segment.cols < 1) throw ArgumentError("mean_signal: empty segment");
    std::vector<double> x(segment.rows, 0.0);
    const double inv_d = 1.0 / segment.cols;
    for (int t = 0; t < segment.rows; ++t) {
        double s = 0.0;
        const double* row = segment.row_ptr(t);
        for (int d = 0; d < segment.cols; ++d) s += row[d];
        x[t] = s * inv_d;
    }
    return x;
}

AcfResult autocorrelation_naive(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    AcfResult res;
    res.r.assign(n, 0.0);
    const std::vector<double> xc = remove_mean(x);

    double r0 = 0.0;
    for (double v : xc) r0 += v * v;
    if (r0 <= 0.0) {
        res.zero_power = true;
        return res;
    }
    for (int tau = 0; tau < n; ++tau) {
        double s = 0.0;
        for (int t = 0; t + tau < n; ++t) s += xc[t] * xc[t + tau];
        res.r[tau] = s / r0;
    }
    return res;
}

AcfResult autocorrelation_fft(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    AcfResult res;
    res.r.assign(n, 0.0);
    const std::vector<double> xc = remove_mean(x);

    double r0 = 0.0;
    for (double v : xc) r0 += v * v;
    if (r0 <= 0.0) {
        res.zero_power = true;
        return res;
    }

    const size_t nfft = next_pow2(static_cast<size_t>(2 * n - 1));
    std::vector<std::complex<double>> buf(nfft, {0.0, 0.0});
    for (int i = 0; i < n; ++i) buf[i] = {xc[i], 0.0};
    fft_inplace(buf, false);
    for (auto& c : buf) c = {std::norm(c), 0.0};
    fft_inplace(buf, true);

    const double inv_r0 = 1.0 / buf[0].real();
    for (int tau = 0; tau < n; ++tau) res.r[tau] = buf[tau].real() * inv_r0;
    return res;
}

double spectral_entropy_from_power(const std::vector<double>& power) {
    const size_t n = power.size();
    if (n < 2) throw ArgumentError("spectral_entropy: need at least 2 bins");
    double total = 0.0;
    for (double p : power) total += p;
    if (!(total > 0.0)) return 1.0;

    double h = 0.0;
    for (double p : power) {
        const double pk = p / total;
        if (pk > 0.0) h -= pk * std::log(pk);
    }
    return h / std::log(static_cast<double>(n));
}

double spectral_entropy(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    const std::vector<double> xc = remove_mean(x);

    const size_t nfft = next_pow2(static_cast<size_t>(std::max(1, 2 * n - 1)));
    std::vector<std::complex<double>> buf(nfft, {0.0, 0.0});
    for (int i = 0; i < n; ++i) buf[i] = {xc[i], 0.0};
    fft_inplace(buf, false);

    std::vector<double> power(nfft);
    for (size_t k = 0; k < nfft; ++k) power[k] = std::norm(buf[k]);
    return spectral_entropy_from_power(power);
}

PeriodDecision classify_periodic(const AcfResult& acf, double entropy, const PeriodicityConfig& cfg) {
    const int n = static_cast<int>(acf.r.size());
    PeriodDecision dec;
    dec.period = n;

    if (acf.zero_power || n < 4) return dec;

    double mean = 0.0;
    for (int tau = 1; tau < n; ++tau) mean += acf.r[tau];
    dec.mean_acf = mean / static_cast<double>(n - 1);

    // dominant peak = max ACF value among local maxima at lag >= 2
    // (lag 1 is trivially high for smooth signals)
    int best_lag = 0;
    double best_val = 0.0;
    for (int tau = 2; tau < n; ++tau) {
        const double left = acf.r[tau - 1];
        const double right = tau + 1 < n ? acf.r[tau + 1] : -2.0;
        if (acf.r[tau] >= left && acf.r[tau] >= right) {
            if (best_lag == 0 || acf.r[tau] > best_val) {
                best_lag = tau;
                best_val = acf.r[tau];
            }
        }
    }
    if (best_lag == 0) return dec;  // no candidate peak

    dec.peak_lag = best_lag;
    dec.peak_value = best_val;
    const bool peak_ok = best_val > cfg.theta_peak;
    const bool prom_ok = best_val - dec.mean_acf > cfg.theta_prom;
    const bool ent_ok = entropy < cfg.theta_ent;
    if (peak_ok && prom_ok && ent_ok) {
        dec.periodic = true;
        dec.period = best_lag;
    }
    return dec;
}

PeriodReport analyze_segment(const Mat& segment, SegmentSpan span, const PeriodicityConfig& cfg) {
    PeriodReport rep;
    rep.span = span;
    rep.thresholds_used = cfg;
    rep.period = segment.rows;

    if (segment.rows < 4) return rep;  // too short to analyze

    const std::vector<double> x = mean_signal(segment);
    const AcfResult acf = autocorrelation_fft(x);
    rep.entropy = acf.zero_power ? 1.0 : spectral_entropy(x);
    const PeriodDecision dec = classify_periodic(acf, rep.entropy, cfg);
    rep.periodic = dec.periodic;
    rep.period = dec.period;
    rep.peak_lag = dec.peak_lag;
    rep.peak_value = dec.peak_value;
    rep.mean_acf = dec.mean_acf;
    return rep;
}

PhaseTrack phase_track(const MotionSequence& seq, const KeyframeWeights& kf, const PeriodicityConfig& cfg) {
    validate_motion(seq);
    const int L = seq.length();
    if (static_cast<int>(kf.weights.size()) != L)
        throw ArgumentError("phase_track: keyframe weights length does not match the sequence");

    // segment boundaries: [0,k1), [k1,k2), ..., [km, L)
    std::vector<int> bounds;
    bounds.push_back(0);
    for (int k : kf.keyframes)
        if (k > bounds.back() && k < L) bounds.push_back(k);
    bounds.push_back(L);

    PhaseTrack track;
    track.phi.assign(L, 0.0);
    track.phase_encoding = Mat(L, 2);
    const double two_pi = 2.0 * M_PI;

    for (size_t s = 0; s + 1 < bounds.size(); ++s) {
        const SegmentSpan span{bounds[s], bounds[s + 1]};
        if (span.length() <= 0) continue;

        Mat segment(span.length(), seq.dim());
        for (int t = span.start; t < span.end; ++t)
            for (int d = 0; d < seq.dim(); ++d) segment(t - span.start, d) = seq.frames(t, d);

        PeriodReport rep = analyze_segment(segment, span, cfg);
        const double period = static_cast<double>(rep.period);
        for (int t_local = 0; t_local < span.length(); ++t_local) {
            double phi = std::fmod(two_pi * t_local / period, two_pi);
            if (phi < 0.0) phi += two_pi;
            const int t = span.start + t_local;
            track.phi[t] = phi;
            track.phase_encoding(t, 0) = std::sin(phi);
            track.phase_encoding(t, 1) = std::cos(phi);
        }
        track.reports.push_back(std::move(rep));
    }
    return track;
}

}  // namespace rhythm
