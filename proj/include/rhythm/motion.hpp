// SPDX-License-Identifier: Apache-2.0
//
// Core data types, file formats and synthetic-data generators shared by the
// analysis and model modules.

#pragma once

#include <cstdint>
#include <string>

#include "rhythm/mat.hpp"

namespace rhythm {

// L x D frame matrix plus frame-rate metadata. fps is metadata only; all
// period math downstream works in frame units.
struct MotionSequence {
    Mat frames;  // (L, D)
    double fps = 20.0;
    std::string name;

    int length() const { return frames.rows; }
    int dim() const { return frames.cols; }
};

// Throws ValidationError when invariants are broken (L >= 2, D >= 1, finite).
void validate_motion(const MotionSequence& seq);

// Deterministic stand-in for an encoded text prompt.
struct TextEmbedding {
    Mat tokens;  // (L_t, D), unit-normalized rows
    int class_id = 0;
};

// Half-open frame range [start, end).
struct SegmentSpan {
    int start = 0;
    int end = 0;

    int length() const { return end - start; }
};

enum class MotionFormat { csv, mbin };

// Dispatch by file extension (".csv" / ".mbin"); throws ArgumentError otherwise.
MotionFormat format_from_path(const std::string& path);

MotionSequence load_motion(const std::string& path, MotionFormat format);
void save_motion(const MotionSequence& seq, const std::string& path, MotionFormat format);

inline MotionSequence load_motion(const std::string& path) { return load_motion(path, format_from_path(path)); }
inline void save_motion(const MotionSequence& seq, const std::string& path) {
    save_motion(seq, path, format_from_path(path));
}

// frame(t, d) = amp * sin(2*pi*t/period + 2*pi*d/D) + Gaussian(0, noise_sigma^2).
// Requires L >= 2*period, period >= 2, noise_sigma >= 0.
MotionSequence synth_periodic_motion(int L, int D, int period, double amp, double noise_sigma, uint64_t seed);

// Rows are unit-normalized Gaussians keyed by (seed, class_id, row index), so a
// given row is stable under changes of L_t.
TextEmbedding stub_text_embedding(int class_id, int L_t, int D, uint64_t seed);

}  // namespace rhythm
