// SPDX-License-Identifier: Apache-2.0
//
// Combined keyframe + periodicity analysis of one motion sequence.

#pragma once

#include "rhythm/keyframes.hpp"
#include "rhythm/motion.hpp"
#include "rhythm/periodicity.hpp"

namespace rhythm {

struct AnalysisConfig {
    int num_segments = 0;  // 0 = ceil(L/32)
    DpcConfig dpc;
    PeriodicityConfig periodicity;
};

struct MotionAnalysis {
    KeyframeWeights keyframes;
    PhaseTrack phase;
};

MotionAnalysis analyze_motion(const MotionSequence& seq, const AnalysisConfig& cfg = {});

}  // namespace rhythm
