// SPDX-License-Identifier: Apache-2.0

#include "rhythm/analysis.hpp"

#include <algorithm>

namespace rhythm {

MotionAnalysis analyze_motion(const MotionSequence& seq, const AnalysisConfig& cfg) {
    validate_motion(seq);
    int n = cfg.num_segments > 0 ? cfg.num_segments : default_num_segments(seq.length());
    n = std::clamp(n, 1, std::max(1, seq.length() / 2));

    MotionAnalysis out;
    out.keyframes = keyframe_weights(seq, n, cfg.dpc);
    out.phase = phase_track(seq, out.keyframes, cfg.periodicity);
    return out;
}

}  // namespace rhythm
