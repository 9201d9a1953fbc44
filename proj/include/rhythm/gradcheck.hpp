// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of the analytic gradients, runnable from
// the CLI and the acceptance suite. Central differences, step 1e-5, double
// precision; relative error uses max(|analytic|, |fd|) + 1e-6 in the
// denominator so dead parameters do not divide by zero.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rhythm {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    int entries_checked = 0;
};

struct GradCheckReport {
    std::string module;
    std::vector<GradCheckGroup> groups;
    double tolerance = 1e-4;

    double worst() const {
        double w = 0.0;
        for (const auto& g : groups) w = std::max(w, g.max_rel_err);
        return w;
    }
    bool passed() const { return worst() < tolerance; }
};

// SSM block on randomized small shapes (L=6, d_model=4, d_inner=6, n_state=3),
// every entry of every group plus the input.
GradCheckReport gradcheck_ssm(uint64_t seed);

// Multi-head differential cross-attention, every entry of every group.
GradCheckReport gradcheck_attn(uint64_t seed);

// Full 2-layer tiny denoiser (L=8, D=8); every group, a few probed entries
// per group, tolerance 1e-3 (deep composition).
GradCheckReport gradcheck_model(uint64_t seed);

}  // namespace rhythm
