// SPDX-License-Identifier: Apache-2.0
//
// Runtime configuration for the CLI: one JSON file covering the analysis
// thresholds, model dims, diffusion settings and the toy training profile.
// Unknown keys are rejected; every field is validated against the owning
// module's preconditions at load time.

#pragma once

#include <string>

#include "rhythm/analysis.hpp"
#include "rhythm/denoiser.hpp"

namespace rhythm {

struct CliConfig {
    uint64_t seed = 0;
    AnalysisConfig analysis;
    ModelDims model;
    DiffusionConfig diffusion;
    TrainConfig train;
    ToyDatasetConfig dataset;
};

CliConfig default_config();

// Throws FormatError on bad JSON or unknown keys, ArgumentError on values
// that violate module preconditions.
CliConfig load_config(const std::string& path);

void validate_config(const CliConfig& cfg);

}  // namespace rhythm
