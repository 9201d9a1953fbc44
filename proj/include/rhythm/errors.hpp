// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace rhythm {

// Caller passed something out of contract (bad shape, bad range).
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Data violates a type invariant (NaN frames, too-short sequence).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A file does not parse as the declared format.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rhythm
