// SPDX-License-Identifier: Apache-2.0
//
// Iterative radix-2 FFT. Every consumer in this project pads to a power of
// two, so no mixed-radix support is needed.

#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace rhythm {

// In-place transform; data.size() must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data, bool inverse);

// Smallest power of two >= n (n >= 1).
size_t next_pow2(size_t n);

}  // namespace rhythm
