#pragma once

#include <vector>

namespace stemsep {

// Iterative radix-2 complex FFT, in place. n must be a power of two.
// inverse=true applies the conjugate transform without the 1/n scale.
void fft_inplace(float* re, float* im, int n, bool inverse);

// Real forward transform: n real samples -> n/2+1 complex bins.
void rfft(const float* x, int n, float* out_re, float* out_im);

// Inverse of rfft (Hermitian completion, real output). Ignores the imaginary
// parts of bins 0 and n/2, which carry no information for a real signal.
void irfft(const float* re, const float* im, int n, float* out_x);

bool is_power_of_two(int n);

}  // namespace stemsep
