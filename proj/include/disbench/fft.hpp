#pragma once

#include <complex>
#include <vector>

namespace disbench {

using cplx = std::complex<double>;

// In-place 1-D DFT. Radix-2 Cooley-Tukey for power-of-two lengths, direct
// O(n^2) evaluation otherwise (image sides here are small). `inverse` applies
// the conjugate transform and the 1/n factor.
void dft_1d(std::vector<cplx>& a, bool inverse);

// 2-D DFT of a row-major h x w buffer: rows first, then columns.
void dft_2d(std::vector<cplx>& a, int h, int w, bool inverse);

}  // namespace disbench
