#ifndef PHASEFORGE_FFT_HPP
#define PHASEFORGE_FFT_HPP

#include "phaseforge/tensor.hpp"

namespace phaseforge {

// Centered orthonormal 2-D Fourier transforms: DC sits at the array center
// and ||fft2c(x)|| == ||x||. fft2c(x) = shift(FFT(unshift(x))) / sqrt(H*W).
CImage fft2c(const CImage& img);
CImage ifft2c(const CImage& img);

// Circular shifts moving the DC bin to/from the array center.
CImage fftshift(const CImage& img);
CImage ifftshift(const CImage& img);

}  // namespace phaseforge

#endif
