#ifndef PHASEFORGE_PHASE_OPS_HPP
#define PHASEFORGE_PHASE_OPS_HPP

#include "phaseforge/rng.hpp"
#include "phaseforge/tensor.hpp"

namespace phaseforge {

// Elementwise ((raw + pi) mod 2pi) - pi, result in [-pi, pi).
Tensor wrap_phase(const Tensor& raw);
double wrap_scalar(double raw);

// m * exp(i*phi) as a complex image.
CImage complex_image(const Tensor& magnitude, const Tensor& phase);

Tensor magnitude_of(const CImage& img);
Tensor phase_of(const CImage& img);

// k = fft2c(m * exp(i*phi)); magnitude must be nonnegative.
CImage assemble_kspace(const Tensor& magnitude, const Tensor& phase);

// Low-frequency Gaussian random field: white noise on a low_res x low_res
// grid, bilinear upsample, rescaled to std == amplitude, wrapped.
Tensor smooth_phase_baseline(std::size_t rows, std::size_t cols, Rng& rng,
                             int low_res = 8, double amplitude = 1.5707963267948966);

// Bilinear resize of a complex image (real and imaginary parts separately).
CImage resize_bilinear(const CImage& img, std::size_t rows, std::size_t cols);

}  // namespace phaseforge

#endif
