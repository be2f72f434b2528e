#include "phaseforge/phase_ops.hpp"

#include <cmath>

#include "phaseforge/errors.hpp"
#include "phaseforge/fft.hpp"

namespace phaseforge {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kTwoPi = 2.0 * kPi;
}  // namespace

double wrap_scalar(double raw) {
  double w = std::fmod(raw + kPi, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  return w - kPi;
}

Tensor wrap_phase(const Tensor& raw) {
  Tensor out = raw;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wrap_scalar(out[i]);
  return out;
}

CImage complex_image(const Tensor& magnitude, const Tensor& phase) {
  if (!magnitude.same_shape(phase)) throw contract_error("complex_image: shape mismatch");
  if (magnitude.rank() != 2) throw contract_error("complex_image: expects 2-D arrays");
  CImage out(magnitude.dim(0), magnitude.dim(1));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::polar(magnitude[i], phase[i]);
  return out;
}

Tensor magnitude_of(const CImage& img) {
  Tensor out({img.rows(), img.cols()});
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = std::abs(img[i]);
  return out;
}

Tensor phase_of(const CImage& img) {
  Tensor out({img.rows(), img.cols()});
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = wrap_scalar(std::arg(img[i]));
  return out;
}

CImage assemble_kspace(const Tensor& magnitude, const Tensor& phase) {
  for (std::size_t i = 0; i < magnitude.size(); ++i)
    if (magnitude[i] < 0.0) throw contract_error("assemble_kspace: negative magnitude entry");
  return fft2c(complex_image(magnitude, phase));
}

Tensor smooth_phase_baseline(std::size_t rows, std::size_t cols, Rng& rng,
                             int low_res, double amplitude) {
  if (low_res < 1) throw contract_error("smooth_phase_baseline: low_res must be >= 1");
  if (static_cast<std::size_t>(low_res) > std::min(rows, cols))
    throw contract_error("smooth_phase_baseline: low_res exceeds output shape");
  if (amplitude < 0.0) throw contract_error("smooth_phase_baseline: amplitude must be >= 0");

  CImage coarse(static_cast<std::size_t>(low_res), static_cast<std::size_t>(low_res));
  for (std::size_t i = 0; i < coarse.size(); ++i) coarse[i] = {rng.normal(), 0.0};

  const CImage fine = resize_bilinear(coarse, rows, cols);
  Tensor field({rows, cols});
  double mean = 0.0;
  for (std::size_t i = 0; i < fine.size(); ++i) {
    field[i] = fine[i].real();
    mean += field[i];
  }
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double d = field[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(field.size());
  const double std_dev = std::sqrt(var);

  const double scale = (std_dev > 0.0 && amplitude > 0.0) ? amplitude / std_dev : 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) field[i] *= scale;
  return wrap_phase(field);
}

CImage resize_bilinear(const CImage& img, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw contract_error("resize_bilinear: empty target");
  if (img.rows() == rows && img.cols() == cols) return img;
  CImage out(rows, cols);
  const double sr = static_cast<double>(img.rows()) / static_cast<double>(rows);
  const double sc = static_cast<double>(img.cols()) / static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    // pixel-center mapping (align_corners = false)
    double fr = (static_cast<double>(r) + 0.5) * sr - 0.5;
    fr = std::max(0.0, std::min(fr, static_cast<double>(img.rows() - 1)));
    const std::size_t r0 = static_cast<std::size_t>(fr);
    const std::size_t r1 = std::min(r0 + 1, img.rows() - 1);
    const double wr = fr - static_cast<double>(r0);
    for (std::size_t c = 0; c < cols; ++c) {
      double fc = (static_cast<double>(c) + 0.5) * sc - 0.5;
      fc = std::max(0.0, std::min(fc, static_cast<double>(img.cols() - 1)));
      const std::size_t c0 = static_cast<std::size_t>(fc);
      const std::size_t c1 = std::min(c0 + 1, img.cols() - 1);
      const double wc = fc - static_cast<double>(c0);
      out.at(r, c) = (1.0 - wr) * ((1.0 - wc) * img.at(r0, c0) + wc * img.at(r0, c1)) +
                     wr * ((1.0 - wc) * img.at(r1, c0) + wc * img.at(r1, c1));
    }
  }
  return out;
}

}  // namespace phaseforge
