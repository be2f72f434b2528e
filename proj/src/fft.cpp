#include "phaseforge/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace phaseforge {

namespace {

// Plan creation is not thread-safe; execution on fresh arrays is. Plans are
// cached per (rows, cols, sign) and created with FFTW_UNALIGNED so they can
// run on any buffer.
class PlanCache {
 public:
  fftw_plan get(std::size_t rows, std::size_t cols, int sign) {
    std::lock_guard<std::mutex> lock(mu_);
    auto key = std::make_tuple(rows, cols, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<fftw_complex> dummy_in(rows * cols), dummy_out(rows * cols);
    fftw_plan p = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols),
                                   dummy_in.data(), dummy_out.data(), sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, p);
    return p;
  }

 private:
  std::mutex mu_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

CImage roll(const CImage& img, std::size_t dr, std::size_t dc) {
  CImage out(img.rows(), img.cols());
  for (std::size_t r = 0; r < img.rows(); ++r) {
    std::size_t rr = (r + dr) % img.rows();
    for (std::size_t c = 0; c < img.cols(); ++c) {
      out.at(rr, (c + dc) % img.cols()) = img.at(r, c);
    }
  }
  return out;
}

CImage run_plan(const CImage& img, int sign) {
  CImage out(img.rows(), img.cols());
  fftw_plan p = cache().get(img.rows(), img.cols(), sign);
  // fftw_complex and std::complex<double> share layout.
  auto* in_ptr = reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(img.data()));
  auto* out_ptr = reinterpret_cast<fftw_complex*>(out.data());
  fftw_execute_dft(p, in_ptr, out_ptr);
  const double scale = 1.0 / std::sqrt(static_cast<double>(img.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= scale;
  return out;
}

}  // namespace

CImage fftshift(const CImage& img) {
  return roll(img, img.rows() / 2, img.cols() / 2);
}

CImage ifftshift(const CImage& img) {
  return roll(img, (img.rows() + 1) / 2, (img.cols() + 1) / 2);
}

CImage fft2c(const CImage& img) {
  if (img.size() == 0) throw contract_error("fft2c: empty input");
  return fftshift(run_plan(ifftshift(img), FFTW_FORWARD));
}

CImage ifft2c(const CImage& img) {
  if (img.size() == 0) throw contract_error("ifft2c: empty input");
  return fftshift(run_plan(ifftshift(img), FFTW_BACKWARD));
}

}  // namespace phaseforge
