#include "phaseforge/metrics.hpp"

#include <cmath>
#include <limits>
#include <iostream>
#include <memory>

#include "phaseforge/errors.hpp"
#include "phaseforge/rng.hpp"

namespace phaseforge {

double nrmse(const Tensor& gt, const Tensor& est) {
  if (!gt.same_shape(est)) throw contract_error("nrmse: shape mismatch");
  const double denom = gt.norm2();
  if (denom == 0.0) throw contract_error("nrmse: ground truth is identically zero");
  double s = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = gt[i] - est[i];
    s += d * d;
  }
  return std::sqrt(s) / denom;
}

double psnr(const Tensor& gt, const Tensor& est, double data_range) {
  if (!gt.same_shape(est)) throw contract_error("psnr: shape mismatch");
  if (!(data_range > 0.0)) throw contract_error("psnr: data_range must be > 0");
  double mse = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = gt[i] - est[i];
    mse += d * d;
  }
  mse /= static_cast<double>(gt.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

// k x k box mean over the valid region of a 2-D tensor.
Tensor box_mean_valid(const Tensor& img, int k) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  const std::size_t oh = h - static_cast<std::size_t>(k) + 1;
  const std::size_t ow = w - static_cast<std::size_t>(k) + 1;
  Tensor out({oh, ow});
  const double inv = 1.0 / (static_cast<double>(k) * k);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
          s += img.at(r + static_cast<std::size_t>(i), c + static_cast<std::size_t>(j));
      out.at(r, c) = s * inv;
    }
  }
  return out;
}

}  // namespace

double ssim(const Tensor& gt, const Tensor& est, double data_range, int window) {
  if (!gt.same_shape(est)) throw contract_error("ssim: shape mismatch");
  if (gt.rank() != 2) throw contract_error("ssim: expects 2-D images");
  if (window % 2 == 0) throw contract_error("ssim: window must be odd");
  if (static_cast<std::size_t>(window) > gt.dim(0) || static_cast<std::size_t>(window) > gt.dim(1))
    throw contract_error("ssim: window exceeds image size");
  if (!(data_range > 0.0)) throw contract_error("ssim: data_range must be > 0");

  const double c1 = std::pow(0.01 * data_range, 2.0);
  const double c2 = std::pow(0.03 * data_range, 2.0);
  const double np = static_cast<double>(window) * window;
  const double cov_norm = np / (np - 1.0);

  Tensor xx(gt.shape()), yy(gt.shape()), xy(gt.shape());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    xx[i] = gt[i] * gt[i];
    yy[i] = est[i] * est[i];
    xy[i] = gt[i] * est[i];
  }
  const Tensor ux = box_mean_valid(gt, window);
  const Tensor uy = box_mean_valid(est, window);
  const Tensor uxx = box_mean_valid(xx, window);
  const Tensor uyy = box_mean_valid(yy, window);
  const Tensor uxy = box_mean_valid(xy, window);

  double acc = 0.0;
  for (std::size_t i = 0; i < ux.size(); ++i) {
    const double vx = cov_norm * (uxx[i] - ux[i] * ux[i]);
    const double vy = cov_norm * (uyy[i] - uy[i] * uy[i]);
    const double vxy = cov_norm * (uxy[i] - ux[i] * uy[i]);
    const double num = (2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2);
    const double den = (ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2);
    acc += num / den;
  }
  return acc / static_cast<double>(ux.size());
}

FeatureExtractor random_conv_extractor(std::uint64_t seed, int dim) {
  if (dim < 1) throw contract_error("random_conv_extractor: dim must be >= 1");
  const int k = 7, stride = 4;
  auto weights = std::make_shared<std::vector<double>>();
  Rng rng(seed);
  weights->resize(static_cast<std::size_t>(dim) * k * k);
  for (auto& w : *weights) w = rng.normal() / k;

  return [weights, dim, k, stride](const Tensor& img) -> Eigen::VectorXd {
    if (img.rank() != 2) throw contract_error("feature extractor: expects 2-D images");
    const std::size_t h = img.dim(0), w = img.dim(1);
    if (h < static_cast<std::size_t>(k) || w < static_cast<std::size_t>(k))
      throw contract_error("feature extractor: image smaller than filter");
    Eigen::VectorXd out(dim);
    for (int f = 0; f < dim; ++f) {
      const double* wf = weights->data() + static_cast<std::size_t>(f) * k * k;
      double acc = 0.0;
      std::size_t count = 0;
      for (std::size_t r = 0; r + k <= h; r += stride) {
        for (std::size_t c = 0; c + k <= w; c += stride) {
          double v = 0.0;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
              v += wf[i * k + j] * img.at(r + static_cast<std::size_t>(i), c + static_cast<std::size_t>(j));
          acc += v > 0.0 ? v : 0.0;  // ReLU
          ++count;
        }
      }
      out[f] = acc / static_cast<double>(count);
    }
    return out;
  };
}

FeatureStats embed_features(const std::vector<Tensor>& images, const FeatureExtractor& extract) {
  if (images.empty()) throw contract_error("embed_features: empty image set");
  std::vector<Eigen::VectorXd> feats;
  feats.reserve(images.size());
  for (const auto& img : images) feats.push_back(extract(img));

  const Eigen::Index d = feats.front().size();
  if (images.size() < static_cast<std::size_t>(d) + 1)
    std::cerr << "embed_features: only " << images.size() << " images for " << d
              << " feature dims; covariance estimate is rank-deficient\n";
  FeatureStats stats;
  stats.n = feats.size();
  stats.mean = Eigen::VectorXd::Zero(d);
  for (const auto& f : feats) stats.mean += f;
  stats.mean /= static_cast<double>(stats.n);

  stats.cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& f : feats) {
    Eigen::VectorXd c = f - stats.mean;
    stats.cov.noalias() += c * c.transpose();
  }
  stats.cov /= std::max<double>(1.0, static_cast<double>(stats.n) - 1.0);
  return stats;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-6) throw numeric_error(std::string(what) + ": matrix not PSD within tolerance");
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size()) throw contract_error("frechet_distance: feature dim mismatch");
  const Eigen::MatrixXd sa_half = psd_sqrt(a.cov, "frechet_distance(cov_a)");
  const Eigen::MatrixXd inner = sa_half * b.cov * sa_half;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < -1e-6) throw numeric_error("frechet_distance: product matrix not PSD within tolerance");
    tr_sqrt += std::sqrt(std::max(0.0, ev));
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

}  // namespace phaseforge
