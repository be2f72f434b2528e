#ifndef PHASEFORGE_METRICS_HPP
#define PHASEFORGE_METRICS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "phaseforge/tensor.hpp"

namespace phaseforge {

// ||gt - est||_2 / ||gt||_2
double nrmse(const Tensor& gt, const Tensor& est);

// 10 log10(data_range^2 / MSE); +inf when MSE == 0.
double psnr(const Tensor& gt, const Tensor& est, double data_range);

// Mean local SSIM, uniform window (default 7x7, valid region only),
// K1 = 0.01, K2 = 0.03, sample-covariance normalization.
double ssim(const Tensor& gt, const Tensor& est, double data_range, int window = 7);

// Gaussian fit of a feature population for the Frechet distance.
struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t n = 0;
};

using FeatureExtractor = std::function<Eigen::VectorXd(const Tensor&)>;

// Default extractor: `dim` fixed random 7x7 conv filters (stride 4), ReLU,
// global average pool. Pretrained embeddings can be plugged in instead.
FeatureExtractor random_conv_extractor(std::uint64_t seed, int dim = 64);

FeatureStats embed_features(const std::vector<Tensor>& images, const FeatureExtractor& extract);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), matrix square root via
// symmetric eigendecomposition of Sa^{1/2} Sb Sa^{1/2}.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

}  // namespace phaseforge

#endif
